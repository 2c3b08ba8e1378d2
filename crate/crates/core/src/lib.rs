//! Hyperparameter transfer for dense FFN and Mixture-of-Experts blocks.
//!
//! Tune a dense model once, then map its per-group init stds, learning
//! rates and optimizer settings to any sparse or hybrid MoE layout by
//! active width, depth, batch size and training duration.
//!
//! - [`config`]: block layouts, `XeYa[Gg][Zs]` notation, run configs.
//! - [`transfer`]: the layer, width and global rules and their composition.
//! - [`micro`]: a small numeric FFN/MoE layer for Monte-Carlo checks.
//! - [`verify`]: Monte-Carlo estimators and the scale-matching suite.
//! - [`sde`]: discrete RMSProp-style iteration and its SDE limit.
//! - [`cli`]: the `mue` command-line driver.

pub mod cli;
pub mod config;
pub mod error;
pub mod micro;
pub mod rng;
pub mod sde;
pub mod transfer;
pub mod verify;

pub use error::{Error, Result};
pub use rng::SimRng;
