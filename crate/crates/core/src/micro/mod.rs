//! A minimal numeric FFN/MoE kernel used to check the transfer rules by
//! Monte-Carlo: dense FFN, token-choice top-k sparse MoE and hybrid blocks,
//! with exact down-projection gradients and a sign-proxy normalized update.

mod codec;
mod layer;
mod mat;

pub use layer::{
    init_layer, silu, swiglu, DownGrads, FfnWeights, ForwardTrace, InitStds, MicroLayer, Router,
    Routing,
};
pub use mat::Mat;
