//! Monte-Carlo estimators over [`MicroLayer`]s and the scale-matching suite.
//!
//! Every estimator draws isotropic Gaussian inputs from split streams, so a
//! run is a pure function of the layer, the arguments and the seed.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{format_moe_notation, BlockSpec, RouterKind};
use crate::error::{Error, Result};
use crate::micro::{init_layer, InitStds, MicroLayer};
use crate::rng::{par_draws, SimRng};
use crate::transfer::forward_factor_expansion;

/// Smallest sample count accepted by the estimators.
pub const MIN_SAMPLES: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl MCEstimate {
    pub fn from_samples(xs: &[f64]) -> Result<Self> {
        let n = xs.len();
        if n < 2 {
            return Err(Error::InvalidInput("an estimate needs at least 2 samples".into()));
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let est = MCEstimate {
            mean,
            std_error: (var / n as f64).sqrt(),
            n,
        };
        if !est.mean.is_finite() || !est.std_error.is_finite() {
            return Err(Error::NonFinite("Monte-Carlo estimate".into()));
        }
        Ok(est)
    }

    /// A known value with no sampling error.
    pub fn exact(value: f64) -> Self {
        MCEstimate {
            mean: value,
            std_error: 0.0,
            n: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub quantity: String,
    pub layout: String,
    pub lhs: MCEstimate,
    pub rhs: MCEstimate,
    pub ratio: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl MatchReport {
    /// Compare `lhs/rhs` against 1 with tolerance `max(base, 3·se(ratio))`.
    pub fn compare(
        quantity: impl Into<String>,
        layout: impl Into<String>,
        lhs: MCEstimate,
        rhs: MCEstimate,
        base_tolerance: f64,
    ) -> Self {
        let ratio = lhs.mean / rhs.mean;
        let rel = ((lhs.std_error / lhs.mean).powi(2) + (rhs.std_error / rhs.mean).powi(2)).sqrt();
        let se = (ratio * rel).abs();
        let tolerance = if se.is_finite() {
            base_tolerance.max(3.0 * se)
        } else {
            base_tolerance
        };
        MatchReport {
            quantity: quantity.into(),
            layout: layout.into(),
            lhs,
            rhs,
            ratio,
            tolerance,
            pass: (ratio - 1.0).abs() <= tolerance,
        }
    }
}

fn check_n(n: usize) -> Result<()> {
    if n < MIN_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_SAMPLES} samples, got {n}"
        )));
    }
    Ok(())
}

fn draw_input(d: usize, std: f64, rng: &mut SimRng) -> Vec<f64> {
    (0..d).map(|_| std * rng.normal()).collect()
}

fn finite(v: &[f64], what: &str) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("{what}, coordinate {i}")));
    }
    Ok(())
}

fn sample_forward(layer: &MicroLayer, input_std: f64, r: &mut SimRng) -> Result<(f64, f64)> {
    let d = layer.d() as f64;
    let y = layer.forward(&draw_input(layer.d(), input_std, r))?.y;
    finite(&y, "forward output")?;
    Ok((y.iter().map(|v| v * v).sum::<f64>() / d, y.iter().sum::<f64>() / d))
}

fn sample_update(layer: &MicroLayer, eta_down: f64, input_std: f64, r: &mut SimRng) -> Result<f64> {
    let d = layer.d();
    let x = draw_input(d, input_std, r);
    let g: Vec<f64> = (0..d).map(|_| r.sign()).collect();
    let before = layer.forward(&x)?;
    let grads = layer.down_grad(&before, &g)?;
    let after = layer.sign_update(&grads, eta_down)?.forward(&x)?.y;
    finite(&after, "updated forward output")?;
    Ok(after.iter().zip(&before.y).map(|(a, b)| (a - b).abs()).sum::<f64>() / d as f64)
}

fn sample_activation(layer: &MicroLayer, input_std: f64, r: &mut SimRng) -> Result<(f64, f64)> {
    let t = layer.forward(&draw_input(layer.d(), input_std, r))?;
    let (mut sq, mut abs, mut count) = (0.0, 0.0, 0usize);
    for u in t.dense_hidden.iter().chain(&t.expert_hidden) {
        sq += u.iter().map(|v| v * v).sum::<f64>();
        abs += u.iter().map(|v| v.abs()).sum::<f64>();
        count += u.len();
    }
    Ok((sq / count as f64, abs / count as f64))
}

/// `Var[y_i]` pooled over output coordinates and samples, `x ~ N(0, input_std²·I)`.
pub fn mc_forward_variance(layer: &MicroLayer, input_std: f64, n: usize, rng: &mut SimRng) -> Result<MCEstimate> {
    check_n(n)?;
    let draws = par_draws(n, rng, |r| sample_forward(layer, input_std, r))?;
    let second: Vec<f64> = draws.iter().map(|p| p.0).collect();
    let mean = draws.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let mut est = MCEstimate::from_samples(&second)?;
    est.mean -= mean * mean;
    Ok(est)
}

/// `E|Δy_i|` after one sign step on the down projections, with a fresh
/// ±1 upstream gradient per sample and the same input before and after.
pub fn mc_update_magnitude(
    layer: &MicroLayer,
    eta_down: f64,
    input_std: f64,
    n: usize,
    rng: &mut SimRng,
) -> Result<MCEstimate> {
    check_n(n)?;
    let draws = par_draws(n, rng, |r| sample_update(layer, eta_down, input_std, r))?;
    MCEstimate::from_samples(&draws)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationStats {
    /// `E[u_j²]`.
    pub q_u: MCEstimate,
    /// `E|u_j|`.
    pub mu_u: MCEstimate,
}

/// Hidden-coordinate moments pooled over dense branches and active experts.
pub fn measure_activation_stats(layer: &MicroLayer, input_std: f64, n: usize, rng: &mut SimRng) -> Result<ActivationStats> {
    check_n(n)?;
    let draws = par_draws(n, rng, |r| sample_activation(layer, input_std, r))?;
    let q: Vec<f64> = draws.iter().map(|p| p.0).collect();
    let m: Vec<f64> = draws.iter().map(|p| p.1).collect();
    Ok(ActivationStats {
        q_u: MCEstimate::from_samples(&q)?,
        mu_u: MCEstimate::from_samples(&m)?,
    })
}

/// A layer-level statistic averaged over independent initializations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Statistic {
    ForwardVariance { input_std: f64 },
    UpdateMagnitude { eta_down: f64, input_std: f64 },
    ActivationSecondMoment { input_std: f64 },
}

impl Statistic {
    fn on_layer(self, layer: &MicroLayer, n: usize, r: &mut SimRng) -> Result<f64> {
        let mean = |xs: Vec<f64>| xs.iter().sum::<f64>() / xs.len() as f64;
        Ok(match self {
            Statistic::ForwardVariance { input_std } => {
                let draws = (0..n).map(|_| sample_forward(layer, input_std, r)).collect::<Result<Vec<_>>>()?;
                let m = mean(draws.iter().map(|p| p.1).collect());
                mean(draws.iter().map(|p| p.0).collect()) - m * m
            }
            Statistic::UpdateMagnitude { eta_down, input_std } => {
                mean((0..n).map(|_| sample_update(layer, eta_down, input_std, r)).collect::<Result<_>>()?)
            }
            Statistic::ActivationSecondMoment { input_std } => {
                let draws = (0..n).map(|_| sample_activation(layer, input_std, r)).collect::<Result<Vec<_>>>()?;
                mean(draws.iter().map(|p| p.0).collect())
            }
        })
    }
}

/// Estimate a statistic in expectation over initialization: `n_inits`
/// layers are drawn from `init_rng`, each evaluated on `n / n_inits` inputs
/// from the matching stream of `input_rng`. The std error comes from the
/// spread of per-layer values, so it covers weight randomness as well as
/// input sampling. Passing the same `input_rng` seed for two layouts pairs
/// their inputs.
pub fn ensemble_estimate(
    layout: &LayoutSpec,
    d: usize,
    base: &InitStds,
    stat: Statistic,
    n_inits: usize,
    n: usize,
    init_rng: &mut SimRng,
    input_rng: &mut SimRng,
) -> Result<MCEstimate> {
    check_n(n)?;
    if n_inits < 2 || n < n_inits {
        return Err(Error::InvalidInput(format!(
            "need 2 ≤ n_inits ≤ n, got n_inits={n_inits}, n={n}"
        )));
    }
    let inits = init_rng.split(n_inits);
    let inputs = input_rng.split(n_inits);
    let per_layer = n / n_inits;
    let values = inits
        .into_par_iter()
        .zip(inputs)
        .map(|(mut ir, mut xr)| {
            let layer = layout.build(d, base, &mut ir)?;
            stat.on_layer(&layer, per_layer, &mut xr)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut est = MCEstimate::from_samples(&values)?;
    est.n = per_layer * n_inits;
    Ok(est)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardFactorEstimate {
    /// `a·Σπ²` averaged over tokens.
    #[serde(rename = "F")]
    pub factor: MCEstimate,
    /// Per-logit variance of the selected logits around their token mean.
    pub logit_variance: MCEstimate,
    /// Mean selected logit.
    pub mean_logit: MCEstimate,
    /// Second-order expansion at the measured logit statistics, with its
    /// propagated standard error.
    pub perturbative: MCEstimate,
}

/// Routing forward factor of a routed layer, with the expansion evaluated at
/// the measured logit spread.
pub fn mc_estimate_f(layer: &MicroLayer, input_std: f64, n: usize, rng: &mut SimRng) -> Result<ForwardFactorEstimate> {
    check_n(n)?;
    let kind = layer
        .router()
        .map(|r| r.kind)
        .ok_or_else(|| Error::InvalidInput("forward factor needs a routed layer".into()))?;
    let a = layer.activated();
    let draws = par_draws(n, rng, |r| {
        let t = layer.route(&draw_input(layer.d(), input_std, r))?;
        let sel: Vec<f64> = t.active.iter().map(|&e| t.logits[e]).collect();
        let mean = sel.iter().sum::<f64>() / a as f64;
        let spread = if a > 1 {
            sel.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (a - 1) as f64
        } else {
            0.0
        };
        Ok((a as f64 * t.pi.iter().map(|p| p * p).sum::<f64>(), spread, mean))
    })?;
    let col = |k: usize| -> Vec<f64> {
        draws
            .iter()
            .map(|t| match k {
                0 => t.0,
                1 => t.1,
                _ => t.2,
            })
            .collect()
    };
    let factor = MCEstimate::from_samples(&col(0))?;
    let logit_variance = MCEstimate::from_samples(&col(1))?;
    let mean_logit = MCEstimate::from_samples(&col(2))?;
    let at = |v: f64| forward_factor_expansion(a, v, kind, mean_logit.mean);
    let pert = at(logit_variance.mean);
    // the expansion is linear in the variance
    let slope = at(1.0) - at(0.0);
    Ok(ForwardFactorEstimate {
        factor,
        logit_variance,
        mean_logit,
        perturbative: MCEstimate {
            mean: pert,
            std_error: slope * logit_variance.std_error,
            n,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadStats {
    /// Fraction of tokens selecting each expert; sums to `a`.
    pub per_expert_load: Vec<f64>,
    pub sum_check: f64,
}

/// Expert loads of one fixed layer over `n_tokens` standard Gaussian inputs.
pub fn routing_load_stats(layer: &MicroLayer, n_tokens: usize, rng: &mut SimRng) -> Result<LoadStats> {
    if layer.router().is_none() {
        return Err(Error::InvalidInput("load statistics need a routed layer".into()));
    }
    if n_tokens == 0 {
        return Err(Error::InvalidInput("need at least one token".into()));
    }
    let picks = par_draws(n_tokens, rng, |r| Ok(layer.route(&draw_input(layer.d(), 1.0, r))?.active))?;
    let mut counts = vec![0u64; layer.experts().len()];
    for e in picks.iter().flatten() {
        counts[*e] += 1;
    }
    let per_expert_load: Vec<f64> = counts.iter().map(|c| *c as f64 / n_tokens as f64).collect();
    Ok(LoadStats {
        sum_check: per_expert_load.iter().sum(),
        per_expert_load,
    })
}

/// Expected per-expert load over random router initializations: each of
/// `n_inits` fresh layers routes `tokens_per_init` tokens, and the std error
/// comes from the spread of per-init loads.
pub fn symmetric_load_estimate(
    block: &BlockSpec,
    d: usize,
    stds: InitStds,
    n_inits: usize,
    tokens_per_init: usize,
    rng: &mut SimRng,
) -> Result<Vec<MCEstimate>> {
    if n_inits < 2 {
        return Err(Error::InvalidInput("need at least 2 initializations".into()));
    }
    let mut per_init = Vec::with_capacity(n_inits);
    for mut r in rng.split(n_inits) {
        let layer = init_layer(block, d, stds, &mut r)?;
        per_init.push(routing_load_stats(&layer, tokens_per_init, &mut r)?.per_expert_load);
    }
    (0..block.routed_experts())
        .map(|e| MCEstimate::from_samples(&per_init.iter().map(|l| l[e]).collect::<Vec<_>>()))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    ForwardVariance,
    UpdateMagnitude,
    ActivationStats,
    ForwardFactor,
    ExpertLoad,
}

impl Quantity {
    /// Base tolerance on `|ratio - 1|` before the std-error floor.
    pub fn default_tolerance(self) -> f64 {
        match self {
            Quantity::ForwardVariance => 0.05,
            Quantity::UpdateMagnitude => 0.10,
            Quantity::ActivationStats => 0.05,
            Quantity::ForwardFactor => 0.0,
            Quantity::ExpertLoad => 0.10,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Quantity::ForwardVariance => "forward_variance",
            Quantity::UpdateMagnitude => "update_magnitude",
            Quantity::ActivationStats => "activation_q_u",
            Quantity::ForwardFactor => "forward_factor",
            Quantity::ExpertLoad => "expert_load",
        }
    }

    fn needs_rhs(self) -> bool {
        matches!(
            self,
            Quantity::ForwardVariance | Quantity::UpdateMagnitude | Quantity::ActivationStats
        )
    }
}

/// A layout to instantiate, with optional overrides for negative controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutSpec {
    pub block: BlockSpec,
    /// Replace the rule's route scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route_scale: Option<f64>,
    /// Replace the active-width down-projection std.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub down_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub router_std: Option<f64>,
}

impl LayoutSpec {
    pub fn new(block: BlockSpec) -> Self {
        LayoutSpec {
            block,
            route_scale: None,
            down_std: None,
            router_std: None,
        }
    }

    pub fn with_route_scale(mut self, r: f64) -> Self {
        self.route_scale = Some(r);
        self
    }

    pub fn with_down_std(mut self, s: f64) -> Self {
        self.down_std = Some(s);
        self
    }

    pub fn with_router_std(mut self, s: f64) -> Self {
        self.router_std = Some(s);
        self
    }

    /// Init stds for this layout: unit-expansion `base` with the down
    /// projection widened by `√(H_act/d)`.
    pub fn stds(&self, d: usize, base: &InitStds) -> InitStds {
        let h = self.block.active_width() as f64;
        InitStds {
            router: self.router_std.unwrap_or(base.router),
            up_gate: base.up_gate,
            down: self.down_std.unwrap_or(base.down * (h / d as f64).sqrt()),
        }
    }

    pub fn build(&self, d: usize, base: &InitStds, rng: &mut SimRng) -> Result<MicroLayer> {
        let layer = init_layer(&self.block, d, self.stds(d, base), rng)?;
        Ok(match self.route_scale {
            Some(r) => layer.with_route_scale(r),
            None => layer,
        })
    }

    pub fn label(&self) -> String {
        let mut s = match &self.block {
            BlockSpec::DenseFfn { hidden } => format!("dense{hidden}"),
            BlockSpec::SparseMoe { experts, active, width, router } if active == experts => {
                format!("densemoe{experts}x{width}/{router}")
            }
            b => match format_moe_notation(b) {
                Ok(n) => format!("{n}/h{}/{}", width_of(b), b.router().unwrap_or(RouterKind::NormalizedSoftmax)),
                Err(_) => b.to_string(),
            },
        };
        if let Some(r) = self.route_scale {
            let _ = write!(s, "[R={r}]");
        }
        if let Some(v) = self.down_std {
            let _ = write!(s, "[down_std={v}]");
        }
        if let Some(v) = self.router_std {
            let _ = write!(s, "[router_std={v}]");
        }
        s
    }
}

fn width_of(b: &BlockSpec) -> usize {
    match b {
        BlockSpec::DenseFfn { hidden } => *hidden,
        BlockSpec::SparseMoe { width, .. } => *width,
        BlockSpec::Hybrid { routed_groups, .. } => routed_groups.first().map_or(0, |g| g.width),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub quantity: Quantity,
    pub lhs: LayoutSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rhs: Option<LayoutSpec>,
    /// Overrides the plan's sample count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    /// Overrides the quantity's base tolerance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

impl PlanEntry {
    pub fn pair(quantity: Quantity, lhs: LayoutSpec, rhs: LayoutSpec) -> Self {
        PlanEntry {
            quantity,
            lhs,
            rhs: Some(rhs),
            samples: None,
            tolerance: None,
        }
    }

    pub fn single(quantity: Quantity, lhs: LayoutSpec) -> Self {
        PlanEntry {
            quantity,
            lhs,
            rhs: None,
            samples: None,
            tolerance: None,
        }
    }
}

fn default_d() -> usize {
    128
}

fn default_input_std() -> f64 {
    1.0
}

fn default_samples() -> usize {
    10_000
}

fn default_eta() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationPlan {
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_input_std")]
    pub input_std: f64,
    /// Unit-expansion stds; defaults to `1/√d` for up/gate and down and
    /// `0.1/√d` for the router.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<InitStds>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_eta")]
    pub eta_down: f64,
    #[serde(default)]
    pub entries: Vec<PlanEntry>,
}

impl Default for VerificationPlan {
    fn default() -> Self {
        VerificationPlan {
            d: default_d(),
            input_std: default_input_std(),
            base: None,
            samples: default_samples(),
            eta_down: default_eta(),
            entries: Vec::new(),
        }
    }
}

impl VerificationPlan {
    pub fn base_stds(&self) -> InitStds {
        self.base.unwrap_or_else(|| {
            let s = 1.0 / (self.d as f64).sqrt();
            InitStds {
                router: 0.1 * s,
                up_gate: s,
                down: s,
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::invalid("d", "must be positive"));
        }
        if !(self.input_std > 0.0 && self.input_std.is_finite()) {
            return Err(Error::invalid("input_std", "must be positive"));
        }
        if !(self.eta_down >= 0.0 && self.eta_down.is_finite()) {
            return Err(Error::invalid("eta_down", "must be non-negative"));
        }
        for (i, e) in self.entries.iter().enumerate() {
            let at = |f: &str| format!("entries.{i}.{f}");
            if e.quantity.needs_rhs() && e.rhs.is_none() {
                return Err(Error::invalid(at("rhs"), "this quantity compares two layouts"));
            }
            e.lhs.block.validate().map_err(|err| err.under(&at("lhs.block")))?;
            if let Some(r) = &e.rhs {
                r.block.validate().map_err(|err| err.under(&at("rhs.block")))?;
            }
            if matches!(e.quantity, Quantity::ForwardFactor | Quantity::ExpertLoad) && !e.lhs.block.is_routed() {
                return Err(Error::invalid(at("lhs.block"), "needs a routed layout"));
            }
            if e.samples.unwrap_or(self.samples) < MIN_SAMPLES {
                return Err(Error::invalid(at("samples"), format!("must be at least {MIN_SAMPLES}")));
            }
        }
        if self.samples < MIN_SAMPLES {
            return Err(Error::invalid("samples", format!("must be at least {MIN_SAMPLES}")));
        }
        Ok(())
    }
}

const SM: RouterKind = RouterKind::NormalizedSoftmax;
const SG: RouterKind = RouterKind::NormalizedSigmoid;

fn sparse(n: usize, a: usize, h: usize, router: RouterKind) -> LayoutSpec {
    LayoutSpec::new(BlockSpec::sparse(n, a, h, router).expect("valid layout"))
}

fn dense(h: usize) -> LayoutSpec {
    LayoutSpec::new(BlockSpec::dense(h).expect("valid layout"))
}

/// Built-in plan at `d = 128`: Bridge-I forward matching, the Bridge-II
/// activated-expert sweep, capacity and granularity pairs, a hybrid with a
/// shared branch, routing forward factors and expert loads. Every entry
/// is expected to pass.
pub fn default_plan() -> VerificationPlan {
    use Quantity::*;
    let mut entries = Vec::new();
    for n in [4, 8] {
        entries.push(PlanEntry::pair(ForwardVariance, sparse(n, n, 128 / n, SM), dense(128)));
    }
    for a in [2, 4, 8, 16] {
        entries.push(PlanEntry::pair(UpdateMagnitude, sparse(64, a, 16, SM), dense(128)));
    }
    for n in [16, 32, 64] {
        entries.push(PlanEntry::pair(ForwardVariance, sparse(n, 8, 16, SM), dense(128)));
        entries.push(PlanEntry::pair(UpdateMagnitude, sparse(n, 8, 16, SM), dense(128)));
    }
    for (n, a, h) in [(32, 4, 32), (128, 16, 8)] {
        entries.push(PlanEntry::pair(ForwardVariance, sparse(n, a, h, SM), sparse(64, 8, 16, SM)));
        entries.push(PlanEntry::pair(UpdateMagnitude, sparse(n, a, h, SM), sparse(64, 8, 16, SM)));
    }
    let hybrid = LayoutSpec::new(
        crate::config::parse_moe_notation("16e4a1s", 16, Some(64), SM).expect("valid layout"),
    );
    entries.push(PlanEntry::pair(ForwardVariance, hybrid.clone(), dense(128)));
    entries.push(PlanEntry::pair(UpdateMagnitude, hybrid, dense(128)));
    entries.push(PlanEntry::pair(ActivationStats, sparse(64, 8, 16, SM), dense(128)));
    for router in [SM, SG] {
        entries.push(PlanEntry::single(ForwardFactor, sparse(8, 8, 16, router)));
    }
    for (n, a) in [(8, 2), (64, 8)] {
        entries.push(PlanEntry {
            samples: Some(64_000),
            ..PlanEntry::single(ExpertLoad, sparse(n, a, 16, SM))
        });
    }
    VerificationPlan {
        entries,
        ..VerificationPlan::default()
    }
}

/// Entries built to fail: route scale 1 on Bridge-I and Bridge-II pairs, and
/// a down-projection std that ignores the active width.
pub fn negative_control_plan() -> VerificationPlan {
    use Quantity::*;
    let base = VerificationPlan::default().base_stds();
    VerificationPlan {
        entries: vec![
            PlanEntry::pair(ForwardVariance, sparse(4, 4, 32, SM).with_route_scale(1.0), dense(128)),
            PlanEntry::pair(UpdateMagnitude, sparse(64, 8, 16, SM).with_route_scale(1.0), dense(128)),
            PlanEntry::pair(ForwardVariance, sparse(64, 2, 16, SM).with_down_std(base.down), dense(128)),
        ],
        ..VerificationPlan::default()
    }
}

/// Independent initializations per layout in the suite.
pub const SUITE_INITS: usize = 32;

fn run_entry(plan: &VerificationPlan, entry: &PlanEntry, rng: &mut SimRng) -> Result<MatchReport> {
    let base = plan.base_stds();
    let n = entry.samples.unwrap_or(plan.samples);
    let tol = entry.tolerance.unwrap_or(entry.quantity.default_tolerance());
    let mut streams = rng.split(3);
    let inputs = streams.pop().expect("three streams");
    let layout = match &entry.rhs {
        Some(r) => format!("{} vs {}", entry.lhs.label(), r.label()),
        None => entry.lhs.label(),
    };
    let name = entry.quantity.as_str();
    let stat = match entry.quantity {
        Quantity::ForwardVariance => Some(Statistic::ForwardVariance {
            input_std: plan.input_std,
        }),
        Quantity::UpdateMagnitude => Some(Statistic::UpdateMagnitude {
            eta_down: plan.eta_down,
            input_std: plan.input_std,
        }),
        Quantity::ActivationStats => Some(Statistic::ActivationSecondMoment {
            input_std: plan.input_std,
        }),
        _ => None,
    };
    if let Some(stat) = stat {
        let rhs = entry.rhs.as_ref().expect("validated");
        let est = |spec: &LayoutSpec, init: &mut SimRng| {
            ensemble_estimate(spec, plan.d, &base, stat, SUITE_INITS, n, init, &mut inputs.clone())
        };
        let l = est(&entry.lhs, &mut streams[0])?;
        let r = est(rhs, &mut streams[1])?;
        return Ok(MatchReport::compare(name, layout, l, r, tol));
    }
    Ok(match entry.quantity {
        Quantity::ForwardFactor => {
            let lhs = entry.lhs.build(plan.d, &base, &mut streams[0])?;
            let est = mc_estimate_f(&lhs, plan.input_std, n, &mut inputs.clone())?;
            MatchReport::compare(name, layout, est.factor, est.perturbative, tol)
        }
        _ => {
            const INITS: usize = 64;
            let stds = entry.lhs.stds(plan.d, &base);
            let loads = symmetric_load_estimate(
                &entry.lhs.block,
                plan.d,
                stds,
                INITS,
                (n / INITS).max(1),
                &mut inputs.clone(),
            )?;
            let expected = entry.lhs.block.activated() as f64 / entry.lhs.block.routed_experts() as f64;
            let worst = loads
                .iter()
                .copied()
                .max_by(|p, q| ((p.mean - expected).abs()).total_cmp(&(q.mean - expected).abs()))
                .expect("routed layout has experts");
            MatchReport::compare(name, layout, worst, MCEstimate::exact(expected), tol)
        }
    })
}

/// Run every plan entry in order. Entry `i` uses the `i`-th stream split
/// from `rng`, so reports do not depend on which other entries are present
/// after it.
pub fn bridge_suite(plan: &VerificationPlan, rng: &mut SimRng) -> Result<Vec<MatchReport>> {
    plan.validate()?;
    let streams = rng.split(plan.entries.len());
    plan.entries
        .iter()
        .zip(streams)
        .enumerate()
        .map(|(i, (entry, mut r))| {
            run_entry(plan, entry, &mut r).map_err(|e| {
                let rhs = entry.rhs.as_ref().map(|r| format!(" vs {}", r.label())).unwrap_or_default();
                e.context(format!("entry {i} ({}{rhs})", entry.lhs.label()))
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub pass: bool,
    pub reports: Vec<MatchReport>,
}

impl SuiteReport {
    pub fn new(seed: u64, reports: Vec<MatchReport>) -> Self {
        SuiteReport {
            seed,
            pass: reports.iter().all(|r| r.pass),
            reports,
        }
    }
}

/// Tab-separated table with columns quantity, layout, lhs, rhs, ratio, tolerance, pass.
pub fn reports_tsv(reports: &[MatchReport]) -> String {
    let mut out = String::from("quantity\tlayout\tlhs\trhs\tratio\ttolerance\tpass\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.15e}\t{:.15e}\t{:.15e}\t{:.15e}\t{}",
            r.quantity, r.layout, r.lhs.mean, r.rhs.mean, r.ratio, r.tolerance, r.pass
        );
    }
    out
}
