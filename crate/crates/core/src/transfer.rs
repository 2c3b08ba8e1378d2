//! Layer-level and global transfer rules and their composition.
//!
//! The layer rule depends on one quantity, the active width `H_act` of the
//! target block. Output multiplier, down-projection init and route scale are
//! read from it; up/gate projections and the router readout follow ordinary
//! backbone-width μP. Schedule changes contribute `√(ρ_B/ρ_D)` on LR and
//! weight decay, `√(ρ_D/ρ_B)` on ε and `ρ_B/ρ_D` on `1-β`.

use std::collections::BTreeMap;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::config::{
    BlockSpec, ModelConfig, ParamGroup, ReferenceConfig, RouterKind, ScheduleConfig,
};
use crate::error::{Error, Result};

/// Output-branch rule for one FFN/MoE layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRule {
    /// Output multiplier `A = d / H_act`.
    #[serde(rename = "A")]
    pub output_multiplier: f64,
    /// Route scale on normalized routed sums (`1` for dense, `a` for routed).
    #[serde(rename = "R")]
    pub route_scale: f64,
    /// Multiplier on the unit-expansion down-projection std: `ρ_d^{-1/2} ρ_H^{1/2}`.
    pub init_std_factor: f64,
    /// Multiplier on the reference down-projection LR: `ρ_d^{-1}`.
    pub lr_factor: f64,
    /// Routing forward factor `F_{a,N}`; emitted rules keep it at 1.
    #[serde(rename = "F")]
    pub forward_factor: f64,
}

/// Init and LR multipliers for a tensor whose fan-in is the residual width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthFactors {
    pub init_std_factor: f64,
    pub lr_factor: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalRule {
    pub eta_factor: f64,
    pub wd_factor: f64,
    pub eps_factor: f64,
    pub one_minus_beta_factor: f64,
    pub residual_branch_factor: f64,
}

/// Tokens seen by one routed expert.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertWorkload {
    /// Mean tokens per step.
    #[serde(rename = "B_exp")]
    pub batch: f64,
    /// Tokens over training.
    #[serde(rename = "D_exp")]
    pub tokens: f64,
    /// Routing density `a/N` (1 for always-active blocks).
    #[serde(rename = "s")]
    pub density: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadDiag {
    pub rho_d: f64,
    #[serde(rename = "rho_L")]
    pub rho_layers: f64,
    #[serde(rename = "rho_B")]
    pub rho_batch: f64,
    #[serde(rename = "rho_D")]
    pub rho_tokens: f64,
    /// Target `H_act / d`.
    #[serde(rename = "rho_H_act")]
    pub rho_hidden: f64,
    #[serde(rename = "H_act")]
    pub active_width: usize,
    #[serde(rename = "B_exp")]
    pub expert_batch: f64,
    #[serde(rename = "D_exp")]
    pub expert_tokens: f64,
    #[serde(rename = "sparsity_s")]
    pub density: f64,
    /// σ₀ of the target relative to the reference workload.
    pub sigma0_ratio: f64,
}

/// Final hyperparameters for one parameter group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSetting {
    pub init_std: f64,
    pub lr: f64,
    pub wd: f64,
    pub eps: f64,
    pub beta1: f64,
    pub beta2: f64,
}

/// Multipliers relative to the reference for one group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupFactors {
    pub init_std: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    pub per_group: BTreeMap<ParamGroup, GroupSetting>,
    pub multipliers: BTreeMap<ParamGroup, GroupFactors>,
    pub layer: LayerRule,
    pub global: GlobalRule,
    pub diagnostics: WorkloadDiag,
}

fn ratio(num: usize, den: usize) -> f64 {
    num as f64 / den as f64
}

/// Route scale of a block: `1` without routed experts, otherwise `a`.
pub fn route_scale(block: &BlockSpec) -> f64 {
    match block.activated() {
        0 => 1.0,
        a => a as f64,
    }
}

/// Output-branch rule for `block` at residual width `d`, relative to a
/// unit-expansion dense reference at width `d_star`.
pub fn layer_rule(block: &BlockSpec, d: usize, d_star: usize) -> LayerRule {
    let hidden = block.active_width();
    // ρ_H / ρ_d = H·d⋆ / d²
    let init_sq = (hidden as f64 * d_star as f64) / (d as f64 * d as f64);
    LayerRule {
        output_multiplier: ratio(d, hidden),
        route_scale: route_scale(block),
        init_std_factor: init_sq.sqrt(),
        lr_factor: ratio(d_star, d),
        forward_factor: 1.0,
    }
}

/// Backbone-width μP for FFN/MoE up and gate projections.
pub fn up_gate_rule(d: usize, d_star: usize) -> WidthFactors {
    WidthFactors {
        init_std_factor: ratio(d_star, d).sqrt(),
        lr_factor: ratio(d_star, d),
    }
}

/// Backbone-width μP for the router readout. Same factors as [`up_gate_rule`].
pub fn router_rule(d: usize, d_star: usize) -> WidthFactors {
    up_gate_rule(d, d_star)
}

/// Batch, duration and depth factors from the reference schedule to the target.
pub fn global_rule(
    reference: &ScheduleConfig,
    target: &ScheduleConfig,
    layers: usize,
    layers_star: usize,
) -> GlobalRule {
    // ρ_B/ρ_D = (B'/B) / (B'T'/BT) = T/T'
    let q = reference.steps as f64 / target.steps as f64;
    let eta = q.sqrt();
    GlobalRule {
        eta_factor: eta,
        wd_factor: eta,
        eps_factor: 1.0 / eta,
        one_minus_beta_factor: q,
        residual_branch_factor: ratio(layers_star, layers),
    }
}

/// Balanced per-expert workload of `block` under `schedule`.
pub fn expert_workload(block: &BlockSpec, schedule: &ScheduleConfig) -> ExpertWorkload {
    let batch = schedule.batch as f64;
    let steps = schedule.steps as f64;
    let (n, a) = (block.routed_experts(), block.activated());
    if n == 0 || a == 0 {
        return ExpertWorkload {
            batch,
            tokens: batch * steps,
            density: 1.0,
        };
    }
    let density = ratio(a, n);
    let b_exp = batch * a as f64 / n as f64;
    ExpertWorkload {
        batch: b_exp,
        tokens: b_exp * steps,
        density,
    }
}

/// Per-expert workloads from time-averaged normalized loads `ℓ̄_e` (which sum to `a`).
pub fn expert_workload_from_loads(
    schedule: &ScheduleConfig,
    mean_loads: &[f64],
) -> Vec<ExpertWorkload> {
    let batch = schedule.batch as f64;
    let steps = schedule.steps as f64;
    mean_loads
        .iter()
        .map(|&load| {
            let b = batch * load;
            ExpertWorkload {
                batch: b,
                tokens: b * steps,
                density: load,
            }
        })
        .collect()
}

/// Expert-side σ₀ of `target` relative to `source`: `1/√(B_exp'/B_exp)`.
///
/// The first-order η, λ corrections cancel when expert batch and duration
/// ratios agree, so this residual shift is the only expert-side change.
pub fn sigma0_shift(source: &ExpertWorkload, target: &ExpertWorkload) -> Result<f64> {
    if !(source.batch > 0.0) || !(target.batch > 0.0) {
        return Err(Error::InvalidInput(
            "σ₀ shift needs positive expert batch on both sides".into(),
        ));
    }
    Ok((source.batch / target.batch).sqrt())
}

/// Per-expert η ratio under measured loads: `√(m_B/m_D)`, which is 1 whenever
/// both settings run the same number of steps.
pub fn expertwise_eta_ratio(
    source: &ExpertWorkload,
    target: &ExpertWorkload,
) -> Result<f64> {
    if !(source.batch > 0.0 && target.batch > 0.0) {
        return Err(Error::InvalidInput(
            "expert with zero average load under one setting".into(),
        ));
    }
    let m_batch = target.batch / source.batch;
    let m_tokens = target.tokens / source.tokens;
    Ok((m_batch / m_tokens).sqrt())
}

fn transform_beta(name: &str, beta: f64, one_minus_beta_factor: f64) -> Result<f64> {
    // 1 - β' = f·(1 - β), written so that f = 1 returns β bit-for-bit.
    let out = beta - (one_minus_beta_factor - 1.0) * (1.0 - beta);
    if out > 0.0 && out < 1.0 {
        Ok(out)
    } else {
        Err(Error::OutOfRange {
            name: name.to_owned(),
            value: out,
        })
    }
}

/// Full transfer from the dense reference to a target model and schedule.
pub fn compose_transfer(
    reference: &ReferenceConfig,
    target_model: &ModelConfig,
    target_schedule: &ScheduleConfig,
) -> Result<TransferResult> {
    reference.validate().map_err(|e| e.under("reference"))?;
    target_model.validate().map_err(|e| e.under("model"))?;
    target_schedule
        .validate()
        .map_err(|e| e.under("schedule"))?;

    let d = target_model.d;
    let d_star = reference.model.d;
    let hidden = target_model.block.active_width();
    let hidden_star = reference.hidden();

    let layer = layer_rule(&target_model.block, d, d_star);
    let width = up_gate_rule(d, d_star);
    let global = global_rule(
        &reference.schedule,
        target_schedule,
        target_model.layers,
        reference.model.layers,
    );

    // Down-projection std relative to the reference's own expansion ratio:
    // (ρ_H / ρ_H⋆) / ρ_d = H·d⋆² / (d²·H⋆).
    let ds = d_star as f64;
    let down_init =
        ((hidden as f64 * ds * ds) / ((d as f64) * (d as f64) * hidden_star as f64)).sqrt();

    let mut multipliers = BTreeMap::new();
    for group in ParamGroup::ALL {
        let init = match group {
            ParamGroup::DownProjection => down_init,
            _ => width.init_std_factor,
        };
        multipliers.insert(
            group,
            GroupFactors {
                init_std: init,
                lr: width.lr_factor * global.eta_factor,
            },
        );
    }

    let g = &reference.base_global;
    let beta1 = transform_beta("beta1", g.beta1, global.one_minus_beta_factor)?;
    let beta2 = transform_beta("beta2", g.beta2, global.one_minus_beta_factor)?;
    let wd = g.wd * global.wd_factor;
    let eps = g.eps * global.eps_factor;

    let per_group = multipliers
        .iter()
        .map(|(group, f)| {
            let base = reference.base[group];
            (
                *group,
                GroupSetting {
                    init_std: base.init_std * f.init_std,
                    lr: base.lr * f.lr,
                    wd,
                    eps,
                    beta1,
                    beta2,
                },
            )
        })
        .collect();

    let source_load = expert_workload(&reference.model.block, &reference.schedule);
    let target_load = expert_workload(&target_model.block, target_schedule);
    let diagnostics = WorkloadDiag {
        rho_d: ratio(d, d_star),
        rho_layers: ratio(target_model.layers, reference.model.layers),
        rho_batch: target_schedule.batch as f64 / reference.schedule.batch as f64,
        rho_tokens: target_schedule.tokens() as f64 / reference.schedule.tokens() as f64,
        rho_hidden: ratio(hidden, d),
        active_width: hidden,
        expert_batch: target_load.batch,
        expert_tokens: target_load.tokens,
        density: target_load.density,
        sigma0_ratio: sigma0_shift(&source_load, &target_load)?,
    };

    Ok(TransferResult {
        per_group,
        multipliers,
        layer,
        global,
        diagnostics,
    })
}

/// Both routes of a capacity transfer `(N, a, h) -> (N', a, h)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityComposition {
    pub two_step: LayerRule,
    pub direct: LayerRule,
}

/// Capacity transfer as a chain: widen the Dense-MoE companion from `N·h` to
/// `N'·h`, then sparsify back to `a` activated experts. `direct` is the
/// single-step layer rule of the target. The two agree exactly.
pub fn capacity_composition(
    experts: usize,
    experts_prime: usize,
    active: usize,
    width: usize,
    d: usize,
    d_star: usize,
) -> Result<CapacityComposition> {
    check_capacity_args(experts, experts_prime, active, width)?;
    let companion = layer_rule(
        &BlockSpec::DenseFfn {
            hidden: experts * width,
        },
        d,
        d_star,
    );
    // dense-width step: N·h -> N'·h
    let widen = ratio(experts * width, experts_prime * width);
    let mut chain = LayerRule {
        output_multiplier: companion.output_multiplier * widen,
        route_scale: experts_prime as f64,
        init_std_factor: companion.init_std_factor / widen.sqrt(),
        lr_factor: companion.lr_factor,
        forward_factor: 1.0,
    };
    // reverse-sparsity step: N' active -> a active
    let sparsify = ratio(experts_prime * width, active * width);
    chain.output_multiplier *= sparsify;
    chain.init_std_factor /= sparsify.sqrt();
    chain.route_scale = active as f64;

    let direct = layer_rule(
        &BlockSpec::SparseMoe {
            experts: experts_prime,
            active,
            width,
            router: RouterKind::NormalizedSoftmax,
        },
        d,
        d_star,
    );
    Ok(CapacityComposition {
        two_step: chain,
        direct,
    })
}

fn check_capacity_args(n: usize, n_prime: usize, a: usize, h: usize) -> Result<()> {
    if a == 0 || h == 0 || a > n.min(n_prime) {
        return Err(Error::InvalidInput(format!(
            "capacity transfer needs 1 ≤ a ≤ min(N, N') and h ≥ 1, got a={a}, N={n}, N'={n_prime}, h={h}"
        )));
    }
    Ok(())
}

/// Layer rule in exact rational form: `A`, `R`, squared init factor and LR factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExactLayerRule {
    pub output_multiplier: Ratio<u128>,
    pub route_scale: u128,
    pub init_std_factor_sq: Ratio<u128>,
    pub lr_factor: Ratio<u128>,
}

/// Exact rational evaluation of both capacity routes.
pub fn capacity_composition_exact(
    experts: usize,
    experts_prime: usize,
    active: usize,
    width: usize,
    d: usize,
    d_star: usize,
) -> Result<(ExactLayerRule, ExactLayerRule)> {
    check_capacity_args(experts, experts_prime, active, width)?;
    let r = |n: usize, m: usize| Ratio::new(n as u128, m as u128);
    let (d_, ds) = (d as u128, d_star as u128);
    let companion_width = (experts * width) as u128;

    let mut a_mult = Ratio::new(d_, companion_width);
    let mut init_sq = Ratio::new(companion_width * ds, d_ * d_);
    let widen = r(experts * width, experts_prime * width);
    a_mult *= widen;
    init_sq /= widen;
    let sparsify = r(experts_prime * width, active * width);
    a_mult *= sparsify;
    init_sq /= sparsify;
    let two_step = ExactLayerRule {
        output_multiplier: a_mult,
        route_scale: active as u128,
        init_std_factor_sq: init_sq,
        lr_factor: Ratio::new(ds, d_),
    };

    let hidden = (active * width) as u128;
    let direct = ExactLayerRule {
        output_multiplier: Ratio::new(d_, hidden),
        route_scale: active as u128,
        init_std_factor_sq: Ratio::new(hidden * ds, d_ * d_),
        lr_factor: Ratio::new(ds, d_),
    };
    Ok((two_step, direct))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GranularityCheck {
    /// `H_{a'} / H_a`.
    pub width_ratio_sparse: f64,
    /// `N'h' / (N h)`.
    pub width_ratio_dense: f64,
    pub active: usize,
    pub active_prime: usize,
    /// Expert batch as a fraction of the global batch, identical on both sides.
    pub expert_batch_fraction: f64,
}

/// Fixed-density granularity change `(N, h) -> (N', h')` at density `s`.
pub fn granularity_check(
    experts: usize,
    width: usize,
    experts_prime: usize,
    width_prime: usize,
    density: f64,
) -> Result<GranularityCheck> {
    let activated = |n: usize| -> Result<usize> {
        let raw = density * n as f64;
        let a = raw.round();
        if !(density > 0.0 && density <= 1.0) || (raw - a).abs() > 1e-9 || a < 1.0 {
            return Err(Error::InvalidInput(format!(
                "density {density} gives a non-integral activated count {raw} for N={n}"
            )));
        }
        Ok(a as usize)
    };
    let a = activated(experts)?;
    let a2 = activated(experts_prime)?;
    if width == 0 || width_prime == 0 {
        return Err(Error::InvalidInput("expert widths must be positive".into()));
    }
    // a'h'·Nh == N'h'·ah and a/N == a'/N', checked on integers
    let lhs = (a2 * width_prime) as u128 * (experts * width) as u128;
    let rhs = (experts_prime * width_prime) as u128 * (a * width) as u128;
    if lhs != rhs || (a * experts_prime) != (a2 * experts) {
        return Err(Error::InvalidInput(
            "active-width ratio differs from the Dense-MoE companion ratio".into(),
        ));
    }
    Ok(GranularityCheck {
        width_ratio_sparse: ((a2 * width_prime) as f64) / ((a * width) as f64),
        width_ratio_dense: ((experts_prime * width_prime) as f64) / ((experts * width) as f64),
        active: a,
        active_prime: a2,
        expert_batch_fraction: ratio(a, experts),
    })
}

/// `F_{a,N} = a · mean Σ_e π_e²` over sampled routing-weight vectors.
pub fn forward_factor(active: usize, samples: &[Vec<f64>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no routing-weight samples".into()));
    }
    if active == 0 {
        return Err(Error::InvalidInput("activated experts must be positive".into()));
    }
    let mut total = 0.0;
    for (i, pi) in samples.iter().enumerate() {
        let sum: f64 = pi.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "sample {i}: weights sum to {sum}, not 1"
            )));
        }
        if pi.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidInput(format!("sample {i}: negative weight")));
        }
        if pi.iter().filter(|p| **p > 0.0).count() > active {
            return Err(Error::InvalidInput(format!(
                "sample {i}: more than {active} nonzero weights"
            )));
        }
        total += pi.iter().map(|p| p * p).sum::<f64>();
    }
    Ok(active as f64 * total / samples.len() as f64)
}

/// Route scale that would match the forward variance exactly: `a / √F`.
pub fn exact_forward_route_scale(active: usize, forward_factor: f64) -> f64 {
    active as f64 / forward_factor.sqrt()
}

pub(crate) fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Second-order expansion of `F_{a,N}` around equal active logits.
///
/// `logit_variance` is the per-logit variance of the centered active logits,
/// so `E[Σ δ²] = (a-1)·logit_variance`. For the sigmoid router the spread is
/// damped by `κ(ℓ̄) = σ'(ℓ̄)/σ(ℓ̄) = 1 - σ(ℓ̄)`.
pub fn forward_factor_expansion(
    active: usize,
    logit_variance: f64,
    router: RouterKind,
    mean_logit: f64,
) -> f64 {
    let a = active as f64;
    let spread = (a - 1.0) * logit_variance / a;
    match router {
        RouterKind::NormalizedSoftmax => 1.0 + spread,
        RouterKind::NormalizedSigmoid => {
            let kappa = 1.0 - logistic(mean_logit);
            1.0 + kappa * kappa * spread
        }
    }
}
