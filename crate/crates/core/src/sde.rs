//! Scalar RMSProp-style iteration with decoupled weight decay and its SDE limit.
//!
//! The discrete update `ϑ ← ϑ - η(g/σ_exp + λϑ)` with `g = ḡ + σ_exp·ξ` is
//! governed by three objects: `σ₀ = η·σ_exp`, `λ̃ = λ/η` and the horizon
//! `H = T·η²`. In SDE time `τ = t·η²` it becomes
//! `dΘ = -(ḡ/σ₀)dτ - λ̃Θ dτ - dW`.

use std::fmt::Write as _;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{par_draws, SimRng};
use crate::transfer::{expertwise_eta_ratio, ExpertWorkload};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SDEConfig {
    pub sigma0: f64,
    pub lambda_tilde: f64,
    #[serde(rename = "H_SDE")]
    pub horizon: f64,
    pub gbar: f64,
    pub n_steps: usize,
    pub n_traj: usize,
    pub theta0: f64,
}

impl SDEConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(Error::invalid("sigma0", "must be positive"));
        }
        if !(self.lambda_tilde >= 0.0 && self.lambda_tilde.is_finite()) {
            return Err(Error::invalid("lambda_tilde", "must be non-negative"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid("H_SDE", "must be positive"));
        }
        if !self.gbar.is_finite() || !self.theta0.is_finite() {
            return Err(Error::invalid("gbar", "gbar and theta0 must be finite"));
        }
        if self.n_steps < 10 {
            return Err(Error::invalid("n_steps", "need at least 10 steps"));
        }
        if self.n_traj < 100 {
            return Err(Error::invalid("n_traj", "need at least 100 trajectories"));
        }
        Ok(())
    }

    /// Closed-form mean and variance of `Θ_τ`.
    pub fn moments_at(&self, tau: f64) -> (f64, f64) {
        let drift = self.gbar / self.sigma0;
        let l = self.lambda_tilde;
        if l == 0.0 {
            return (self.theta0 - drift * tau, tau);
        }
        let fixed = drift / l;
        let decay = (-l * tau).exp();
        let mean = (self.theta0 + fixed) * decay - fixed;
        let var = -(-2.0 * l * tau).exp_m1() / (2.0 * l);
        (mean, var)
    }
}

/// The SDE objects a discrete configuration maps to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdeObjects {
    pub sigma0: f64,
    pub lambda_tilde: f64,
    #[serde(rename = "H_SDE")]
    pub horizon: f64,
}

impl SdeObjects {
    /// Equal to relative precision `tol` in every component.
    pub fn approx_eq(&self, other: &SdeObjects, tol: f64) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= tol * a.abs().max(b.abs());
        close(self.sigma0, other.sigma0)
            && close(self.lambda_tilde, other.lambda_tilde)
            && close(self.horizon, other.horizon)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteConfig {
    pub eta: f64,
    pub lambda: f64,
    pub sigma_exp: f64,
    pub gbar: f64,
    #[serde(rename = "T")]
    pub steps: usize,
    pub n_traj: usize,
    pub theta0: f64,
}

impl DiscreteConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid("eta", "must be non-negative"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda", "must be non-negative"));
        }
        if !(self.sigma_exp > 0.0 && self.sigma_exp.is_finite()) {
            return Err(Error::invalid("sigma_exp", "must be positive"));
        }
        if !self.gbar.is_finite() || !self.theta0.is_finite() {
            return Err(Error::invalid("gbar", "gbar and theta0 must be finite"));
        }
        if self.steps < 10 {
            return Err(Error::invalid("T", "need at least 10 steps"));
        }
        if self.n_traj < 100 {
            return Err(Error::invalid("n_traj", "need at least 100 trajectories"));
        }
        Ok(())
    }

    pub fn objects(&self) -> SdeObjects {
        SdeObjects {
            sigma0: self.eta * self.sigma_exp,
            lambda_tilde: self.lambda / self.eta,
            horizon: self.steps as f64 * self.eta * self.eta,
        }
    }

    /// The SDE this iteration discretizes, integrated with `n_steps` steps.
    pub fn to_sde(&self, n_steps: usize) -> SDEConfig {
        let o = self.objects();
        SDEConfig {
            sigma0: o.sigma0,
            lambda_tilde: o.lambda_tilde,
            horizon: o.horizon,
            gbar: self.gbar,
            n_steps,
            n_traj: self.n_traj,
            theta0: self.theta0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SDEStats {
    pub terminal_mean: f64,
    pub terminal_var: f64,
    pub n_traj: usize,
    pub mean_std_error: f64,
    pub var_std_error: f64,
}

impl SDEStats {
    pub fn from_samples(xs: &[f64]) -> Result<Self> {
        let n = xs.len();
        if n < 2 {
            return Err(Error::InvalidInput("statistics need at least 2 trajectories".into()));
        }
        let nf = n as f64;
        let mean = xs.iter().sum::<f64>() / nf;
        let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / nf;
        let var = m2 * nf / (nf - 1.0);
        let stats = SDEStats {
            terminal_mean: mean,
            terminal_var: var,
            n_traj: n,
            mean_std_error: (var / nf).sqrt(),
            var_std_error: ((m4 - m2 * m2).max(0.0) / nf).sqrt(),
        };
        if !stats.terminal_mean.is_finite() || !stats.terminal_var.is_finite() {
            return Err(Error::NonFinite("terminal statistics".into()));
        }
        Ok(stats)
    }

    /// Means and variances agree within `k` combined std errors.
    pub fn matches(&self, other: &SDEStats, k: f64) -> bool {
        let within = |a: f64, b: f64, sa: f64, sb: f64| (a - b).abs() <= k * (sa * sa + sb * sb).sqrt();
        within(self.terminal_mean, other.terminal_mean, self.mean_std_error, other.mean_std_error)
            && within(self.terminal_var, other.terminal_var, self.var_std_error, other.var_std_error)
    }
}

/// One row of a trajectory summary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub tau: f64,
    pub mean: f64,
    pub var: f64,
}

/// Run `n_traj` trajectories of `n_steps` steps and record the state at
/// `checkpoints` evenly spaced steps (the last one terminal).
fn integrate<F>(
    n_traj: usize,
    n_steps: usize,
    checkpoints: usize,
    theta0: f64,
    rng: &mut SimRng,
    step: F,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(f64, &mut SimRng) -> f64 + Sync,
{
    let checkpoints = checkpoints.clamp(1, n_steps);
    let marks: Vec<usize> = (1..=checkpoints).map(|k| k * n_steps / checkpoints).collect();
    par_draws(n_traj, rng, |r| {
        let mut theta = theta0;
        let mut out = Vec::with_capacity(marks.len());
        let mut next = 0;
        for t in 1..=n_steps {
            theta = step(theta, r);
            if t == marks[next] {
                out.push(theta);
                next += 1;
            }
        }
        Ok(out)
    })
}

fn summarize(paths: &[Vec<f64>], n_steps: usize, horizon: f64) -> Result<(SDEStats, Vec<SummaryRow>)> {
    let k = paths[0].len();
    let mut rows = Vec::with_capacity(k);
    let mut last = None;
    for c in 0..k {
        let col: Vec<f64> = paths.iter().map(|p| p[c]).collect();
        let s = SDEStats::from_samples(&col)?;
        let step = (c + 1) * n_steps / k;
        rows.push(SummaryRow {
            tau: horizon * step as f64 / n_steps as f64,
            mean: s.terminal_mean,
            var: s.terminal_var,
        });
        last = Some(s);
    }
    Ok((last.expect("at least one checkpoint"), rows))
}

/// Euler–Maruyama with `checkpoints` summary rows.
pub fn simulate_sde_summary(cfg: &SDEConfig, checkpoints: usize, rng: &mut SimRng) -> Result<(SDEStats, Vec<SummaryRow>)> {
    cfg.validate()?;
    let dt = cfg.horizon / cfg.n_steps as f64;
    let sq = dt.sqrt();
    let drift = cfg.gbar / cfg.sigma0;
    let l = cfg.lambda_tilde;
    let paths = integrate(cfg.n_traj, cfg.n_steps, checkpoints, cfg.theta0, rng, |th, r| {
        th - (drift + l * th) * dt - sq * r.normal()
    })?;
    summarize(&paths, cfg.n_steps, cfg.horizon)
}

pub fn simulate_sde(cfg: &SDEConfig, rng: &mut SimRng) -> Result<SDEStats> {
    Ok(simulate_sde_summary(cfg, 1, rng)?.0)
}

/// The discrete iteration with `checkpoints` summary rows; `tau` is `t·η²`.
pub fn simulate_discrete_summary(
    cfg: &DiscreteConfig,
    checkpoints: usize,
    rng: &mut SimRng,
) -> Result<(SDEStats, Vec<SummaryRow>)> {
    cfg.validate()?;
    let c = *cfg;
    let paths = integrate(c.n_traj, c.steps, checkpoints, c.theta0, rng, |th, r| {
        let g = c.gbar + c.sigma_exp * r.normal();
        th - c.eta * (g / c.sigma_exp + c.lambda * th)
    })?;
    summarize(&paths, c.steps, c.steps as f64 * c.eta * c.eta)
}

pub fn simulate_discrete(cfg: &DiscreteConfig, rng: &mut SimRng) -> Result<SDEStats> {
    Ok(simulate_discrete_summary(cfg, 1, rng)?.0)
}

/// Tab-separated trajectory summary with columns tau, mean, var.
pub fn summary_tsv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("tau\tmean\tvar\n");
    for r in rows {
        let _ = writeln!(out, "{:.15e}\t{:.15e}\t{:.15e}", r.tau, r.mean, r.var);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub stats: SDEStats,
    pub exact_mean: f64,
    pub exact_var: f64,
    /// Deviations in std errors.
    pub mean_z: f64,
    pub var_z: f64,
    pub pass: bool,
}

/// Compare simulated terminal moments with the closed form (3 std errors).
pub fn ou_oracle(cfg: &SDEConfig, rng: &mut SimRng) -> Result<OracleReport> {
    let stats = simulate_sde(cfg, rng)?;
    let (exact_mean, exact_var) = cfg.moments_at(cfg.horizon);
    let mean_z = (stats.terminal_mean - exact_mean) / stats.mean_std_error;
    let var_z = (stats.terminal_var - exact_var) / stats.var_std_error;
    Ok(OracleReport {
        stats,
        exact_mean,
        exact_var,
        mean_z,
        var_z,
        pass: mean_z.abs() <= 3.0 && var_z.abs() <= 3.0,
    })
}

fn positive_kappa(kappa: f64) -> Result<()> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::invalid("kappa_B", "must be positive"));
    }
    Ok(())
}

fn scaled_steps(steps: usize, kappa: f64) -> Result<usize> {
    let t = steps as f64 / kappa;
    let r = t.round();
    if (t - r).abs() > 1e-9 * t.max(1.0) || r < 1.0 {
        return Err(Error::InvalidInput(format!(
            "T/κ_B = {steps}/{kappa} is not a whole number of steps"
        )));
    }
    Ok(r as usize)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Case1Result {
    pub kappa_b: f64,
    pub transferred_config: DiscreteConfig,
    pub base_objects: SdeObjects,
    pub transferred_objects: SdeObjects,
    /// Derived objects agree to 1e-12 relative.
    pub objects_equal: bool,
    pub base: SDEStats,
    pub transferred: SDEStats,
    #[serde(rename = "match")]
    pub matched: bool,
}

/// Batch scaled by `κ_B` at fixed token budget: `σ_exp' = σ_exp/√κ`,
/// `η' = √κ·η`, `λ' = √κ·λ`, `T' = T/κ`.
pub fn batch_transfer_config(base: &DiscreteConfig, kappa_b: f64) -> Result<DiscreteConfig> {
    positive_kappa(kappa_b)?;
    let s = kappa_b.sqrt();
    Ok(DiscreteConfig {
        eta: base.eta * s,
        lambda: base.lambda * s,
        sigma_exp: base.sigma_exp / s,
        steps: scaled_steps(base.steps, kappa_b)?,
        ..*base
    })
}

fn case1_compare(
    base: &DiscreteConfig,
    transferred: DiscreteConfig,
    kappa_b: f64,
    common_random_numbers: bool,
    rng: &mut SimRng,
) -> Result<Case1Result> {
    base.validate()?;
    transferred.validate()?;
    let (b, t) = if common_random_numbers {
        crn_pair(base, &transferred, kappa_b, rng)?
    } else {
        let mut streams = rng.split(2);
        (
            simulate_discrete(base, &mut streams[0])?,
            simulate_discrete(&transferred, &mut streams[1])?,
        )
    };
    let base_objects = base.objects();
    let transferred_objects = transferred.objects();
    let objects_equal = base_objects.approx_eq(&transferred_objects, 1e-12);
    Ok(Case1Result {
        kappa_b,
        transferred_config: transferred,
        base_objects,
        transferred_objects,
        objects_equal,
        base: b,
        transferred: t,
        matched: objects_equal && b.matches(&t, 3.0),
    })
}

/// Both runs driven by the same Gaussian path: each transferred step uses
/// the normalized sum of the `κ` base increments it spans.
fn crn_pair(
    base: &DiscreteConfig,
    transferred: &DiscreteConfig,
    kappa_b: f64,
    rng: &mut SimRng,
) -> Result<(SDEStats, SDEStats)> {
    let k = kappa_b.round() as usize;
    if (kappa_b - k as f64).abs() > 0.0 || k == 0 || base.steps != k * transferred.steps {
        return Err(Error::InvalidInput(
            "common random numbers need an integer κ_B dividing T".into(),
        ));
    }
    let (b, t) = (*base, *transferred);
    let norm = (k as f64).sqrt();
    let pairs = par_draws(b.n_traj, rng, |r| {
        let (mut x, mut y) = (b.theta0, t.theta0);
        for _ in 0..t.steps {
            let mut sum = 0.0;
            for _ in 0..k {
                let xi = r.normal();
                sum += xi;
                let g = b.gbar + b.sigma_exp * xi;
                x -= b.eta * (g / b.sigma_exp + b.lambda * x);
            }
            let g = t.gbar + t.sigma_exp * (sum / norm);
            y -= t.eta * (g / t.sigma_exp + t.lambda * y);
        }
        Ok((x, y))
    })?;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    Ok((SDEStats::from_samples(&xs)?, SDEStats::from_samples(&ys)?))
}

/// Exact batch transfer: the derived SDE objects coincide and the terminal
/// distributions agree.
pub fn case1_batch_transfer(
    base: &DiscreteConfig,
    kappa_b: f64,
    common_random_numbers: bool,
    rng: &mut SimRng,
) -> Result<Case1Result> {
    let transferred = batch_transfer_config(base, kappa_b)?;
    case1_compare(base, transferred, kappa_b, common_random_numbers, rng)
}

/// Negative control: the batch change without the `√κ` factors on η and λ,
/// which shrinks the horizon to `H/κ`.
pub fn case1_wrong_rule(base: &DiscreteConfig, kappa_b: f64, rng: &mut SimRng) -> Result<Case1Result> {
    positive_kappa(kappa_b)?;
    let transferred = DiscreteConfig {
        sigma_exp: base.sigma_exp / kappa_b.sqrt(),
        steps: scaled_steps(base.steps, kappa_b)?,
        ..*base
    };
    case1_compare(base, transferred, kappa_b, false, rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Case2Result {
    pub kappa_b: f64,
    pub sigma0_ratio: f64,
    pub horizon_ratio: f64,
    pub base: SDEStats,
    pub transferred: SDEStats,
    /// Ratio of terminal mean displacements net of the decayed start, which
    /// isolates the `ḡ/σ₀` drift.
    pub drift_ratio: f64,
}

/// Batch scaled by `κ_B` at a fixed iteration count with η, λ, T unchanged.
pub fn case2_fixed_iterations(base: &DiscreteConfig, kappa_b: f64, rng: &mut SimRng) -> Result<Case2Result> {
    positive_kappa(kappa_b)?;
    base.validate()?;
    let transferred = DiscreteConfig {
        sigma_exp: base.sigma_exp / kappa_b.sqrt(),
        ..*base
    };
    let (o, p) = (base.objects(), transferred.objects());
    let mut streams = rng.split(2);
    let b = simulate_discrete(base, &mut streams[0])?;
    let t = simulate_discrete(&transferred, &mut streams[1])?;
    let start = base.theta0 * (-o.lambda_tilde * o.horizon).exp();
    Ok(Case2Result {
        kappa_b,
        sigma0_ratio: p.sigma0 / o.sigma0,
        horizon_ratio: p.horizon / o.horizon,
        base: b,
        transferred: t,
        drift_ratio: (t.terminal_mean - start) / (b.terminal_mean - start),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivatedResult {
    pub active: usize,
    pub active_prime: usize,
    pub eta_ratio: f64,
    pub sigma0_ratio: f64,
    pub base_config: DiscreteConfig,
    pub transferred_config: DiscreteConfig,
    pub base: SDEStats,
    pub transferred: SDEStats,
}

/// Expert-side noise scale `σ_exp = √(N/(B·a))` under balanced routing.
pub fn expert_noise_scale(experts: usize, batch: u64, active: usize) -> f64 {
    (experts as f64 / (batch as f64 * active as f64)).sqrt()
}

/// Change the activated-expert count `a → a'` at fixed `N`, `B`, `T`.
/// Expert batch and expert token ratios are both `a'/a`, so the η
/// correction `√(ρ_B^exp/ρ_D^exp)` is exactly 1, while σ₀ moves by `√(a/a')`.
pub fn activated_expert_transfer(
    base: &DiscreteConfig,
    active: usize,
    active_prime: usize,
    experts: usize,
    batch: u64,
    rng: &mut SimRng,
) -> Result<ActivatedResult> {
    base.validate()?;
    if active == 0 || active_prime == 0 || active > experts || active_prime > experts {
        return Err(Error::InvalidInput(format!(
            "need 1 ≤ a, a' ≤ N, got a={active}, a'={active_prime}, N={experts}"
        )));
    }
    if batch == 0 {
        return Err(Error::invalid("B", "must be positive"));
    }
    let steps = base.steps as u128;
    let rho_b = Ratio::new(active_prime as u128, active as u128);
    let rho_d = Ratio::new(active_prime as u128 * steps, active as u128 * steps);
    let q = rho_b / rho_d;
    let eta_ratio = (*q.numer() as f64 / *q.denom() as f64).sqrt();

    let base_config = DiscreteConfig {
        sigma_exp: expert_noise_scale(experts, batch, active),
        ..*base
    };
    let transferred_config = DiscreteConfig {
        eta: base.eta * eta_ratio,
        sigma_exp: expert_noise_scale(experts, batch, active_prime),
        ..*base
    };
    let mut streams = rng.split(2);
    Ok(ActivatedResult {
        active,
        active_prime,
        eta_ratio,
        sigma0_ratio: transferred_config.objects().sigma0 / base_config.objects().sigma0,
        base: simulate_discrete(&base_config, &mut streams[0])?,
        transferred: simulate_discrete(&transferred_config, &mut streams[1])?,
        base_config,
        transferred_config,
    })
}

/// Per-expert η ratios from time-averaged loads `ℓ̄_e(a)` and `ℓ̄_e(a')` at a
/// common batch and step count.
pub fn expertwise_eta_ratios(
    loads: &[f64],
    loads_prime: &[f64],
    batch: u64,
    steps: u64,
) -> Result<Vec<f64>> {
    if loads.len() != loads_prime.len() {
        return Err(Error::InvalidInput("load vectors differ in length".into()));
    }
    let workload = |load: f64| {
        let b = batch as f64 * load;
        ExpertWorkload {
            batch: b,
            tokens: b * steps as f64,
            density: load,
        }
    };
    loads
        .iter()
        .zip(loads_prime)
        .map(|(&l, &lp)| expertwise_eta_ratio(&workload(l), &workload(lp)))
        .collect()
}
