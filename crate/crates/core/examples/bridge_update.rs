//! One sign-proxy step on the down projections: E|Δy| for a dense FFN and
//! for 64-expert sparse MoEs at a = 2..16 with A = d/(a·h), R = a.

use complete_mue::config::{BlockSpec, RouterKind};
use complete_mue::micro::InitStds;
use complete_mue::rng::{SimRng, DEFAULT_SEED};
use complete_mue::verify::{ensemble_estimate, LayoutSpec, MatchReport, Statistic};

fn main() -> complete_mue::Result<()> {
    let d = 128;
    let s = 1.0 / (d as f64).sqrt();
    let base = InitStds { router: 0.1 * s, up_gate: s, down: s };
    let stat = Statistic::UpdateMagnitude { eta_down: 1e-3, input_std: 1.0 };
    let mut rng = SimRng::new(DEFAULT_SEED);
    let inputs = rng.split(1).remove(0);
    let mut estimate = |spec: &LayoutSpec| ensemble_estimate(spec, d, &base, stat, 32, 8_000, &mut rng, &mut inputs.clone());

    let dense = estimate(&LayoutSpec::new(BlockSpec::dense(128)?))?;
    println!("dense128: E|dy| = {:.4e} ± {:.1e}", dense.mean, dense.std_error);
    for a in [2, 4, 8, 16] {
        let spec = LayoutSpec::new(BlockSpec::sparse(64, a, 16, RouterKind::NormalizedSoftmax)?);
        let ok = MatchReport::compare("update", spec.label(), estimate(&spec)?, dense, 0.10);
        let control = spec.with_route_scale(1.0);
        let bad = MatchReport::compare("update", control.label(), estimate(&control)?, dense, 0.10);
        println!("{:<24} ratio {:.4}   with R=1: {:.4} (1/a = {:.4})", ok.layout, ok.ratio, bad.ratio, 1.0 / a as f64);
    }
    Ok(())
}
