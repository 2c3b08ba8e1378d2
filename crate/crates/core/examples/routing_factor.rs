//! Routing forward factor F = a·E[Σπ²] against its second-order expansion,
//! for softmax and sigmoid routers across router init scales.

use complete_mue::config::{BlockSpec, RouterKind};
use complete_mue::micro::{init_layer, InitStds};
use complete_mue::rng::{SimRng, DEFAULT_SEED};
use complete_mue::transfer::{exact_forward_route_scale, forward_factor};
use complete_mue::verify::mc_estimate_f;

fn main() -> complete_mue::Result<()> {
    let d = 128;
    let s = 1.0 / (d as f64).sqrt();
    let mut rng = SimRng::new(DEFAULT_SEED);
    println!("exact: equal weights F = {}, one-hot F = {}", forward_factor(8, &[vec![0.125; 8]])?, forward_factor(8, &[{
        let mut v = vec![0.0; 8];
        v[0] = 1.0;
        v
    }])?);
    println!("{:<8} {:>6} {:>10} {:>10} {:>12} {:>10}", "router", "scale", "logit var", "F (MC)", "expansion", "a/sqrt(F)");
    for kind in [RouterKind::NormalizedSoftmax, RouterKind::NormalizedSigmoid] {
        for scale in [0.03, 0.1, 0.3, 1.0] {
            let block = BlockSpec::dense_moe(8, 16, kind)?;
            let layer = init_layer(&block, d, InitStds { router: scale * s, up_gate: s, down: s }, &mut rng)?;
            let est = mc_estimate_f(&layer, 1.0, 20_000, &mut rng)?;
            println!(
                "{:<8} {scale:>6} {:>10.5} {:>10.5} {:>12.5} {:>10.4}",
                kind.to_string(),
                est.logit_variance.mean,
                est.factor.mean,
                est.perturbative.mean,
                exact_forward_route_scale(8, est.factor.mean)
            );
        }
    }
    Ok(())
}
