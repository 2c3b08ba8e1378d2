//! Dense FFN against Dense-MoE companions: same forward variance once the
//! routed sum is scaled by R = N. Also shows the exact slicing identity: a
//! dense layer cut into N experts with uniform weights and R = N reproduces
//! the dense output.

use complete_mue::config::{BlockSpec, RouterKind};
use complete_mue::micro::{init_layer, InitStds, MicroLayer};
use complete_mue::rng::{SimRng, DEFAULT_SEED};
use complete_mue::verify::{ensemble_estimate, LayoutSpec, MatchReport, Statistic};

fn main() -> complete_mue::Result<()> {
    let d = 128;
    let s = 1.0 / (d as f64).sqrt();
    let base = InitStds { router: 0.1 * s, up_gate: s, down: s };
    let mut rng = SimRng::new(DEFAULT_SEED);

    let dense = init_layer(&BlockSpec::dense(128)?, d, base, &mut rng)?;
    let x: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let y = dense.forward(&x)?.y;
    for n in [4, 8] {
        let moe = MicroLayer::dense_moe_from_dense(&dense, n, RouterKind::NormalizedSoftmax)?;
        let z = moe.forward(&x)?.y;
        let gap = y.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("sliced {n}x{}: max |y_dense - y_moe| = {gap:.2e}", 128 / n);
    }

    let stat = Statistic::ForwardVariance { input_std: 1.0 };
    // Every layout sees the same inputs, drawn independently of the weights.
    let inputs = rng.split(1).remove(0);
    let estimate = |spec: &LayoutSpec, rng: &mut SimRng| ensemble_estimate(spec, d, &base, stat, 32, 20_000, rng, &mut inputs.clone());
    let reference = estimate(&LayoutSpec::new(BlockSpec::dense(128)?), &mut rng)?;
    for n in [4, 8] {
        let spec = LayoutSpec::new(BlockSpec::dense_moe(n, 128 / n, RouterKind::NormalizedSoftmax)?);
        for layout in [spec.clone(), spec.with_route_scale(1.0)] {
            let r = MatchReport::compare("forward_variance", layout.label(), estimate(&layout, &mut rng)?, reference, 0.05);
            println!("{:<36} ratio {:.4} ± tol {:.4}  {}", r.layout, r.ratio, r.tolerance, if r.pass { "match" } else { "mismatch" });
        }
    }
    Ok(())
}
