//! Per-expert token loads under top-a routing: one fixed router, then the
//! average over independently initialized routers.

use complete_mue::config::{BlockSpec, RouterKind};
use complete_mue::micro::{init_layer, InitStds};
use complete_mue::rng::{SimRng, DEFAULT_SEED};
use complete_mue::verify::{routing_load_stats, symmetric_load_estimate};

fn main() -> complete_mue::Result<()> {
    let d = 64;
    let s = 1.0 / (d as f64).sqrt();
    let stds = InitStds { router: s, up_gate: s, down: s };
    let block = BlockSpec::sparse(8, 2, 16, RouterKind::NormalizedSoftmax)?;
    let mut rng = SimRng::new(DEFAULT_SEED);

    let layer = init_layer(&block, d, stds, &mut rng)?;
    let fixed = routing_load_stats(&layer, 50_000, &mut rng)?;
    println!("fixed router, sum of loads = {}", fixed.sum_check);
    for (e, l) in fixed.per_expert_load.iter().enumerate() {
        println!("  expert {e}: {l:.4}");
    }

    let averaged = symmetric_load_estimate(&block, d, stds, 64, 1_000, &mut rng)?;
    println!("averaged over 64 routers (a/N = 0.25):");
    for (e, l) in averaged.iter().enumerate() {
        println!("  expert {e}: {:.4} ± {:.4}", l.mean, l.std_error);
    }
    Ok(())
}
