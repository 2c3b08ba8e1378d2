//! Batch-size transfer on a noisy quadratic. At fixed token budget the
//! √κ rule on η and λ keeps σ₀, λ̃ and H identical and the terminal
//! distribution matches; dropping the rule shortens the horizon. At fixed
//! steps the horizon survives but σ₀ shrinks by 1/√κ.

use complete_mue::rng::{SimRng, DEFAULT_SEED};
use complete_mue::sde::{case1_batch_transfer, case1_wrong_rule, case2_fixed_iterations, DiscreteConfig};

fn main() -> complete_mue::Result<()> {
    let base = DiscreteConfig { eta: 0.01, lambda: 0.1, sigma_exp: 1.0, gbar: 0.05, steps: 800, n_traj: 10_000, theta0: 1.0 };
    let mut rng = SimRng::new(DEFAULT_SEED);
    println!("base objects: {:?}", base.objects());
    for kappa in [2.0, 4.0, 8.0] {
        let ok = case1_batch_transfer(&base, kappa, false, &mut rng)?;
        let bad = case1_wrong_rule(&base, kappa, &mut rng)?;
        println!(
            "kappa {kappa}: rule mean {:.4} vs {:.4} (match {}), without rule {:.4} (match {})",
            ok.base.terminal_mean, ok.transferred.terminal_mean, ok.matched, bad.transferred.terminal_mean, bad.matched
        );
        let fixed = case2_fixed_iterations(&base, kappa, &mut rng)?;
        println!(
            "           fixed steps: sigma0 x{:.4}, horizon x{}, drift x{:.3}",
            fixed.sigma0_ratio, fixed.horizon_ratio, fixed.drift_ratio
        );
    }
    Ok(())
}
