//! Changing the number of activated experts at fixed N, B, T: the
//! expert-side η correction is exactly 1 and only σ₀ moves, by √(a/a').

use complete_mue::rng::{SimRng, DEFAULT_SEED};
use complete_mue::sde::{activated_expert_transfer, expertwise_eta_ratios, DiscreteConfig};

fn main() -> complete_mue::Result<()> {
    let base = DiscreteConfig { eta: 0.01, lambda: 0.1, sigma_exp: 1.0, gbar: 0.02, steps: 400, n_traj: 4_000, theta0: 1.0 };
    let mut rng = SimRng::new(DEFAULT_SEED);
    println!("{:>3} {:>4} {:>9} {:>12} {:>14} {:>14}", "a", "a'", "eta", "sigma0", "mean(a)", "mean(a')");
    for (a, ap) in [(2, 4), (4, 8), (8, 16), (16, 2)] {
        let r = activated_expert_transfer(&base, a, ap, 64, 256, &mut rng)?;
        println!(
            "{a:>3} {ap:>4} {:>9} {:>12.6} {:>14.5} {:>14.5}",
            r.eta_ratio, r.sigma0_ratio, r.base.terminal_mean, r.transferred.terminal_mean
        );
    }
    let loads = [0.4, 0.1, 0.3, 0.2, 0.5, 0.1, 0.2, 0.2];
    let doubled: Vec<f64> = loads.iter().map(|l| 2.0 * l).collect();
    println!("imbalanced, proportional loads: {:?}", expertwise_eta_ratios(&loads, &doubled, 256, 1000)?);
    Ok(())
}
