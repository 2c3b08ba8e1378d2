//! Euler–Maruyama against the closed-form Ornstein–Uhlenbeck moments.

use complete_mue::rng::{SimRng, DEFAULT_SEED};
use complete_mue::sde::{ou_oracle, simulate_sde_summary, summary_tsv, SDEConfig};

fn main() -> complete_mue::Result<()> {
    let mut rng = SimRng::new(DEFAULT_SEED);
    println!("{:>6} {:>6} {:>6} {:>10} {:>10} {:>7} {:>7}", "sigma0", "lam", "H", "mean", "exact", "z_mean", "z_var");
    for (sigma0, lambda_tilde, horizon) in [(0.1, 0.0, 0.5), (0.1, 2.0, 0.5), (0.5, 10.0, 0.2), (0.05, 10.0, 1.0)] {
        let cfg = SDEConfig { sigma0, lambda_tilde, horizon, gbar: 0.01, n_steps: 500, n_traj: 10_000, theta0: 1.0 };
        let r = ou_oracle(&cfg, &mut rng)?;
        println!(
            "{sigma0:>6} {lambda_tilde:>6} {horizon:>6} {:>10.5} {:>10.5} {:>7.2} {:>7.2}",
            r.stats.terminal_mean, r.exact_mean, r.mean_z, r.var_z
        );
    }
    let cfg = SDEConfig { sigma0: 0.1, lambda_tilde: 5.0, horizon: 0.4, gbar: 0.0, n_steps: 400, n_traj: 5_000, theta0: 1.0 };
    let (_, rows) = simulate_sde_summary(&cfg, 4, &mut rng)?;
    print!("{}", summary_tsv(&rows));
    Ok(())
}
