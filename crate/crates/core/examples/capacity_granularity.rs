//! Capacity and granularity changes: the two-step composition through the
//! Dense-MoE companion lands on the direct rule, in floating point and in
//! exact rationals.

use complete_mue::transfer::{capacity_composition, capacity_composition_exact, granularity_check};

fn main() -> complete_mue::Result<()> {
    let (d, d_star) = (1024, 128);
    for (n, n2, a, h) in [(8, 64, 8, 2048), (8, 256, 8, 2048), (32, 128, 4, 512)] {
        let c = capacity_composition(n, n2, a, h, d, d_star)?;
        let (two, direct) = capacity_composition_exact(n, n2, a, h, d, d_star)?;
        println!(
            "N {n:>3} -> {n2:>3}, a={a}, h={h}: A {:.6} / {:.6}, init {:.6} / {:.6}, exact equal: {}",
            c.two_step.output_multiplier,
            c.direct.output_multiplier,
            c.two_step.init_std_factor,
            c.direct.init_std_factor,
            two == direct
        );
    }
    for (n, h, n2, h2, s) in [(64, 16, 128, 8, 0.125), (8, 32, 32, 8, 0.25)] {
        let g = granularity_check(n, h, n2, h2, s)?;
        println!(
            "(N={n}, h={h}) -> (N'={n2}, h'={h2}) at s={s}: a {} -> {}, width ratios {} / {}",
            g.active, g.active_prime, g.width_ratio_sparse, g.width_ratio_dense
        );
    }
    match granularity_check(8, 32, 12, 32, 0.125) {
        Ok(_) => println!("unexpected: non-integral a' accepted"),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
