//! Run the built-in scale-matching plan and the negative controls, printing
//! one table row per check.

use complete_mue::rng::{SimRng, DEFAULT_SEED};
use complete_mue::verify::{bridge_suite, default_plan, negative_control_plan, reports_tsv};

fn main() -> complete_mue::Result<()> {
    let start = std::time::Instant::now();
    let reports = bridge_suite(&default_plan(), &mut SimRng::new(DEFAULT_SEED))?;
    print!("{}", reports_tsv(&reports));
    println!("# built-in plan: {} checks, all pass = {}", reports.len(), reports.iter().all(|r| r.pass));

    let controls = bridge_suite(&negative_control_plan(), &mut SimRng::new(DEFAULT_SEED))?;
    print!("{}", reports_tsv(&controls));
    println!("# negative controls failing = {}", controls.iter().filter(|r| !r.pass).count());
    eprintln!("elapsed {:.1?}", start.elapsed());
    Ok(())
}
