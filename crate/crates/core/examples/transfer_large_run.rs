//! Transfer a dense reference tuned at d⋆ = 128 to a 1024-wide grouped
//! hybrid MoE (`128e8a4g1s`, h = 512) at a 4× larger batch with the token
//! budget held fixed.

use complete_mue::config::{
    parse_moe_notation, BlockSpec, GlobalHyper, GroupHyper, ModelConfig, ParamGroup, ReferenceConfig, RouterKind,
    ScheduleConfig,
};
use complete_mue::transfer::compose_transfer;

fn main() -> complete_mue::Result<()> {
    let reference = ReferenceConfig {
        model: ModelConfig { d: 128, layers: 12, block: BlockSpec::dense(512)? },
        schedule: ScheduleConfig::new(256, 40_000)?,
        base: ParamGroup::ALL.iter().map(|g| (*g, GroupHyper { init_std: 0.02, lr: 3e-3 })).collect(),
        base_global: GlobalHyper { wd: 0.1, eps: 1e-8, beta1: 0.9, beta2: 0.95 },
    };
    reference.validate()?;
    let model = ModelConfig {
        d: 1024,
        layers: 12,
        block: parse_moe_notation("128e8a4g1s", 512, Some(512), RouterKind::NormalizedSoftmax)?,
    };
    let schedule = ScheduleConfig::new(1024, 10_000)?;
    let out = compose_transfer(&reference, &model, &schedule)?;

    let diag = &out.diagnostics;
    println!("rho_d = {}, H_act = {}, rho_B = {}, rho_D = {}", diag.rho_d, diag.active_width, diag.rho_batch, diag.rho_tokens);
    println!("layer: A = {:.6}, R = {}", out.layer.output_multiplier, out.layer.route_scale);
    println!("global: eta x{}, eps x{}, (1-beta) x{}", out.global.eta_factor, out.global.eps_factor, out.global.one_minus_beta_factor);
    println!("{:<26} {:>12} {:>12} {:>10} {:>10} {:>8}", "group", "init_std", "lr", "eps", "beta2", "wd");
    for (group, s) in &out.per_group {
        println!("{:<26} {:>12.6e} {:>12.6e} {:>10.3e} {:>10.6} {:>8.4}", group.as_str(), s.init_std, s.lr, s.eps, s.beta2, s.wd);
    }
    println!("{}", serde_json::to_string_pretty(&out.multipliers)?);
    Ok(())
}
