//! Acceptance run: one PASS/FAIL line per criterion, with its runtime budget.
//!
//! Built with `harness = false`; `cargo test --test acceptance` runs every
//! criterion and exits nonzero if any fails.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use complete_mue::cli;
use complete_mue::config::{
    format_moe_notation, parse_moe_notation, BlockSpec, GlobalHyper, GroupHyper, ModelConfig, ParamGroup,
    ReferenceConfig, RouterKind, ScheduleConfig, TargetConfig,
};
use complete_mue::micro::{init_layer, FfnWeights, InitStds, MicroLayer};
use complete_mue::rng::{SimRng, DEFAULT_SEED};
use complete_mue::sde::{
    activated_expert_transfer, case1_batch_transfer, case1_wrong_rule, expertwise_eta_ratios, ou_oracle,
    DiscreteConfig, SDEConfig,
};
use complete_mue::transfer::{
    capacity_composition, capacity_composition_exact, compose_transfer, forward_factor, global_rule,
    granularity_check, layer_rule, router_rule, up_gate_rule,
};
use complete_mue::verify::{bridge_suite, LayoutSpec, MatchReport, PlanEntry, Quantity, VerificationPlan};

const SM: RouterKind = RouterKind::NormalizedSoftmax;
const SG: RouterKind = RouterKind::NormalizedSigmoid;

type Check = Result<Vec<String>, String>;

fn close(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol * want.abs().max(1e-300)
}

fn expect(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn expect_close(what: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    expect(close(got, want, tol), || format!("{what}: got {got}, want {want} (rel tol {tol:e})"))
}

fn reports_line(reports: &[MatchReport]) -> String {
    reports
        .iter()
        .map(|r| format!("{} {} ratio={:.4} tol={:.4} {}", r.quantity, r.layout, r.ratio, r.tolerance, if r.pass { "ok" } else { "MISS" }))
        .collect::<Vec<_>>()
        .join("; ")
}

// Table of layer-level rules, one instance per row.
fn rule_table() -> Check {
    const TOL: f64 = 1e-12;
    let (d, ds) = (1024usize, 128usize);
    let rho_d = d as f64 / ds as f64;
    let mut notes = Vec::new();

    for (name, f) in [("router readout", router_rule(d, ds)), ("up/gate", up_gate_rule(d, ds))] {
        expect_close(&format!("{name} init"), f.init_std_factor, rho_d.powf(-0.5), TOL)?;
        expect_close(&format!("{name} lr"), f.lr_factor, 1.0 / rho_d, TOL)?;
    }

    let check_row = |name: &str, block: &BlockSpec, hidden: usize, route: f64| -> Result<(), String> {
        let r = layer_rule(block, d, ds);
        let rho_h = hidden as f64 / d as f64;
        expect_close(&format!("{name} A"), r.output_multiplier, 1.0 / rho_h, TOL)?;
        expect_close(&format!("{name} R"), r.route_scale, route, TOL)?;
        expect_close(&format!("{name} init"), r.init_std_factor, rho_d.powf(-0.5) * rho_h.sqrt(), TOL)?;
        expect_close(&format!("{name} lr"), r.lr_factor, 1.0 / rho_d, TOL)
    };
    check_row("dense", &BlockSpec::dense(3072).unwrap(), 3072, 1.0)?;
    check_row("dense MoE", &BlockSpec::dense_moe(16, 256, SM).unwrap(), 16 * 256, 16.0)?;
    check_row("activated", &BlockSpec::sparse(64, 8, 256, SM).unwrap(), 8 * 256, 8.0)?;
    // Capacity: (N=16 → N'=256, a=8, h=256) composed through the dense companion.
    let cap = capacity_composition(16, 256, 8, 256, d, ds).map_err(|e| e.to_string())?;
    check_row("capacity", &BlockSpec::sparse(256, 8, 256, SM).unwrap(), 8 * 256, 8.0)?;
    for (what, x, y) in [
        ("A", cap.two_step.output_multiplier, cap.direct.output_multiplier),
        ("R", cap.two_step.route_scale, cap.direct.route_scale),
        ("init", cap.two_step.init_std_factor, cap.direct.init_std_factor),
        ("lr", cap.two_step.lr_factor, cap.direct.lr_factor),
    ] {
        expect_close(&format!("capacity two-step {what}"), x, y, TOL)?;
    }
    // Granularity at s = 1/8: (64, 256) → (256, 64).
    let g = granularity_check(64, 256, 256, 64, 0.125).map_err(|e| e.to_string())?;
    expect_close("granularity sparse/dense ratio", g.width_ratio_sparse, g.width_ratio_dense, TOL)?;
    check_row("granularity", &BlockSpec::sparse(256, 32, 64, SM).unwrap(), 32 * 64, 32.0)?;
    // Hybrid: one shared branch plus 4 balanced groups, every branch scaled by H_tot.
    let hybrid = parse_moe_notation("128e8a4g1s", 512, Some(512), SM).map_err(|e| e.to_string())?;
    check_row("hybrid routed", &hybrid, 4608, 8.0)?;

    // The dense branch of the hybrid carries route 1: with all experts
    // silenced the output is exactly A times the shared branch.
    let small = parse_moe_notation("8e2a2g1s", 4, Some(8), SM).map_err(|e| e.to_string())?;
    let mut rng = SimRng::new(1);
    let layer = init_layer(&small, 16, InitStds { router: 0.1, up_gate: 0.3, down: 0.3 }, &mut rng).map_err(|e| e.to_string())?;
    let silent: Vec<FfnWeights> = layer
        .experts()
        .iter()
        .map(|w| FfnWeights { down: Arc::new(complete_mue::micro::Mat::zeros(16, w.width())), ..w.clone() })
        .collect();
    let muted = MicroLayer::from_parts(small.clone(), 16, layer.dense().to_vec(), silent, layer.router().cloned(), *layer.stds())
        .map_err(|e| e.to_string())?;
    let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
    let y = muted.forward(&x).map_err(|e| e.to_string())?.y;
    let shared = layer.dense()[0].down.matvec(&layer.dense()[0].hidden(&x));
    for (yi, si) in y.iter().zip(&shared) {
        expect_close("hybrid dense branch", *yi, muted.output_multiplier() * si, TOL)?;
    }

    // The same factors reach the emitted multipliers.
    let reference = reference_config(ds, ds, 256, 1000);
    let target = TargetConfig {
        model: ModelConfig { d, layers: 12, block: BlockSpec::sparse(64, 8, 256, SM).unwrap() },
        schedule: ScheduleConfig::new(256, 1000).unwrap(),
    };
    let out = compose_transfer(&reference, &target.model, &target.schedule).map_err(|e| e.to_string())?;
    let m = &out.multipliers;
    expect_close("router multiplier", m[&ParamGroup::RouterGate].init_std, rho_d.powf(-0.5), TOL)?;
    expect_close("up/gate lr multiplier", m[&ParamGroup::UpGateProjection].lr, 1.0 / rho_d, TOL)?;
    let rho_h = 2048.0 / d as f64;
    expect_close("down init multiplier", m[&ParamGroup::DownProjection].init_std, rho_d.powf(-0.5) * rho_h.sqrt(), TOL)?;
    notes.push("9 rows at d⋆=128 → d=1024".into());
    Ok(notes)
}

fn reference_config(d: usize, hidden: usize, batch: u64, steps: u64) -> ReferenceConfig {
    ReferenceConfig {
        model: ModelConfig { d, layers: 12, block: BlockSpec::dense(hidden).unwrap() },
        schedule: ScheduleConfig::new(batch, steps).unwrap(),
        base: ParamGroup::ALL.iter().map(|g| (*g, GroupHyper { init_std: 0.02, lr: 3e-3 })).collect(),
        base_global: GlobalHyper { wd: 0.1, eps: 1e-8, beta1: 0.9, beta2: 0.95 },
    }
}

fn large_run_config() -> Check {
    let grouped = parse_moe_notation("128e8a4g1s", 512, Some(512), SM).map_err(|e| e.to_string())?;
    let plain = parse_moe_notation("128e8a1s", 512, Some(512), SM).map_err(|e| e.to_string())?;
    expect(grouped.active_width() == 4608, || format!("128e8a4g1s H_tot = {}", grouped.active_width()))?;
    expect(plain.active_width() == 4608, || format!("128e8a1s H_tot = {}", plain.active_width()))?;
    let reference = reference_config(128, 512, 256, 10_000);
    let model = ModelConfig { d: 1024, layers: 12, block: grouped };
    let out = compose_transfer(&reference, &model, &ScheduleConfig::new(256, 10_000).unwrap()).map_err(|e| e.to_string())?;
    expect(out.diagnostics.rho_d == 8.0, || format!("rho_d = {}", out.diagnostics.rho_d))?;
    expect(out.diagnostics.active_width == 4608, || format!("H_act = {}", out.diagnostics.active_width))?;
    Ok(vec!["H_tot = 4608 for both, rho_d = 8".into()])
}

fn capacity_cancellation() -> Check {
    let mut rng = SimRng::new(DEFAULT_SEED ^ 3);
    let mut pick = |lo: usize, hi: usize| lo + (rng.uniform() * (hi - lo + 1) as f64) as usize;
    let mut worst = 0.0f64;
    let cases = 200;
    for _ in 0..cases {
        let a = pick(1, 32);
        let n = pick(a, 512);
        let n2 = pick(a, 512);
        let h = pick(1, 4096);
        let (d, ds) = (64 * pick(1, 32), 64 * pick(1, 4));
        let c = capacity_composition(n, n2, a, h, d, ds).map_err(|e| e.to_string())?;
        for (x, y) in [
            (c.two_step.output_multiplier, c.direct.output_multiplier),
            (c.two_step.route_scale, c.direct.route_scale),
            (c.two_step.init_std_factor, c.direct.init_std_factor),
            (c.two_step.lr_factor, c.direct.lr_factor),
        ] {
            worst = worst.max((x - y).abs() / y.abs());
        }
        let (two, direct) = capacity_composition_exact(n, n2, a, h, d, ds).map_err(|e| e.to_string())?;
        expect(two == direct, || format!("exact composition differs at N={n}, N'={n2}, a={a}, h={h}"))?;
    }
    expect(worst <= 1e-12, || format!("worst relative gap {worst:e}"))?;
    Ok(vec![format!("{cases} tuples, worst rel gap {worst:.1e}, rational forms identical")])
}

fn sparse(n: usize, a: usize, h: usize, router: RouterKind) -> LayoutSpec {
    LayoutSpec::new(BlockSpec::sparse(n, a, h, router).unwrap())
}

fn dense(h: usize) -> LayoutSpec {
    LayoutSpec::new(BlockSpec::dense(h).unwrap())
}

fn run_plan(entries: Vec<PlanEntry>, samples: usize, seed: u64) -> Result<Vec<MatchReport>, String> {
    let plan = VerificationPlan { samples, entries, ..VerificationPlan::default() };
    bridge_suite(&plan, &mut SimRng::new(seed)).map_err(|e| e.to_string())
}

fn bridge_one() -> Check {
    use Quantity::ForwardVariance;
    let matches = run_plan(
        [4, 8].iter().map(|&n| PlanEntry::pair(ForwardVariance, sparse(n, n, 128 / n, SM), dense(128))).collect(),
        100_000,
        DEFAULT_SEED,
    )?;
    expect(matches.iter().all(|r| r.pass), || reports_line(&matches))?;
    let control = run_plan(
        vec![PlanEntry::pair(ForwardVariance, sparse(4, 4, 32, SM).with_route_scale(1.0), dense(128))],
        100_000,
        DEFAULT_SEED,
    )?;
    let c = &control[0];
    // R = 1 with uniform weights shrinks the output by 1/N, its variance by 1/N².
    expect(!c.pass && close(c.ratio, 1.0 / 16.0, 0.1), || format!("control: {}", reports_line(&control)))?;
    Ok(vec![reports_line(&matches), format!("control R=1: ratio {:.4} (1/N² = 0.0625), fails", c.ratio)])
}

fn bridge_two() -> Check {
    use Quantity::UpdateMagnitude;
    let matches = run_plan(
        [2, 4, 8, 16].iter().map(|&a| PlanEntry::pair(UpdateMagnitude, sparse(64, a, 16, SM), dense(128))).collect(),
        10_000,
        DEFAULT_SEED,
    )?;
    expect(matches.iter().all(|r| r.pass), || reports_line(&matches))?;
    let control = run_plan(
        vec![PlanEntry::pair(UpdateMagnitude, sparse(64, 8, 16, SM).with_route_scale(1.0), dense(128))],
        10_000,
        DEFAULT_SEED,
    )?;
    let c = &control[0];
    expect(!c.pass && close(c.ratio, 1.0 / 8.0, 0.1), || format!("control: {}", reports_line(&control)))?;
    Ok(vec![reports_line(&matches), format!("control R=1: ratio {:.4} (1/a = 0.125), fails", c.ratio)])
}

fn routing_factor() -> Check {
    let dense_moe = [SM, SG].iter().map(|&r| PlanEntry::single(Quantity::ForwardFactor, sparse(8, 8, 16, r))).collect();
    let reports = run_plan(dense_moe, 100_000, DEFAULT_SEED)?;
    expect(reports.iter().all(|r| r.pass), || reports_line(&reports))?;
    let equal = forward_factor(4, &[vec![0.25; 4]]).map_err(|e| e.to_string())?;
    let one_hot = forward_factor(4, &[vec![1.0, 0.0, 0.0, 0.0]]).map_err(|e| e.to_string())?;
    expect(equal == 1.0 && one_hot == 4.0, || format!("F(equal) = {equal}, F(one-hot) = {one_hot}"))?;
    // Top-a selection skews the selected logits, adding a third-moment term
    // the second-order expansion leaves out. Reported, not asserted.
    let top_a = run_plan(vec![PlanEntry::single(Quantity::ForwardFactor, sparse(64, 8, 16, SM))], 100_000, DEFAULT_SEED)?;
    Ok(vec![
        reports_line(&reports),
        "F = 1 for equal logits, F = a for one-hot".into(),
        format!("info, top-a skew: {}", reports_line(&top_a)),
    ])
}

fn gradient_check() -> Check {
    let mut rng = SimRng::new(DEFAULT_SEED ^ 7);
    let blocks = [
        BlockSpec::dense(8).unwrap(),
        BlockSpec::dense_moe(4, 2, SM).unwrap(),
        BlockSpec::sparse(6, 2, 3, SM).unwrap(),
        BlockSpec::sparse(8, 3, 4, SG).unwrap(),
        parse_moe_notation("8e4a2g1s", 3, Some(5), SM).unwrap(),
    ];
    let mut worst = 0.0f64;
    let mut layers = 0;
    for round in 0..5 {
        for block in &blocks {
            let d = 6 + 2 * round;
            let stds = InitStds { router: 0.5, up_gate: 0.4, down: 0.4 };
            let layer = init_layer(block, d, stds, &mut rng).map_err(|e| e.to_string())?;
            let x: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let g: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let trace = layer.forward(&x).map_err(|e| e.to_string())?;
            let grads = layer.down_grad(&trace, &g).map_err(|e| e.to_string())?;
            let loss = |l: &MicroLayer| -> f64 { l.forward(&x).unwrap().y.iter().zip(&g).map(|(y, g)| y * g).sum() };
            let branches = layer.dense().len() + layer.experts().len();
            for b in 0..branches {
                let analytic = if b < layer.dense().len() {
                    Some(&grads.dense[b])
                } else {
                    grads.experts[b - layer.dense().len()].as_ref()
                };
                let w = if b < layer.dense().len() { &layer.dense()[b] } else { &layer.experts()[b - layer.dense().len()] };
                let eps = 1e-3;
                let (rows, cols) = (w.down.rows(), w.down.cols());
                for r in 0..rows {
                    for c in 0..cols {
                        let shifted = |delta: f64| -> MicroLayer {
                            let mut down = (*w.down).clone();
                            down.set(r, c, down.get(r, c) + delta);
                            let patched = FfnWeights { down: Arc::new(down), ..w.clone() };
                            let mut dense = layer.dense().to_vec();
                            let mut experts = layer.experts().to_vec();
                            if b < dense.len() {
                                dense[b] = patched;
                            } else {
                                experts[b - dense.len()] = patched;
                            }
                            MicroLayer::from_parts(block.clone(), d, dense, experts, layer.router().cloned(), stds).unwrap()
                        };
                        let fd = (loss(&shifted(eps)) - loss(&shifted(-eps))) / (2.0 * eps);
                        let an = analytic.map_or(0.0, |m| m.get(r, c));
                        let scale = an.abs().max(fd.abs()).max(1e-3);
                        worst = worst.max((an - fd).abs() / scale);
                    }
                }
            }
            layers += 1;
        }
    }
    expect(worst <= 1e-5, || format!("worst relative error {worst:e}"))?;
    Ok(vec![format!("{layers} layers, worst relative error {worst:.1e}")])
}

fn ou_grid() -> Check {
    let mut rng = SimRng::new(DEFAULT_SEED);
    let mut streams = rng.split(27).into_iter();
    let mut worst: f64 = 0.0;
    let mut failed = Vec::new();
    for sigma0 in [0.05, 0.2, 1.0] {
        for lambda_tilde in [0.0, 2.0, 10.0] {
            for horizon in [0.05, 0.2, 1.0] {
                let cfg = SDEConfig { sigma0, lambda_tilde, horizon, gbar: 0.01, n_steps: 1000, n_traj: 10_000, theta0: 1.0 };
                let r = ou_oracle(&cfg, &mut streams.next().unwrap()).map_err(|e| e.to_string())?;
                worst = worst.max(r.mean_z.abs()).max(r.var_z.abs());
                if !r.pass {
                    failed.push(format!("(σ₀={sigma0}, λ̃={lambda_tilde}, H={horizon}) z=({:.2}, {:.2})", r.mean_z, r.var_z));
                }
            }
        }
    }
    expect(failed.is_empty(), || failed.join("; "))?;
    Ok(vec![format!("27 configs, worst |z| = {worst:.2}")])
}

fn batch_transfer() -> Check {
    let base = DiscreteConfig { eta: 0.01, lambda: 0.1, sigma_exp: 1.0, gbar: 0.05, steps: 800, n_traj: 10_000, theta0: 1.0 };
    let mut rng = SimRng::new(DEFAULT_SEED);
    let mut notes = Vec::new();
    for kappa in [2.0, 4.0, 8.0] {
        let r = case1_batch_transfer(&base, kappa, false, &mut rng).map_err(|e| e.to_string())?;
        expect(r.objects_equal, || format!("κ={kappa}: objects {:?} vs {:?}", r.base_objects, r.transferred_objects))?;
        expect(r.matched, || format!("κ={kappa}: {:?} vs {:?}", r.base, r.transferred))?;
        let w = case1_wrong_rule(&base, kappa, &mut rng).map_err(|e| e.to_string())?;
        expect(!w.matched, || format!("κ={kappa}: wrong rule matched"))?;
        notes.push(format!(
            "κ={kappa}: mean {:.4}/{:.4}, var {:.5}/{:.5}; wrong rule mean {:.4}",
            r.base.terminal_mean, r.transferred.terminal_mean, r.base.terminal_var, r.transferred.terminal_var, w.transferred.terminal_mean
        ));
    }
    Ok(notes)
}

fn activated_cancellation() -> Check {
    let base = DiscreteConfig { eta: 0.01, lambda: 0.1, sigma_exp: 1.0, gbar: 0.0, steps: 10, n_traj: 100, theta0: 1.0 };
    let mut rng = SimRng::new(DEFAULT_SEED);
    let set = [2usize, 4, 8, 16];
    for &a in &set {
        for &ap in &set {
            let r = activated_expert_transfer(&base, a, ap, 64, 256, &mut rng).map_err(|e| e.to_string())?;
            expect(r.eta_ratio == 1.0, || format!("({a}, {ap}): eta ratio {}", r.eta_ratio))?;
            expect_close(&format!("({a}, {ap}) sigma0 ratio"), r.sigma0_ratio, (a as f64 / ap as f64).sqrt(), 4.0 * f64::EPSILON)?;
        }
    }
    // Imbalanced loads, scaled proportionally when a doubles.
    let loads = [0.3, 0.9, 0.1, 0.7, 0.5, 0.5, 0.2, 0.8];
    let doubled: Vec<f64> = loads.iter().map(|l| 2.0 * l).collect();
    let ratios = expertwise_eta_ratios(&loads, &doubled, 256, 1000).map_err(|e| e.to_string())?;
    let worst = ratios.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
    expect(worst <= 1e-12, || format!("imbalanced per-expert ratios {ratios:?}"))?;
    Ok(vec![format!("16 pairs exact; imbalanced worst |ratio-1| = {worst:.1e}")])
}

fn global_algebra() -> Check {
    let mut rng = SimRng::new(DEFAULT_SEED ^ 11);
    let mut pick = |lo: u64, hi: u64| lo + (rng.uniform() * (hi - lo + 1) as f64) as u64;
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let base = ScheduleConfig::new(pick(1, 4096), pick(1, 100_000)).unwrap();
        let target = ScheduleConfig::new(pick(1, 4096), pick(1, 100_000)).unwrap();
        let g = global_rule(&base, &target, 12, 12);
        let rho_b = target.batch as f64 / base.batch as f64;
        let rho_d = target.tokens() as f64 / base.tokens() as f64;
        for (x, y) in [
            (g.eta_factor * g.eps_factor, 1.0),
            (g.one_minus_beta_factor, g.eta_factor * g.eta_factor),
            (g.eta_factor, (rho_b / rho_d).sqrt()),
            (g.wd_factor, g.eta_factor),
        ] {
            worst = worst.max((x - y).abs() / y);
        }
        // Fixed token budget: B' = k·B, T' = T/k.
        let k = pick(1, 64);
        let steps = k * pick(1, 1000);
        let before = ScheduleConfig::new(pick(1, 512), steps).unwrap();
        let after = ScheduleConfig::new(before.batch * k, steps / k).unwrap();
        let e = global_rule(&before, &after, 12, 12);
        worst = worst.max((e.eta_factor - (k as f64).sqrt()).abs() / (k as f64).sqrt());
    }
    expect(worst <= 1e-12, || format!("worst relative error {worst:e}"))?;
    Ok(vec![format!("200 random schedule pairs, worst rel error {worst:.1e}")])
}

fn run_cli(args: &[&str]) -> (i32, Vec<u8>) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = cli::run(std::iter::once("mue").chain(args.iter().copied()), &mut out, &mut err);
    (code, out)
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let write = |name: &str, text: &str| -> String {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p.display().to_string()
    };
    let plan = write(
        "plan.json",
        r#"{"samples": 2000, "entries": [
            {"quantity": "forward_variance", "lhs": {"block": {"kind": "SparseMoE", "N": 4, "a": 4, "h": 32, "router": "softmax"}},
             "rhs": {"block": {"kind": "DenseFFN", "H": 128}}},
            {"quantity": "forward_factor", "lhs": {"block": {"kind": "SparseMoE", "N": 8, "a": 2, "h": 16, "router": "sigmoid"}}}
        ]}"#,
    );
    let sde = write(
        "sde.json",
        r#"{"base": {"eta": 0.01, "lambda": 0.1, "sigma_exp": 1.0, "gbar": 0.0, "T": 100, "n_traj": 1000, "theta0": 1.0}, "kappa_B": 4}"#,
    );
    for args in [vec!["verify", "--plan", plan.as_str()], vec!["sde", sde.as_str(), "--mode", "case1"], vec!["--seed", "99", "sde", sde.as_str(), "--mode", "case2"]] {
        let first = run_cli(&args);
        let second = run_cli(&args);
        expect(first.1 == second.1 && !first.1.is_empty(), || format!("`mue {}` output differs between runs", args.join(" ")))?;
    }

    for notation in ["64e8a", "128e8a4g1s", "16e4a2s", "32e2a2g"] {
        let block = parse_moe_notation(notation, 16, Some(32), SM).map_err(|e| e.to_string())?;
        let text = format_moe_notation(&block).map_err(|e| e.to_string())?;
        expect(text == notation, || format!("{notation} formats back as {text}"))?;
        let json = serde_json::to_string(&block).unwrap();
        let back: BlockSpec = serde_json::from_str(&json).map_err(|e| e.to_string())?;
        expect(back == block, || format!("{notation} JSON round trip changed the block"))?;
    }
    let reference = reference_config(256, 1024, 512, 2000);
    let json = serde_json::to_string(&reference).unwrap();
    let back: ReferenceConfig = serde_json::from_str(&json).map_err(|e| e.to_string())?;
    expect(back == reference, || "reference config JSON round trip changed the config".into())?;
    Ok(vec!["verify/sde outputs byte-identical; notation and JSON round trips exact".into()])
}

fn main() -> ExitCode {
    let criteria: [(&str, u64, fn() -> Check); 12] = [
        ("rule-table conformance", 1, rule_table),
        ("large-run config golden", 1, large_run_config),
        ("capacity-composition cancellation", 1, capacity_cancellation),
        ("Bridge-I forward-variance match", 60, bridge_one),
        ("Bridge-II update match", 120, bridge_two),
        ("F_{a,N} consistency", 30, routing_factor),
        ("gradient correctness", 10, gradient_check),
        ("SDE OU oracle", 60, ou_grid),
        ("Case-1 exact batch transfer", 60, batch_transfer),
        ("activated-expert cancellation", 10, activated_cancellation),
        ("global-rule algebra", 1, global_algebra),
        ("determinism and round trips", 5, determinism),
    ];
    let mut failures = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let in_budget = elapsed <= Duration::from_secs(*budget);
        let pass = outcome.is_ok() && in_budget;
        if !pass {
            failures += 1;
        }
        println!(
            "{} {:>2}. {name} [{:.2}s / {budget}s]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            elapsed.as_secs_f64()
        );
        match outcome {
            Ok(notes) => notes.iter().for_each(|n| println!("        {n}")),
            Err(e) => println!("        {e}"),
        }
        if !in_budget {
            println!("        over the {budget}s runtime budget");
        }
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
