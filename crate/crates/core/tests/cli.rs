use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data").join(name)
}

fn mue(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mue")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout))
    })
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn transfer_to_itself_gives_unit_multipliers() {
    let r = data("reference.json");
    let dir = tempfile::tempdir().unwrap();
    // The reference doubles as a target document (extra fields are ignored).
    let out = mue(&["transfer", arg(&r), arg(&r)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc = json(&out);
    for (group, m) in doc["multipliers"].as_object().unwrap() {
        assert_eq!(m["init_std"], 1.0, "{group}");
        assert_eq!(m["lr"], 1.0, "{group}");
    }
    let written = dir.path().join("out.json");
    let out = mue(&["transfer", arg(&r), arg(&r), "--out", arg(&written)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&written).unwrap()).unwrap();
    assert_eq!(doc["diagnostics"]["rho_d"], 1.0);
}

#[test]
fn large_run_reports_width_ratio_and_active_width() {
    let out = mue(&["transfer", arg(&data("reference.json")), arg(&data("target_large.json"))]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc = json(&out);
    assert_eq!(doc["diagnostics"]["rho_d"], 8.0);
    assert_eq!(doc["diagnostics"]["H_act"], 4608);
    assert_eq!(doc["multipliers"]["up_gate_projection"]["lr"], 0.125);
}

#[test]
fn activated_above_total_is_an_input_error() {
    let out = mue(&["transfer", arg(&data("reference.json")), arg(&data("target_large.json")), "--set", "block.a=200"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("block.a"), "{}", stderr(&out));
}

#[test]
fn override_can_change_the_schedule() {
    let out = mue(&[
        "transfer",
        arg(&data("reference.json")),
        arg(&data("target_large.json")),
        "--set",
        "schedule.B=1024",
        "--set",
        "schedule.T=2500",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc = json(&out);
    assert_eq!(doc["global"]["eta_factor"], 2.0);
    assert_eq!(doc["global"]["one_minus_beta_factor"], 4.0);
}

#[test]
fn missing_file_is_an_input_error() {
    let out = mue(&["transfer", "no-such-file.json", "also-missing.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_plan_passes_with_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.json");
    std::fs::write(&plan, "{}").unwrap();
    let out = mue(&["verify", "--plan", arg(&plan)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc = json(&out);
    assert_eq!(doc["pass"], true);
    assert_eq!(doc["reports"].as_array().unwrap().len(), 0);
}

#[test]
fn negative_controls_fail_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.json");
    let tsv = dir.path().join("report.tsv");
    std::fs::write(
        &plan,
        r#"{"samples": 2000, "entries": [
          {"quantity": "forward_variance",
           "lhs": {"block": {"kind": "SparseMoE", "N": 4, "a": 4, "h": 32, "router": "softmax"}},
           "rhs": {"block": {"kind": "DenseFFN", "H": 128}}},
          {"quantity": "forward_variance",
           "lhs": {"block": {"kind": "SparseMoE", "N": 4, "a": 4, "h": 32, "router": "softmax"}, "route_scale": 1.0},
           "rhs": {"block": {"kind": "DenseFFN", "H": 128}}}
        ]}"#,
    )
    .unwrap();
    let out = mue(&["verify", "--plan", arg(&plan), "--tsv", arg(&tsv)]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    let doc = json(&out);
    let pass: Vec<bool> = doc["reports"].as_array().unwrap().iter().map(|r| r["pass"].as_bool().unwrap()).collect();
    assert_eq!(pass, [true, false]);
    let table = std::fs::read_to_string(&tsv).unwrap();
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn bad_plan_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.json");
    std::fs::write(&plan, r#"{"entries": [{"quantity": "forward_variance", "lhs": {"block": {"kind": "DenseFFN", "H": 8}}}]}"#).unwrap();
    let out = mue(&["verify", "--plan", arg(&plan)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("entries.0.rhs"), "{}", stderr(&out));
}

#[test]
fn sde_modes() {
    let out = mue(&["sde", arg(&data("sde_oracle.json")), "--mode", "oracle"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(json(&out)["exact_var"].as_f64().unwrap() > 0.0);

    let out = mue(&["sde", arg(&data("sde_case1.json")), "--mode", "case1"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc = json(&out);
    assert_eq!(doc["match"], true);
    assert_eq!(doc["objects_equal"], true);

    let out = mue(&["sde", arg(&data("sde_case2.json")), "--mode", "case2"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(json(&out)["sigma0_ratio"], 0.5);

    let out = mue(&["sde", arg(&data("sde_activated.json")), "--mode", "activated"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc = json(&out);
    assert_eq!(doc["eta_ratio"], 1.0);
    let s = doc["sigma0_ratio"].as_f64().unwrap();
    assert!((s - 0.5f64.sqrt()).abs() < 1e-12);
}

#[test]
fn sde_mode_missing_fields_is_an_input_error() {
    let out = mue(&["sde", arg(&data("sde_oracle.json")), "--mode", "case1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = mue(&["sde", arg(&data("sde_oracle.json")), "--mode", "sideways"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn parse_examples() {
    let out = mue(&["parse", "128e8a1s", "512", "512"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["active_width"], 4608);

    let out = mue(&["parse", "64e8a", "16"]);
    assert_eq!(json(&out)["active_width"], 128);

    let out = mue(&["parse", "64e8a2g", "16"]);
    assert_eq!(out.status.code(), Some(0));
    let doc = json(&out);
    assert_eq!(doc["block"]["routed_groups"].as_array().unwrap().len(), 2);
    assert_eq!(doc["block"]["routed_groups"][0]["N_g"], 32);

    let out = mue(&["parse", "8e", "16"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seeded_runs_are_byte_identical() {
    let (case1, oracle) = (data("sde_case1.json"), data("sde_oracle.json"));
    let runs = [
        vec!["--seed", "7", "sde", arg(&case1), "--mode", "case1"],
        vec!["sde", arg(&oracle), "--mode", "oracle"],
    ];
    for args in &runs {
        let a = mue(args);
        let b = mue(args);
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
    let a = mue(&["--seed", "1", "sde", arg(&oracle), "--mode", "oracle"]);
    let b = mue(&["--seed", "2", "sde", arg(&oracle), "--mode", "oracle"]);
    assert_ne!(a.stdout, b.stdout);
}

#[test]
fn default_plan_passes() {
    let out = mue(&["verify"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc = json(&out);
    assert_eq!(doc["pass"], true);
    assert_eq!(doc["reports"].as_array().unwrap().len(), 23);
}
