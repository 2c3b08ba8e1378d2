//! The `mue` command-line driver.
//!
//! Documents are read and written as JSON. The output document goes to
//! `--out` (or stdout); human-readable summaries go to stderr. Exit codes:
//! 0 when every check passes, 1 when checks ran and some failed, 2 for
//! input errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{format_moe_notation, parse_moe_notation, BlockSpec, ReferenceConfig, RouterKind, TargetConfig};
use crate::error::{Error, Result};
use crate::rng::{SimRng, DEFAULT_SEED};
use crate::sde::{
    activated_expert_transfer, case1_batch_transfer, case2_fixed_iterations, ou_oracle, simulate_sde_summary,
    summary_tsv, DiscreteConfig, SDEConfig,
};
use crate::transfer::compose_transfer;
use crate::verify::{bridge_suite, default_plan, reports_tsv, SuiteReport, VerificationPlan};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mue", version, about = "Hyperparameter transfer for dense FFN and MoE blocks")]
pub struct Cli {
    /// Root seed for every random stream.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Write the output document here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Override a field of the input document, e.g. `block.a=16` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Map a tuned dense reference to a target model and schedule.
    Transfer { reference: PathBuf, target: PathBuf },
    /// Run a verification plan (the built-in plan if none is given).
    Verify {
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Also write a tab-separated report table.
        #[arg(long)]
        tsv: Option<PathBuf>,
    },
    /// Run an SDE experiment.
    Sde {
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: SdeMode,
        /// Also write a tab-separated trajectory summary (oracle mode).
        #[arg(long)]
        tsv: Option<PathBuf>,
    },
    /// Parse `XeYa[Gg][Zs]` notation into a block.
    Parse {
        notation: String,
        /// Per-expert width.
        h: usize,
        /// Width of each shared branch.
        shared: Option<usize>,
        #[arg(long, default_value = "softmax")]
        router: RouterArg,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SdeMode {
    Case1,
    Case2,
    Activated,
    Oracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RouterArg {
    Softmax,
    Sigmoid,
}

impl From<RouterArg> for RouterKind {
    fn from(r: RouterArg) -> Self {
        match r {
            RouterArg::Softmax => RouterKind::NormalizedSoftmax,
            RouterArg::Sigmoid => RouterKind::NormalizedSigmoid,
        }
    }
}

/// Input document for `mue sde`. Each mode reads the fields it needs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SdeRequest {
    /// SDE parameters (oracle mode).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sde: Option<SDEConfig>,
    /// Discrete base run (case1, case2, activated).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<DiscreteConfig>,
    #[serde(default, rename = "kappa_B", skip_serializing_if = "Option::is_none")]
    pub kappa_b: Option<f64>,
    #[serde(default)]
    pub common_random_numbers: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_prime: Option<usize>,
    #[serde(default, rename = "N", skip_serializing_if = "Option::is_none")]
    pub experts: Option<usize>,
    #[serde(default, rename = "B", skip_serializing_if = "Option::is_none")]
    pub batch: Option<u64>,
    /// Rows in the trajectory summary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<usize>,
}

fn need<T>(v: Option<T>, path: &str) -> Result<T> {
    v.ok_or_else(|| Error::invalid(path, "required for this mode"))
}

/// Set `path` (dot-separated) in `doc`. Paths may omit a leading `model.`.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::invalid(assignment, "override must look like key=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::invalid(key, "empty path segment"));
    }
    let root_has = doc.get(parts[0]).is_some();
    let under_model = doc.get("model").and_then(|m| m.get(parts[0])).is_some();
    let mut cur = if !root_has && under_model {
        doc.get_mut("model").expect("checked")
    } else {
        doc
    };
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert((*part).to_owned(), value);
                    return Ok(());
                }
                map.entry(*part).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::invalid(key, format!("`{part}` is not an array index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::invalid(key, format!("index {idx} out of range for {len} items")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::invalid(key, format!("`{part}` is not inside an object or array"))),
        };
    }
    unreachable!("loop returns on the last segment")
}

fn read_doc<T: DeserializeOwned>(path: &Path, overrides: &[String]) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    let mut doc: Value = serde_json::from_str(&text).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    serde_json::from_value(doc).map_err(|e| Error::from(e).context(path.display().to_string()))
}

/// What a command produced: the document plus the check outcome.
struct Outcome {
    doc: Value,
    pass: bool,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("documents serialize")
}

fn cmd_transfer(cli: &Cli, reference: &Path, target: &Path, err: &mut dyn Write) -> Result<Outcome> {
    let reference: ReferenceConfig = read_doc(reference, &[])?;
    reference.validate().map_err(|e| e.context("reference"))?;
    let target: TargetConfig = read_doc(target, &cli.overrides)?;
    target.validate().map_err(|e| e.context("target"))?;
    let result = compose_transfer(&reference, &target.model, &target.schedule)?;
    let _ = writeln!(
        err,
        "rho_d = {}, H_act = {}, A = {}, R = {}, eta factor = {}",
        result.diagnostics.rho_d,
        result.diagnostics.active_width,
        result.layer.output_multiplier,
        result.layer.route_scale,
        result.global.eta_factor
    );
    Ok(Outcome {
        doc: to_value(&result),
        pass: true,
    })
}

fn cmd_verify(cli: &Cli, plan: Option<&Path>, tsv: Option<&Path>, err: &mut dyn Write) -> Result<Outcome> {
    let plan: VerificationPlan = match plan {
        Some(p) => read_doc(p, &cli.overrides)?,
        None => {
            let mut doc = to_value(&default_plan());
            for o in &cli.overrides {
                apply_override(&mut doc, o)?;
            }
            serde_json::from_value(doc)?
        }
    };
    plan.validate().map_err(|e| e.context("plan"))?;
    let reports = bridge_suite(&plan, &mut SimRng::new(cli.seed))?;
    for r in &reports {
        let _ = writeln!(
            err,
            "{} {} {}: ratio {:.4} (tolerance {:.4})",
            if r.pass { "PASS" } else { "FAIL" },
            r.quantity,
            r.layout,
            r.ratio,
            r.tolerance
        );
    }
    if let Some(path) = tsv {
        std::fs::write(path, reports_tsv(&reports))?;
    }
    let report = SuiteReport::new(cli.seed, reports);
    Ok(Outcome {
        pass: report.pass,
        doc: to_value(&report),
    })
}

fn cmd_sde(cli: &Cli, config: &Path, mode: SdeMode, tsv: Option<&Path>, err: &mut dyn Write) -> Result<Outcome> {
    let req: SdeRequest = read_doc(config, &cli.overrides)?;
    let mut rng = SimRng::new(cli.seed);
    let (doc, pass) = match mode {
        SdeMode::Oracle => {
            let cfg = need(req.sde, "sde")?;
            cfg.validate().map_err(|e| e.under("sde"))?;
            let report = ou_oracle(&cfg, &mut rng)?;
            if let Some(path) = tsv {
                let rows = req.checkpoints.unwrap_or(20);
                let (_, summary) = simulate_sde_summary(&cfg, rows, &mut SimRng::new(cli.seed))?;
                std::fs::write(path, summary_tsv(&summary))?;
            }
            let _ = writeln!(
                err,
                "terminal mean {:.6} vs {:.6} ({:+.2} se), var {:.6} vs {:.6} ({:+.2} se)",
                report.stats.terminal_mean,
                report.exact_mean,
                report.mean_z,
                report.stats.terminal_var,
                report.exact_var,
                report.var_z
            );
            (to_value(&report), report.pass)
        }
        SdeMode::Case1 => {
            let base = need(req.base, "base")?;
            base.validate().map_err(|e| e.under("base"))?;
            let kappa = need(req.kappa_b, "kappa_B")?;
            let r = case1_batch_transfer(&base, kappa, req.common_random_numbers, &mut rng)?;
            let _ = writeln!(err, "objects equal: {}, terminal stats match: {}", r.objects_equal, r.matched);
            (to_value(&r), r.matched)
        }
        SdeMode::Case2 => {
            let base = need(req.base, "base")?;
            base.validate().map_err(|e| e.under("base"))?;
            let kappa = need(req.kappa_b, "kappa_B")?;
            let r = case2_fixed_iterations(&base, kappa, &mut rng)?;
            let want = 1.0 / kappa.sqrt();
            let pass = (r.sigma0_ratio - want).abs() <= 1e-12 * want && (r.horizon_ratio - 1.0).abs() <= 1e-12;
            let _ = writeln!(
                err,
                "sigma0 ratio {:.12}, horizon ratio {:.12}, drift ratio {:.4}",
                r.sigma0_ratio, r.horizon_ratio, r.drift_ratio
            );
            (to_value(&r), pass)
        }
        SdeMode::Activated => {
            let base = need(req.base, "base")?;
            base.validate().map_err(|e| e.under("base"))?;
            let (a, ap) = (need(req.a, "a")?, need(req.a_prime, "a_prime")?);
            let r = activated_expert_transfer(&base, a, ap, need(req.experts, "N")?, need(req.batch, "B")?, &mut rng)?;
            let want = (a as f64 / ap as f64).sqrt();
            let pass = r.eta_ratio == 1.0 && (r.sigma0_ratio - want).abs() <= 1e-12 * want;
            let _ = writeln!(err, "eta ratio {}, sigma0 ratio {:.12}", r.eta_ratio, r.sigma0_ratio);
            (to_value(&r), pass)
        }
    };
    Ok(Outcome { doc, pass })
}

fn cmd_parse(notation: &str, h: usize, shared: Option<usize>, router: RouterArg) -> Result<Outcome> {
    #[derive(Serialize)]
    struct Parsed {
        block: BlockSpec,
        active_width: usize,
        notation: String,
    }
    let block = parse_moe_notation(notation, h, shared, router.into())?;
    let canonical = format_moe_notation(&block)?;
    Ok(Outcome {
        doc: to_value(&Parsed {
            active_width: block.active_width(),
            notation: canonical,
            block,
        }),
        pass: true,
    })
}

fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<bool> {
    let outcome = match &cli.command {
        Command::Transfer { reference, target } => cmd_transfer(cli, reference, target, err)?,
        Command::Verify { plan, tsv } => cmd_verify(cli, plan.as_deref(), tsv.as_deref(), err)?,
        Command::Sde { config, mode, tsv } => cmd_sde(cli, config, *mode, tsv.as_deref(), err)?,
        Command::Parse {
            notation,
            h,
            shared,
            router,
        } => cmd_parse(notation, *h, *shared, *router)?,
    };
    let mut text = serde_json::to_string_pretty(&outcome.doc)?;
    text.push('\n');
    match &cli.out {
        Some(path) => std::fs::write(path, text)?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(outcome.pass)
}

/// Parse `args` (including the program name) and run, returning the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = err.write_all(text.as_bytes());
            } else {
                let _ = out.write_all(text.as_bytes());
            }
            return if code == 0 { EXIT_PASS } else { EXIT_INPUT };
        }
    };
    match execute(&cli, out, err) {
        Ok(true) => EXIT_PASS,
        Ok(false) => EXIT_FAIL,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_INPUT
        }
    }
}
