//! `polqkd`: run a scenario and write its data files.
//!
//! Exit codes: 0 success, 1 feedback did not converge, 2 invalid input or
//! any other error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use polqkd_core::exec::Execution;
use polqkd_core::harness::{run, Scenario, ScenarioKind};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "polqkd", version, about = "Polarization-decoding BB84 receiver simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Port-probability table of the BB84 states.
    #[command(alias = "povm-table")]
    Povm(Common),
    /// QBER time series at fixed chip settings.
    Stability(Common),
    /// Scrambler timeline with closed-loop compensation.
    Scramble {
        #[command(flatten)]
        common: Common,
        /// Independent recovery trials (0 to skip).
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Secret key rate against distance.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated distances in km.
        #[arg(long, value_delimiter = ',')]
        distances: Option<Vec<f64>>,
    },
    /// Finite-key analysis of a measured tally file.
    Keyrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tally: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario JSON; omitted fields take the defaults of the subcommand.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Output directory (default: the scenario's `output_dir`, else `.`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Expect,
    Mc,
}

struct Failure(String);

impl From<polqkd_core::Error> for Failure {
    fn from(e: polqkd_core::Error) -> Self {
        Failure(e.to_string())
    }
}

/// Relative paths inside a config file are taken relative to that file.
fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
    match base {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

fn load_doc(common: &Common, kind: ScenarioKind) -> Result<Value, Failure> {
    let mut doc = match &common.config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| Failure(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<Value>(&text).map_err(|e| Failure(format!("{}: {e}", path.display())))?
        }
        None => json!({}),
    };
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| Failure("scenario must be a JSON object".into()))?;
    let label = kind.label();
    match obj.get("kind") {
        None => {
            obj.insert("kind".into(), json!(label));
        }
        Some(k) if k == label => {}
        Some(k) => return Err(Failure(format!("config has kind {k}, subcommand expects \"{label}\""))),
    }
    let base = common.config.as_deref().and_then(Path::parent);
    for key in ["tally_file", "output_dir"] {
        if let Some(p) = obj.get(key).and_then(Value::as_str) {
            let r = resolve(base, Path::new(p));
            obj.insert(key.into(), json!(r));
        }
    }
    if let Some(seed) = common.seed {
        obj.insert("seed".into(), json!(seed));
    }
    if let Some(mode) = common.mode {
        let m = match mode {
            ModeArg::Expect => "expect",
            ModeArg::Mc => "mc",
        };
        obj.insert("mode".into(), json!(m));
    }
    Ok(doc)
}

fn execute(cli: Cli) -> Result<bool, Failure> {
    let (common, kind, patch) = match &cli.command {
        Command::Povm(c) => (c, ScenarioKind::PovmTable, json!({})),
        Command::Stability(c) => (c, ScenarioKind::Stability, json!({})),
        Command::Scramble { common, trials } => {
            let patch = trials.map_or_else(|| json!({}), |t| json!({ "trials": t }));
            (common, ScenarioKind::Scramble, patch)
        }
        Command::Sweep { common, distances } => {
            let patch = distances
                .as_ref()
                .map_or_else(|| json!({}), |d| json!({ "distances_km": d }));
            (common, ScenarioKind::Sweep, patch)
        }
        Command::Keyrate { common, tally } => {
            let patch = tally.as_ref().map_or_else(|| json!({}), |t| json!({ "tally_file": t }));
            (common, ScenarioKind::Keyrate, patch)
        }
    };
    let mut doc = load_doc(common, kind)?;
    polqkd_core::harness::deep_merge(&mut doc, patch);
    let scenario = Scenario::from_value(doc)?;
    let exec = if common.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let artifact = run(&scenario, exec)?;
    let out = common
        .out
        .clone()
        .or_else(|| scenario.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let written = artifact.write_to(&out)?;
    for p in &written {
        eprintln!("wrote {}", p.display());
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&artifact.summary).map_err(|e| Failure(e.to_string()))?
    );
    Ok(!artifact.non_converged)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("polqkd: feedback did not converge");
            ExitCode::from(1)
        }
        Err(Failure(msg)) => {
            eprintln!("polqkd: {msg}");
            ExitCode::from(2)
        }
    }
}
