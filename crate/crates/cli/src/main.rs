//! `truthsched` command-line front end.
//!
//! Exit codes: 0 on success or when a probe finds nothing, 1 when a probe
//! finds something (a monotonicity violation, a certificate) or a
//! certificate fails verification, 2 on usage or configuration errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug, Serialize)]
#[command(name = "truthsched", version, about = "Exact tooling for truthful makespan scheduling")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Serialize, Clone)]
pub struct GlobalArgs {
    /// Base seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Constants profile (JSON) replacing the desk defaults.
    #[arg(long, global = true)]
    pub consts: Option<PathBuf>,
    /// Primary artifact path (a directory for `generate`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Output on stdout: human-readable text, the JSON run report, or CSV.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Args, Debug, Serialize, Clone, Default)]
pub struct MechArgs {
    /// Mechanism id (vcg, wvcg, maxcost, affmin2, relaxed-affmin2, taskind2,
    /// onedim2, const2).
    #[arg(long)]
    pub mech: Option<String>,
    /// JSON file holding a full mechanism block (id, config, embed).
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Write a deterministic corpus of instance files into --out.
    Generate(GenerateArgs),
    /// Allocation, makespan, optimum and exact ratio on one instance.
    Evaluate(EvaluateArgs),
    /// Randomized weak-monotonicity scan; exit 1 when a violation is found.
    WmonCheck(WmonArgs),
    /// Classify the 2x2 slice spanned by two tasks of an instance.
    ClassifySlice(ClassifyArgs),
    /// Lower-bound certificate search; exit 1 when a certificate is found.
    Certify(CertifyArgs),
    /// Estimate the fraction of random regular k-sets that are not good.
    EstimateBk(EstimateArgs),
    /// Re-check a certificate file; exit 1 when it does not verify.
    VerifyCert(VerifyArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusKind {
    /// Standard instances with a random regular set raised to (alpha, 1).
    Standard,
    /// Random n x m matrices on the grid k/denom.
    Matrix,
    /// Random clustered instances on the grid k/denom.
    Clustered,
    /// Tasks costing 1 on machine 0 and 1.001 elsewhere (n x n).
    VcgClassic,
}

#[derive(Args, Debug, Serialize, Clone)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub kind: CorpusKind,
    /// Number of players; taken from --consts when omitted.
    #[arg(long)]
    pub n: Option<usize>,
    /// Tasks per matrix.
    #[arg(long, default_value_t = 4)]
    pub m: usize,
    /// Cluster size minus one for random clustered instances.
    #[arg(long, default_value_t = 2)]
    pub ell: usize,
    /// Grid denominator.
    #[arg(long, default_value_t = 8)]
    pub denom: i64,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
}

#[derive(Args, Debug, Serialize, Clone)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub mech: MechArgs,
    #[arg(long)]
    pub instance: PathBuf,
}

#[derive(Args, Debug, Serialize, Clone)]
pub struct WmonArgs {
    #[command(flatten)]
    pub mech: MechArgs,
    #[arg(long, default_value_t = 10_000)]
    pub trials: u64,
    /// Deviate from this instance instead of drawing fresh ones.
    #[arg(long)]
    pub instance: Option<PathBuf>,
    /// uniform, single, structured or mixed.
    #[arg(long, default_value = "mixed")]
    pub generator: String,
}

#[derive(Args, Debug, Serialize, Clone)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub mech: MechArgs,
    #[arg(long)]
    pub instance: PathBuf,
    /// Column of the first slice task.
    #[arg(long)]
    pub p: usize,
    /// Column of the second slice task.
    #[arg(long)]
    pub pprime: usize,
    /// Bisection tolerance, as a rational.
    #[arg(long)]
    pub tol: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    pub budget: u64,
    /// Points per axis of the region grid.
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
}

#[derive(Args, Debug, Serialize, Clone)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub mech: MechArgs,
    /// Number of players; taken from --consts when omitted.
    #[arg(long)]
    pub n: Option<usize>,
    /// Points sampled per perturbation box.
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
    /// Good-set candidates tried before giving up.
    #[arg(long, default_value_t = 256)]
    pub search_budget: usize,
    /// Skip the direct instance search.
    #[arg(long)]
    pub no_direct: bool,
}

#[derive(Args, Debug, Serialize, Clone)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub mech: MechArgs,
    /// Number of players; taken from --consts when omitted.
    #[arg(long)]
    pub n: Option<usize>,
    /// Size of the regular sets drawn.
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 30)]
    pub trials: usize,
    /// Points sampled per perturbation box.
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
}

#[derive(Args, Debug, Serialize, Clone)]
pub struct VerifyArgs {
    #[arg(long)]
    pub cert: PathBuf,
    /// Also replay this mechanism on the certificate instance.
    #[command(flatten)]
    pub mech: MechArgs,
}

/// Machine-readable record of one run.
#[derive(Serialize)]
pub struct RunReport {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub outcome: serde_json::Value,
    pub artifacts: Vec<String>,
    pub wall_time_s: f64,
}

/// What a command hands back to the dispatcher.
pub struct Done {
    pub outcome: serde_json::Value,
    pub text: String,
    pub csv: String,
    pub artifacts: Vec<String>,
    /// Exit with code 1.
    pub flagged: bool,
    /// Where to save the run report.
    pub report_to: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let start = Instant::now();
    if let Some(w) = cli.global.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let done = match commands::run(&cli) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let mut artifacts = done.artifacts;
    if let Some(p) = &done.report_to {
        artifacts.push(p.display().to_string());
    }
    let report = RunReport {
        command: command_name(&cli.command).to_string(),
        config: serde_json::to_value(&cli).expect("arguments serialize"),
        seed: cli.global.seed,
        outcome: done.outcome,
        artifacts,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let mut body = serde_json::to_string_pretty(&report).expect("report serializes");
    body.push('\n');
    if let Some(p) = &done.report_to {
        if let Err(e) = std::fs::write(p, &body) {
            eprintln!("error: cannot write {}: {e}", p.display());
            return ExitCode::from(2);
        }
    }
    match cli.global.format {
        Format::Text => print!("{}", done.text),
        Format::Csv => print!("{}", done.csv),
        Format::Json => print!("{body}"),
    }
    ExitCode::from(if done.flagged { 1 } else { 0 })
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Generate(_) => "generate",
        Command::Evaluate(_) => "evaluate",
        Command::WmonCheck(_) => "wmon-check",
        Command::ClassifySlice(_) => "classify-slice",
        Command::Certify(_) => "certify",
        Command::EstimateBk(_) => "estimate-bk",
        Command::VerifyCert(_) => "verify-cert",
    }
}
