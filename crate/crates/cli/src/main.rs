//! `ksup`: command-line driver for closed-form editing, interference
//! analysis and superposition statistics.
//!
//! Every run writes its artifacts plus `run_manifest.json` into `--out`.
//! Exit codes: 0 success, 1 numeric or data error, 2 usage or dimension
//! error.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use ksup::linalg::{DEFAULT_EIGEN_EPS, SYMMETRY_TOL};
use ksup::EigenPolicy;
use serde::Serialize;
use serde_json::json;

use crate::output::{Format, OutDir};

const AFTER_HELP: &str = "\
Environment:
  KSUP_THREADS   worker threads for the parallel kernels (default: all cores)
  RUST_LOG       log filter, e.g. info or debug (default: warn)
  SOURCE_DATE_EPOCH
                 fixes manifest timestamps for byte-reproducible runs

Exit codes: 0 success, 1 numeric or data error, 2 usage or dimension error";

#[derive(Debug, Parser, Serialize)]
#[command(name = "ksup", version, about, after_help = AFTER_HELP)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GlobalOpts {
    /// Output directory, created if absent
    #[arg(long, global = true, default_value = "ksup-out")]
    pub out: PathBuf,

    /// RNG seed; overrides the seed of a --config file
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Floor small covariance eigenvalues at tol-eigen·λ_max instead of failing
    #[arg(long, global = true)]
    pub clamp_eigs: bool,

    /// Relative eigenvalue threshold for the inverse square root
    #[arg(long, global = true, default_value_t = DEFAULT_EIGEN_EPS)]
    pub tol_eigen: f64,

    /// Accepted relative asymmetry of covariance inputs
    #[arg(long, global = true, default_value_t = SYMMETRY_TOL)]
    pub tol_symmetry: f64,

    /// Table format
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

impl GlobalOpts {
    pub fn policy(&self) -> EigenPolicy {
        if self.clamp_eigs {
            EigenPolicy::Clamp
        } else {
            EigenPolicy::Strict
        }
    }

    fn overrides(&self) -> serde_json::Map<String, serde_json::Value> {
        let mut m = serde_json::Map::new();
        if self.tol_eigen != DEFAULT_EIGEN_EPS {
            m.insert("tol_eigen".into(), json!(self.tol_eigen));
        }
        if self.tol_symmetry != SYMMETRY_TOL {
            m.insert("tol_symmetry".into(), json!(self.tol_symmetry));
        }
        if self.clamp_eigs {
            m.insert("clamp_eigs".into(), json!(true));
        }
        m
    }
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "lowercase")]
enum Command {
    /// Generate a synthetic covariance, keys, initial weights and edit stream
    Gen(GenArgs),
    /// Least-squares fit of W to key/value dumps
    Fit(FitArgs),
    /// Apply one closed-form edit
    Edit(EditArgs),
    /// Apply an edit sequence and measure interference on the other keys
    Lifelong(LifelongArgs),
    /// Superposition matrix P of a key set with kurtosis summary
    Pmatrix(PmatrixArgs),
    /// Kurtosis and density estimate of a sample
    Stats(StatsArgs),
    /// Whitening-space and activation-space angles between keys
    Angles(AnglesArgs),
    /// Kurtosis of the leading m×m block of P for growing m
    Converge(ConvergeArgs),
    /// Kurtosis against key dimension for a synthetic family
    Scaling(ScalingArgs),
    /// Merge kurtosis summaries from run directories
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RegimeArg {
    Orthogonal,
    Superposed,
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    /// GenConfig JSON; replaces the shape flags below
    #[arg(long, conflicts_with_all = ["d_k", "d_v", "features", "eps", "spectrum"])]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub d_k: usize,
    #[arg(long, default_value_t = 32)]
    pub d_v: usize,
    /// Number of features (keys) in the configuration
    #[arg(long, default_value_t = 128)]
    pub features: usize,
    /// Superposition strength in [0, 1]
    #[arg(long, default_value_t = 0.3)]
    pub eps: f64,
    /// Covariance spectrum: "flat" or "power-law(α)"
    #[arg(long, default_value = "flat")]
    pub spectrum: String,
    /// Keys to generate (default: the feature count)
    #[arg(long)]
    pub keys: Option<usize>,
    /// Leading keys turned into edits (default: half the keys)
    #[arg(long)]
    pub edits: Option<usize>,
    #[arg(long, value_enum, default_value_t = RegimeArg::Superposed)]
    pub regime: RegimeArg,
    /// Standard deviation of edit target values
    #[arg(long, default_value_t = 1.0)]
    pub value_scale: f64,
    /// Scale of the initial weights, W_0 ~ N(0, scale²/d_k)
    #[arg(long, default_value_t = 1.0)]
    pub weight_scale: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub keys: PathBuf,
    #[arg(long)]
    pub values: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EditArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub cov: PathBuf,
    /// Edit spec JSON
    #[arg(long)]
    pub edits: PathBuf,
    /// Key dump for edits given by key_index
    #[arg(long)]
    pub keys: Option<PathBuf>,
    /// 1-based position of the edit to apply
    #[arg(long, default_value_t = 1)]
    pub index: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct LifelongArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub cov: PathBuf,
    /// Key dump; columns not edited serve as probes of original knowledge
    #[arg(long)]
    pub keys: PathBuf,
    /// Edit spec JSON
    #[arg(long)]
    pub edits: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PmatrixArgs {
    #[arg(long)]
    pub keys: PathBuf,
    #[arg(long)]
    pub cov: PathBuf,
    /// Largest off-diagonal pairs listed in the summary
    #[arg(long, default_value_t = 10)]
    pub top: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    /// P dump; its off-diagonal entries form the sample
    #[arg(long, conflicts_with = "samples", required_unless_present = "samples")]
    pub pmatrix: Option<PathBuf>,
    /// CSV table holding the sample in one column
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[arg(long, default_value = "p")]
    pub column: String,
}

#[derive(Debug, Args, Serialize)]
pub struct AnglesArgs {
    #[arg(long)]
    pub keys: PathBuf,
    #[arg(long)]
    pub cov: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ConvergeArgs {
    #[arg(long)]
    pub keys: PathBuf,
    #[arg(long)]
    pub cov: PathBuf,
    /// Ascending block sizes (default: 16, 32, …, 128)
    #[arg(long, value_delimiter = ',')]
    pub steps: Option<Vec<usize>>,
}

#[derive(Debug, Args, Serialize)]
pub struct ScalingArgs {
    #[arg(long, value_delimiter = ',', default_value = "32,64,128,256")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 512)]
    pub features: usize,
    #[arg(long, default_value_t = 0.3)]
    pub eps: f64,
    /// Number of seeds per dimension, counting up from --seed
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Run directories holding summary.json
    #[arg(required = true)]
    pub dirs: Vec<PathBuf>,
}

/// Caller-side mistakes detected by the CLI itself; exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<ksup::Error>() {
            return if e.is_usage() { 2 } else { 1 };
        }
    }
    1
}

fn configure_threads() -> Result<Option<usize>> {
    let Ok(raw) = std::env::var("KSUP_THREADS") else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("KSUP_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(Some(n))
}

fn run(cli: &Cli, out: &mut OutDir) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Gen(a) => commands::gen(a, g, out),
        Command::Fit(a) => commands::fit(a, g, out),
        Command::Edit(a) => commands::edit(a, g, out),
        Command::Lifelong(a) => commands::lifelong(a, g, out),
        Command::Pmatrix(a) => commands::pmatrix(a, g, out),
        Command::Stats(a) => commands::stats(a, out),
        Command::Angles(a) => commands::angles(a, g, out),
        Command::Converge(a) => commands::converge(a, g, out),
        Command::Scaling(a) => commands::scaling(a, g, out),
        Command::Report(a) => commands::report(a, out),
    }
}

fn write_manifest(cli: &Cli, out: &mut OutDir, threads: Option<usize>, result: &Result<()>) -> Result<()> {
    let (status, error) = match result {
        Ok(()) => ("ok", None),
        Err(e) => ("failed", Some(format!("{e:#}"))),
    };
    let outputs = out.written().to_vec();
    let manifest = json!({
        "tool": "ksup",
        "version": env!("CARGO_PKG_VERSION"),
        "created": ksup::dump::timestamp(),
        "run": cli,
        "tolerance_overrides": cli.global.overrides(),
        "threads": threads.unwrap_or_else(rayon::current_num_threads),
        "status": status,
        "error": error,
        "outputs": outputs,
    });
    out.json("run_manifest.json", &manifest)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    let result = (|| {
        let threads = configure_threads()?;
        let overrides = cli.global.overrides();
        if !overrides.is_empty() {
            log::info!("tolerance overrides: {}", serde_json::Value::Object(overrides));
        }
        let mut out = OutDir::create(&cli.global.out, cli.global.format)?;
        let result = run(&cli, &mut out);
        let written = write_manifest(&cli, &mut out, threads, &result);
        match (result, written) {
            (Err(e), Err(m)) => {
                log::error!("run manifest not written: {m:#}");
                Err(e)
            }
            (result, written) => result.and(written),
        }
    })();

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
