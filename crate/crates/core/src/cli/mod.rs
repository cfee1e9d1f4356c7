//! Command-line interface: `gen-data`, `kernel`, `sample`, `train` and
//! `analyze`.
//!
//! Every command writes into the directory given by `--out`, alongside a
//! `manifest.txt`. `--config <file>` reads `key=value` flag defaults (a
//! manifest works), with flags on the command line taking precedence.

mod commands;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::error::Error;
use crate::kernels::{Bandwidth, Jitter, KernelKind, KernelSpec};
use crate::trainer::TrainMode;
use manifest::ConfigFile;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FAILURE: i32 = 3;

/// Flags that take no value.
const BOOLEAN_FLAGS: &[&str] = &["online"];

#[derive(Debug, Parser)]
#[command(name = "kdpp-sgd", version, about = "Diversified mini-batch SGD with exact k-DPP sampling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate labelled Gaussian blobs.
    GenData(GenDataArgs),
    /// Build a similarity kernel and its eigendecomposition.
    Kernel(KernelArgs),
    /// Pre-sample a schedule of mini-batches and the inclusion marginals.
    Sample(SampleArgs),
    /// Run SGD and record a trace.
    Train(TrainArgs),
    /// Variance, balance or subset-distribution reports.
    Analyze(AnalyzeArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Kernel(_) => "kernel",
            Command::Sample(_) => "sample",
            Command::Train(_) => "train",
            Command::Analyze(_) => "analyze",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Three overlapping 2-D classes with 300, 50 and 10 points.
    #[value(name = "imbalanced-3class")]
    Imbalanced3Class,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, value_enum, conflicts_with_all = ["counts", "means"])]
    pub preset: Option<Preset>,
    /// Points per class, e.g. `300,50,10`.
    #[arg(long, requires = "means")]
    pub counts: Option<String>,
    /// Class means separated by `;`, e.g. `0,0;2.5,0`.
    #[arg(long, requires = "counts")]
    pub means: Option<String>,
    /// Per-coordinate variance of custom classes.
    #[arg(long, default_value_t = 1.0)]
    pub variance: f64,
    /// Also write `test.csv` with this many points per class.
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct KernelOpts {
    #[arg(long, value_parser = parse_from_str::<KernelKind>)]
    pub kernel_kind: Option<KernelKind>,
    /// Label weight `w` of label-weighted kernels.
    #[arg(long, default_value_t = 0.5)]
    pub label_weight: f64,
    /// Exponent of the annealed linear kernel.
    #[arg(long, default_value_t = 0.1)]
    pub anneal_exponent: f64,
    /// RBF bandwidth, or `median`.
    #[arg(long, default_value = "median", value_parser = parse_from_str::<Bandwidth>)]
    pub bandwidth: Bandwidth,
    /// Diagonal jitter: an absolute value or `relative:<r>` (times mean diagonal).
    #[arg(long, value_parser = parse_from_str::<Jitter>)]
    pub jitter: Option<Jitter>,
}

fn parse_from_str<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl KernelOpts {
    pub fn spec(&self, kind: KernelKind) -> KernelSpec {
        let mut spec = KernelSpec::new(kind)
            .with_label_weight(self.label_weight)
            .with_anneal_exponent(self.anneal_exponent)
            .with_bandwidth(self.bandwidth);
        if let Some(j) = self.jitter {
            spec = spec.with_jitter(j);
        }
        spec
    }

    fn params(&self, out: &mut Vec<(String, String)>) {
        let Some(kind) = self.kernel_kind else { return };
        let spec = self.spec(kind);
        out.push(("kernel-kind".into(), kind.name().into()));
        out.push(("label-weight".into(), spec.label_weight.to_string()));
        out.push(("anneal-exponent".into(), spec.anneal_exponent.to_string()));
        out.push(("bandwidth".into(), spec.bandwidth.to_string()));
        out.push(("jitter".into(), spec.jitter.to_string()));
    }
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub kernel: KernelOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub kernel: KernelOpts,
    #[arg(long)]
    pub k: usize,
    /// Number of mini-batches to draw.
    #[arg(long)]
    pub batches: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for cached eigendecompositions.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    /// Multinomial logistic regression with an intercept.
    Softmax,
    /// `1/2 ||x - theta||^2`.
    Quadratic,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Pre-sampled schedule to consume instead of a kernel.
    #[arg(long, conflicts_with = "kernel_kind")]
    pub schedule: Option<PathBuf>,
    /// Marginals for `--mode dm-unbiased` with `--schedule`.
    #[arg(long, requires = "schedule")]
    pub marginals: Option<PathBuf>,
    #[command(flatten)]
    pub kernel: KernelOpts,
    /// dm, dm-unbiased, uniform or stratified.
    #[arg(long, value_parser = parse_from_str::<TrainMode>)]
    pub mode: TrainMode,
    #[arg(long, value_enum, default_value_t = ModelKind::Softmax)]
    pub model: ModelKind,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub steps: usize,
    #[arg(long, default_value_t = 1.0)]
    pub tau0: f64,
    #[arg(long, default_value_t = 0.6)]
    pub kappa: f64,
    /// Constant learning rate, replacing the decaying schedule.
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Labelled dataset on which to track balanced accuracy.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// Sample batches as training proceeds rather than up front.
    #[arg(long)]
    pub online: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Report {
    Variance,
    Balance,
    Distribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalysisMode {
    /// Enumerate every size-k subset.
    Exact,
    /// Monte Carlo estimates.
    Mc,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub kernel: KernelOpts,
    #[arg(long)]
    pub k: usize,
    #[arg(long, value_enum)]
    pub what: Report,
    #[arg(long, value_enum, default_value_t = AnalysisMode::Exact)]
    pub mode: AnalysisMode,
    /// Monte Carlo draws, or batches sampled for a balance report.
    #[arg(long, default_value_t = 10_000)]
    pub draws: usize,
    #[arg(long, value_enum, default_value_t = ModelKind::Quadratic)]
    pub model: ModelKind,
    /// Parameters (`index,value` CSV) at which gradients are taken; zeros by default.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Schedule whose batches form the balanced dataset.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Failure(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Failure(e) => write!(f, "{e}"),
        }
    }
}

/// Splice `--config` defaults into `argv`, ahead of the explicit flags.
fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut config_path = None;
    let mut it = argv.into_iter();
    let bin = it.next().unwrap_or_else(|| "kdpp-sgd".into());
    while let Some(arg) = it.next() {
        let s = arg.to_string_lossy();
        if s == "--config" {
            let path = it.next().ok_or_else(|| CliError::Usage("--config needs a file".into()))?;
            config_path = Some(PathBuf::from(path));
        } else if let Some(path) = s.strip_prefix("--config=") {
            config_path = Some(PathBuf::from(path));
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = config_path else {
        let mut out = vec![bin];
        out.extend(rest);
        return Ok(out);
    };
    let config = ConfigFile::read(&path)?;
    let has_command = rest.first().is_some_and(|a| !a.to_string_lossy().starts_with('-'));
    let mut out = vec![bin];
    if has_command {
        out.push(rest.remove(0));
    } else {
        let command = config
            .command
            .clone()
            .ok_or_else(|| CliError::Usage(format!("{} names no command and none was given", path.display())))?;
        out.push(command.into());
    }
    out.extend(config.to_args(BOOLEAN_FLAGS).into_iter().map(OsString::from));
    out.extend(rest);
    Ok(out)
}

/// Parse `argv` (including the program name) and run; returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv = match expand_config(argv.into_iter().map(Into::into).collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let command = Cli::command().args_override_self(true).mut_subcommands(|s| s.args_override_self(true));
    let cli = match command.try_get_matches_from(argv).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match commands::execute(&cli.command) {
        Ok(()) => 0,
        Err(CliError::Failure(e @ Error::EnumerationBudget { .. })) => {
            eprintln!("error: {e} (rerun with --mode mc)");
            EXIT_FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
