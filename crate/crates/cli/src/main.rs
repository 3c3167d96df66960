mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, FileConfig};

/// Stable learning with association-rule features.
#[derive(Parser, Debug)]
#[command(name = "stablerules", version)]
pub struct Cli {
    /// Flat JSON file of default settings; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed; overrides STABLERULES_SEED and the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic environment as CSV plus a JSON sidecar.
    Synth(SynthArgs),
    /// One-hot encode a raw CSV described by a column schema.
    Prepare(PrepareArgs),
    /// Mine class association rules from a one-hot CSV.
    Mine(MineArgs),
    /// Prune a rule set by backward elimination and item deletion.
    Select(SelectArgs),
    /// Learn decorrelating sample weights.
    Decorrelate(DecorrelateArgs),
    /// Fit a linear model.
    Train(TrainArgs),
    /// Score a fitted model on a dataset.
    Evaluate(EvaluateArgs),
    /// Method comparison on synthetic environments.
    #[command(name = "reproduce-table1")]
    ReproduceTable1(Table1Args),
    /// Cost-floor ablation of the reweighted SVR.
    #[command(name = "reproduce-table2")]
    ReproduceTable2(Table2Args),
    /// Correlation profiles under uniform, learned and DWR weights.
    #[command(name = "reproduce-fig2")]
    ReproduceFig2(Fig2Args),
}

#[derive(Args, Debug, Default)]
pub struct DecorFlags {
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lambda_w: Option<f64>,
    #[arg(long)]
    pub lambda_sum: Option<f64>,
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// `linear` or `nonlinear`.
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Total number of columns.
    #[arg(long)]
    pub p: Option<usize>,
    /// Stable columns (default: round(0.4 p)).
    #[arg(long)]
    pub p_s: Option<usize>,
    /// Bias rate; omit for an unbiased draw.
    #[arg(long, allow_hyphen_values = true)]
    pub r: Option<f64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON column schema.
    #[arg(long)]
    pub schema: PathBuf,
    /// Sidecar of an earlier `prepare` run whose fitted pipeline to replay.
    #[arg(long)]
    pub pipeline: Option<PathBuf>,
    /// `quantile` or `equal_width`.
    #[arg(long)]
    pub binning: Option<String>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Skip oversampling of the minority class.
    #[arg(long)]
    pub no_balance: bool,
    /// Candidate subset sizes for recursive feature elimination.
    #[arg(long, value_delimiter = ',')]
    pub feature_sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MineArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub min_support: Option<f64>,
    #[arg(long)]
    pub min_confidence: Option<f64>,
    /// Longest antecedent.
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub rules: PathBuf,
    #[arg(long)]
    pub max_rules: Option<usize>,
    #[arg(long)]
    pub min_rules: Option<usize>,
    /// Follow rule elimination with greedy item deletion.
    #[arg(long)]
    pub item_reduce: bool,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DecorrelateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Column excluded from the features, if present.
    #[arg(long)]
    pub label: Option<String>,
    #[command(flatten)]
    pub decor: DecorFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub label: Option<String>,
    /// ols, ridge, lasso, dwr, svm, wsvm, svr or wsvr.
    #[arg(long)]
    pub model: Option<String>,
    /// Sample weights CSV (column `weight`) for wsvm and wsvr.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Ridge or lasso penalty.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Covariance penalty multiplier for dwr.
    #[arg(long)]
    pub dwr_lambda2: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub label: Option<String>,
    /// Sidecar of a synthetic dataset; adds coefficient errors.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Metrics JSON (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct Table1Args {
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Total column counts.
    #[arg(long, alias = "p", value_delimiter = ',')]
    pub m: Option<Vec<usize>>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long)]
    pub test_n: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub test_rs: Option<Vec<f64>>,
    /// Cost floor of the reweighted SVR.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[command(flatten)]
    pub decor: DecorFlags,
    /// Record elapsed time in the JSON sidecar.
    #[arg(long)]
    pub wall_time: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Table2Args {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, alias = "p")]
    pub m: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub cs: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub gammas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub test_n: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub test_rs: Option<Vec<f64>>,
    #[arg(long)]
    pub wall_time: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Fig2Args {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, alias = "p")]
    pub m: Option<usize>,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub env: Option<String>,
    #[command(flatten)]
    pub decor: DecorFlags,
    #[arg(long)]
    pub wall_time: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Core(stablerules_core::Error),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<stablerules_core::Error> for CliError {
    fn from(e: stablerules_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => e.fmt(f),
            CliError::Core(e) => e.fmt(f),
        }
    }
}

/// Whether every optimiser in the run met its stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Done,
    NotConverged,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => {
            eprintln!("warning: results written, but at least one optimiser stopped at its iteration cap");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Config(_) | CliError::Core(stablerules_core::Error::Config(_)) => ExitCode::from(1),
                CliError::Core(_) => ExitCode::from(2),
            }
        }
    }
}

fn run(cli: &Cli) -> Result<Status, CliError> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let env_seed = std::env::var("STABLERULES_SEED").ok();
    let seed = config::resolve_seed(cli.seed, env_seed.as_deref(), &file, 1)?;
    let jobs = cli.jobs.or(file.usize("jobs"));
    if let Some(j) = jobs {
        if j == 0 {
            return Err(stablerules_core::Error::Config("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| stablerules_core::Error::Config(e.to_string()))?;
    }
    let ctx = commands::Context { file, seed, jobs };
    match &cli.command {
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Prepare(a) => commands::prepare(&ctx, a),
        Command::Mine(a) => commands::mine(&ctx, a),
        Command::Select(a) => commands::select(&ctx, a),
        Command::Decorrelate(a) => commands::decorrelate(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Evaluate(a) => commands::evaluate(&ctx, a),
        Command::ReproduceTable1(a) => commands::table1(&ctx, a),
        Command::ReproduceTable2(a) => commands::table2(&ctx, a),
        Command::ReproduceFig2(a) => commands::fig2(&ctx, a),
    }
}
