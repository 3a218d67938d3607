mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use slotfuse::classifier::{DEFAULT_LAMBDA, DEFAULT_THRESHOLD};
use slotfuse::ingest::DEFAULT_ALIAS_LIMIT;

#[derive(Debug, Parser)]
#[command(name = "slotfuse", version, about = "Ensembling of slot-filling system outputs")]
pub struct Cli {
    /// key = value file supplying defaults for the subcommand's options.
    #[arg(long, global = true, env = config::CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// More log output on standard error (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a dataset directory and report anomalies.
    Validate(ValidateArgs),
    /// Write the feature matrix of a dataset's candidates.
    Featurize(FeaturizeArgs),
    /// Train the meta-classifier on a feature matrix.
    Train(TrainArgs),
    /// Score a feature matrix with a trained model.
    Predict(PredictArgs),
    /// Fuse team runs into the unsupervised ensemble run.
    Aggregate(AggregateArgs),
    /// Union and voting baselines.
    Baseline(BaselineArgs),
    /// Turn accepted predictions into a final run.
    Postprocess(PostprocessArgs),
    /// Score a run against an assessment key.
    Score(ScoreArgs),
    /// Generate a synthetic train/test benchmark.
    Synth(SynthArgs),
    /// Compare the stacker with the baselines, optionally as a curve.
    Experiment(ExperimentArgs),
    /// Train on one dataset, evaluate on another and write every artifact.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Run file column layout.
    #[arg(long, default_value = "2014")]
    pub format: String,
    /// Treat malformed run lines as errors instead of skipping them.
    #[arg(long)]
    pub strict: bool,
    /// Two-column file assigning slots to classes (entity, date, number, string).
    #[arg(long)]
    pub slot_classes: Option<PathBuf>,
    /// Two-column file assigning run ids to teams.
    #[arg(long)]
    pub teams: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AliasArgs {
    /// Alias table (canonical, alias, count).
    #[arg(long)]
    pub aliases: Option<PathBuf>,
    /// Aliases kept per canonical name.
    #[arg(long, default_value_t = DEFAULT_ALIAS_LIMIT)]
    pub alias_limit: usize,
}

#[derive(Debug, Clone, Args)]
pub struct FeatureArgs {
    /// Feature groups: conf, qsim, psim, dps, op, relprov, rel.
    #[arg(long, default_value = "conf,dps,op,rel")]
    pub features: String,
    /// Add a presence column per system.
    #[arg(long)]
    pub missing_indicators: bool,
    /// How per-system document scores become one value (max or mean).
    #[arg(long, default_value = "max")]
    pub dps_reduction: String,
    /// How per-system offset scores become one value (max or mean).
    #[arg(long, default_value = "mean")]
    pub op_reduction: String,
    #[arg(long)]
    pub tfidf_smooth: bool,
    #[arg(long)]
    pub tfidf_log_tf: bool,
    /// Comma-separated teams fused into the unsupervised ensemble.
    #[arg(long, default_value = "")]
    pub unsupervised: String,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// logistic or squared-hinge.
    #[arg(long, default_value = "logistic")]
    pub loss: String,
    #[arg(long, default_value_t = 5000)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    /// Standardize columns before fitting.
    #[arg(long)]
    pub standardize: bool,
    /// Pick the penalty on a held-out split of the training queries.
    #[arg(long)]
    pub tune: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct PostArgs {
    /// Keep every accepted fill of single-valued slots.
    #[arg(long)]
    pub no_select_single: bool,
    /// Skip duplicate elimination.
    #[arg(long)]
    pub no_dedup: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    /// Also index the corpus directory.
    #[arg(long)]
    pub corpus: bool,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
    /// Reuse the layout (and system roster) of a training matrix.
    #[arg(long)]
    pub layout: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Labelled feature matrix.
    #[arg(long)]
    pub matrix: PathBuf,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Decision threshold used when tuning the penalty.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    /// Comma-separated teams to fuse (default: all).
    #[arg(long)]
    pub unsupervised: Option<String>,
    /// Budget table overriding the dataset's budgets.tsv.
    #[arg(long)]
    pub budgets: Option<PathBuf>,
    /// Estimate budgets from this keyed dataset instead.
    #[arg(long, conflicts_with = "budgets")]
    pub estimate_from: Option<PathBuf>,
    /// Two-column file: slot, sibling whose budget it inherits.
    #[arg(long, requires = "estimate_from")]
    pub slot_mapping: Option<PathBuf>,
    /// Divide by queried entities instead of all fills.
    #[arg(long, requires = "estimate_from")]
    pub per_entity: bool,
    /// Also write the estimated budget table here.
    #[arg(long, requires = "estimate_from")]
    pub budgets_out: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineKind {
    Union,
    Vote,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(value_enum)]
    pub kind: BaselineKind,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    /// Fixed vote threshold.
    #[arg(long, conflicts_with_all = ["learn", "oracle"])]
    pub k: Option<usize>,
    /// Learn the threshold on a keyed training dataset.
    #[arg(long, requires = "train", conflicts_with = "oracle")]
    pub learn: bool,
    /// Choose the threshold with the evaluation key.
    #[arg(long)]
    pub oracle: bool,
    /// Training dataset for --learn.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Comma-separated teams fused into the unsupervised ensemble.
    #[arg(long, default_value = "")]
    pub unsupervised: String,
    #[arg(long, default_value = "official")]
    pub mode: String,
    /// Write the precision/recall curve over k here.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PostprocessArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub aliases: AliasArgs,
    #[arg(long)]
    pub predictions: PathBuf,
    /// Model whose roster produced the predictions.
    #[arg(long)]
    pub model: PathBuf,
    /// Comma-separated teams fused into the unsupervised ensemble.
    #[arg(long, default_value = "")]
    pub unsupervised: String,
    #[command(flatten)]
    pub post: PostArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub key: PathBuf,
    /// official or unofficial.
    #[arg(long, default_value = "official")]
    pub mode: String,
    /// Emit CSV instead of the text table.
    #[arg(long)]
    pub csv: bool,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub aliases: AliasArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory receiving train/, test/ and generator.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Generator configuration (JSON); defaults to the standard eight-system setting.
    #[arg(long)]
    pub generator: Option<PathBuf>,
    #[arg(long)]
    pub train_queries: Option<usize>,
    #[arg(long)]
    pub test_queries: Option<usize>,
    #[arg(long)]
    pub background_docs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    /// Directory holding one dataset per year.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub train_year: String,
    #[arg(long)]
    pub test_year: String,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub aliases: AliasArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[command(flatten)]
    pub post: PostArgs,
    #[arg(long, default_value = "official")]
    pub mode: String,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    /// Sweep the fraction of training queries.
    #[arg(long, conflicts_with = "incremental")]
    pub learning_curve: bool,
    /// Add systems one at a time.
    #[arg(long)]
    pub incremental: bool,
    /// Smallest system count of the incremental sweep.
    #[arg(long, default_value_t = 2)]
    pub min_systems: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    /// Artifact directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure exit codes.
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;

/// A usage problem detected after argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("SLOTFUSE_LOG")
        .format_timestamp(None)
        .try_init();
}

fn usage_exit(err: clap::Error) -> ExitCode {
    let _ = err.print();
    if err.use_stderr() {
        ExitCode::from(EXIT_USAGE)
    } else {
        ExitCode::SUCCESS
    }
}

fn main() -> ExitCode {
    let argv: Vec<OsString> = std::env::args_os().collect();
    let command = Cli::command();
    let matches = match command.clone().try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) => return usage_exit(e),
    };
    init_logging(matches.get_count("verbose"), matches.get_flag("quiet"));

    let config_path = matches.get_one::<PathBuf>("config").cloned();
    let matches = match config_path {
        Some(path) => {
            let extra = match config::load_config(&path).and_then(|e| config::config_args(&command, &matches, &e)) {
                Ok(extra) => extra,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    return ExitCode::from(EXIT_DATA);
                }
            };
            let mut full = argv.clone();
            full.extend(extra);
            match command.try_get_matches_from(full) {
                Ok(m) => m,
                Err(e) => return usage_exit(e),
            }
        }
        None => matches,
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => return usage_exit(e),
    };

    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs.max(1)).build_global() {
        log::debug!("thread pool already initialised: {e}");
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            eprintln!("\nFor more information, try '--help'.");
            ExitCode::from(EXIT_USAGE)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_DATA)
        }
    }
}
