use std::path::PathBuf;

use atlas::data::SplitSpec;
use clap::{Args, Parser, Subcommand};

/// Demand-aware tensor factorization and forecasting of weekly retail sales.
#[derive(Debug, Parser)]
#[command(name = "atlas", version, arg_required_else_help = true)]
pub struct Cli {
    /// Worker threads for parallel tuning and comparison.
    #[arg(long, global = true, env = "ATLAS_THREADS")]
    pub threads: Option<usize>,

    /// Raise log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic data directory with known ground truth.
    Generate(GenerateArgs),
    /// Build a sales tensor from a transaction CSV.
    Ingest(IngestArgs),
    /// Fit the factor model on the training weeks.
    Fit(FitArgs),
    /// Extend the time factors and write forecasts.
    Forecast(ForecastArgs),
    /// Score a forecast file that carries y_true.
    Evaluate(EvaluateArgs),
    /// Pick rank and penalties on the validation weeks.
    Tune(TuneArgs),
    /// Score several methods on the same test cells.
    Compare(CompareArgs),
}

fn parse_split(s: &str) -> Result<SplitSpec, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad week `{p}`")))
        .collect::<Result<_, _>>()?;
    match parts.as_slice() {
        [a, b, c] => Ok(SplitSpec::new(*a, *b, *c)),
        _ => Err("expected train_end,valid_end,test_end".into()),
    }
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| format!("expected key=value, got `{s}`"))
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Synth config file of key=value lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one synth config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_pair)]
    pub set: Vec<(String, String)>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub stores: Option<usize>,
    #[arg(long)]
    pub products: Option<usize>,
    #[arg(long)]
    pub weeks: Option<usize>,
    /// Rank of the generating factors.
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub store_groups: Option<usize>,
    /// Within-group correlation of store factors.
    #[arg(long, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub density: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub season: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub trend: Option<f64>,
    #[arg(long)]
    pub week_noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Transaction CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for tensor.csv and tensor.meta.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = atlas::data::DEFAULT_MIN_STORE_TXNS)]
    pub min_store: usize,
    #[arg(long, default_value_t = atlas::data::DEFAULT_MIN_PRODUCT_TXNS)]
    pub min_product: usize,
    #[arg(long, default_value = "store")]
    pub col_store: String,
    #[arg(long, default_value = "week")]
    pub col_week: String,
    #[arg(long, default_value = "syscode")]
    pub col_syscode: String,
    #[arg(long, default_value = "gen")]
    pub col_gen: String,
    #[arg(long, default_value = "vendor")]
    pub col_vendor: String,
    #[arg(long, default_value = "item")]
    pub col_item: String,
    #[arg(long, default_value = "units")]
    pub col_units: String,
    #[arg(long, default_value = "dollars")]
    pub col_dollars: String,
}

/// Data location, pipeline settings and group structure shared by the
/// model commands. Settings apply in order: defaults, `--config`, named
/// flags, then `--set`.
#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Data directory holding tensor.csv and tensor.meta.
    #[arg(long, default_value = ".")]
    pub data: PathBuf,
    /// Pipeline config file of key=value lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one pipeline config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_pair)]
    pub set: Vec<(String, String)>,
    /// Latent rank.
    #[arg(long)]
    pub k: Option<usize>,
    /// Store-group penalty weight; also sets the product-group weight unless
    /// --lambda1-star is given.
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda1_star: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub lambda3: Option<f64>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Week boundaries `train_end,valid_end,test_end`.
    #[arg(long, value_parser = parse_split)]
    pub split: Option<SplitSpec>,
    /// sarima or lstm.
    #[arg(long)]
    pub forecaster: Option<String>,
    /// none, zscore or log1p.
    #[arg(long)]
    pub standardize: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Forecast every store-product pair, not only observed cells.
    #[arg(long)]
    pub full_grid: bool,
    /// Store group file; defaults to groups.csv in the data directory.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// Covariance blocks for the store groups; defaults to covariance.csv in
    /// the data directory.
    #[arg(long)]
    pub covariance: Option<PathBuf>,
    #[arg(long)]
    pub product_groups: Option<PathBuf>,
    #[arg(long)]
    pub product_covariance: Option<PathBuf>,
    /// Within-group correlation for groups without their own.
    #[arg(long, allow_hyphen_values = true)]
    pub rho: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Fit W jointly with its forecaster.
    #[arg(long)]
    pub end_to_end: bool,
    /// Context feature CSV; the model is fitted to regression residuals.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Where to write model.txt and fit.conf; defaults to the data directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Directory holding model.txt and fit.conf; defaults to the data
    /// directory.
    #[arg(long)]
    pub model_dir: Option<PathBuf>,
    /// Context feature CSV; required when the model was fitted with one.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Forecast CSV path; defaults to forecast.csv in the model directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the per-dimension SARIMA coefficients here.
    #[arg(long)]
    pub coefficients: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Forecast CSV with a y_true column.
    #[arg(long)]
    pub forecasts: PathBuf,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Where to write leaderboard.csv and best.conf; defaults to the data
    /// directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Comma-separated methods; all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    /// Tune each factor-model method on the validation weeks first.
    #[arg(long)]
    pub tuned: bool,
    /// Where to write report.csv, report.txt and report.dat; defaults to the
    /// data directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
