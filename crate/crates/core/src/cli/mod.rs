//! The `prospect` command-line surface.
//!
//! Exit status is 0 on success, 1 when the work itself fails (bad data,
//! backend failures, unmet preconditions) and 2 for usage errors, which
//! include malformed configuration.

mod agent_cmd;
mod config;
mod data;
mod score;

pub use config::{AppConfig, FileConfig, Overrides, API_KEY_VAR, DEFAULT_CONFIG, DEFAULT_SEED};
pub use score::{evaluation, Evaluation, EvaluationRow};

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::agent::backend::BackendKind;
use crate::agent::RunMode;
use crate::dataset::Setting;
use crate::decision::{Optimizer, Strategy, DEFAULT_THRESHOLD};

/// Invalid invocation or configuration; maps to exit status 2.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub(crate) fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

const PRECEDENCE: &str = "\
Configuration precedence, highest first:
  1. command-line flags
  2. PROSPECT_* environment variables (shown as [env: ...] above)
  3. the config file (--config, PROSPECT_CONFIG or ./prospect.toml)
  4. built-in defaults
The backend credential is read from PROSPECT_API_KEY only.";

#[derive(Debug, Parser)]
#[command(name = "prospect", version, about = "Mineral-prospectivity rasters, judging agents and evaluation", after_help = PRECEDENCE)]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "PROSPECT_CONFIG", value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Directory that relative input paths resolve against.
    #[arg(long, global = true, env = "PROSPECT_DATA_ROOT", value_name = "DIR")]
    pub data_root: Option<PathBuf>,
    /// Directory that relative output paths resolve against.
    #[arg(long, global = true, env = "PROSPECT_OUTPUT_ROOT", value_name = "DIR")]
    pub output_root: Option<PathBuf>,
    /// Signature registry (TOML) replacing the built-in one.
    #[arg(long, global = true, env = "PROSPECT_REGISTRY", value_name = "FILE")]
    pub registry: Option<PathBuf>,
    /// Seed for every randomized step; recorded in the outputs.
    #[arg(long, global = true, env = "PROSPECT_SEED")]
    pub seed: Option<u64>,
    /// Areas processed in parallel.
    #[arg(long, global = true, env = "PROSPECT_JOBS")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted deposits.
    Synth(SynthArgs),
    /// Draw an imbalanced benchmark from a manifest.
    Sample(SampleArgs),
    /// Inspect or edit a manifest.
    #[command(subcommand)]
    Manifest(ManifestCommand),
    /// Cut co-registered scene rasters into study areas.
    Tile(TileArgs),
    /// Derive signature and prospectivity layers for every area.
    Preprocess(PreprocessArgs),
    /// Show the signature registry.
    #[command(subcommand)]
    Registry(RegistryCommand),
    /// Render one layer of an area as a PNG overlay.
    Render(RenderArgs),
    /// Run judging agents over a manifest.
    #[command(subcommand)]
    Agent(AgentCommand),
    /// Fit decision weights by cross-validation over recorded runs.
    FitWeights(FitArgs),
    /// Score recorded runs against the manifest labels.
    Evaluate(EvaluateArgs),
    /// Write a plain-text evaluation report.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; must not exist or be empty unless --force.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub positives: usize,
    #[arg(long, default_value_t = 180)]
    pub negatives: usize,
    /// Per-pixel noise, in normalized band units.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Tile edge in pixels.
    #[arg(long, default_value_t = 48)]
    pub size: usize,
    #[arg(long, default_value_t = 12.0)]
    pub tile_km: f64,
    #[arg(long, default_value = "synthetic")]
    pub name: String,
    /// Replace an existing output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Negatives drawn per positive.
    #[arg(long, default_value_t = 539.0 / 73.0)]
    pub ratio: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum ManifestCommand {
    /// Check counts and that every referenced raster exists.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Apply `area_id,label` rows from a CSV file.
    ImportLabels {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Write here instead of updating the manifest in place.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct TileArgs {
    /// Raster stems (without extension); one must be the geological band.
    #[arg(long = "raster", required = true)]
    pub rasters: Vec<PathBuf>,
    #[arg(long)]
    pub tile_km: f64,
    /// CSV with `x_km,y_km` columns in scene coordinates.
    #[arg(long)]
    pub deposits: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub max_missing: f64,
    #[arg(long, default_value_t = 0.5)]
    pub edge_margin_km: f64,
    #[arg(long, default_value = "tiles")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Recompute layers that already exist.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum RegistryCommand {
    /// Print the active registry as TOML.
    Dump,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub area: String,
    /// Layer name, e.g. geological, sig_h or mpm.
    #[arg(long)]
    pub layer: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub opacity: f64,
    #[arg(long, default_value_t = 4)]
    pub scale: u32,
    #[arg(long)]
    pub colorbar: bool,
}

#[derive(Debug, Subcommand)]
pub enum AgentCommand {
    /// Run every area of a manifest and record transcripts and decisions.
    Run(AgentRunArgs),
}

#[derive(Debug, Args)]
pub struct AgentRunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "agents")]
    pub mode: RunMode,
    #[arg(long, env = "PROSPECT_SETTING")]
    pub setting: Option<Setting>,
    /// mock, oracle, http or replay.
    #[arg(long, env = "PROSPECT_BACKEND")]
    pub backend: Option<BackendKind>,
    /// Base URL of an OpenAI-compatible API.
    #[arg(long, env = "PROSPECT_ENDPOINT")]
    pub endpoint: Option<String>,
    #[arg(long, env = "PROSPECT_MODEL")]
    pub model: Option<String>,
    #[arg(long, env = "PROSPECT_TIMEOUT_MS")]
    pub timeout_ms: Option<u64>,
    /// Extra attempts after a failed or unreadable answer.
    #[arg(long)]
    pub max_retries: Option<u32>,
    /// Output directory for runs.jsonl, decisions.csv and run.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Weighting used for the recorded decisions [default: mean, or
    /// automatic when --weights is given].
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// Fitted weights from `fit-weights`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// JSON object mapping tool ids to scripted replies (mock backend).
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    /// Upper bound of seeded random mock latency.
    #[arg(long, default_value_t = 0)]
    pub mock_latency_ms: u64,
    /// Recorded runs answering the replay backend.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Let every tool judge from its images alone.
    #[arg(long)]
    pub no_references: bool,
    /// Process only the first N areas.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Directory of prompt template overrides.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub runs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 64)]
    pub budget: usize,
    /// bayesian or random-search.
    #[arg(long, default_value = "bayesian")]
    pub optimizer: Optimizer,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub runs: PathBuf,
    /// Fitted weights; adds the automatic strategy.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Evaluate only this strategy.
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// CSV with `area_id,score` reference scores for agreement statistics.
    #[arg(long)]
    pub expert_scores: Option<PathBuf>,
    /// Trials of the random-choice baseline.
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
    /// Also write the output to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Recorded runs; repeat to put several runs in one report.
    #[arg(long = "runs", required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::discover(cli.config.as_deref())?;
    let over = Overrides { data_root: cli.data_root, output_root: cli.output_root, registry: cli.registry, seed: cli.seed, jobs: cli.jobs };
    let cfg = AppConfig::resolve(file, over, std::env::var(API_KEY_VAR).ok())?;
    match cli.command {
        Command::Synth(a) => data::synth(&cfg, a),
        Command::Sample(a) => data::sample(&cfg, a),
        Command::Manifest(c) => data::manifest(&cfg, c),
        Command::Tile(a) => data::tile(&cfg, a),
        Command::Preprocess(a) => data::preprocess(&cfg, a),
        Command::Registry(RegistryCommand::Dump) => {
            print!("{}", cfg.registry()?.to_toml());
            Ok(())
        }
        Command::Render(a) => data::render(&cfg, a),
        Command::Agent(AgentCommand::Run(a)) => agent_cmd::run(&cfg, a),
        Command::FitWeights(a) => score::fit(&cfg, a),
        Command::Evaluate(a) => score::evaluate(&cfg, a),
        Command::Report(a) => score::report(&cfg, a),
    }
}
