use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use signalforge_core::alignment::AlignmentStatus;
use signalforge_core::eval::Ablation;
use signalforge_core::index::Strategy;
use signalforge_core::pipeline::RunMode;

#[derive(Debug, Parser)]
#[command(name = "signalforge", version, about = "CAN catalog to vehicle API synthesis pipeline")]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Signal catalog checks.
    #[command(subcommand)]
    Catalog(CatalogCmd),
    /// Signal embedding index.
    #[command(subcommand)]
    Index(IndexCmd),
    /// Synthesize and validate a codec for every catalog signal.
    SynthesizeCodecs(SynthesizeArgs),
    /// Align API properties to catalog signals.
    Match(MatchArgs),
    /// Assemble endpoint handlers from alignments and codecs.
    GenerateEndpoints(GenerateArgs),
    /// Check a property document against the API and catalog domains.
    CheckSpec(CheckSpecArgs),
    /// Write a copy of a clean document with labelled faults.
    InjectErrors(InjectArgs),
    /// Score ablation configurations on a fixture corpus.
    Evaluate(EvaluateArgs),
    /// Workflow graph tools.
    #[command(subcommand)]
    Graph(GraphCmd),
    /// Run the three-stage pipeline into a run directory.
    Run(RunArgs),
    /// Serve the review API for one run.
    Serve(ServeArgs),
    /// Inspect and decide flagged alignments through the review API.
    Review(ReviewArgs),
    /// Continue a run after review.
    Resume(RemoteArgs),
    /// Show a run's stage statuses.
    Status(RemoteArgs),
}

#[derive(Debug, Subcommand)]
pub enum CatalogCmd {
    /// Parse and check a catalog; prints one diagnostic per line.
    Validate { file: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum IndexCmd {
    /// Embed every signal and write the index.
    Build(IndexBuildArgs),
}

#[derive(Debug, Args)]
pub struct ProviderArgs {
    /// rule, remote, record:<file> or replay:<file>.
    #[arg(long, default_value = "rule")]
    pub provider: String,
    /// Wrap the provider with a fault plan.
    #[arg(long)]
    pub fault_plan: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IndexBuildArgs {
    pub catalog: PathBuf,
    /// Repeatable; defaults to every strategy.
    #[arg(long)]
    pub strategy: Vec<Strategy>,
    #[arg(long, default_value = "generated/index.json")]
    pub out: PathBuf,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    pub catalog: PathBuf,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[arg(long, default_value_t = signalforge_core::codec::DEFAULT_MAX_DEBUG_ROUNDS)]
    pub max_rounds: u32,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, default_value = "generated/signals")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    pub api: PathBuf,
    pub catalog: PathBuf,
    #[arg(long, default_value = "rewritten_description")]
    pub strategy: Strategy,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Reuse a built index instead of embedding the catalog again.
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long, default_value = "generated/alignments")]
    pub out: PathBuf,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    pub api: PathBuf,
    /// Directory of alignment files written by `match` or a run.
    #[arg(long)]
    pub alignments: PathBuf,
    #[arg(long)]
    pub catalog: PathBuf,
    /// Directory of codec records; synthesized in-process when absent.
    #[arg(long)]
    pub codecs: Option<PathBuf>,
    #[arg(long, default_value = "generated/endpoints")]
    pub out: PathBuf,
    #[arg(long)]
    pub no_templates: bool,
    #[arg(long)]
    pub no_composition: bool,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Debug, Args)]
pub struct CheckSpecArgs {
    pub doc: PathBuf,
    /// API document and catalog that govern the value domains.
    #[arg(long, num_args = 2, value_names = ["API", "CATALOG"], required = true)]
    pub against: Vec<PathBuf>,
    /// Score the diagnostics against injection markers.
    #[arg(long)]
    pub markers: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    pub doc: PathBuf,
    #[arg(long, num_args = 2, value_names = ["API", "CATALOG"], required = true)]
    pub against: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub out_of_range: usize,
    #[arg(long, default_value_t = 0)]
    pub invalid_enum: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub markers: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory holding corpus.yaml.
    pub corpus: PathBuf,
    /// Add a configuration with this technique switched off. Repeatable.
    #[arg(long)]
    pub ablate: Vec<Ablation>,
    /// Also report alignment F1 per embedding strategy.
    #[arg(long)]
    pub compare_strategies: bool,
    #[arg(long, default_value = "rule")]
    pub provider: String,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, default_value = "generated/report.json")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum GraphCmd {
    /// Apply a transformation script and print per-iteration impact.
    Optimize(OptimizeArgs),
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    pub graph: PathBuf,
    pub script: PathBuf,
    /// Where the reduced graph is written.
    #[arg(long, default_value = "generated/reduced_graph.yaml")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub catalog: PathBuf,
    pub api: PathBuf,
    #[arg(long, default_value = "runs")]
    pub runs_dir: PathBuf,
    /// Defaults to a timestamped id.
    #[arg(long)]
    pub run_id: Option<String>,
    /// Config file; flags given on the command line override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<RunMode>,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub provider: Option<String>,
    #[arg(long)]
    pub fault_plan: Option<PathBuf>,
    /// Property document checked before the run starts.
    #[arg(long)]
    pub check_doc: Option<PathBuf>,
    #[arg(long)]
    pub allow_warnings: bool,
    /// Switch a technique off. Repeatable.
    #[arg(long)]
    pub without: Vec<Ablation>,
}

#[derive(Debug, Args)]
pub struct RunLocation {
    /// Run id under `--runs-dir`.
    #[arg(long)]
    pub run: Option<String>,
    #[arg(long, default_value = "runs")]
    pub runs_dir: PathBuf,
    /// Explicit run directory; overrides `--run`.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub location: RunLocation,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// 0 picks a free port; the bound address is printed on stdout.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Defaults to the provider the run was started with.
    #[arg(long)]
    pub provider: Option<String>,
    #[arg(long)]
    pub fault_plan: Option<PathBuf>,
    /// Static review UI served at `/`.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

/// Where the review API lives: a running service, or an embedded one
/// started for the duration of the command.
#[derive(Debug, Args)]
pub struct RemoteArgs {
    /// Base URL of a running `signalforge serve`.
    #[arg(long)]
    pub url: Option<String>,
    #[command(flatten)]
    pub location: RunLocation,
    #[arg(long)]
    pub provider: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReviewArgs {
    #[command(flatten)]
    pub remote: RemoteArgs,
    #[arg(long, default_value = "cli")]
    pub actor: String,
    #[command(subcommand)]
    pub action: ReviewCmd,
}

#[derive(Debug, Subcommand)]
pub enum ReviewCmd {
    /// List review items.
    List {
        #[arg(long)]
        status: Option<AlignmentStatus>,
        #[arg(long, default_value_t = 0)]
        offset: usize,
        #[arg(long, default_value_t = 50)]
        limit: usize,
    },
    /// Show one item with its candidates and history.
    Show { id: String },
    /// Approve a flagged alignment.
    Approve { id: String },
    /// Reject a flagged alignment; its endpoint stays out.
    Reject { id: String },
    /// Realign with an added constraint, e.g. `prefer-signal VehSpd`.
    Regenerate {
        id: String,
        #[arg(long)]
        constraint: String,
    },
    /// Print the codec or endpoint source behind an id.
    Code { id: String },
}
