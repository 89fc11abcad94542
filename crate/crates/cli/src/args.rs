use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "vendorlink", version, about = "Vendor linking for escort-ad corpora")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed for every random step; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML run configuration with optional [experiment], [synth] and [embed] tables.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    /// Machine-readable JSON on stdout instead of tables.
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse raw ads, extract phone identifiers and mask PII.
    Ingest(IngestArgs),
    /// Group ads into vendor communities by shared identifiers.
    Communities(CommunitiesArgs),
    /// Hash-embed ad text or import an existing embedding file.
    Embed(EmbedArgs),
    /// Generate a synthetic corpus directory.
    Synth(SynthArgs),
    /// Train a classification head and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate identification and retrieval, writing a report.
    Eval(EvalArgs),
    /// Ad-hoc top-k retrieval.
    Retrieve(RetrieveArgs),
    /// Export a query-centred similarity graph.
    Graph(GraphArgs),
    /// Finite-difference check of every loss.
    Gradcheck(GradcheckArgs),
    /// Verify the checksums of embedding and checkpoint files.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AdFormat {
    Jsonl,
    Csv,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<AdFormat>,
    /// Masked JSONL output.
    #[arg(long)]
    pub output: PathBuf,
    /// Keep ads without identifiers or images.
    #[arg(long)]
    pub keep_all: bool,
}

#[derive(Debug, Args)]
pub struct CommunitiesArgs {
    /// Masked JSONL.
    #[arg(long)]
    pub input: PathBuf,
    /// `ad_id,vendor_label` CSV output.
    #[arg(long)]
    pub output: PathBuf,
    /// Drop vendors with fewer ads.
    #[arg(long, default_value_t = 1)]
    pub min_ads: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SidecarFormat {
    Binary,
    Text,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Masked JSONL to hash-embed.
    #[arg(long, required_unless_present = "import", conflicts_with = "import")]
    pub input: Option<PathBuf>,
    /// Existing embedding file to validate and convert.
    #[arg(long)]
    pub import: Option<PathBuf>,
    /// Expected dimension of imported embeddings.
    #[arg(long, requires = "import")]
    pub expect_dim: Option<usize>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = SidecarFormat::Binary)]
    pub format: SidecarFormat,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub ngram_min: Option<usize>,
    #[arg(long)]
    pub ngram_max: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub vendors: Option<usize>,
    #[arg(long)]
    pub ads_per_vendor: Option<usize>,
    #[arg(long)]
    pub images_per_ad: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub spread: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Comma-separated regions, training region first.
    #[arg(long, value_delimiter = ',')]
    pub regions: Option<Vec<String>>,
    #[arg(long)]
    pub shared_fraction: Option<f64>,
}

/// Experiment settings shared by `train` and `eval`.
#[derive(Debug, Args, Default)]
pub struct ExperimentArgs {
    /// Corpus directory (masked.jsonl, labels.csv, text.embb, image.embb).
    #[arg(long)]
    pub data: PathBuf,
    /// ce, ce_supcon, ce_triplet, supcon or triplet.
    #[arg(long)]
    pub objective: Option<String>,
    /// text, vision or multimodal.
    #[arg(long)]
    pub modality: Option<String>,
    /// mean, concat, attention or gated.
    #[arg(long)]
    pub fusion: Option<String>,
    #[arg(long)]
    pub train_region: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Training history JSON.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Head checkpoint; omit with --zero-shot.
    #[arg(long, required_unless_present = "zero_shot")]
    pub checkpoint: Option<PathBuf>,
    /// Retrieve with normalized input embeddings instead of a trained head.
    #[arg(long)]
    pub zero_shot: bool,
    /// History JSON from `train`, echoed into the report.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// t2t, i2i or multimodal.
    #[arg(long)]
    pub retrieval: Option<String>,
    /// Comma-separated regions to evaluate.
    #[arg(long, value_delimiter = ',')]
    pub eval_regions: Option<Vec<String>>,
    /// Report JSON output.
    #[arg(long)]
    pub output: PathBuf,
    /// Optional CSV flattening of the report.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    /// Document embeddings.
    #[arg(long)]
    pub index: PathBuf,
    /// Query embeddings.
    #[arg(long)]
    pub queries: PathBuf,
    /// Restrict to these query ids.
    #[arg(long = "query-id")]
    pub query_ids: Vec<String>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GraphModeArg {
    Mrr,
    RPrecision,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GraphFormatArg {
    Dot,
    Json,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    /// Document embeddings.
    #[arg(long)]
    pub index: PathBuf,
    /// Embedding file holding the query row.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub query_id: String,
    #[arg(long, value_enum, default_value_t = GraphModeArg::Mrr)]
    pub mode: GraphModeArg,
    /// Cutoff in mrr mode.
    #[arg(long, default_value_t = vendorlink::graph::DEFAULT_K)]
    pub k: usize,
    /// `ad_id,vendor_label` CSV; required in r-precision mode.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Minimum cosine for document-document edges.
    #[arg(long, default_value_t = vendorlink::graph::DEFAULT_THETA, allow_negative_numbers = true)]
    pub theta: f64,
    #[arg(long, value_enum, default_value_t = GraphFormatArg::Dot)]
    pub format: GraphFormatArg,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = vendorlink::diagnostics::GRADCHECK_INSTANCES)]
    pub instances: usize,
    #[arg(long, default_value_t = vendorlink::diagnostics::GRADCHECK_EPS)]
    pub eps: f64,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}
