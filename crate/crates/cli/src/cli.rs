use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "inforewrite", version, about = "Conversational query rewriting, retrieval and evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// TOML pipeline config; flags below override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Manifest path; defaults to `<primary output>.manifest.json`.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    #[arg(long, global = true)]
    pub concurrency: Option<usize>,
    /// Requests per second; 0 disables rate limiting.
    #[arg(long, global = true)]
    pub rate: Option<f64>,
    #[arg(long, global = true)]
    pub max_attempts: Option<u32>,
    /// Response cache file (JSON lines).
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,
    /// Passages retrieved per query.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub k1: Option<f64>,
    #[arg(long, global = true)]
    pub b: Option<f64>,
    #[arg(long, global = true)]
    pub shards: Option<usize>,
    #[arg(long, global = true)]
    pub dimension: Option<usize>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Ingest a dataset, build rewrite tasks and keep those with relevant passages.
    Prepare(PrepareArgs),
    /// Produce one rewrite per task with the given method.
    Rewrite(RewriteArgs),
    /// Build a BM25 index over a passage collection.
    IndexSparse(IndexSparseArgs),
    /// Embed a passage collection into sharded vector files.
    Embed(EmbedArgs),
    /// Retrieve passages for every rewrite and write a TREC run.
    Search(SearchArgs),
    /// Score a run against qrels.
    Evaluate(EvaluateArgs),
    /// Pairwise win/tie/loss of two runs by reciprocal rank.
    Compare(CompareArgs),
    /// Token statistics, overlap with human rewrites and latency.
    Analyze(AnalyzeArgs),
    /// Rewrite with an instruction that lacks one property.
    Ablate(AblateArgs),
    /// Sample a distillation training and dev set.
    ExportDistill(ExportDistillArgs),
    /// Render result tables from evaluate and analyze outputs.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// Dataset file: JSON array or JSON lines of turn records.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Qrels (TREC or JSON). Without it, gold passages from the dataset are used.
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    /// Source tag for records that lack one (quac, nq, trec).
    #[arg(long)]
    pub source: Option<String>,
    /// Keep tasks without relevant passages.
    #[arg(long)]
    pub no_filter: bool,
    /// Number of conversations split off as a dev set.
    #[arg(long, requires = "dev_out")]
    pub dev_conversations: Option<usize>,
    #[arg(long)]
    pub dev_out: Option<PathBuf>,
    /// Tasks output (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Writes the qrels used for filtering.
    #[arg(long)]
    pub qrels_out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodArg {
    Original,
    Human,
    RwZsl,
    RwFsl,
    EdSelf,
    EdFile,
}

#[derive(Args, Debug, Clone)]
pub struct LlmArgs {
    /// Answer from a JSON-lines transcript of {prompt_hash, response_text} instead of the API.
    #[arg(long)]
    pub mock_transcript: Option<PathBuf>,
    /// Editor methods: initial rewrites (JSON lines). Required for ed-file.
    #[arg(long)]
    pub initial: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RewriteArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[arg(long)]
    pub tasks: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub llm: LlmArgs,
}

#[derive(Args, Debug)]
pub struct IndexSparseArgs {
    /// Passage collection (JSON lines).
    #[arg(long)]
    pub passages: PathBuf,
    #[arg(long, default_value = "id")]
    pub id_field: String,
    #[arg(long, default_value = "contents")]
    pub text_field: String,
    /// Whitespace-separated stopword list.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long)]
    pub no_stem: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderArg {
    /// Deterministic pseudo-random vectors keyed by text; for testing the plumbing.
    Hash,
    /// Vectors from a JSON-lines file of {text_hash, vector}.
    Precomputed,
    /// OpenAI-compatible embeddings endpoint.
    Http,
}

#[derive(Args, Debug, Clone)]
pub struct ProviderArgs {
    #[arg(long, value_enum, default_value = "hash")]
    pub provider: ProviderArg,
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    #[arg(long)]
    pub embed_endpoint: Option<String>,
    #[arg(long)]
    pub embed_model: Option<String>,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    #[arg(long)]
    pub passages: PathBuf,
    #[arg(long, default_value = "id")]
    pub id_field: String,
    #[arg(long, default_value = "contents")]
    pub text_field: String,
    #[command(flatten)]
    pub provider: ProviderArgs,
    /// Output directory for shard files.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrieverArg {
    Sparse,
    Dense,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[arg(long, value_enum)]
    pub retriever: RetrieverArg,
    /// Rewrite records (JSON lines) whose rewrites are the queries.
    #[arg(long)]
    pub rewrites: PathBuf,
    /// Sparse index file or dense shard directory.
    #[arg(long)]
    pub index: PathBuf,
    #[command(flatten)]
    pub provider: ProviderArgs,
    /// Run tag; defaults to the method of the first record.
    #[arg(long)]
    pub tag: Option<String>,
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    /// Tasks file giving each query's subset.
    #[arg(long)]
    pub tasks: Option<PathBuf>,
    /// Skip judged queries missing from the run instead of scoring them 0.
    #[arg(long)]
    pub skip_missing: bool,
    /// Report JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Plain-text table.
    #[arg(long)]
    pub table_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long)]
    pub run_a: PathBuf,
    #[arg(long)]
    pub run_b: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Rewrite files (JSON lines); repeatable.
    #[arg(long, required = true)]
    pub rewrites: Vec<PathBuf>,
    /// Tasks supplying human rewrites and subsets.
    #[arg(long)]
    pub tasks: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub table_out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropertyArg {
    Correctness,
    Clarity,
    Informativeness,
    Nonredundancy,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub drop: PropertyArg,
    /// Writes the ablated rewriter and editor instructions (JSON).
    #[arg(long)]
    pub instruction_out: PathBuf,
    /// Tasks to rewrite with the ablated instruction.
    #[arg(long, requires = "out")]
    pub tasks: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "rw-fsl")]
    pub method: MethodArg,
    #[arg(long, requires = "tasks")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub llm: LlmArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelArg {
    RwFsl,
    EdSelf,
    Human,
}

#[derive(Args, Debug)]
pub struct ExportDistillArgs {
    #[arg(long)]
    pub train_tasks: PathBuf,
    #[arg(long)]
    pub dev_tasks: PathBuf,
    #[arg(long, value_enum)]
    pub label_source: LabelArg,
    /// Rewrite files supplying the labels; not needed for human labels.
    #[arg(long)]
    pub labels: Vec<PathBuf>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_dev: Option<usize>,
    #[arg(long)]
    pub train_out: PathBuf,
    #[arg(long)]
    pub dev_out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// `GROUP:LABEL=PATH` to an evaluate report; repeatable, rows keep this order.
    #[arg(long = "eval")]
    pub evals: Vec<String>,
    /// Analyze output JSON.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Text tables.
    #[arg(long)]
    pub out: PathBuf,
    /// Machine-readable summary.
    #[arg(long)]
    pub json_out: Option<PathBuf>,
}
