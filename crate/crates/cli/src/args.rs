use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug, Serialize)]
#[command(
    name = "blade",
    version,
    about = "Token labeling, exemplar auditing and feature extraction from a convolutional decomposition",
    args_override_self = true
)]
pub struct Cli {
    /// File of `key = value` lines applied as flags; explicit flags win.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,

    /// Caps the number of worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Record wall-clock times in training logs (logs are then no longer reproducible).
    #[arg(long, global = true)]
    pub log_timing: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Train a sentence/document classifier from scratch.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Fine-tune with the supervised token loss.
    #[command(args_override_self = true)]
    FinetuneTokens(FinetuneArgs),
    /// Fine-tune with the min-max losses (filters only by default).
    #[command(args_override_self = true)]
    FinetuneMinmax(FinetuneArgs),
    /// Sentence predictions and token labels in corpus format.
    #[command(args_override_self = true)]
    Predict(PredictArgs),
    /// Choose the decision-boundary offset maximizing token F0.5.
    #[command(args_override_self = true)]
    TuneOffset(TuneOffsetArgs),
    /// Build an exemplar database from a training corpus.
    #[command(args_override_self = true)]
    BuildDb(BuildDbArgs),
    /// Add exemplars from unseen data to a database.
    #[command(args_override_self = true)]
    AugmentDb(AugmentDbArgs),
    /// Change a stored label of one exemplar.
    #[command(args_override_self = true)]
    EditDb(EditDbArgs),
    /// Predict with a decision rule and report the matched exemplars.
    #[command(args_override_self = true)]
    Audit(AuditArgs),
    /// Class-conditional ngram and sentence scores.
    #[command(args_override_self = true)]
    ExtractFeatures(FeatureArgs),
    /// Pick, per candidate group, the candidate with the fewest detections.
    #[command(args_override_self = true)]
    Rerank(RerankArgs),
    /// Precision, recall and F-score of predictions against gold labels.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Write the synthetic trigger-word corpora.
    #[command(args_override_self = true)]
    Synth(SynthArgs),
    /// Write deterministic pseudo-embeddings for a corpus.
    #[command(args_override_self = true)]
    StubEmbed(StubEmbedArgs),
    /// Re-run a command from its run manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct InputArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Frozen embeddings aligned with --input.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Maximum length in WordPieces; longer instances are truncated at a word boundary.
    #[arg(long, default_value_t = 50)]
    pub max_len: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub train_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub dev_embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub max_len: usize,
    #[arg(long, default_value_t = 50)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0.95)]
    pub rho: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lr: f64,
    /// Output checkpoint; the vocabulary is written to `<out>.vocab`.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch JSON-lines log.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DevMetricArg {
    SentenceF1,
    Accuracy,
    TokenF05,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, default_value_t = 7500)]
    pub vocab_size: usize,
    /// Unlabeled corpus whose tokens are also admitted to the vocabulary.
    #[arg(long)]
    pub vocab_extra: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    pub word_dim: usize,
    /// Filter banks as `width:count` pairs, comma separated.
    #[arg(long, default_value = "1:1000")]
    pub filters: String,
    #[arg(long)]
    pub no_filter_bias: bool,
    #[arg(long, value_enum, default_value_t = DevMetricArg::SentenceF1)]
    pub dev_metric: DevMetricArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainableArg {
    Full,
    CnnOnly,
}

#[derive(Args, Debug, Serialize)]
pub struct FinetuneArgs {
    /// Starting checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Defaults to `full` for token fine-tuning and `cnn-only` for min-max.
    #[arg(long, value_enum)]
    pub trainable: Option<TrainableArg>,
    /// Defaults to token-f05.
    #[arg(long, value_enum)]
    pub dev_metric: Option<DevMetricArg>,
    /// Decision-boundary offset used by the token-level dev metric.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub offset: f64,
}

#[derive(Args, Debug, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub offset: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct TuneOffsetArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    /// Number of quantile grid points (0 is always added).
    #[arg(long, default_value_t = 1001)]
    pub grid_points: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct BuildDbArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub offset: f64,
    #[arg(long)]
    pub db: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct AugmentDbArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub db: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    /// Tag suffix for the new records.
    #[arg(long)]
    pub name: String,
    /// Store the new records' sentence labels as unknown.
    #[arg(long)]
    pub labels_unknown: bool,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub offset: f64,
    /// Output database; must differ from --db.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelFieldArg {
    GoldSentence,
    GoldToken,
}

#[derive(Args, Debug, Serialize)]
pub struct EditDbArgs {
    #[arg(long)]
    pub db: PathBuf,
    /// Record index.
    #[arg(long)]
    pub record: usize,
    #[arg(long, value_enum)]
    pub field: LabelFieldArg,
    /// `0`, `1` or `unknown`.
    #[arg(long)]
    pub value: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleArg {
    Exa,
    Exag,
    Exat,
}

#[derive(Args, Debug, Serialize)]
pub struct AuditArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub db: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum)]
    pub rule: RuleArg,
    #[arg(long)]
    pub distance_cap: Option<f64>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub offset: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassArg {
    Negative,
    Positive,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Total,
    Mean,
}

#[derive(Args, Debug, Serialize)]
pub struct FeatureArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value_t = ClassArg::Both)]
    pub class: ClassArg,
    /// Ngram sizes: a single size or an inclusive range such as `1-5`.
    #[arg(long, default_value = "1-5")]
    pub zgram: String,
    #[arg(long, value_enum, default_value_t = ModeArg::Total)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    /// Rank sentences by length-normalized scores.
    #[arg(long)]
    pub normalize: bool,
    /// Only count instances predicted as the scored class.
    #[arg(long)]
    pub restrict: bool,
    /// Hide an ngram whose score equals the previous listed one.
    #[arg(long)]
    pub drop_equal: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write every ngram score as JSON lines.
    #[arg(long)]
    pub jsonl: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyArg {
    MinDetections,
    Random,
}

#[derive(Args, Debug, Serialize)]
pub struct RerankArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Candidates in corpus format with `group_id` and `original_len` fields.
    #[arg(long)]
    pub groups: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub max_len: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub offset: f64,
    #[arg(long, value_enum, default_value_t = StrategyArg::MinDetections)]
    pub strategy: StrategyArg,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelArg {
    Token,
    Sentence,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    /// Evaluate one level only; by default both available levels are reported.
    #[arg(long, value_enum)]
    pub level: Option<LevelArg>,
    /// Also report the Random and MajorityClass baselines.
    #[arg(long)]
    pub baselines: bool,
    /// Metrics as JSON lines.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub sentences: usize,
    #[arg(long, default_value_t = 200)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 10)]
    pub triggers: usize,
    /// Sentences of the unseen negative-only domain, split evenly into
    /// augmentation and test halves.
    #[arg(long, default_value_t = 1000)]
    pub unseen: usize,
    #[arg(long, default_value_t = 20)]
    pub groups: usize,
    #[arg(long, default_value_t = 50)]
    pub per_group: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct StubEmbedArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}
