//! `seda`: ingestion, segmentation, training, augmentation and evaluation
//! as one chain of pipeable subcommands.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "seda",
    version,
    about = "Entity-centric augmentation for grid-based discontinuous NER"
)]
struct Cli {
    /// Top-level seed; overrides any seed in the config files.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a directory of standoff documents into document records.
    Ingest(IngestArgs),
    /// Cut documents into baseline samples.
    Segment(SegmentArgs),
    /// Replace context outside the gold entities with a mask token.
    Mask(MaskArgs),
    /// Train a grid tagger on sample records.
    Train(TrainArgs),
    /// Predict tag grids (and optionally document-level entities).
    Predict(PredictArgs),
    /// Re-segment documents around predicted entities.
    Augment(AugmentArgs),
    /// Score document-level predictions against gold.
    Evaluate(EvaluateArgs),
    /// Corpus statistics and cross-sentence coverage/accuracy.
    Report(ReportArgs),
    /// Sweep supplemental-interval settings.
    Ablate(AblateArgs),
    /// Compare analytic and finite-difference gradients on a probe sample.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Corpus directory; defaults to $SEDA_DATA_DIR.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SegmentMode {
    Newline,
    Whole,
}

#[derive(Args, Debug)]
struct SegmentArgs {
    #[arg(long, value_enum, default_value = "newline")]
    mode: SegmentMode,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MaskArgs {
    /// before_first | after_last | both_sides
    #[arg(long, default_value = "both_sides")]
    mode: seda_core::corpus::MaskMode,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "[MASK]")]
    mask_token: String,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Model config (key=value); toy defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training sample (or document) records.
    #[arg(long)]
    data: PathBuf,
    /// Dev documents for per-epoch checkpoint selection.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    /// Sparse grid records.
    #[arg(long)]
    out: PathBuf,
    /// Source documents, needed for --pred.
    #[arg(long)]
    docs: Option<PathBuf>,
    /// Document-level prediction records.
    #[arg(long, requires = "docs")]
    pred: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
#[group(required = true, multiple = false)]
struct PredictorArgs {
    /// Trained checkpoint whose predictions anchor the segmentation.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Anchor on (and "predict") the gold entities instead of a model.
    #[arg(long)]
    oracle: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum AugmentMode {
    Once,
    Mul,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    #[command(flatten)]
    predictor: PredictorArgs,
    /// Documents to augment and predict.
    #[arg(long = "in")]
    input: PathBuf,
    /// Augmentation config (key=value); cadec defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "once")]
    mode: AugmentMode,
    /// Dev documents scored after each iteration.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Training documents, augmented and used to retrain when --retrain is set.
    #[arg(long, requires = "retrain")]
    train: Option<PathBuf>,
    /// Model config for retraining on augmented training samples.
    #[arg(long, requires = "train")]
    retrain: Option<PathBuf>,
    /// Augmented sample records.
    #[arg(long)]
    out: PathBuf,
    /// Document-level prediction records.
    #[arg(long)]
    pred: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum BoundaryArg {
    Tail,
    HeadTail,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum KeyArg {
    Index,
    Surface,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    /// discontinuous | cross_sentence
    #[arg(long)]
    subset: Option<seda_core::metrics::Subset>,
    /// Drop cross-sentence gold entities before scoring.
    #[arg(long)]
    unified: bool,
    /// matched | literal
    #[arg(long, default_value = "matched")]
    ebf_variant: seda_core::metrics::EbfVariant,
    #[arg(long, value_enum, default_value = "tail")]
    boundary: BoundaryArg,
    #[arg(long, value_enum, default_value = "index")]
    key: KeyArg,
    /// Report record (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the report record instead of the table.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Gold documents.
    #[arg(long)]
    gold: PathBuf,
    /// Add the cross-sentence coverage/accuracy table.
    #[arg(long)]
    cross_sentence: bool,
    /// `name=samples.jsonl[:pred.jsonl]`, repeatable.
    #[arg(long = "run")]
    runs: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    predictor: PredictorArgs,
    #[arg(long = "in")]
    input: PathBuf,
    /// Base augmentation config; its ES/NES and look sizes are swept.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
    sizes: Vec<usize>,
    /// One result record per setting.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = seda_core::tagger::gradcheck::DEFAULT_STEP)]
    step: f64,
    /// Check a random subset of entries per tensor instead of all.
    #[arg(long)]
    max_per_tensor: Option<usize>,
    #[arg(long, default_value_t = seda_core::tagger::gradcheck::TOLERANCE)]
    tolerance: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            let kind = commands::classify(&e);
            let record = serde_json::json!({
                "status": "error",
                "kind": kind.name(),
                "message": format!("{e:#}"),
            });
            eprintln!("{record}");
            ExitCode::from(kind.code())
        }
    }
}
