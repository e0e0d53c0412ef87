use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use seda_core::corpus::io::{
    ingest_dir, read_records, read_samples, standoff_files, write_documents, write_jsonl, Record,
};
use seda_core::corpus::{
    corpus_coverage, mask_context, split_newline, whole_document, CorpusStats, CoverageReport, Document, Sample,
};
use seda_core::grid::GridRecord;
use seda_core::metrics::{
    ebf, evaluate, exact_prf, gold_entities, restrict, BoundaryKey, BoundaryMode, DocEntities, EbfOptions, EbfVariant,
    EvalOptions, Subset,
};
use seda_core::seda::{
    cross_sentence_report, run_mul, run_once, EntityPredictor, GoldOracle, ModelFactory, SedaConfig, Splits,
};
use seda_core::tagger::gradcheck::{gradcheck, probe};
use seda_core::tagger::{train, DevSet, GridModel, ModelConfig};
use seda_core::util::sub_seed;

use crate::manifest::Recorder;

/// `println!` that ignores a closed stdout (e.g. piped into `head`).
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}
use crate::{
    AblateArgs, AugmentArgs, AugmentMode, BoundaryArg, Cli, Command, EvaluateArgs, GradcheckArgs, IngestArgs, KeyArg,
    MaskArgs, PredictArgs, PredictorArgs, ReportArgs, SegmentArgs, SegmentMode, TrainArgs,
};

/// A problem with how the tool was invoked: bad flags, missing files or
/// malformed configs. Exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Clone, Copy)]
pub enum ErrorKind {
    Usage,
    Runtime,
}

impl ErrorKind {
    pub fn name(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Runtime => "runtime",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ErrorKind::Usage => 2,
            ErrorKind::Runtime => 1,
        }
    }
}

pub fn classify(e: &anyhow::Error) -> ErrorKind {
    let usage = e.chain().any(|c| {
        c.downcast_ref::<UsageError>().is_some()
            || matches!(c.downcast_ref::<seda_core::Error>(), Some(seda_core::Error::Config(_)))
    });
    if usage {
        ErrorKind::Usage
    } else {
        ErrorKind::Runtime
    }
}

pub const DATA_DIR_VAR: &str = "SEDA_DATA_DIR";

/// Resolves an input path; relative paths missing from the working
/// directory are looked up under `$SEDA_DATA_DIR`.
fn input(path: &Path) -> Result<PathBuf> {
    if path.exists() {
        return Ok(path.to_path_buf());
    }
    if path.is_relative() {
        if let Some(dir) = std::env::var_os(DATA_DIR_VAR) {
            let candidate = Path::new(&dir).join(path);
            if candidate.exists() {
                return Ok(candidate);
            }
        }
    }
    Err(UsageError(format!("input file not found: {}", path.display())).into())
}

fn read_config_text(path: &Path, rec: &mut Recorder) -> Result<String> {
    let path = input(path)?;
    rec.config(&path);
    fs::read_to_string(&path).map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())).into())
}

fn model_config(path: Option<&Path>, seed: Option<u64>, rec: &mut Recorder) -> Result<ModelConfig> {
    let mut config = match path {
        Some(p) => {
            let text = read_config_text(p, rec)?;
            ModelConfig::parse(&text).map_err(|e| UsageError(format!("malformed model config {}: {e}", p.display())))?
        }
        None => ModelConfig::toy(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    rec.seed(config.seed);
    Ok(config)
}

fn seda_config(path: Option<&Path>, rec: &mut Recorder) -> Result<SedaConfig> {
    match path {
        Some(p) => {
            let text = read_config_text(p, rec)?;
            SedaConfig::parse(&text)
                .map_err(|e| UsageError(format!("malformed augmentation config {}: {e}", p.display())).into())
        }
        None => Ok(SedaConfig::cadec()),
    }
}

fn documents(path: &Path, rec: &mut Recorder) -> Result<Vec<Document>> {
    let path = input(path)?;
    rec.input(&path);
    let records = read_records(&path).with_context(|| format!("reading {}", path.display()))?;
    records
        .iter()
        .map(Record::to_document)
        .collect::<seda_core::Result<_>>()
        .with_context(|| format!("reading documents from {}", path.display()))
}

fn samples(path: &Path, rec: &mut Recorder) -> Result<Vec<Sample>> {
    let path = input(path)?;
    rec.input(&path);
    read_samples(&path).with_context(|| format!("reading samples from {}", path.display()))
}

fn predictions(path: &Path, rec: &mut Recorder) -> Result<Vec<DocEntities>> {
    let path = input(path)?;
    rec.input(&path);
    let records = read_records(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(records
        .into_iter()
        .map(|r| DocEntities::new(r.id, r.entities))
        .collect())
}

fn write_records<T: Serialize>(path: &Path, items: &[T], rec: &mut Recorder) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_jsonl(file, items)?;
    rec.output(path);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T, rec: &mut Recorder) -> Result<()> {
    fs::write(path, serde_json::to_string(value)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    rec.output(path);
    Ok(())
}

/// Document records whose entities are the given predictions.
fn write_predictions(path: &Path, docs: &[Document], preds: &[DocEntities], rec: &mut Recorder) -> Result<()> {
    let records: Vec<Record> = docs
        .iter()
        .zip(preds)
        .map(|(d, p)| {
            let mut r = Record::from(d);
            r.entities = p.entities.clone();
            r
        })
        .collect();
    write_records(path, &records, rec)
}

enum Predictor {
    Model(Box<GridModel>),
    Oracle,
}

impl Predictor {
    fn load(args: &PredictorArgs, rec: &mut Recorder) -> Result<Self> {
        match &args.ckpt {
            Some(p) => {
                let p = input(p)?;
                rec.input(&p);
                let model = GridModel::load(&p).with_context(|| format!("loading checkpoint {}", p.display()))?;
                Ok(Predictor::Model(Box::new(model)))
            }
            None => Ok(Predictor::Oracle),
        }
    }

    fn as_dyn(&self) -> &dyn EntityPredictor {
        match self {
            Predictor::Model(m) => m.as_ref(),
            Predictor::Oracle => &GoldOracle,
        }
    }
}

/// Retrains a fresh tagger on each iteration's augmented training samples.
struct Retrain {
    config: ModelConfig,
}

impl ModelFactory for Retrain {
    fn build(
        &self,
        train_samples: &[Sample],
        dev: &[Sample],
        dev_docs: &[Document],
        iteration: usize,
    ) -> seda_core::Result<Box<dyn EntityPredictor>> {
        let config = ModelConfig {
            seed: sub_seed(self.config.seed, &format!("retrain-{iteration}")),
            ..self.config.clone()
        };
        let dev = (!dev_docs.is_empty()).then_some(DevSet {
            samples: dev,
            documents: dev_docs,
        });
        Ok(Box::new(train(train_samples, dev, &config)?.model))
    }
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let seed = cli.seed;
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Segment(a) => segment(a),
        Command::Mask(a) => mask(a),
        Command::Train(a) => train_cmd(a, seed),
        Command::Predict(a) => predict(a),
        Command::Augment(a) => augment(a, seed),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Report(a) => report(a),
        Command::Ablate(a) => ablate(a),
        Command::Gradcheck(a) => gradcheck_cmd(a, seed),
    }
}

fn finish(rec: Recorder) -> Result<ExitCode> {
    rec.finish()?;
    Ok(ExitCode::SUCCESS)
}

fn ingest(a: IngestArgs) -> Result<ExitCode> {
    let mut rec = Recorder::new("ingest");
    let dir = match a.corpus.or_else(|| std::env::var_os(DATA_DIR_VAR).map(PathBuf::from)) {
        Some(d) => d,
        None => bail!(UsageError(format!("no --corpus given and {DATA_DIR_VAR} is unset"))),
    };
    if !dir.is_dir() {
        bail!(UsageError(format!("corpus directory not found: {}", dir.display())));
    }
    for (_, txt, ann) in standoff_files(&dir)? {
        rec.input(&txt);
        rec.input(&ann);
    }
    let docs = ingest_dir(&dir)?;
    write_documents(&a.out, &docs)?;
    rec.output(&a.out);
    say!("{}", serde_json::to_string(&CorpusStats::of(&docs))?);
    finish(rec)
}

fn segment(a: SegmentArgs) -> Result<ExitCode> {
    let mut rec = Recorder::new("segment");
    let docs = documents(&a.input, &mut rec)?;
    let out: Vec<Record> = docs
        .iter()
        .flat_map(|d| match a.mode {
            SegmentMode::Newline => split_newline(d),
            SegmentMode::Whole => vec![whole_document(d)],
        })
        .map(|s| Record::from(&s))
        .collect();
    write_records(&a.out, &out, &mut rec)?;
    finish(rec)
}

fn mask(a: MaskArgs) -> Result<ExitCode> {
    let mut rec = Recorder::new("mask");
    let docs = documents(&a.input, &mut rec)?;
    let mut masked = Vec::with_capacity(docs.len());
    let (mut tokens, mut without) = (0, 0);
    for d in &docs {
        let m = mask_context(d, a.mode, &a.mask_token)?;
        tokens += m.masked_tokens;
        without += usize::from(m.no_entities);
        masked.push(m.document);
    }
    write_documents(&a.out, &masked)?;
    rec.output(&a.out);
    say!(
        "{}",
        serde_json::json!({"documents": docs.len(), "masked_tokens": tokens, "documents_without_entities": without})
    );
    finish(rec)
}

fn train_cmd(a: TrainArgs, seed: Option<u64>) -> Result<ExitCode> {
    let mut rec = Recorder::new("train");
    let config = model_config(a.config.as_deref(), seed, &mut rec)?;
    rec.effective_config(&serde_json::to_string(&config)?);
    let data = samples(&a.data, &mut rec)?;
    let dev_docs = a.dev.as_deref().map(|p| documents(p, &mut rec)).transpose()?;
    let dev_samples: Vec<Sample> = dev_docs.iter().flatten().flat_map(split_newline).collect();
    let dev = dev_docs.as_deref().map(|documents| DevSet {
        samples: &dev_samples,
        documents,
    });
    let outcome = train(&data, dev, &config)?;
    outcome.model.save(&a.out)?;
    rec.output(&a.out);
    for r in &outcome.history {
        say!("{}", serde_json::to_string(r)?);
    }
    say!(
        "{}",
        serde_json::json!({"selected_epoch": outcome.selected_epoch, "skipped_samples": outcome.skipped_samples})
    );
    finish(rec)
}

fn predict(a: PredictArgs) -> Result<ExitCode> {
    let mut rec = Recorder::new("predict");
    let ckpt = input(&a.ckpt)?;
    rec.input(&ckpt);
    let model = GridModel::load(&ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let samples = samples(&a.input, &mut rec)?;
    let mut grids = Vec::with_capacity(samples.len());
    for s in samples.iter().filter(|s| !s.is_empty()) {
        let (grid, _) = model.predict_grid(&s.tokens)?;
        grids.push(GridRecord::from_grid(s.id.clone(), &grid, &model.scheme)?);
    }
    write_records(&a.out, &grids, &mut rec)?;
    if let (Some(docs), Some(pred)) = (&a.docs, &a.pred) {
        let docs = documents(docs, &mut rec)?;
        let preds = seda_core::seda::predict_documents(&model, &samples, &docs)?;
        write_predictions(pred, &docs, &preds, &mut rec)?;
    }
    finish(rec)
}

fn augment(a: AugmentArgs, seed: Option<u64>) -> Result<ExitCode> {
    let mut rec = Recorder::new("augment");
    let mut config = seda_config(a.config.as_deref(), &mut rec)?;
    let predictor = Predictor::load(&a.predictor, &mut rec)?;
    let test = documents(&a.input, &mut rec)?;
    let dev = a.dev.as_deref().map(|p| documents(p, &mut rec)).transpose()?;
    if dev.is_none() {
        // without dev documents every iteration scores 0 and would be discarded
        config.stop_on_plateau = false;
    }
    let train_docs = a.train.as_deref().map(|p| documents(p, &mut rec)).transpose()?;
    let factory = match &a.retrain {
        Some(p) => Some(Retrain {
            config: model_config(Some(p), seed, &mut rec)?,
        }),
        None => None,
    };
    rec.effective_config(&config.render());
    let splits = Splits {
        train: train_docs.unwrap_or_default(),
        dev: dev.unwrap_or_default(),
        test,
    };
    let factory_ref = factory.as_ref().map(|f| f as &dyn ModelFactory);
    let run = match a.mode {
        AugmentMode::Once => run_once(&splits, predictor.as_dyn(), factory_ref, &config)?,
        AugmentMode::Mul => run_mul(&splits, predictor.as_dyn(), factory_ref, &config)?,
    };
    let records: Vec<Record> = run.test.samples.iter().map(Record::from).collect();
    write_records(&a.out, &records, &mut rec)?;
    if let Some(p) = &a.pred {
        write_predictions(p, &splits.test, &run.test.predictions, &mut rec)?;
    }
    for it in &run.iterations {
        say!("{}", serde_json::to_string(it)?);
    }
    finish(rec)
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<ExitCode> {
    let mut rec = Recorder::new("evaluate");
    let pred = predictions(&a.pred, &mut rec)?;
    let gold = documents(&a.gold, &mut rec)?;
    let opts = EvalOptions {
        subset: a.subset,
        unified: a.unified,
        ebf: EbfOptions {
            variant: a.ebf_variant,
            boundary: match a.boundary {
                BoundaryArg::Tail => BoundaryMode::Tail,
                BoundaryArg::HeadTail => BoundaryMode::HeadTail,
            },
            key: match a.key {
                KeyArg::Index => BoundaryKey::Index,
                KeyArg::Surface => BoundaryKey::Surface,
            },
        },
    };
    let report = evaluate(&pred, &gold, &opts)?;
    if a.json {
        say!("{}", serde_json::to_string(&report)?);
    } else {
        say!("{}", report.to_string().trim_end());
    }
    if let Some(out) = &a.out {
        write_json(out, &report, &mut rec)?;
    }
    finish(rec)
}

#[derive(Serialize)]
struct ReportRecord {
    stats: CorpusStats,
    runs: Vec<RunCoverage>,
    cross_sentence: Vec<seda_core::seda::CrossSentenceRow>,
}

#[derive(Serialize)]
struct RunCoverage {
    name: String,
    samples: usize,
    coverage: CoverageReport,
}

fn report(a: ReportArgs) -> Result<ExitCode> {
    let mut rec = Recorder::new("report");
    let gold = documents(&a.gold, &mut rec)?;
    let mut runs = Vec::new();
    for spec in &a.runs {
        let (name, files) = spec
            .split_once('=')
            .ok_or_else(|| UsageError(format!("--run expects name=samples[:pred], got {spec:?}")))?;
        let (sample_file, pred_file) = match files.split_once(':') {
            Some((s, p)) => (s, Some(p)),
            None => (files, None),
        };
        let s = samples(Path::new(sample_file), &mut rec)?;
        let p = match pred_file {
            Some(p) => predictions(Path::new(p), &mut rec)?,
            None => Vec::new(),
        };
        runs.push((name.to_string(), s, p));
    }
    let stats = CorpusStats::of(&gold);
    let mut text = String::new();
    writeln!(
        text,
        "documents {}  entities {}  discontinuous {} ({:.2}%)  cross-sentence {}",
        stats.documents,
        stats.entities,
        stats.discontinuous,
        stats.discontinuous_percent(),
        stats.cross_sentence
    )?;
    let mut coverage_rows = Vec::new();
    for (name, s, _) in &runs {
        let cov = corpus_coverage(s, &gold)?;
        writeln!(
            text,
            "{name:<16} samples {:>6}  coverage all {}/{}  discontinuous {}/{}  cross-sentence {}/{}",
            s.len(),
            cov.all.covered,
            cov.all.total,
            cov.discontinuous.covered,
            cov.discontinuous.total,
            cov.cross_sentence.covered,
            cov.cross_sentence.total
        )?;
        coverage_rows.push(RunCoverage {
            name: name.clone(),
            samples: s.len(),
            coverage: cov,
        });
    }
    let mut cross = Vec::new();
    if a.cross_sentence {
        let full: Vec<Vec<DocEntities>> = runs
            .iter()
            .map(|(_, _, p)| {
                if p.is_empty() {
                    gold.iter().map(|d| DocEntities::new(d.id.clone(), vec![])).collect()
                } else {
                    p.clone()
                }
            })
            .collect();
        let methods: Vec<(&str, &[Sample], &[DocEntities])> = runs
            .iter()
            .zip(&full)
            .map(|((n, s, _), p)| (n.as_str(), s.as_slice(), p.as_slice()))
            .collect();
        cross = cross_sentence_report(&methods, &gold)?;
        writeln!(
            text,
            "{:<16} {:>6} {:>10} {:>10}",
            "method", "total", "coverage", "accuracy"
        )?;
        let show = |v: Option<f64>| v.map_or_else(|| "N/A".to_string(), |x| format!("{x:.4}"));
        for r in &cross {
            writeln!(
                text,
                "{:<16} {:>6} {:>10} {:>10}",
                r.method,
                r.total,
                show(r.coverage),
                show(r.accuracy)
            )?;
        }
    }
    say!("{}", text.trim_end());
    if let Some(out) = &a.out {
        let record = ReportRecord {
            stats,
            runs: coverage_rows,
            cross_sentence: cross,
        };
        write_json(out, &record, &mut rec)?;
    }
    finish(rec)
}

#[derive(Debug, Serialize)]
struct AblationRow {
    direction: String,
    samples: String,
    size: usize,
    f1: f64,
    discontinuous_f1: f64,
    ebf: f64,
}

fn ablate(a: AblateArgs) -> Result<ExitCode> {
    let mut rec = Recorder::new("ablate");
    let base = seda_config(a.config.as_deref(), &mut rec)?;
    let predictor = Predictor::load(&a.predictor, &mut rec)?;
    let docs = documents(&a.input, &mut rec)?;
    if a.sizes.is_empty() {
        bail!(UsageError("--sizes needs at least one value".into()));
    }
    let splits = Splits {
        train: Vec::new(),
        dev: Vec::new(),
        test: docs,
    };
    let gold = gold_entities(&splits.test);
    let score = |config: &SedaConfig, direction: &str, kinds: &str, size: usize| -> Result<AblationRow> {
        let run = run_once(&splits, predictor.as_dyn(), None, config)?;
        let preds = &run.test.predictions;
        let (dp, dg) = restrict(preds, &splits.test, Subset::Discontinuous);
        Ok(AblationRow {
            direction: direction.into(),
            samples: kinds.into(),
            size,
            f1: exact_prf(preds, &gold)?.f1,
            discontinuous_f1: exact_prf(&dp, &dg)?.f1,
            ebf: ebf(preds, &gold, EbfVariant::Matched)?.ebf,
        })
    };
    let mut rows = vec![score(
        &SedaConfig {
            es: false,
            nes: false,
            ..base.clone()
        },
        "none",
        "none",
        0,
    )?];
    for (direction, fwd, back) in [
        ("forward", true, false),
        ("backward", false, true),
        ("both", true, true),
    ] {
        for (kinds, es, nes) in [("es", true, false), ("nes", false, true), ("both", true, true)] {
            for &size in &a.sizes {
                let config = SedaConfig {
                    es,
                    nes,
                    look_forward: if fwd { size } else { 0 },
                    look_backward: if back { size } else { 0 },
                    ..base.clone()
                };
                rows.push(score(&config, direction, kinds, size)?);
            }
        }
    }
    write_records(&a.out, &rows, &mut rec)?;
    say!(
        "{:<9} {:<5} {:>4} {:>8} {:>8} {:>8}",
        "direction",
        "kind",
        "size",
        "F1",
        "disc F1",
        "EBF"
    );
    for r in &rows {
        say!(
            "{:<9} {:<5} {:>4} {:>8.4} {:>8.4} {:>8.4}",
            r.direction,
            r.samples,
            r.size,
            r.f1,
            r.discontinuous_f1,
            r.ebf
        );
    }
    finish(rec)
}

fn gradcheck_cmd(a: GradcheckArgs, seed: Option<u64>) -> Result<ExitCode> {
    let mut rec = Recorder::new("gradcheck");
    let config = model_config(a.config.as_deref(), seed, &mut rec)?;
    if !(a.step > 0.0) {
        bail!(UsageError("--step must be positive".into()));
    }
    let (model, tokens, gold) = probe(&config)?;
    let report = gradcheck(&model, &tokens, &gold, a.step, a.max_per_tensor)?;
    for t in &report.tensors {
        say!(
            "{:<14} entries {:>6}  rel {:.3e}  max entry rel {:.3e}  max abs {:.3e}",
            t.name,
            t.checked,
            t.rel_error,
            t.max_entry_rel_error,
            t.max_abs_error
        );
    }
    let passed = report.passed(a.tolerance);
    say!(
        "max relative error {:.3e} (tolerance {:.0e}): {}",
        report.max_rel_error,
        a.tolerance,
        if passed { "PASS" } else { "FAIL" }
    );
    if let Some(out) = &a.out {
        write_json(out, &report, &mut rec)?;
    }
    rec.finish()?;
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
