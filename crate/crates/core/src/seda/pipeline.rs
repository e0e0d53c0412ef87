//! Prediction plumbing and the one-pass / iterative augmentation loops.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::config::{Combiner, SedaConfig};
use super::segment::augment_document;
use crate::corpus::{corpus_coverage, normalize_entities, split_newline, Document, Entity, Sample};
use crate::error::{Error, Result};
use crate::metrics::{ebf, exact_prf, gold_entities, DocEntities, EbfVariant};
use crate::tagger::{GridModel, Selection};

/// Anything that predicts entities (in sample coordinates) for a sample.
pub trait EntityPredictor {
    fn predict_sample(&self, sample: &Sample) -> Result<Vec<Entity>>;
}

impl<T: EntityPredictor + ?Sized> EntityPredictor for &T {
    fn predict_sample(&self, sample: &Sample) -> Result<Vec<Entity>> {
        (**self).predict_sample(sample)
    }
}

impl EntityPredictor for GridModel {
    fn predict_sample(&self, sample: &Sample) -> Result<Vec<Entity>> {
        if sample.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self.predict(&sample.tokens)?.entities)
    }
}

/// Predicts exactly the gold entities projected into each sample.
#[derive(Debug, Clone, Copy, Default)]
pub struct GoldOracle;

impl EntityPredictor for GoldOracle {
    fn predict_sample(&self, sample: &Sample) -> Result<Vec<Entity>> {
        Ok(sample.gold.clone())
    }
}

/// Trains a fresh predictor on augmented samples.
pub trait ModelFactory {
    fn build(
        &self,
        train: &[Sample],
        dev: &[Sample],
        dev_docs: &[Document],
        iteration: usize,
    ) -> Result<Box<dyn EntityPredictor>>;
}

/// Predicts every sample, maps entities back to document coordinates and
/// merges them per document (duplicates across samples collapse).
pub fn predict_documents(
    predictor: &dyn EntityPredictor,
    samples: &[Sample],
    docs: &[Document],
) -> Result<Vec<DocEntities>> {
    let index: HashMap<&str, usize> = docs.iter().enumerate().map(|(k, d)| (d.id.as_str(), k)).collect();
    let mut merged: Vec<Vec<Entity>> = vec![Vec::new(); docs.len()];
    for s in samples {
        let k = *index
            .get(s.doc_id.as_str())
            .ok_or_else(|| Error::Consistency(format!("sample {} refers to unknown document {}", s.id, s.doc_id)))?;
        for e in predictor.predict_sample(s)? {
            merged[k].push(s.to_document(&e)?);
        }
    }
    Ok(docs
        .iter()
        .zip(merged)
        .map(|(d, es)| DocEntities::new(d.id.clone(), es))
        .collect())
}

/// Gold entities used as anchors (oracle mode).
pub fn gold_anchors(docs: &[Document]) -> Vec<DocEntities> {
    gold_entities(docs)
}

/// Index of the candidate whose dev predictions score best (EBF, matched
/// variant, or exact F1); ties go to the later candidate.
pub fn select_boundaries(
    candidates: &[Vec<DocEntities>],
    dev_gold: &[DocEntities],
    selection: Selection,
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::Config("no checkpoints to select from".into()));
    }
    let mut best = (f64::NEG_INFINITY, 0);
    for (k, preds) in candidates.iter().enumerate() {
        let score = match selection {
            Selection::Ebf => ebf(preds, dev_gold, EbfVariant::Matched)?.ebf,
            Selection::F1 => exact_prf(preds, dev_gold)?.f1,
        };
        if score >= best.0 {
            best = (score, k);
        }
    }
    Ok(best.1)
}

/// Augmented samples of every document, each anchored on its predictions.
pub fn augment_corpus(docs: &[Document], anchors: &[DocEntities], config: &SedaConfig) -> Result<Vec<Sample>> {
    let by_id: HashMap<&str, &DocEntities> = anchors.iter().map(|a| (a.id.as_str(), a)).collect();
    let mut out = Vec::new();
    for d in docs {
        let own = by_id.get(d.id.as_str()).map_or(&[][..], |a| a.entities.as_slice());
        out.extend(augment_document(d, own, config)?.samples);
    }
    Ok(out)
}

pub fn combine(previous: &[DocEntities], current: &[DocEntities], combiner: Combiner) -> Result<Vec<DocEntities>> {
    if previous.len() != current.len() || previous.iter().zip(current).any(|(a, b)| a.id != b.id) {
        return Err(Error::Alignment("prediction sets cover different documents".into()));
    }
    Ok(match combiner {
        Combiner::Replace => current.to_vec(),
        Combiner::Intersection => previous
            .iter()
            .zip(current)
            .map(|(a, b)| {
                let keep: BTreeSet<&Entity> = b.entities.iter().collect();
                let mut es: Vec<Entity> = a.entities.iter().filter(|e| keep.contains(e)).cloned().collect();
                normalize_entities(&mut es);
                DocEntities::new(a.id.clone(), es)
            })
            .collect(),
    })
}

/// The three corpus splits.
#[derive(Debug, Clone, Default)]
pub struct Splits {
    pub train: Vec<Document>,
    pub dev: Vec<Document>,
    pub test: Vec<Document>,
}

/// Samples and document-level predictions of one split.
#[derive(Debug, Clone, Default)]
pub struct SplitRun {
    pub anchors: Vec<DocEntities>,
    pub samples: Vec<Sample>,
    pub predictions: Vec<DocEntities>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: usize,
    pub dev_ebf: f64,
    pub dev_f1: f64,
    pub test_predicted: usize,
    /// False when the iteration was discarded by the plateau rule.
    pub accepted: bool,
}

/// Outcome of the pipeline: the last accepted iteration's samples and the
/// combined predictions.
#[derive(Debug, Clone, Default)]
pub struct SedaRun {
    /// Present only when a model factory retrains on augmented data.
    pub train: Option<SplitRun>,
    pub dev: SplitRun,
    pub test: SplitRun,
    pub iterations: Vec<IterationSummary>,
}

/// Predictions of the given predictor on newline-split samples of every split.
pub fn baseline_predictions(
    predictor: &dyn EntityPredictor,
    docs: &[Document],
) -> Result<(Vec<Sample>, Vec<DocEntities>)> {
    let samples: Vec<Sample> = docs.iter().flat_map(split_newline).collect();
    let preds = predict_documents(predictor, &samples, docs)?;
    Ok((samples, preds))
}

struct Step<'a> {
    model: Box<dyn EntityPredictor + 'a>,
    train: Option<SplitRun>,
    dev: SplitRun,
    test: SplitRun,
}

fn augment_and_predict<'a>(
    splits: &Splits,
    anchors: (Option<Vec<DocEntities>>, Vec<DocEntities>, Vec<DocEntities>),
    model: Box<dyn EntityPredictor + 'a>,
    factory: Option<&dyn ModelFactory>,
    config: &SedaConfig,
    iteration: usize,
) -> Result<Step<'a>> {
    let (train_anchors, dev_anchors, test_anchors) = anchors;
    let dev_samples = augment_corpus(&splits.dev, &dev_anchors, config)?;
    let test_samples = augment_corpus(&splits.test, &test_anchors, config)?;
    let (model, train): (Box<dyn EntityPredictor + 'a>, Option<SplitRun>) = match (factory, train_anchors) {
        (Some(f), Some(train_anchors)) => {
            let train_samples = augment_corpus(&splits.train, &train_anchors, config)?;
            let fresh = f.build(&train_samples, &dev_samples, &splits.dev, iteration)?;
            let predictions = predict_documents(fresh.as_ref(), &train_samples, &splits.train)?;
            (
                fresh,
                Some(SplitRun {
                    anchors: train_anchors,
                    samples: train_samples,
                    predictions,
                }),
            )
        }
        _ => (model, None),
    };
    let dev_pred = predict_documents(model.as_ref(), &dev_samples, &splits.dev)?;
    let test_pred = predict_documents(model.as_ref(), &test_samples, &splits.test)?;
    Ok(Step {
        model,
        train,
        dev: SplitRun {
            anchors: dev_anchors,
            samples: dev_samples,
            predictions: dev_pred,
        },
        test: SplitRun {
            anchors: test_anchors,
            samples: test_samples,
            predictions: test_pred,
        },
    })
}

fn summarize(
    iteration: usize,
    dev: &[DocEntities],
    test: &[DocEntities],
    dev_docs: &[Document],
) -> Result<IterationSummary> {
    let gold = gold_entities(dev_docs);
    Ok(IterationSummary {
        iteration,
        dev_ebf: ebf(dev, &gold, EbfVariant::Matched)?.ebf,
        dev_f1: exact_prf(dev, &gold)?.f1,
        test_predicted: test.iter().map(|d| d.entities.len()).sum(),
        accepted: true,
    })
}

/// One augmentation pass: anchor on the predictor's newline-split
/// predictions, augment, optionally retrain, re-predict and map back.
pub fn run_once(
    splits: &Splits,
    predictor: &dyn EntityPredictor,
    factory: Option<&dyn ModelFactory>,
    config: &SedaConfig,
) -> Result<SedaRun> {
    run_mul(
        splits,
        predictor,
        factory,
        &SedaConfig {
            max_iterations: 1,
            ..config.clone()
        },
    )
}

/// Iterative augmentation. Iteration `t` anchors on the combined
/// predictions of iteration `t - 1`; predictions are combined with the
/// configured combiner. With `stop_on_plateau`, an iteration that does not
/// raise dev EBF by at least 1e-4 is discarded and the loop stops.
pub fn run_mul(
    splits: &Splits,
    predictor: &dyn EntityPredictor,
    factory: Option<&dyn ModelFactory>,
    config: &SedaConfig,
) -> Result<SedaRun> {
    config.validate()?;
    let base = |docs: &[Document]| baseline_predictions(predictor, docs).map(|r| r.1);
    let anchors = (
        factory.is_some().then(|| base(&splits.train)).transpose()?,
        base(&splits.dev)?,
        base(&splits.test)?,
    );
    let step = augment_and_predict(splits, anchors, Box::new(predictor), factory, config, 1)?;
    let mut summaries = vec![summarize(
        1,
        &step.dev.predictions,
        &step.test.predictions,
        &splits.dev,
    )?];
    let mut model = step.model;
    let mut run = SedaRun {
        train: step.train,
        dev: step.dev,
        test: step.test,
        iterations: Vec::new(),
    };
    for t in 2..=config.max_iterations {
        let anchors = (
            run.train.as_ref().map(|r| r.predictions.clone()),
            run.dev.predictions.clone(),
            run.test.predictions.clone(),
        );
        let step = augment_and_predict(splits, anchors, model, factory, config, t)?;
        let train = match (&run.train, step.train) {
            (Some(prev), Some(mut cur)) => {
                cur.predictions = combine(&prev.predictions, &cur.predictions, config.combiner)?;
                Some(cur)
            }
            (_, cur) => cur,
        };
        let mut dev = step.dev;
        dev.predictions = combine(&run.dev.predictions, &dev.predictions, config.combiner)?;
        let mut test = step.test;
        test.predictions = combine(&run.test.predictions, &test.predictions, config.combiner)?;
        let mut summary = summarize(t, &dev.predictions, &test.predictions, &splits.dev)?;
        let best = summaries
            .iter()
            .filter(|s| s.accepted)
            .map(|s| s.dev_ebf)
            .fold(f64::NEG_INFINITY, f64::max);
        if config.stop_on_plateau && summary.dev_ebf < best + 1e-4 {
            summary.accepted = false;
            summaries.push(summary);
            break;
        }
        summaries.push(summary);
        model = step.model;
        run.train = train;
        run.dev = dev;
        run.test = test;
    }
    run.iterations = summaries;
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSentenceRow {
    pub method: String,
    pub total: usize,
    /// Share of cross-sentence gold entities inside some sample; `None`
    /// when the gold has no cross-sentence entity.
    pub coverage: Option<f64>,
    /// Share of cross-sentence gold entities predicted exactly.
    pub accuracy: Option<f64>,
}

/// Coverage and accuracy on cross-sentence gold entities for each
/// `(method, samples, predictions)` triple.
pub fn cross_sentence_report(
    methods: &[(&str, &[Sample], &[DocEntities])],
    gold: &[Document],
) -> Result<Vec<CrossSentenceRow>> {
    let mut rows = Vec::new();
    for (name, samples, preds) in methods {
        let cov = corpus_coverage(samples, gold)?.cross_sentence;
        let by_id: HashMap<&str, &DocEntities> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
        let mut hit = 0;
        for d in gold {
            let predicted: BTreeSet<&Entity> = by_id
                .get(d.id.as_str())
                .map(|p| p.entities.iter().collect())
                .unwrap_or_default();
            hit += d
                .gold
                .iter()
                .filter(|e| e.is_cross_sentence(&d.sentence_breaks) && predicted.contains(e))
                .count();
        }
        rows.push(CrossSentenceRow {
            method: name.to_string(),
            total: cov.total,
            coverage: cov.rate(),
            accuracy: (cov.total > 0).then(|| hit as f64 / cov.total as f64),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(idx: &[usize]) -> Entity {
        Entity::from_indices("ADR", idx).unwrap()
    }

    fn corpus() -> Vec<Document> {
        let toks = ["my", "knee", "and", "ankle", "pain", "today", "ok"];
        let d1 = Document::from_tokens("a", &toks, vec![3], vec![e(&[1, 4]), e(&[3, 4])]).unwrap();
        let d2 = Document::from_tokens("b", &toks, vec![], vec![e(&[1, 4]), e(&[3, 4])]).unwrap();
        vec![d1, d2]
    }

    #[test]
    fn predictions_map_back_and_dedup() {
        let docs = corpus();
        let mut s1 = Sample::from_document(&docs[0], "x", vec![1, 2, 3, 4], crate::corpus::SampleKind::Es).unwrap();
        let s2 = Sample::from_document(&docs[0], "y", vec![3, 4, 5], crate::corpus::SampleKind::Nes).unwrap();
        s1.id = "x".into();
        let preds = predict_documents(&GoldOracle, &[s1, s2], &docs).unwrap();
        assert_eq!(preds[0].entities, docs[0].gold);
        assert!(preds[1].entities.is_empty());
    }

    #[test]
    fn selection_prefers_later_ties_and_best_score() {
        let docs = corpus();
        let gold = gold_entities(&docs);
        let empty: Vec<DocEntities> = docs.iter().map(|d| DocEntities::new(d.id.clone(), vec![])).collect();
        assert_eq!(
            select_boundaries(std::slice::from_ref(&empty), &gold, Selection::Ebf).unwrap(),
            0
        );
        assert_eq!(
            select_boundaries(&[gold.clone(), empty.clone()], &gold, Selection::Ebf).unwrap(),
            0
        );
        assert_eq!(
            select_boundaries(&[gold.clone(), gold.clone()], &gold, Selection::F1).unwrap(),
            1
        );
        // tails right, spans wrong: EBF prefers it, F1 does not
        let tails: Vec<DocEntities> = docs
            .iter()
            .map(|d| DocEntities::new(d.id.clone(), vec![e(&[4])]))
            .collect();
        assert_eq!(
            select_boundaries(&[empty.clone(), tails.clone()], &gold, Selection::Ebf).unwrap(),
            1
        );
        assert_eq!(select_boundaries(&[tails, empty], &gold, Selection::F1).unwrap(), 1);
        assert!(select_boundaries(&[], &gold, Selection::Ebf).is_err());
    }

    #[test]
    fn combiners() {
        let a = vec![DocEntities::new("a", vec![e(&[1]), e(&[2])])];
        let b = vec![DocEntities::new("a", vec![e(&[2]), e(&[3])])];
        assert_eq!(combine(&a, &b, Combiner::Intersection).unwrap()[0].entities, [e(&[2])]);
        assert_eq!(combine(&a, &b, Combiner::Replace).unwrap(), b);
        assert_eq!(combine(&a, &a, Combiner::Intersection).unwrap(), a);
        assert!(combine(&a, &[], Combiner::Replace).is_err());
    }

    #[test]
    fn oracle_once_recovers_cross_sentence_entities() {
        let docs = corpus();
        let splits = Splits {
            train: vec![],
            dev: docs.clone(),
            test: docs.clone(),
        };
        let run = run_once(&splits, &GoldOracle, None, &SedaConfig::cadec()).unwrap();
        let (base_samples, base_preds) = baseline_predictions(&GoldOracle, &docs).unwrap();
        let rows = cross_sentence_report(
            &[
                ("baseline", &base_samples, &base_preds),
                ("once", &run.test.samples, &run.test.predictions),
            ],
            &docs,
        )
        .unwrap();
        assert_eq!(rows[0].total, 1);
        assert_eq!((rows[0].coverage, rows[0].accuracy), (Some(0.0), Some(0.0)));
        assert_eq!((rows[1].coverage, rows[1].accuracy), (Some(1.0), Some(1.0)));
        assert_eq!(run.iterations.len(), 1);
    }

    #[test]
    fn no_cross_sentence_gold_is_flagged() {
        let docs = vec![corpus().remove(1)];
        let rows = cross_sentence_report(&[("x", &[], &[])], &docs).unwrap();
        assert_eq!((rows[0].coverage, rows[0].accuracy), (None, None));
    }

    #[test]
    fn mul_with_one_iteration_equals_once_and_intersection_is_idempotent() {
        let docs = corpus();
        let splits = Splits {
            train: vec![],
            dev: docs.clone(),
            test: docs,
        };
        let once = run_once(&splits, &GoldOracle, None, &SedaConfig::cadec()).unwrap();
        let one = run_mul(
            &splits,
            &GoldOracle,
            None,
            &SedaConfig {
                max_iterations: 1,
                ..SedaConfig::cadec()
            },
        )
        .unwrap();
        assert_eq!(once.test.predictions, one.test.predictions);
        assert_eq!(once.test.samples, one.test.samples);
        let three = run_mul(
            &splits,
            &GoldOracle,
            None,
            &SedaConfig {
                max_iterations: 3,
                stop_on_plateau: false,
                ..SedaConfig::cadec()
            },
        )
        .unwrap();
        assert_eq!(three.iterations.len(), 3);
        assert_eq!(three.test.predictions, once.test.predictions);
    }
}
