//! Mini-batch SGD with two learning-rate groups, warmup then linear decay,
//! per-epoch dev scoring and checkpoint selection.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::GridModel;
use super::params::{Group, Params};
use super::vocab::Vocab;
use crate::corpus::{Document, Sample};
use crate::error::{Error, Result};
use crate::grid::{encode, TagGrid, TagScheme};
use crate::metrics::{ebf, exact_prf, gold_entities, DocEntities, EbfVariant};
use crate::seda::{predict_documents, select_boundaries};
use crate::util::rng_for;

/// Dev samples and the documents they were cut from.
#[derive(Debug, Clone, Copy)]
pub struct DevSet<'a> {
    pub samples: &'a [Sample],
    pub documents: &'a [Document],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev_ebf: Option<f64>,
    pub dev_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: GridModel,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (0 = untrained).
    pub selected_epoch: usize,
    /// Samples skipped because their gold entities collide in one cell.
    pub skipped_samples: Vec<String>,
}

/// Labels seen in the training gold, sorted.
pub fn labels_of(samples: &[Sample]) -> Vec<String> {
    let mut labels: Vec<String> = samples
        .iter()
        .flat_map(|s| s.gold.iter().map(|e| e.label.clone()))
        .collect();
    labels.sort();
    labels.dedup();
    labels
}

/// An untrained model whose vocabulary and labels come from `samples`.
pub fn init_model(samples: &[Sample], config: &ModelConfig) -> Result<GridModel> {
    let vocab = Vocab::build(samples.iter().map(|s| s.tokens.as_slice()));
    let scheme = TagScheme::new(config.scheme, labels_of(samples));
    GridModel::new(config.clone(), scheme, vocab)
}

pub fn train(samples: &[Sample], dev: Option<DevSet<'_>>, config: &ModelConfig) -> Result<TrainOutcome> {
    train_model(init_model(samples, config)?, samples, dev)
}

fn lr_factor(step: usize, total: usize, warmup: usize) -> f64 {
    if step < warmup {
        (step + 1) as f64 / warmup as f64
    } else if total > warmup {
        (total - step) as f64 / (total - warmup) as f64
    } else {
        1.0
    }
}

/// Trains `model` in place of a copy and keeps the epoch chosen by the
/// configured dev selection (the last epoch when there is no dev set).
pub fn train_model(mut model: GridModel, samples: &[Sample], dev: Option<DevSet<'_>>) -> Result<TrainOutcome> {
    let config = model.config.clone();
    config.validate()?;
    let mut examples: Vec<(&Sample, TagGrid)> = Vec::new();
    let mut skipped = Vec::new();
    for s in samples.iter().filter(|s| !s.is_empty()) {
        let gold: Vec<_> = s
            .gold
            .iter()
            .filter(|e| model.scheme.label_index(&e.label).is_some())
            .cloned()
            .collect();
        match encode(&gold, s.len(), &model.scheme) {
            Ok(grid) => examples.push((s, grid)),
            Err(Error::EncodeConflict { .. }) => skipped.push(s.id.clone()),
            Err(e) => return Err(e),
        }
    }
    if config.epochs > 0 && examples.is_empty() {
        return Err(Error::EmptySample("no trainable samples".into()));
    }
    let steps_per_epoch = examples.len().div_ceil(config.batch_size);
    let total = steps_per_epoch * config.epochs;
    let warmup = (config.warmup * total as f64).round() as usize;
    let dev_gold: Option<Vec<DocEntities>> = dev.map(|d| gold_entities(d.documents));
    let mut shuffle_rng = rng_for(config.seed, "shuffle");
    let mut dropout_rng = rng_for(config.seed, "dropout");
    let mut velocity: Option<Params> = None;
    let mut history = Vec::new();
    let mut snapshots: Vec<Params> = Vec::new();
    let mut dev_predictions: Vec<Vec<DocEntities>> = Vec::new();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut step = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grad = model.params.zeros_like();
            for &k in batch {
                let (sample, grid) = &examples[k];
                let (loss, g) = model.loss_and_grad(&sample.tokens, grid, Some(&mut dropout_rng))?;
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch, step, loss });
                }
                loss_sum += loss;
                grad.add_scaled(&g, 1.0);
            }
            grad.scale(1.0 / batch.len() as f64);
            if config.weight_decay > 0.0 {
                grad.add_scaled(&model.params, config.weight_decay);
            }
            if config.clip_norm > 0.0 {
                let norm = grad.norm();
                if norm > config.clip_norm {
                    grad.scale(config.clip_norm / norm);
                }
            }
            let update = match velocity.as_mut() {
                Some(v) => {
                    v.scale(config.momentum);
                    v.add_scaled(&grad, 1.0);
                    v
                }
                None if config.momentum > 0.0 => velocity.insert(grad),
                None => &grad,
            };
            let factor = lr_factor(step, total, warmup);
            for ((_, group, p), (_, _, u)) in model.params.tensors_mut().into_iter().zip(update.tensors()) {
                let lr = factor
                    * match group {
                        Group::Encoder => config.lr_encoder,
                        Group::Other => config.lr_other,
                    };
                for (pv, uv) in p.data.iter_mut().zip(&u.data) {
                    *pv -= lr * uv;
                }
            }
            if !model.params.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    loss: f64::NAN,
                });
            }
            step += 1;
        }
        let mut record = EpochRecord {
            epoch,
            mean_loss: loss_sum / examples.len() as f64,
            dev_ebf: None,
            dev_f1: None,
        };
        if let (Some(d), Some(gold)) = (dev, dev_gold.as_ref()) {
            let preds = predict_documents(&model, d.samples, d.documents)?;
            record.dev_ebf = Some(ebf(&preds, gold, EbfVariant::Matched)?.ebf);
            record.dev_f1 = Some(exact_prf(&preds, gold)?.f1);
            dev_predictions.push(preds);
            snapshots.push(model.params.clone());
        }
        history.push(record);
    }
    let mut selected_epoch = config.epochs;
    if let Some(gold) = dev_gold.as_ref().filter(|_| !dev_predictions.is_empty()) {
        let k = select_boundaries(&dev_predictions, gold, config.selection)?;
        model.params = snapshots.swap_remove(k);
        selected_epoch = k + 1;
    }
    Ok(TrainOutcome {
        model,
        history,
        selected_epoch,
        skipped_samples: skipped,
    })
}
