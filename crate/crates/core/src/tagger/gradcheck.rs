//! Central finite-difference check of the analytic gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::GridModel;
use super::vocab::Vocab;
use crate::corpus::Entity;
use crate::error::Result;
use crate::grid::{encode, TagGrid, TagScheme};
use crate::util::rng_for;

pub const DEFAULT_STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;

/// Denominator floor for gradients that are numerically zero.
const FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over the checked entries.
    pub rel_error: f64,
    /// Worst single-entry relative error; informational, since entries with
    /// near-zero gradients are dominated by the O(h²) truncation term.
    pub max_entry_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub step: f64,
    pub loss: f64,
    pub max_rel_error: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradcheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

pub const PROBE_TOKENS: [&str; 6] = ["severe", "muscle", "pain", "in", "legs", "."];

/// A 6-token probe with a flat and a discontinuous entity, on a model whose
/// parameters are all jittered so that zero-initialized tensors are
/// exercised too.
pub fn probe(config: &ModelConfig) -> Result<(GridModel, Vec<String>, TagGrid)> {
    let tokens: Vec<String> = PROBE_TOKENS.iter().map(|t| t.to_string()).collect();
    let scheme = TagScheme::new(config.scheme, vec!["ADR".into()]);
    let vocab = Vocab::build([tokens.as_slice()]);
    let mut model = GridModel::new(config.clone(), scheme, vocab)?;
    let mut rng = rng_for(config.seed, "gradcheck-jitter");
    for (_, _, t) in model.params.tensors_mut() {
        for v in &mut t.data {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
    let gold = vec![
        Entity::from_indices("ADR", &[1, 2])?,
        Entity::from_indices("ADR", &[2, 4])?,
    ];
    let grid = encode(&gold, tokens.len(), &model.scheme)?;
    Ok((model, tokens, grid))
}

/// Compares analytic gradients with `(L(θ+h) − L(θ−h)) / 2h` on every
/// entry, or on `max_per_tensor` sampled entries of each tensor. The error
/// of a parameter group is the relative norm of the difference vector; the
/// report's maximum is taken over groups.
pub fn gradcheck(
    model: &GridModel,
    tokens: &[String],
    gold: &TagGrid,
    step: f64,
    max_per_tensor: Option<usize>,
) -> Result<GradcheckReport> {
    let (loss, analytic) = model.loss_and_grad(tokens, gold, None)?;
    let mut probe = model.clone();
    let mut rng = rng_for(model.config.seed, "gradcheck-sample");
    let mut tensors = Vec::new();
    let mut overall: f64 = 0.0;
    for (ti, (name, _, grad)) in analytic.tensors().into_iter().enumerate() {
        let len = grad.len();
        let entries: Vec<usize> = match max_per_tensor {
            Some(k) if k < len => rand::seq::index::sample(&mut rng, len, k).into_vec(),
            _ => (0..len).collect(),
        };
        let mut check = TensorCheck {
            name: name.to_string(),
            checked: entries.len(),
            rel_error: 0.0,
            max_entry_rel_error: 0.0,
            max_abs_error: 0.0,
        };
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for k in entries {
            let orig = probe.params.tensors()[ti].2.data[k];
            set_entry(&mut probe, ti, k, orig + step);
            let up = probe.loss(tokens, gold)?;
            set_entry(&mut probe, ti, k, orig - step);
            let down = probe.loss(tokens, gold)?;
            set_entry(&mut probe, ti, k, orig);
            let numeric = (up - down) / (2.0 * step);
            let a = grad.data[k];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(FLOOR);
            check.max_abs_error = check.max_abs_error.max(abs);
            check.max_entry_rel_error = check.max_entry_rel_error.max(rel);
            diff2 += abs * abs;
            a2 += a * a;
            n2 += numeric * numeric;
        }
        check.rel_error = diff2.sqrt() / a2.sqrt().max(n2.sqrt()).max(FLOOR);
        overall = overall.max(check.rel_error);
        tensors.push(check);
    }
    Ok(GradcheckReport {
        step,
        loss,
        max_rel_error: overall,
        tensors,
    })
}

fn set_entry(model: &mut GridModel, tensor: usize, k: usize, v: f64) {
    model.params.tensors_mut()[tensor].2.data[k] = v;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SchemeMode;

    #[test]
    fn sampled_gradients_agree_for_both_schemes() {
        for scheme in [SchemeMode::Base, SchemeMode::Extended] {
            let config = ModelConfig {
                scheme,
                ..ModelConfig::toy()
            };
            let (model, tokens, gold) = probe(&config).unwrap();
            let report = gradcheck(&model, &tokens, &gold, DEFAULT_STEP, Some(12)).unwrap();
            assert_eq!(report.tensors.len(), crate::tagger::Params::NAMES.len());
            assert!(report.passed(TOLERANCE), "{scheme:?}: {:?}", report.tensors);
        }
    }

    #[test]
    fn step_along_gradient_lowers_loss_at_first_order() {
        let (model, tokens, gold) = probe(&ModelConfig::toy()).unwrap();
        let (loss, g) = model.loss_and_grad(&tokens, &gold, None).unwrap();
        let eps = 1e-4;
        let mut moved = model.clone();
        moved.params.add_scaled(&g, -eps);
        let predicted = -eps * g.norm().powi(2);
        let actual = moved.loss(&tokens, &gold).unwrap() - loss;
        assert!(actual < 0.0);
        assert!(
            (actual - predicted).abs() <= 1e-2 * predicted.abs(),
            "{actual} vs {predicted}"
        );
    }
}
