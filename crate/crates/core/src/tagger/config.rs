use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SchemeMode;
use crate::util::{parse_key_values, parse_value};

/// Which dev score picks the checkpoint kept after training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Entity-boundary F1 (matched variant).
    #[default]
    Ebf,
    /// Exact-match F1.
    F1,
}

impl std::str::FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ebf" => Ok(Self::Ebf),
            "f1" => Ok(Self::F1),
            other => Err(Error::Config(format!("unknown selection {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Word-vector and contextual hidden size.
    pub d_h: usize,
    pub d_distance: usize,
    pub d_region: usize,
    /// Channels of the reduced grid representation.
    pub d_c: usize,
    /// Hidden size of the MLP classifier.
    pub d_ffn: usize,
    /// Size of the subject/object vectors of the biaffine scorer.
    pub d_biaffine: usize,
    pub dilations: Vec<usize>,
    pub dropout: f64,
    /// Learning rate of the embedding, recurrent and projection layers.
    pub lr_encoder: f64,
    pub lr_other: f64,
    pub weight_decay: f64,
    /// Fraction of all steps spent warming up the learning rate.
    pub warmup: f64,
    pub momentum: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Loss weight of NONE cells.
    pub none_weight: f64,
    /// Normalization floor for the conditional layer norm.
    pub cln_eps: f64,
    pub scheme: SchemeMode,
    pub selection: Selection,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    /// Small enough to train on one core in seconds.
    pub fn toy() -> Self {
        Self {
            d_h: 32,
            d_distance: 8,
            d_region: 8,
            d_c: 16,
            d_ffn: 16,
            d_biaffine: 16,
            dilations: vec![1, 2, 3],
            dropout: 0.1,
            lr_encoder: 0.5,
            lr_other: 0.5,
            weight_decay: 0.0,
            warmup: 0.1,
            momentum: 0.9,
            clip_norm: 5.0,
            batch_size: 8,
            epochs: 30,
            seed: 123,
            none_weight: 1.0,
            cln_eps: 1e-6,
            scheme: SchemeMode::Base,
            selection: Selection::Ebf,
        }
    }

    /// The dimensions used with a pretrained encoder.
    pub fn full_scale() -> Self {
        Self {
            d_h: 768,
            d_distance: 20,
            d_region: 20,
            d_c: 80,
            d_ffn: 384,
            d_biaffine: 768,
            dilations: vec![1, 2, 3],
            dropout: 0.5,
            lr_encoder: 5e-6,
            lr_other: 1e-3,
            weight_decay: 0.0,
            warmup: 0.1,
            momentum: 0.0,
            clip_norm: 5.0,
            batch_size: 8,
            epochs: 10,
            seed: 123,
            ..Self::toy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_h", self.d_h),
            ("d_distance", self.d_distance),
            ("d_region", self.d_region),
            ("d_c", self.d_c),
            ("d_ffn", self.d_ffn),
            ("d_biaffine", self.d_biaffine),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(Error::Config(
                "dilations must be a non-empty list of positive factors".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(0.0..=1.0).contains(&self.warmup) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("warmup must lie in [0, 1] and momentum in [0, 1)".into()));
        }
        let nonneg = [
            self.lr_encoder,
            self.lr_other,
            self.weight_decay,
            self.clip_norm,
            self.none_weight,
        ];
        if nonneg.iter().any(|v| !v.is_finite() || *v < 0.0) || !(self.cln_eps > 0.0) {
            return Err(Error::Config(
                "rates, weights and eps must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Reads `key=value` lines over the toy defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::toy();
        for (key, value) in parse_key_values(text)? {
            let v = value.as_str();
            match key.as_str() {
                "preset" => {
                    c = match v {
                        "toy" => Self::toy(),
                        "full" => Self::full_scale(),
                        _ => return Err(Error::Config(format!("unknown preset {v:?}"))),
                    }
                }
                "d_h" => c.d_h = parse_value(&key, v)?,
                "d_distance" => c.d_distance = parse_value(&key, v)?,
                "d_region" => c.d_region = parse_value(&key, v)?,
                "d_c" => c.d_c = parse_value(&key, v)?,
                "d_ffn" => c.d_ffn = parse_value(&key, v)?,
                "d_biaffine" => c.d_biaffine = parse_value(&key, v)?,
                "dilations" => {
                    c.dilations = v
                        .split(',')
                        .map(|d| parse_value(&key, d.trim()))
                        .collect::<Result<_>>()?
                }
                "dropout" => c.dropout = parse_value(&key, v)?,
                "lr_encoder" => c.lr_encoder = parse_value(&key, v)?,
                "lr_other" => c.lr_other = parse_value(&key, v)?,
                "weight_decay" => c.weight_decay = parse_value(&key, v)?,
                "warmup" => c.warmup = parse_value(&key, v)?,
                "momentum" => c.momentum = parse_value(&key, v)?,
                "clip_norm" => c.clip_norm = parse_value(&key, v)?,
                "batch_size" => c.batch_size = parse_value(&key, v)?,
                "epochs" => c.epochs = parse_value(&key, v)?,
                "seed" => c.seed = parse_value(&key, v)?,
                "none_weight" => c.none_weight = parse_value(&key, v)?,
                "cln_eps" => c.cln_eps = parse_value(&key, v)?,
                "scheme" => {
                    c.scheme = match v {
                        "base" => SchemeMode::Base,
                        "extended" => SchemeMode::Extended,
                        _ => return Err(Error::Config(format!("unknown scheme {v:?}"))),
                    }
                }
                "selection" => c.selection = v.parse()?,
                _ => return Err(Error::Config(format!("unknown model config key {key:?}"))),
            }
        }
        c.validate()?;
        Ok(c)
    }
}
