use rand::Rng;
use serde::{Deserialize, Serialize};

/// A dense row-major tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(v);
        t
    }

    /// Uniform in `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`; the
    /// last axis is the input axis.
    pub fn xavier<R: Rng>(shape: &[usize], rng: &mut R) -> Self {
        let fan_in = *shape.last().unwrap_or(&1);
        let fan_out = shape.iter().rev().skip(1).product::<usize>().max(1);
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self::uniform(shape, a, rng)
    }

    pub fn uniform<R: Rng>(shape: &[usize], a: f64, rng: &mut R) -> Self {
        let mut t = Self::zeros(shape);
        for v in &mut t.data {
            *v = rng.gen_range(-a..=a);
        }
        t
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Learning-rate group of a parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    /// Word embeddings, recurrent mixer and its projection.
    Encoder,
    Other,
}

macro_rules! param_set {
    ($($name:ident : $group:ident),* $(,)?) => {
        /// Every trainable tensor of the grid model, in a fixed order.
        #[derive(Debug, Clone, PartialEq)]
        pub struct Params {
            $(pub $name: Tensor,)*
        }

        impl Params {
            pub const NAMES: &'static [&'static str] = &[$(stringify!($name)),*];

            pub fn tensors(&self) -> Vec<(&'static str, Group, &Tensor)> {
                vec![$((stringify!($name), Group::$group, &self.$name)),*]
            }

            pub fn tensors_mut(&mut self) -> Vec<(&'static str, Group, &mut Tensor)> {
                vec![$((stringify!($name), Group::$group, &mut self.$name)),*]
            }

            pub fn zeros_like(&self) -> Self {
                Self { $($name: Tensor::zeros(&self.$name.shape),)* }
            }

            /// Rebuilds from named tensors; every name must be present once.
            pub fn from_named(mut named: std::collections::BTreeMap<String, Tensor>) -> Option<Self> {
                let p = Self { $($name: named.remove(stringify!($name))?,)* };
                named.is_empty().then_some(p)
            }
        }
    };
}

param_set! {
    embedding: Encoder,
    lstm_fw_x: Encoder,
    lstm_fw_h: Encoder,
    lstm_fw_b: Encoder,
    lstm_bw_x: Encoder,
    lstm_bw_h: Encoder,
    lstm_bw_b: Encoder,
    proj_w: Encoder,
    proj_b: Encoder,
    gain_w: Other,
    gain_b: Other,
    shift_w: Other,
    shift_b: Other,
    distance_emb: Other,
    region_emb: Other,
    reduce_w: Other,
    reduce_b: Other,
    conv_w: Other,
    conv_b: Other,
    cls_w1: Other,
    cls_b1: Other,
    cls_w2: Other,
    cls_b2: Other,
    subj_w: Other,
    subj_b: Other,
    obj_w: Other,
    obj_b: Other,
    biaffine_u: Other,
    biaffine_w: Other,
    biaffine_b: Other,
}

impl Params {
    pub fn count(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, t)| t.is_finite())
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for ((_, _, a), (_, _, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, _, t) in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, _, t)| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}
