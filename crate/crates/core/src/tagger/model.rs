//! The grid tagging network and its hand-written backward pass.
//!
//! ```text
//! tokens -> embedding -> BiLSTM -> projection            h_i        (N x d_h)
//! V_ij = (W_g h_i + b_g) ⊙ std(h_j) + (W_s h_i + b_s)                (CLN)
//! C_ij = GELU(W_r [V_ij; dist(j-i); region(i,j)] + b_r)  (N x N x d_c)
//! Q    = concat_l GELU(depthwise dilated 3x3 conv_l(C))  (N x N x L d_c)
//! y'   = W_2 GELU(W_1 Q_ij + b_1) + b_2
//! y''  = s_i^T U o_j + W [s_i; o_j] + b,  s = GELU(W_s' h), o = GELU(W_o h)
//! P_ij = softmax(y' + y'')
//! ```

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::nn::{self, gelu, gelu_grad};
use super::params::{Params, Tensor};
use super::vocab::Vocab;
use crate::corpus::Entity;
use crate::error::{Error, Result};
use crate::grid::{decode_with, DecodeOptions, OnDegenerate, TagGrid, TagScheme, DEFAULT_PATH_CAP};
use crate::util::rng_for;

/// Initial bias of the NONE logit, so an untrained model predicts mostly NONE.
const NONE_BIAS: f64 = 2.0;

#[derive(Debug, Clone, Copy)]
struct Dims {
    vocab: usize,
    d_h: usize,
    /// Hidden size of one recurrent direction.
    rnn: usize,
    d_ed: usize,
    d_et: usize,
    d_c: usize,
    layers: usize,
    d_ff: usize,
    d_b: usize,
    tags: usize,
}

impl Dims {
    fn new(config: &ModelConfig, vocab: usize, tags: usize) -> Self {
        Self {
            vocab,
            d_h: config.d_h,
            rnn: config.d_h.div_ceil(2),
            d_ed: config.d_distance,
            d_et: config.d_region,
            d_c: config.d_c,
            layers: config.dilations.len(),
            d_ff: config.d_ffn,
            d_b: config.d_biaffine,
            tags,
        }
    }

    fn reduce_in(&self) -> usize {
        self.d_h + self.d_ed + self.d_et
    }

    fn d_q(&self) -> usize {
        self.layers * self.d_c
    }
}

#[derive(Debug, Clone)]
pub struct GridModel {
    pub config: ModelConfig,
    pub scheme: TagScheme,
    pub vocab: Vocab,
    pub params: Params,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
struct Trace {
    n: usize,
    ids: Vec<usize>,
    emb_mask: Option<Vec<f64>>,
    x: Vec<f64>,
    fw: nn::LstmTrace,
    bw: nn::LstmTrace,
    r: Vec<f64>,
    h: Vec<f64>,
    gamma: Vec<f64>,
    lambda: Vec<f64>,
    norm: Vec<f64>,
    sigma: Vec<f64>,
    clamped: Vec<bool>,
    reduce_pre: Vec<f64>,
    c_mask: Option<Vec<f64>>,
    c: Vec<f64>,
    conv_pre: Vec<f64>,
    q_mask: Option<Vec<f64>>,
    q: Vec<f64>,
    ff_pre: Vec<f64>,
    ff: Vec<f64>,
    s_pre: Vec<f64>,
    s: Vec<f64>,
    o_pre: Vec<f64>,
    o: Vec<f64>,
    /// `s_i^T U_t`, `n x tags x d_b`.
    su: Vec<f64>,
    mlp_logits: Vec<f64>,
    biaffine_logits: Vec<f64>,
    logits: Vec<f64>,
}

/// Intermediate values of an evaluation-mode forward pass.
#[derive(Debug, Clone)]
pub struct Inspection {
    pub n: usize,
    pub tags: usize,
    /// Contextual token vectors, `n x d_h`.
    pub h: Vec<f64>,
    pub gain: Vec<f64>,
    pub shift: Vec<f64>,
    /// Standardized `h_j` before gain and shift, `n x d_h`.
    pub normalized: Vec<f64>,
    pub clamped: usize,
    /// Reduced grid, `n x n x d_c`.
    pub grid: Vec<f64>,
    /// Convolution features, `n x n x (L d_c)`.
    pub conv: Vec<f64>,
    pub subject: Vec<f64>,
    pub object: Vec<f64>,
    pub mlp_logits: Vec<f64>,
    pub biaffine_logits: Vec<f64>,
    /// Per-cell tag distributions, `n x n x tags`.
    pub probs: Vec<f64>,
}

/// A predicted grid with repair and decoding diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub grid: TagGrid,
    pub repaired: usize,
    pub entities: Vec<Entity>,
    pub degenerate_cells: usize,
}

fn dropout_mask(len: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

impl GridModel {
    /// A freshly initialized model; initialization draws from the
    /// `init` sub-seed of `config.seed`.
    pub fn new(config: ModelConfig, scheme: TagScheme, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        let d = Dims::new(&config, vocab.len(), scheme.num_tags());
        let mut rng = rng_for(config.seed, "init");
        let rng = &mut rng;
        let mut lstm_b = Tensor::zeros(&[4 * d.rnn]);
        lstm_b.data[d.rnn..2 * d.rnn].fill(1.0);
        let mut cls_b2 = Tensor::zeros(&[d.tags]);
        cls_b2.data[0] = NONE_BIAS;
        let params = Params {
            embedding: Tensor::uniform(&[d.vocab, d.d_h], 0.5, rng),
            lstm_fw_x: Tensor::xavier(&[4 * d.rnn, d.d_h], rng),
            lstm_fw_h: Tensor::xavier(&[4 * d.rnn, d.rnn], rng),
            lstm_fw_b: lstm_b.clone(),
            lstm_bw_x: Tensor::xavier(&[4 * d.rnn, d.d_h], rng),
            lstm_bw_h: Tensor::xavier(&[4 * d.rnn, d.rnn], rng),
            lstm_bw_b: lstm_b,
            proj_w: Tensor::xavier(&[d.d_h, 2 * d.rnn], rng),
            proj_b: Tensor::zeros(&[d.d_h]),
            gain_w: Tensor::zeros(&[d.d_h, d.d_h]),
            gain_b: Tensor::filled(&[d.d_h], 1.0),
            shift_w: Tensor::zeros(&[d.d_h, d.d_h]),
            shift_b: Tensor::zeros(&[d.d_h]),
            distance_emb: Tensor::uniform(&[nn::DISTANCE_BUCKETS, d.d_ed], 0.5, rng),
            region_emb: Tensor::uniform(&[2, d.d_et], 0.5, rng),
            reduce_w: Tensor::xavier(&[d.d_c, d.reduce_in()], rng),
            reduce_b: Tensor::zeros(&[d.d_c]),
            conv_w: Tensor::uniform(&[d.layers, d.d_c, 9], 1.0 / 3.0, rng),
            conv_b: Tensor::zeros(&[d.layers, d.d_c]),
            cls_w1: Tensor::xavier(&[d.d_ff, d.d_q()], rng),
            cls_b1: Tensor::zeros(&[d.d_ff]),
            cls_w2: Tensor::xavier(&[d.tags, d.d_ff], rng),
            cls_b2,
            subj_w: Tensor::xavier(&[d.d_b, d.d_h], rng),
            subj_b: Tensor::zeros(&[d.d_b]),
            obj_w: Tensor::xavier(&[d.d_b, d.d_h], rng),
            obj_b: Tensor::zeros(&[d.d_b]),
            biaffine_u: Tensor::xavier(&[d.tags, d.d_b, d.d_b], rng),
            biaffine_w: Tensor::xavier(&[d.tags, 2 * d.d_b], rng),
            biaffine_b: Tensor::zeros(&[d.tags]),
        };
        Ok(Self {
            config,
            scheme,
            vocab,
            params,
        })
    }

    fn dims(&self) -> Dims {
        Dims::new(&self.config, self.vocab.len(), self.scheme.num_tags())
    }

    pub fn num_tags(&self) -> usize {
        self.scheme.num_tags()
    }

    /// Checks that every tensor has the shape implied by the config,
    /// vocabulary and tag scheme.
    pub fn check_shapes(&self) -> Result<()> {
        let fresh = Self::new(self.config.clone(), self.scheme.clone(), self.vocab.clone())?;
        for ((name, _, a), (_, _, b)) in self.params.tensors().into_iter().zip(fresh.params.tensors()) {
            if a.shape != b.shape || a.data.len() != b.data.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    a.shape, b.shape
                )));
            }
        }
        Ok(())
    }

    fn token_ids<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<usize>> {
        if tokens.is_empty() {
            return Err(Error::EmptySample("cannot encode an empty token sequence".into()));
        }
        Ok(self.vocab.ids(tokens))
    }

    fn forward(&self, ids: &[usize], mut rng: Option<&mut ChaCha8Rng>) -> Trace {
        let d = self.dims();
        let p = &self.params;
        let n = ids.len();
        let rate = self.config.dropout;
        let mut mask = |len: usize| -> Option<Vec<f64>> {
            match rng.as_deref_mut() {
                Some(r) if rate > 0.0 => Some(dropout_mask(len, rate, r)),
                _ => None,
            }
        };

        // Word vectors. Word-level tokens make sub-word max pooling the identity.
        let mut x: Vec<f64> = ids
            .iter()
            .flat_map(|&id| p.embedding.data[id * d.d_h..(id + 1) * d.d_h].iter().copied())
            .collect();
        let emb_mask = mask(x.len());
        if let Some(m) = &emb_mask {
            x.iter_mut().zip(m).for_each(|(v, m)| *v *= m);
        }

        let fw = nn::lstm_forward(
            &p.lstm_fw_x.data,
            &p.lstm_fw_h.data,
            &p.lstm_fw_b.data,
            &x,
            n,
            d.rnn,
            false,
        );
        let bw = nn::lstm_forward(
            &p.lstm_bw_x.data,
            &p.lstm_bw_h.data,
            &p.lstm_bw_b.data,
            &x,
            n,
            d.rnn,
            true,
        );
        let mut r = vec![0.0; n * 2 * d.rnn];
        for i in 0..n {
            r[i * 2 * d.rnn..i * 2 * d.rnn + d.rnn].copy_from_slice(&fw.hidden[i * d.rnn..(i + 1) * d.rnn]);
            r[i * 2 * d.rnn + d.rnn..(i + 1) * 2 * d.rnn].copy_from_slice(&bw.hidden[i * d.rnn..(i + 1) * d.rnn]);
        }
        let mut h = vec![0.0; n * d.d_h];
        for i in 0..n {
            nn::affine(
                &p.proj_w.data,
                &p.proj_b.data,
                &r[i * 2 * d.rnn..(i + 1) * 2 * d.rnn],
                &mut h[i * d.d_h..(i + 1) * d.d_h],
            );
        }

        // Conditional layer norm parts.
        let mut gamma = vec![0.0; n * d.d_h];
        let mut lambda = vec![0.0; n * d.d_h];
        let mut norm = vec![0.0; n * d.d_h];
        let mut sigma = vec![0.0; n];
        let mut clamped = vec![false; n];
        for i in 0..n {
            let hi = &h[i * d.d_h..(i + 1) * d.d_h];
            nn::affine(
                &p.gain_w.data,
                &p.gain_b.data,
                hi,
                &mut gamma[i * d.d_h..(i + 1) * d.d_h],
            );
            nn::affine(
                &p.shift_w.data,
                &p.shift_b.data,
                hi,
                &mut lambda[i * d.d_h..(i + 1) * d.d_h],
            );
            let (nv, sd, cl) = nn::standardize(hi, self.config.cln_eps);
            norm[i * d.d_h..(i + 1) * d.d_h].copy_from_slice(&nv);
            sigma[i] = sd;
            clamped[i] = cl;
        }

        // Reduction MLP over [V; distance; region]; the embedding parts are
        // computed once per bucket and the shift part once per row.
        let k_in = d.reduce_in();
        let project = |vec: &[f64], offset: usize| -> Vec<f64> {
            let mut out = vec![0.0; d.d_c];
            for (c, o) in out.iter_mut().enumerate() {
                *o = nn::dot(&p.reduce_w.data[c * k_in + offset..c * k_in + offset + vec.len()], vec);
            }
            out
        };
        let dist_proj: Vec<Vec<f64>> = p.distance_emb.data.chunks(d.d_ed).map(|e| project(e, d.d_h)).collect();
        let region_proj: Vec<Vec<f64>> = p
            .region_emb
            .data
            .chunks(d.d_et)
            .map(|e| project(e, d.d_h + d.d_ed))
            .collect();
        let cells = n * n;
        let mut reduce_pre = vec![0.0; cells * d.d_c];
        let mut v = vec![0.0; d.d_h];
        for i in 0..n {
            let gi = &gamma[i * d.d_h..(i + 1) * d.d_h];
            let li = &lambda[i * d.d_h..(i + 1) * d.d_h];
            for j in 0..n {
                let nj = &norm[j * d.d_h..(j + 1) * d.d_h];
                for k in 0..d.d_h {
                    v[k] = gi[k] * nj[k] + li[k];
                }
                let cell = i * n + j;
                let out = &mut reduce_pre[cell * d.d_c..(cell + 1) * d.d_c];
                let dp = &dist_proj[nn::distance_bucket(i, j)];
                let rp = &region_proj[nn::region(i, j)];
                for c in 0..d.d_c {
                    out[c] = p.reduce_b.data[c] + dp[c] + rp[c];
                }
                nn::matvec_acc(&p.reduce_w.data, k_in, &v, out);
            }
        }
        let mut c: Vec<f64> = reduce_pre.iter().map(|&v| gelu(v)).collect();
        let c_mask = mask(c.len());
        if let Some(m) = &c_mask {
            c.iter_mut().zip(m).for_each(|(v, m)| *v *= m);
        }

        // Dilated convolutions, concatenated channel-wise.
        let d_q = d.d_q();
        let mut conv_pre = vec![0.0; cells * d_q];
        for (l, &dil) in self.config.dilations.iter().enumerate() {
            let w = &p.conv_w.data[l * d.d_c * 9..(l + 1) * d.d_c * 9];
            let b = &p.conv_b.data[l * d.d_c..(l + 1) * d.d_c];
            let out = nn::dilated_conv(&c, n, d.d_c, w, b, dil);
            for cell in 0..cells {
                conv_pre[cell * d_q + l * d.d_c..cell * d_q + (l + 1) * d.d_c]
                    .copy_from_slice(&out[cell * d.d_c..(cell + 1) * d.d_c]);
            }
        }
        let mut q: Vec<f64> = conv_pre.iter().map(|&v| gelu(v)).collect();
        let q_mask = mask(q.len());
        if let Some(m) = &q_mask {
            q.iter_mut().zip(m).for_each(|(v, m)| *v *= m);
        }

        // MLP classifier.
        let t = d.tags;
        let mut ff_pre = vec![0.0; cells * d.d_ff];
        let mut mlp_logits = vec![0.0; cells * t];
        for cell in 0..cells {
            let fp = &mut ff_pre[cell * d.d_ff..(cell + 1) * d.d_ff];
            nn::affine(&p.cls_w1.data, &p.cls_b1.data, &q[cell * d_q..(cell + 1) * d_q], fp);
        }
        let ff: Vec<f64> = ff_pre.iter().map(|&v| gelu(v)).collect();
        for cell in 0..cells {
            nn::affine(
                &p.cls_w2.data,
                &p.cls_b2.data,
                &ff[cell * d.d_ff..(cell + 1) * d.d_ff],
                &mut mlp_logits[cell * t..(cell + 1) * t],
            );
        }

        // Biaffine scorer.
        let db = d.d_b;
        let mut s_pre = vec![0.0; n * db];
        let mut o_pre = vec![0.0; n * db];
        for i in 0..n {
            let hi = &h[i * d.d_h..(i + 1) * d.d_h];
            nn::affine(&p.subj_w.data, &p.subj_b.data, hi, &mut s_pre[i * db..(i + 1) * db]);
            nn::affine(&p.obj_w.data, &p.obj_b.data, hi, &mut o_pre[i * db..(i + 1) * db]);
        }
        let s: Vec<f64> = s_pre.iter().map(|&v| gelu(v)).collect();
        let o: Vec<f64> = o_pre.iter().map(|&v| gelu(v)).collect();
        let u = &p.biaffine_u.data;
        let wb = &p.biaffine_w.data;
        let mut su = vec![0.0; n * t * db];
        let mut ws = vec![0.0; n * t];
        let mut wo = vec![0.0; n * t];
        for i in 0..n {
            let si = &s[i * db..(i + 1) * db];
            let oi = &o[i * db..(i + 1) * db];
            for tg in 0..t {
                let row = &mut su[(i * t + tg) * db..(i * t + tg + 1) * db];
                for (a, &sa) in si.iter().enumerate() {
                    let ur = &u[(tg * db + a) * db..(tg * db + a + 1) * db];
                    for (rv, &uv) in row.iter_mut().zip(ur) {
                        *rv += sa * uv;
                    }
                }
                ws[i * t + tg] = nn::dot(&wb[tg * 2 * db..tg * 2 * db + db], si);
                wo[i * t + tg] = nn::dot(&wb[tg * 2 * db + db..(tg + 1) * 2 * db], oi);
            }
        }
        let mut biaffine_logits = vec![0.0; cells * t];
        for i in 0..n {
            for j in 0..n {
                let oj = &o[j * db..(j + 1) * db];
                let out = &mut biaffine_logits[(i * n + j) * t..(i * n + j + 1) * t];
                for tg in 0..t {
                    out[tg] = nn::dot(&su[(i * t + tg) * db..(i * t + tg + 1) * db], oj)
                        + ws[i * t + tg]
                        + wo[j * t + tg]
                        + p.biaffine_b.data[tg];
                }
            }
        }
        let logits: Vec<f64> = mlp_logits.iter().zip(&biaffine_logits).map(|(a, b)| a + b).collect();

        Trace {
            n,
            ids: ids.to_vec(),
            emb_mask,
            x,
            fw,
            bw,
            r,
            h,
            gamma,
            lambda,
            norm,
            sigma,
            clamped,
            reduce_pre,
            c_mask,
            c,
            conv_pre,
            q_mask,
            q,
            ff_pre,
            ff,
            s_pre,
            s,
            o_pre,
            o,
            su,
            mlp_logits,
            biaffine_logits,
            logits,
        }
    }

    fn backward(&self, tr: &Trace, dlogits: &[f64]) -> Params {
        let d = self.dims();
        let p = &self.params;
        let mut g = p.zeros_like();
        let n = tr.n;
        let cells = n * n;
        let t = d.tags;
        let db = d.d_b;
        let mut dh = vec![0.0; n * d.d_h];

        // Biaffine scorer.
        let mut ds = vec![0.0; n * db];
        let mut dobj = vec![0.0; n * db];
        let mut row_sum = vec![0.0; n * t];
        let mut col_sum = vec![0.0; n * t];
        let mut dsu = vec![0.0; n * t * db];
        for i in 0..n {
            for j in 0..n {
                let dz = &dlogits[(i * n + j) * t..(i * n + j + 1) * t];
                let oj = &tr.o[j * db..(j + 1) * db];
                for tg in 0..t {
                    let gz = dz[tg];
                    if gz == 0.0 {
                        continue;
                    }
                    row_sum[i * t + tg] += gz;
                    col_sum[j * t + tg] += gz;
                    g.biaffine_b.data[tg] += gz;
                    let sur = &tr.su[(i * t + tg) * db..(i * t + tg + 1) * db];
                    let dsur = &mut dsu[(i * t + tg) * db..(i * t + tg + 1) * db];
                    let dob = &mut dobj[j * db..(j + 1) * db];
                    for b in 0..db {
                        dob[b] += gz * sur[b];
                        dsur[b] += gz * oj[b];
                    }
                }
            }
        }
        for i in 0..n {
            let si = &tr.s[i * db..(i + 1) * db];
            let oi = &tr.o[i * db..(i + 1) * db];
            for tg in 0..t {
                let (rs, cs) = (row_sum[i * t + tg], col_sum[i * t + tg]);
                let wrow = &p.biaffine_w.data[tg * 2 * db..(tg + 1) * 2 * db];
                let dwrow = &mut g.biaffine_w.data[tg * 2 * db..(tg + 1) * 2 * db];
                for b in 0..db {
                    dwrow[b] += rs * si[b];
                    dwrow[db + b] += cs * oi[b];
                    ds[i * db + b] += rs * wrow[b];
                    dobj[i * db + b] += cs * wrow[db + b];
                }
                // su = s^T U: dU[a][b] += s_a dsu[b], ds[a] += U[a][b] dsu[b]
                let dsur = &dsu[(i * t + tg) * db..(i * t + tg + 1) * db];
                for a in 0..db {
                    let base = (tg * db + a) * db;
                    let ur = &p.biaffine_u.data[base..base + db];
                    let dur = &mut g.biaffine_u.data[base..base + db];
                    let mut acc = 0.0;
                    for b in 0..db {
                        dur[b] += si[a] * dsur[b];
                        acc += ur[b] * dsur[b];
                    }
                    ds[i * db + a] += acc;
                }
            }
        }
        for i in 0..n {
            let hi = &tr.h[i * d.d_h..(i + 1) * d.d_h];
            let dsp: Vec<f64> = (0..db)
                .map(|b| ds[i * db + b] * gelu_grad(tr.s_pre[i * db + b]))
                .collect();
            let dop: Vec<f64> = (0..db)
                .map(|b| dobj[i * db + b] * gelu_grad(tr.o_pre[i * db + b]))
                .collect();
            nn::outer_acc(&mut g.subj_w.data, d.d_h, &dsp, hi);
            nn::outer_acc(&mut g.obj_w.data, d.d_h, &dop, hi);
            g.subj_b.data.iter_mut().zip(&dsp).for_each(|(a, b)| *a += b);
            g.obj_b.data.iter_mut().zip(&dop).for_each(|(a, b)| *a += b);
            let dhi = &mut dh[i * d.d_h..(i + 1) * d.d_h];
            nn::matvec_t_acc(&p.subj_w.data, d.d_h, &dsp, dhi);
            nn::matvec_t_acc(&p.obj_w.data, d.d_h, &dop, dhi);
        }

        // MLP classifier.
        let d_q = d.d_q();
        let mut dq = vec![0.0; cells * d_q];
        let mut dff = vec![0.0; d.d_ff];
        for cell in 0..cells {
            let dz = &dlogits[cell * t..(cell + 1) * t];
            let ffc = &tr.ff[cell * d.d_ff..(cell + 1) * d.d_ff];
            g.cls_b2.data.iter_mut().zip(dz).for_each(|(a, b)| *a += b);
            nn::outer_acc(&mut g.cls_w2.data, d.d_ff, dz, ffc);
            dff.fill(0.0);
            nn::matvec_t_acc(&p.cls_w2.data, d.d_ff, dz, &mut dff);
            for (k, v) in dff.iter_mut().enumerate() {
                *v *= gelu_grad(tr.ff_pre[cell * d.d_ff + k]);
            }
            g.cls_b1.data.iter_mut().zip(&dff).for_each(|(a, b)| *a += b);
            let qc = &tr.q[cell * d_q..(cell + 1) * d_q];
            nn::outer_acc(&mut g.cls_w1.data, d_q, &dff, qc);
            nn::matvec_t_acc(&p.cls_w1.data, d_q, &dff, &mut dq[cell * d_q..(cell + 1) * d_q]);
        }

        // Convolutions.
        for (k, v) in dq.iter_mut().enumerate() {
            let m = tr.q_mask.as_ref().map_or(1.0, |m| m[k]);
            *v *= m * gelu_grad(tr.conv_pre[k]);
        }
        let mut dc = vec![0.0; cells * d.d_c];
        let mut dout = vec![0.0; cells * d.d_c];
        for (l, &dil) in self.config.dilations.iter().enumerate() {
            for cell in 0..cells {
                dout[cell * d.d_c..(cell + 1) * d.d_c]
                    .copy_from_slice(&dq[cell * d_q + l * d.d_c..cell * d_q + (l + 1) * d.d_c]);
            }
            let (wr, br) = (l * d.d_c * 9..(l + 1) * d.d_c * 9, l * d.d_c..(l + 1) * d.d_c);
            nn::dilated_conv_backward(
                &tr.c,
                n,
                d.d_c,
                &p.conv_w.data[wr.clone()],
                dil,
                &dout,
                &mut g.conv_w.data[wr],
                &mut g.conv_b.data[br],
                &mut dc,
            );
        }

        // Reduction MLP and conditional layer norm.
        for (k, v) in dc.iter_mut().enumerate() {
            let m = tr.c_mask.as_ref().map_or(1.0, |m| m[k]);
            *v *= m * gelu_grad(tr.reduce_pre[k]);
        }
        let k_in = d.reduce_in();
        let mut dist_sum = vec![0.0; nn::DISTANCE_BUCKETS * d.d_c];
        let mut region_sum = vec![0.0; 2 * d.d_c];
        let mut dgamma = vec![0.0; n * d.d_h];
        let mut dlambda = vec![0.0; n * d.d_h];
        let mut dnorm = vec![0.0; n * d.d_h];
        let mut v = vec![0.0; d.d_h];
        let mut dv = vec![0.0; d.d_h];
        for i in 0..n {
            for j in 0..n {
                let cell = i * n + j;
                let dp = &dc[cell * d.d_c..(cell + 1) * d.d_c];
                let bk = nn::distance_bucket(i, j);
                let rg = nn::region(i, j);
                for c in 0..d.d_c {
                    g.reduce_b.data[c] += dp[c];
                    dist_sum[bk * d.d_c + c] += dp[c];
                    region_sum[rg * d.d_c + c] += dp[c];
                }
                for k in 0..d.d_h {
                    v[k] = tr.gamma[i * d.d_h + k] * tr.norm[j * d.d_h + k] + tr.lambda[i * d.d_h + k];
                }
                nn::outer_acc(&mut g.reduce_w.data, k_in, dp, &v);
                dv.fill(0.0);
                nn::matvec_t_acc(&p.reduce_w.data, k_in, dp, &mut dv);
                for k in 0..d.d_h {
                    dgamma[i * d.d_h + k] += dv[k] * tr.norm[j * d.d_h + k];
                    dlambda[i * d.d_h + k] += dv[k];
                    dnorm[j * d.d_h + k] += dv[k] * tr.gamma[i * d.d_h + k];
                }
            }
        }
        for (bk, emb) in p.distance_emb.data.chunks(d.d_ed).enumerate() {
            let sum = &dist_sum[bk * d.d_c..(bk + 1) * d.d_c];
            for c in 0..d.d_c {
                let row = c * k_in + d.d_h;
                for e in 0..d.d_ed {
                    g.reduce_w.data[row + e] += sum[c] * emb[e];
                    g.distance_emb.data[bk * d.d_ed + e] += sum[c] * p.reduce_w.data[row + e];
                }
            }
        }
        for (rg, emb) in p.region_emb.data.chunks(d.d_et).enumerate() {
            let sum = &region_sum[rg * d.d_c..(rg + 1) * d.d_c];
            for c in 0..d.d_c {
                let row = c * k_in + d.d_h + d.d_ed;
                for e in 0..d.d_et {
                    g.reduce_w.data[row + e] += sum[c] * emb[e];
                    g.region_emb.data[rg * d.d_et + e] += sum[c] * p.reduce_w.data[row + e];
                }
            }
        }
        for i in 0..n {
            let rng = i * d.d_h..(i + 1) * d.d_h;
            let hi = &tr.h[rng.clone()];
            nn::outer_acc(&mut g.gain_w.data, d.d_h, &dgamma[rng.clone()], hi);
            nn::outer_acc(&mut g.shift_w.data, d.d_h, &dlambda[rng.clone()], hi);
            g.gain_b
                .data
                .iter_mut()
                .zip(&dgamma[rng.clone()])
                .for_each(|(a, b)| *a += b);
            g.shift_b
                .data
                .iter_mut()
                .zip(&dlambda[rng.clone()])
                .for_each(|(a, b)| *a += b);
            let dhi = &mut dh[rng.clone()];
            nn::matvec_t_acc(&p.gain_w.data, d.d_h, &dgamma[rng.clone()], dhi);
            nn::matvec_t_acc(&p.shift_w.data, d.d_h, &dlambda[rng.clone()], dhi);
            nn::standardize_backward(
                &tr.norm[rng.clone()],
                tr.sigma[i],
                tr.clamped[i],
                &dnorm[rng.clone()],
                dhi,
            );
        }

        // Projection and recurrent layer.
        let w2 = 2 * d.rnn;
        let mut dfw = vec![0.0; n * d.rnn];
        let mut dbw = vec![0.0; n * d.rnn];
        for i in 0..n {
            let dhi = &dh[i * d.d_h..(i + 1) * d.d_h];
            g.proj_b.data.iter_mut().zip(dhi).for_each(|(a, b)| *a += b);
            nn::outer_acc(&mut g.proj_w.data, w2, dhi, &tr.r[i * w2..(i + 1) * w2]);
            let mut dr = vec![0.0; w2];
            nn::matvec_t_acc(&p.proj_w.data, w2, dhi, &mut dr);
            dfw[i * d.rnn..(i + 1) * d.rnn].copy_from_slice(&dr[..d.rnn]);
            dbw[i * d.rnn..(i + 1) * d.rnn].copy_from_slice(&dr[d.rnn..]);
        }
        let mut dx = vec![0.0; n * d.d_h];
        nn::lstm_backward(
            &p.lstm_fw_x.data,
            &p.lstm_fw_h.data,
            &tr.x,
            &tr.fw,
            n,
            d.rnn,
            false,
            &dfw,
            &mut g.lstm_fw_x.data,
            &mut g.lstm_fw_h.data,
            &mut g.lstm_fw_b.data,
            &mut dx,
        );
        nn::lstm_backward(
            &p.lstm_bw_x.data,
            &p.lstm_bw_h.data,
            &tr.x,
            &tr.bw,
            n,
            d.rnn,
            true,
            &dbw,
            &mut g.lstm_bw_x.data,
            &mut g.lstm_bw_h.data,
            &mut g.lstm_bw_b.data,
            &mut dx,
        );
        for (i, &id) in tr.ids.iter().enumerate() {
            for k in 0..d.d_h {
                let m = tr.emb_mask.as_ref().map_or(1.0, |m| m[i * d.d_h + k]);
                g.embedding.data[id * d.d_h + k] += dx[i * d.d_h + k] * m;
            }
        }
        g
    }

    /// Contextual token vectors `H`, row-major `n x d_h`.
    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<f64>> {
        let ids = self.token_ids(tokens)?;
        Ok(self.forward(&ids, None).h)
    }

    /// Evaluation-mode forward pass exposing the intermediate grids.
    pub fn inspect<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Inspection> {
        let ids = self.token_ids(tokens)?;
        let tr = self.forward(&ids, None);
        let t = self.num_tags();
        let mut probs = vec![0.0; tr.logits.len()];
        for (z, p) in tr.logits.chunks(t).zip(probs.chunks_mut(t)) {
            nn::softmax(z, p);
        }
        Ok(Inspection {
            n: tr.n,
            tags: t,
            clamped: tr.clamped.iter().filter(|c| **c).count(),
            h: tr.h,
            gain: tr.gamma,
            shift: tr.lambda,
            normalized: tr.norm,
            grid: tr.c,
            conv: tr.q,
            subject: tr.s,
            object: tr.o,
            mlp_logits: tr.mlp_logits,
            biaffine_logits: tr.biaffine_logits,
            probs,
        })
    }

    /// Per-cell tag distributions, `n x n x tags`.
    pub fn probabilities<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<f64>> {
        Ok(self.inspect(tokens)?.probs)
    }

    fn check_gold(&self, n: usize, gold: &TagGrid) -> Result<()> {
        if gold.n != n {
            return Err(Error::Consistency(format!(
                "gold grid is {0}x{0} for {n} tokens",
                gold.n
            )));
        }
        let t = self.num_tags();
        if let Some(&bad) = gold.cells.iter().find(|&&c| c as usize >= t) {
            return Err(Error::TagOutOfRange {
                tag: bad as usize,
                num_tags: t,
            });
        }
        Ok(())
    }

    /// Mean (optionally NONE-weighted) cross-entropy over all `n^2` cells,
    /// and the gradient of the logits.
    fn cell_loss(&self, logits: &[f64], gold: &TagGrid, want_grad: bool) -> (f64, Vec<f64>) {
        let t = self.num_tags();
        let cells = (gold.n * gold.n) as f64;
        let mut loss = 0.0;
        let mut dz = if want_grad { vec![0.0; logits.len()] } else { Vec::new() };
        for (k, z) in logits.chunks(t).enumerate() {
            let y = gold.cells[k] as usize;
            let w = if y == 0 { self.config.none_weight } else { 1.0 };
            let lse = nn::log_sum_exp(z);
            loss += w * (lse - z[y]);
            if want_grad {
                let g = &mut dz[k * t..(k + 1) * t];
                for (c, gv) in g.iter_mut().enumerate() {
                    *gv = w * (z[c] - lse).exp() / cells;
                }
                g[y] -= w / cells;
            }
        }
        (loss / cells, dz)
    }

    /// Evaluation-mode loss against a gold grid.
    pub fn loss<S: AsRef<str>>(&self, tokens: &[S], gold: &TagGrid) -> Result<f64> {
        let ids = self.token_ids(tokens)?;
        self.check_gold(ids.len(), gold)?;
        let tr = self.forward(&ids, None);
        Ok(self.cell_loss(&tr.logits, gold, false).0)
    }

    /// Loss and parameter gradients. Passing an RNG enables dropout.
    pub fn loss_and_grad<S: AsRef<str>>(
        &self,
        tokens: &[S],
        gold: &TagGrid,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Params)> {
        let ids = self.token_ids(tokens)?;
        self.check_gold(ids.len(), gold)?;
        let tr = self.forward(&ids, rng);
        let (loss, dz) = self.cell_loss(&tr.logits, gold, true);
        Ok((loss, self.backward(&tr, &dz)))
    }

    /// Argmax tag per cell, then out-of-triangle tags reset to NONE.
    pub fn predict_grid<S: AsRef<str>>(&self, tokens: &[S]) -> Result<(TagGrid, usize)> {
        let ids = self.token_ids(tokens)?;
        let n = ids.len();
        let tr = self.forward(&ids, None);
        let t = self.num_tags();
        let mut grid = TagGrid::empty(n);
        for (k, z) in tr.logits.chunks(t).enumerate() {
            // first maximum wins, so ties resolve deterministically
            let mut best = 0;
            for c in 1..t {
                if z[c] > z[best] {
                    best = c;
                }
            }
            grid.cells[k] = best as u16;
        }
        let repaired = grid.repair(&self.scheme);
        Ok((grid, repaired))
    }

    pub fn predict<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Prediction> {
        let (grid, repaired) = self.predict_grid(tokens)?;
        let decoded = decode_with(
            &grid,
            &self.scheme,
            DecodeOptions {
                path_cap: DEFAULT_PATH_CAP,
                on_degenerate: OnDegenerate::Skip,
            },
        )?;
        Ok(Prediction {
            grid,
            repaired,
            entities: decoded.entities,
            degenerate_cells: decoded.diagnostics.degenerate_cells,
        })
    }
}

/// Serialized model: config, tag scheme, vocabulary and every tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub scheme: TagScheme,
    pub vocab: Vocab,
    pub tensors: std::collections::BTreeMap<String, Tensor>,
}

pub const CHECKPOINT_FORMAT: &str = "grid-tagger";
pub const CHECKPOINT_VERSION: u32 = 1;

impl GridModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            scheme: self.scheme.clone(),
            vocab: self.vocab.clone(),
            tensors: self
                .params
                .tensors()
                .into_iter()
                .map(|(name, _, t)| (name.to_string(), t.clone()))
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        ck.config.validate()?;
        let params =
            Params::from_named(ck.tensors).ok_or_else(|| Error::Checkpoint("missing or unexpected tensors".into()))?;
        let model = Self {
            config: ck.config,
            scheme: ck.scheme,
            vocab: ck.vocab,
            params,
        };
        model.check_shapes()?;
        if !model.params.is_finite() {
            return Err(Error::Checkpoint("non-finite parameter values".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, &self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let ck: Checkpoint = serde_json::from_reader(file).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::encode;

    fn words(n: usize) -> Vec<String> {
        (0..n).map(|k| format!("w{}", k % 11)).collect()
    }

    fn model_for(tokens: &[String], seed: u64) -> GridModel {
        let config = ModelConfig {
            seed,
            ..ModelConfig::toy()
        };
        let mut m = GridModel::new(config, TagScheme::base(["ADR", "Drug"]), Vocab::build([tokens])).unwrap();
        // leave the zero-initialized conditioning and bias tensors non-trivial
        let mut rng = rng_for(seed, "test-jitter");
        for (_, _, t) in m.params.tensors_mut() {
            for v in &mut t.data {
                *v += rng.gen_range(-0.1..0.1);
            }
        }
        m
    }

    #[test]
    fn cell_distributions_sum_to_one() {
        let toks = words(12);
        let ins = model_for(&toks, 1).inspect(&toks).unwrap();
        assert_eq!(ins.probs.len(), 12 * 12 * ins.tags);
        for p in ins.probs.chunks(ins.tags) {
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            assert!(p.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn normalized_rows_have_zero_mean_and_unit_std() {
        let toks = words(9);
        let m = model_for(&toks, 2);
        let ins = m.inspect(&toks).unwrap();
        assert_eq!(ins.clamped, 0);
        for row in ins.normalized.chunks(m.config.d_h) {
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            let std = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / row.len() as f64).sqrt();
            assert!(mean.abs() <= 1e-5 && (std - 1.0).abs() <= 1e-5, "{mean} {std}");
        }
    }

    #[test]
    fn reduced_grid_matches_direct_computation() {
        let toks = words(7);
        let m = model_for(&toks, 3);
        let ins = m.inspect(&toks).unwrap();
        let (n, dh, dc) = (ins.n, m.config.d_h, m.config.d_c);
        let (de, dt) = (m.config.d_distance, m.config.d_region);
        let p = &m.params;
        for i in 0..n {
            for j in 0..n {
                let mut input: Vec<f64> = (0..dh)
                    .map(|k| ins.gain[i * dh + k] * ins.normalized[j * dh + k] + ins.shift[i * dh + k])
                    .collect();
                let b = nn::distance_bucket(i, j);
                input.extend_from_slice(&p.distance_emb.data[b * de..(b + 1) * de]);
                let r = nn::region(i, j);
                input.extend_from_slice(&p.region_emb.data[r * dt..(r + 1) * dt]);
                for c in 0..dc {
                    let w = &p.reduce_w.data[c * input.len()..(c + 1) * input.len()];
                    let expect = gelu(nn::dot(w, &input) + p.reduce_b.data[c]);
                    assert!((ins.grid[(i * n + j) * dc + c] - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gain_and_shift_are_affine_in_the_condition_token() {
        let toks = words(5);
        let m = model_for(&toks, 4);
        let ins = m.inspect(&toks).unwrap();
        let dh = m.config.d_h;
        let p = &m.params;
        let mut gain = vec![0.0; dh];
        nn::affine(&p.gain_w.data, &p.gain_b.data, &ins.h[2 * dh..3 * dh], &mut gain);
        for (a, b) in gain.iter().zip(&ins.gain[2 * dh..3 * dh]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn biaffine_logits_match_naive_scorer_and_vanish_with_zero_weights() {
        let toks = words(6);
        let mut m = model_for(&toks, 5);
        let ins = m.inspect(&toks).unwrap();
        let (n, t, db) = (ins.n, ins.tags, m.config.d_biaffine);
        let p = &m.params;
        for i in 0..n {
            for j in 0..n {
                let expect = nn::biaffine(
                    &ins.subject[i * db..(i + 1) * db],
                    &ins.object[j * db..(j + 1) * db],
                    &p.biaffine_u.data,
                    &p.biaffine_w.data,
                    &p.biaffine_b.data,
                );
                for (a, b) in expect
                    .iter()
                    .zip(&ins.biaffine_logits[(i * n + j) * t..(i * n + j + 1) * t])
                {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
        m.params.biaffine_u.data.fill(0.0);
        m.params.biaffine_w.data.fill(0.0);
        m.params.biaffine_b.data.fill(0.0);
        let ins = m.inspect(&toks).unwrap();
        assert!(ins.biaffine_logits.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_logits_give_log_tag_count_loss() {
        let toks = words(4);
        let mut m = model_for(&toks, 6);
        for t in [
            &mut m.params.cls_w2,
            &mut m.params.cls_b2,
            &mut m.params.biaffine_u,
            &mut m.params.biaffine_w,
            &mut m.params.biaffine_b,
        ] {
            t.data.fill(0.0);
        }
        let gold = encode(&[Entity::from_indices("ADR", &[1, 3]).unwrap()], 4, &m.scheme).unwrap();
        let loss = m.loss(&toks, &gold).unwrap();
        assert!((loss - (m.num_tags() as f64).ln()).abs() < 1e-12);
        // a dominant NONE logit drives the loss of an empty gold grid to ~0
        m.params.cls_b2.data[0] = 40.0;
        assert!(m.loss(&toks, &TagGrid::empty(4)).unwrap() < 1e-12);
    }

    #[test]
    fn initialization_is_seed_deterministic() {
        let toks = words(8);
        let scheme = TagScheme::base(["ADR"]);
        let vocab = Vocab::build([toks.as_slice()]);
        let a = GridModel::new(ModelConfig::toy(), scheme.clone(), vocab.clone()).unwrap();
        let b = GridModel::new(ModelConfig::toy(), scheme.clone(), vocab.clone()).unwrap();
        assert_eq!(a.params.embedding.data, b.params.embedding.data);
        assert_eq!(a.probabilities(&toks).unwrap(), b.probabilities(&toks).unwrap());
        let c = GridModel::new(
            ModelConfig {
                seed: 9,
                ..ModelConfig::toy()
            },
            scheme,
            vocab,
        )
        .unwrap();
        assert_ne!(a.params.embedding.data, c.params.embedding.data);
        // documented initial values of the conditioning layer
        assert!(a.params.gain_w.data.iter().all(|v| *v == 0.0));
        assert!(a.params.gain_b.data.iter().all(|v| *v == 1.0));
        assert!(a.params.shift_b.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn recurrent_context_reaches_distant_tokens() {
        let mut toks = words(10);
        let m = model_for(&toks, 7);
        let before = m.encode_tokens(&toks).unwrap();
        toks.swap(6, 9);
        let after = m.encode_tokens(&toks).unwrap();
        let dh = m.config.d_h;
        assert!(before[..dh].iter().zip(&after[..dh]).any(|(a, b)| (a - b).abs() > 1e-9));
    }

    #[test]
    fn long_sample_stays_finite() {
        let toks = words(256);
        let m = model_for(&toks, 8);
        let pred = m.predict(&toks).unwrap();
        assert_eq!(pred.grid.n, 256);
        let probs = m.probabilities(&toks[..64]).unwrap();
        assert!(probs.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let toks = words(3);
        let m = model_for(&toks, 9);
        let empty: [&str; 0] = [];
        assert!(matches!(m.predict(&empty), Err(Error::EmptySample(_))));
        let mut gold = TagGrid::empty(3);
        gold.cells[1] = m.num_tags() as u16;
        assert!(matches!(m.loss(&toks, &gold), Err(Error::TagOutOfRange { .. })));
        assert!(m.loss(&toks, &TagGrid::empty(4)).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let toks = words(6);
        let m = model_for(&toks, 10);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        let back = GridModel::load(&path).unwrap();
        assert_eq!(back.probabilities(&toks).unwrap(), m.probabilities(&toks).unwrap());
        let mut ck = m.to_checkpoint();
        ck.tensors.get_mut("reduce_b").unwrap().shape = vec![1];
        assert!(GridModel::from_checkpoint(ck).is_err());
        let mut ck = m.to_checkpoint();
        ck.tensors.remove("conv_w");
        assert!(GridModel::from_checkpoint(ck).is_err());
        let mut ck = m.to_checkpoint();
        ck.tensors.get_mut("cls_b1").unwrap().data[0] = f64::NAN;
        assert!(GridModel::from_checkpoint(ck).is_err());
    }
}
