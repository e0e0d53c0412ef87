//! Numeric building blocks shared by the forward and backward passes.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Exact GELU, `x * Phi(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out = W x + b` with `W` of shape `[out.len(), x.len()]`.
pub fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = b[r] + dot(row, x);
    }
}

/// `out += W x` where `W` has `stride` columns of which the first `x.len()` are used.
pub fn matvec_acc(w: &[f64], stride: usize, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o += dot(&w[r * stride..r * stride + x.len()], x);
    }
}

/// `dx += W^T dy` for `W` with `stride` columns, of which `dx.len()` are used.
pub fn matvec_t_acc(w: &[f64], stride: usize, dy: &[f64], dx: &mut [f64]) {
    for (r, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = &w[r * stride..r * stride + dx.len()];
        for (d, &wv) in dx.iter_mut().zip(row) {
            *d += g * wv;
        }
    }
}

/// `dW += dy x^T` for `dW` with `stride` columns, of which `x.len()` are used.
pub fn outer_acc(dw: &mut [f64], stride: usize, dy: &[f64], x: &[f64]) {
    for (r, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = &mut dw[r * stride..r * stride + x.len()];
        for (d, &xv) in row.iter_mut().zip(x) {
            *d += g * xv;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Log-sum-exp of a row, stable against overflow.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64], out: &mut [f64]) {
    let lse = log_sum_exp(z);
    for (o, v) in out.iter_mut().zip(z) {
        *o = (v - lse).exp();
    }
}

pub const DISTANCE_BUCKETS: usize = 17;

/// Signed log-scale bucket of `j - i`:
/// `0, ±1, ±2, ±3, ±4..7, ±8..15, ±16..31, ±32..63, ±64..`.
pub fn distance_bucket(i: usize, j: usize) -> usize {
    let d = j as i64 - i as i64;
    let m = d.unsigned_abs();
    let class = match m {
        0..=3 => m as usize,
        _ => (63 - m.leading_zeros() as usize + 2).min(8),
    };
    if d < 0 {
        8 - class
    } else {
        8 + class
    }
}

/// Region row: 0 above the diagonal, 1 on or below it.
pub fn region(i: usize, j: usize) -> usize {
    usize::from(i >= j)
}

/// Standardizes `h` over its elements with the population deviation.
/// Returns the normalized vector, the deviation used and whether it was
/// clamped to `eps`.
pub fn standardize(h: &[f64], eps: f64) -> (Vec<f64>, f64, bool) {
    let d = h.len() as f64;
    let mu = h.iter().sum::<f64>() / d;
    let var = h.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d;
    let sd = var.sqrt();
    let (sigma, clamped) = if sd < eps { (eps, true) } else { (sd, false) };
    (h.iter().map(|v| (v - mu) / sigma).collect(), sigma, clamped)
}

/// Backward of [`standardize`]: adds `dL/dh` given `dL/dn`.
pub fn standardize_backward(n: &[f64], sigma: f64, clamped: bool, dn: &[f64], dh: &mut [f64]) {
    let d = n.len() as f64;
    let mean_dn = dn.iter().sum::<f64>() / d;
    let mean_dn_n = if clamped { 0.0 } else { dot(dn, n) / d };
    for k in 0..n.len() {
        dh[k] += (dn[k] - mean_dn - n[k] * mean_dn_n) / sigma;
    }
}

/// Conditional layer norm of one cell: `gain ⊙ standardize(h_j) + shift`
/// with gain and shift generated from `h_i` by affine maps.
pub fn cln(
    gain_w: &[f64],
    gain_b: &[f64],
    shift_w: &[f64],
    shift_b: &[f64],
    h_i: &[f64],
    h_j: &[f64],
    eps: f64,
) -> Vec<f64> {
    let d = h_i.len();
    let mut g = vec![0.0; d];
    let mut s = vec![0.0; d];
    affine(gain_w, gain_b, h_i, &mut g);
    affine(shift_w, shift_b, h_i, &mut s);
    let (n, _, _) = standardize(h_j, eps);
    (0..d).map(|k| g[k] * n[k] + s[k]).collect()
}

/// Depthwise dilated 3x3 convolution with zero padding over an `n x n`
/// grid of `channels`-vectors. `w` is `[channels, 9]` (row-major kernel),
/// `b` is `[channels]`. Returns the pre-activation output.
pub fn dilated_conv(x: &[f64], n: usize, channels: usize, w: &[f64], b: &[f64], dilation: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n * channels];
    // kernel taps transposed to [9][channels] for contiguous access
    let mut taps = vec![0.0; 9 * channels];
    for c in 0..channels {
        for k in 0..9 {
            taps[k * channels + c] = w[c * 9 + k];
        }
    }
    let d = dilation as isize;
    for i in 0..n {
        for j in 0..n {
            let o = &mut out[(i * n + j) * channels..(i * n + j + 1) * channels];
            o.copy_from_slice(b);
            for (k, tap) in taps.chunks_exact(channels).enumerate() {
                let ii = i as isize + (k as isize / 3 - 1) * d;
                let jj = j as isize + (k as isize % 3 - 1) * d;
                if ii < 0 || jj < 0 || ii >= n as isize || jj >= n as isize {
                    continue;
                }
                let src = (ii as usize * n + jj as usize) * channels;
                for ((ov, &tv), &xv) in o.iter_mut().zip(tap).zip(&x[src..src + channels]) {
                    *ov += tv * xv;
                }
            }
        }
    }
    out
}

/// Backward of [`dilated_conv`] given the gradient of its output.
#[allow(clippy::too_many_arguments)]
pub fn dilated_conv_backward(
    x: &[f64],
    n: usize,
    channels: usize,
    w: &[f64],
    dilation: usize,
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: &mut [f64],
) {
    let d = dilation as isize;
    for i in 0..n {
        for j in 0..n {
            let g = &dout[(i * n + j) * channels..(i * n + j + 1) * channels];
            for (bv, gv) in db.iter_mut().zip(g) {
                *bv += gv;
            }
            for k in 0..9 {
                let ii = i as isize + (k as isize / 3 - 1) * d;
                let jj = j as isize + (k as isize % 3 - 1) * d;
                if ii < 0 || jj < 0 || ii >= n as isize || jj >= n as isize {
                    continue;
                }
                let src = (ii as usize * n + jj as usize) * channels;
                for c in 0..channels {
                    dw[c * 9 + k] += g[c] * x[src + c];
                    dx[src + c] += w[c * 9 + k] * g[c];
                }
            }
        }
    }
}

/// `s^T U_t o + W_t [s; o] + b_t` for every tag `t`, computed directly.
/// `u` is `[tags, d, d]`, `w` is `[tags, 2d]`.
pub fn biaffine(s: &[f64], o: &[f64], u: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let d = s.len();
    (0..b.len())
        .map(|t| {
            let mut v = b[t];
            for a in 0..d {
                for c in 0..d {
                    v += s[a] * u[(t * d + a) * d + c] * o[c];
                }
            }
            v + dot(&w[t * 2 * d..t * 2 * d + d], s) + dot(&w[t * 2 * d + d..(t + 1) * 2 * d], o)
        })
        .collect()
}

/// Per-step activations of one direction of the recurrent layer, indexed
/// by token position.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    /// Activated gates `[i, f, g, o]`, `n x 4h`.
    pub gates: Vec<f64>,
    pub cell: Vec<f64>,
    pub cell_tanh: Vec<f64>,
    pub hidden: Vec<f64>,
}

fn step_order(n: usize, reverse: bool) -> Vec<usize> {
    if reverse {
        (0..n).rev().collect()
    } else {
        (0..n).collect()
    }
}

/// Runs one LSTM direction over `x` (`n x d_in`). Weights: `wx [4h, d_in]`,
/// `wh [4h, h]`, `b [4h]`, gate order `i, f, g, o`.
pub fn lstm_forward(wx: &[f64], wh: &[f64], b: &[f64], x: &[f64], n: usize, hidden: usize, reverse: bool) -> LstmTrace {
    let d_in = if n == 0 { 0 } else { x.len() / n };
    let h4 = 4 * hidden;
    let mut tr = LstmTrace {
        gates: vec![0.0; n * h4],
        cell: vec![0.0; n * hidden],
        cell_tanh: vec![0.0; n * hidden],
        hidden: vec![0.0; n * hidden],
    };
    let mut prev: Option<usize> = None;
    let mut z = vec![0.0; h4];
    for p in step_order(n, reverse) {
        affine(wx, b, &x[p * d_in..(p + 1) * d_in], &mut z);
        if let Some(q) = prev {
            let hp = tr.hidden[q * hidden..(q + 1) * hidden].to_vec();
            matvec_acc(wh, hidden, &hp, &mut z);
        }
        for k in 0..hidden {
            let ig = sigmoid(z[k]);
            let fg = sigmoid(z[hidden + k]);
            let gg = z[2 * hidden + k].tanh();
            let og = sigmoid(z[3 * hidden + k]);
            let c_prev = prev.map_or(0.0, |q| tr.cell[q * hidden + k]);
            let c = fg * c_prev + ig * gg;
            let tc = c.tanh();
            let g = &mut tr.gates[p * h4..(p + 1) * h4];
            g[k] = ig;
            g[hidden + k] = fg;
            g[2 * hidden + k] = gg;
            g[3 * hidden + k] = og;
            tr.cell[p * hidden + k] = c;
            tr.cell_tanh[p * hidden + k] = tc;
            tr.hidden[p * hidden + k] = og * tc;
        }
        prev = Some(p);
    }
    tr
}

/// Backpropagation through time for [`lstm_forward`]. `dh_out` is the
/// gradient flowing into each position's hidden output.
#[allow(clippy::too_many_arguments)]
pub fn lstm_backward(
    wx: &[f64],
    wh: &[f64],
    x: &[f64],
    tr: &LstmTrace,
    n: usize,
    hidden: usize,
    reverse: bool,
    dh_out: &[f64],
    dwx: &mut [f64],
    dwh: &mut [f64],
    db: &mut [f64],
    dx: &mut [f64],
) {
    let d_in = if n == 0 { 0 } else { x.len() / n };
    let h4 = 4 * hidden;
    let order = step_order(n, reverse);
    let mut dh_rec = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    let mut dz = vec![0.0; h4];
    for (s, &p) in order.iter().enumerate().rev() {
        let prev = s.checked_sub(1).map(|q| order[q]);
        let g = &tr.gates[p * h4..(p + 1) * h4];
        for k in 0..hidden {
            let (ig, fg, gg, og) = (g[k], g[hidden + k], g[2 * hidden + k], g[3 * hidden + k]);
            let tc = tr.cell_tanh[p * hidden + k];
            let dh = dh_out[p * hidden + k] + dh_rec[k];
            let dc = dh * og * (1.0 - tc * tc) + dc_next[k];
            let c_prev = prev.map_or(0.0, |q| tr.cell[q * hidden + k]);
            dz[k] = dc * gg * ig * (1.0 - ig);
            dz[hidden + k] = dc * c_prev * fg * (1.0 - fg);
            dz[2 * hidden + k] = dc * ig * (1.0 - gg * gg);
            dz[3 * hidden + k] = dh * tc * og * (1.0 - og);
            dc_next[k] = dc * fg;
        }
        for (bv, zv) in db.iter_mut().zip(&dz) {
            *bv += zv;
        }
        let xp = &x[p * d_in..(p + 1) * d_in];
        outer_acc(dwx, d_in, &dz, xp);
        matvec_t_acc(wx, d_in, &dz, &mut dx[p * d_in..(p + 1) * d_in]);
        dh_rec.fill(0.0);
        if let Some(q) = prev {
            outer_acc(dwh, hidden, &dz, &tr.hidden[q * hidden..(q + 1) * hidden]);
            matvec_t_acc(wh, hidden, &dz, &mut dh_rec);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_matches_reference_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert!((gelu(-1.0) + 0.158_655_253_931_457_05).abs() < 1e-12);
        let h = 1e-5;
        for x in [-2.0, -0.3, 0.0, 0.7, 3.0] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn distance_buckets_are_signed_log_scale() {
        let b = |d: i64| {
            let (i, j) = if d >= 0 { (0, d as usize) } else { ((-d) as usize, 0) };
            distance_bucket(i, j)
        };
        assert_eq!(b(0), 8);
        assert_eq!([b(1), b(2), b(3)], [9, 10, 11]);
        assert_eq!(
            [b(4), b(7), b(8), b(15), b(16), b(31), b(32), b(63), b(64), b(500)],
            [12, 12, 13, 13, 14, 14, 15, 15, 16, 16]
        );
        assert_eq!([b(-1), b(-4), b(-64), b(-1000)], [7, 4, 0, 0]);
        // equal distances share a row
        assert_eq!(distance_bucket(1, 4), distance_bucket(2, 5));
    }

    #[test]
    fn regions_put_diagonal_below() {
        assert_eq!(region(0, 1), 0);
        assert_eq!(region(2, 2), 1);
        assert_eq!(region(3, 1), 1);
    }

    #[test]
    fn standardized_core_has_zero_mean_unit_std() {
        let h = [0.3, -1.2, 4.0, 2.5, 0.0, -0.7];
        let (n, _, clamped) = standardize(&h, 1e-6);
        assert!(!clamped);
        let mean = n.iter().sum::<f64>() / 6.0;
        let sd = (n.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0).sqrt();
        assert!(mean.abs() <= 1e-5 && (sd - 1.0).abs() <= 1e-5);
        let doubled: Vec<f64> = h.iter().map(|v| 2.0 * v).collect();
        let (n2, _, _) = standardize(&doubled, 1e-6);
        for (a, b) in n.iter().zip(&n2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_input_clamps_to_shift() {
        let d = 3;
        let gain_w = vec![0.5; d * d];
        let shift_w = vec![0.25; d * d];
        let (gain_b, shift_b) = (vec![1.0; d], vec![0.1, 0.2, 0.3]);
        let h_i = [1.0, 2.0, 3.0];
        let v = cln(&gain_w, &gain_b, &shift_w, &shift_b, &h_i, &[4.0; 3], 1e-6);
        // shift = 0.25 * 6 + b
        for (k, got) in v.iter().enumerate() {
            assert!((got - (1.5 + shift_b[k])).abs() < 1e-12);
        }
        let (_, sigma, clamped) = standardize(&[4.0; 3], 1e-6);
        assert!(clamped && sigma == 1e-6);
    }

    #[test]
    fn standardize_backward_matches_finite_differences() {
        let h = [0.3, -1.2, 4.0, 2.5];
        let dn = [0.7, -0.1, 0.4, 1.3];
        let (n, sigma, clamped) = standardize(&h, 1e-6);
        let mut dh = vec![0.0; 4];
        standardize_backward(&n, sigma, clamped, &dn, &mut dh);
        let f = |h: &[f64]| dot(&standardize(h, 1e-6).0, &dn);
        for k in 0..4 {
            let mut hp = h;
            let mut hm = h;
            hp[k] += 1e-6;
            hm[k] -= 1e-6;
            assert!(((f(&hp) - f(&hm)) / 2e-6 - dh[k]).abs() < 1e-7);
        }
    }

    #[test]
    fn dilated_impulse_matches_unrolled_convolution() {
        // One channel, impulse at the centre of a 5x5 grid, dilation 2.
        let n = 5;
        let mut x = vec![0.0; n * n];
        x[2 * n + 2] = 1.0;
        let w: Vec<f64> = (1..=9).map(f64::from).collect();
        let out = dilated_conv(&x, n, 1, &w, &[0.5], 2);
        // Hand-unrolled: out[i][j] = b + sum_{a,c} w[a][c] x[i + 2(a-1)][j + 2(c-1)]
        let mut expect = vec![0.5; n * n];
        for i in 0..n as isize {
            for j in 0..n as isize {
                for a in 0..3isize {
                    for c in 0..3isize {
                        let (ii, jj) = (i + 2 * (a - 1), j + 2 * (c - 1));
                        if (0..n as isize).contains(&ii) && (0..n as isize).contains(&jj) {
                            expect[(i * n as isize + j) as usize] +=
                                w[(a * 3 + c) as usize] * x[(ii * n as isize + jj) as usize];
                        }
                    }
                }
            }
        }
        assert_eq!(out, expect);
        // the impulse lands mirrored: cell (0,0) sees the tap at (2,2) = w[8]
        assert_eq!(out[0], 0.5 + 9.0);
        assert_eq!(out[2 * n + 2], 0.5 + 5.0);
        assert_eq!(out[n + 1], 0.5);
    }

    #[test]
    fn single_cell_grid_sees_only_its_centre_tap() {
        let out = dilated_conv(&[2.0], 1, 1, &[1.0; 9], &[0.0], 3);
        assert_eq!(out, [2.0]);
    }

    #[test]
    fn biaffine_hand_computed() {
        let s = [1.0, 2.0];
        let o = [3.0, -1.0];
        let u = [1.0, 0.0, 0.5, 2.0];
        let w = [0.1, 0.2, 0.3, 0.4];
        // s^T U o = [1,2] . [3, 0; 1.5, -2] = 3 + 2*(1.5 - 2) = 2
        // W [s; o] = 0.1 + 0.4 + 0.9 - 0.4 = 1.0
        let y = biaffine(&s, &o, &u, &w, &[0.5]);
        assert!((y[0] - 3.5).abs() < 1e-12);
    }

    #[test]
    fn softmax_normalizes() {
        let mut p = [0.0; 3];
        softmax(&[1000.0, 0.0, -1000.0], &mut p);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        softmax(&[0.0; 3], &mut p);
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }
}
