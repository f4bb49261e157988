//! Brute-force references for the numeric kernels.

use yamlsmith::quant::{HeadWeights, Matrix, MemoryContext};

pub fn at(m: &Matrix, r: usize, c: usize) -> f64 {
    f64::from(m.get(r, c))
}

/// Textbook attention with exp/sum spelled out, no max-subtraction.
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix, tau: f64) -> Vec<Vec<f64>> {
    let d_k = q.cols() as f64;
    (0..q.rows())
        .map(|i| {
            let logits: Vec<f64> = (0..k.rows())
                .map(|j| (0..q.cols()).map(|c| at(q, i, c) * at(k, j, c)).sum::<f64>() / (tau * d_k.sqrt()))
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            (0..v.cols())
                .map(|c| (0..k.rows()).map(|j| logits[j].exp() / z * at(v, j, c)).sum())
                .collect()
        })
        .collect()
}

pub fn project(x: &Matrix, w: &Matrix) -> Matrix {
    let mut out = vec![0.0f64; x.rows() * w.cols()];
    for i in 0..x.rows() {
        for j in 0..w.cols() {
            for p in 0..x.cols() {
                out[i * w.cols() + j] += at(x, i, p) * at(w, p, j);
            }
        }
    }
    Matrix::from_f64(x.rows(), w.cols(), &out).unwrap()
}

/// Per-head loop, concatenation, then the output projection.
pub fn multi_head(q: &Matrix, k: &Matrix, v: &Matrix, weights: &HeadWeights, tau: f64) -> Vec<Vec<f64>> {
    let d_v = weights.w_v[0].cols();
    let width = d_v * weights.w_v.len();
    let mut concat = vec![vec![0.0f64; width]; q.rows()];
    for h in 0..weights.w_q.len() {
        let (qh, kh, vh) = (project(q, &weights.w_q[h]), project(k, &weights.w_k[h]), project(v, &weights.w_v[h]));
        for (r, row) in attention(&qh, &kh, &vh, tau).into_iter().enumerate() {
            for (c, x) in row.into_iter().enumerate() {
                concat[r][h * d_v + c] = x;
            }
        }
    }
    let w_o = &weights.w_o;
    concat
        .iter()
        .map(|row| (0..w_o.cols()).map(|j| (0..width).map(|p| row[p] * at(w_o, p, j)).sum()).collect())
        .collect()
}

/// Softmax over scores/sqrt(d_h), each value row shifted by `table[clip(t - c) + m]`.
pub fn memory_read(ctx: &MemoryContext, d_h: usize, table: &[f64], m: i64) -> Vec<f64> {
    let exps: Vec<f64> = ctx.scores.iter().map(|s| (s / (d_h as f64).sqrt()).exp()).collect();
    let z: f64 = exps.iter().sum();
    let mut y = vec![0.0; ctx.values.cols()];
    for (i, &c) in ctx.context.iter().enumerate() {
        let p = table[((ctx.t as i64 - c as i64).clamp(-m, m) + m) as usize];
        for (d, e) in y.iter_mut().enumerate() {
            *e += exps[i] / z * (at(&ctx.values, c, d) + p);
        }
    }
    y
}

pub fn max_gap(actual: &Matrix, expected: &[Vec<f64>]) -> f64 {
    let mut gap = 0.0f64;
    for (r, row) in expected.iter().enumerate() {
        for (c, &e) in row.iter().enumerate() {
            gap = gap.max((at(actual, r, c) - e).abs());
        }
    }
    gap
}
