use serde::{Deserialize, Serialize};

use super::matrix::matmul_f64;
use super::{Matrix, QuantError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    /// Temperature dividing the logits alongside `sqrt(d_k)`.
    pub tau: f64,
    pub d_k: usize,
    pub d_v: usize,
    /// Per-head dimension used by the neural-memory read.
    pub d_h: usize,
    pub heads: usize,
}

impl AttentionParams {
    /// Single-head parameters with `tau = 1` and `d_h = d_k`.
    pub fn new(d_k: usize, d_v: usize) -> Self {
        AttentionParams { tau: 1.0, d_k, d_v, d_h: d_k, heads: 1 }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_heads(mut self, heads: usize) -> Self {
        self.heads = heads;
        self
    }

    pub fn validate(&self) -> Result<(), QuantError> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(QuantError::Params(format!("tau must be positive, got {}", self.tau)));
        }
        if self.d_k == 0 || self.d_v == 0 || self.d_h == 0 || self.heads == 0 {
            return Err(QuantError::Params("dimensions and head count must be positive".into()));
        }
        Ok(())
    }
}

/// Per-head projections and the output projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadWeights {
    pub w_q: Vec<Matrix>,
    pub w_k: Vec<Matrix>,
    pub w_v: Vec<Matrix>,
    pub w_o: Matrix,
}

impl HeadWeights {
    /// Seeded uniform `[-1, 1)` weights of the shapes `params` implies.
    pub fn random(d_model: usize, params: &AttentionParams, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |r, c| Matrix::random_with(r, c, -1.0, 1.0, &mut rng);
        let w_q = (0..params.heads).map(|_| draw(d_model, params.d_k)).collect();
        let w_k = (0..params.heads).map(|_| draw(d_model, params.d_k)).collect();
        let w_v = (0..params.heads).map(|_| draw(d_model, params.d_v)).collect();
        let w_o = draw(params.heads * params.d_v, d_model);
        HeadWeights { w_q, w_k, w_v, w_o }
    }

    /// One head whose projections and output are identities.
    pub fn identity(d_model: usize) -> Self {
        let i = Matrix::identity(d_model);
        HeadWeights { w_q: vec![i.clone()], w_k: vec![i.clone()], w_v: vec![i.clone()], w_o: i }
    }

    pub fn validate(&self, d_model: usize, params: &AttentionParams) -> Result<(), QuantError> {
        let h = params.heads;
        if self.w_q.len() != h || self.w_k.len() != h || self.w_v.len() != h {
            return Err(QuantError::Shape(format!("expected {h} projection matrices per role")));
        }
        let expect = |m: &Matrix, shape: (usize, usize), what: &str| {
            if m.shape() == shape {
                Ok(())
            } else {
                Err(QuantError::Shape(format!("{what} is {:?}, expected {shape:?}", m.shape())))
            }
        };
        for i in 0..h {
            expect(&self.w_q[i], (d_model, params.d_k), "W_Q")?;
            expect(&self.w_k[i], (d_model, params.d_k), "W_K")?;
            expect(&self.w_v[i], (d_model, params.d_v), "W_V")?;
        }
        expect(&self.w_o, (h * params.d_v, d_model), "W_O")
    }
}

/// Numerically stable softmax of one row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn check_qkv(q: &Matrix, k: &Matrix, v: &Matrix, params: &AttentionParams) -> Result<(), QuantError> {
    params.validate()?;
    if q.cols() != params.d_k || k.cols() != params.d_k {
        return Err(QuantError::Shape(format!(
            "Q has {} and K has {} columns, expected d_k = {}",
            q.cols(),
            k.cols(),
            params.d_k
        )));
    }
    if k.rows() != v.rows() {
        return Err(QuantError::Shape(format!("K has {} rows but V has {}", k.rows(), v.rows())));
    }
    if k.rows() == 0 {
        return Err(QuantError::Shape("no keys to attend over".into()));
    }
    Ok(())
}

fn weights_shifted(q: &Matrix, k: &Matrix, params: &AttentionParams, shift: f64) -> Vec<f64> {
    let (n, m, d) = (q.rows(), k.rows(), params.d_k);
    let scores = matmul_f64(&q.to_f64(), &k.transpose().to_f64(), n, d, m);
    let scale = params.tau * (d as f64).sqrt();
    let mut out = Vec::with_capacity(n * m);
    for row in scores.chunks(m.max(1)).take(n) {
        let logits: Vec<f64> = row.iter().map(|s| s / scale + shift).collect();
        out.extend(softmax(&logits));
    }
    out
}

/// Row-major `rows(Q) x rows(K)` matrix of `softmax(QK^T / (tau sqrt(d_k)))`.
pub fn attention_weights(q: &Matrix, k: &Matrix, params: &AttentionParams) -> Result<Vec<f64>, QuantError> {
    params.validate()?;
    if q.cols() != params.d_k || k.cols() != params.d_k {
        return Err(QuantError::Shape("Q and K must both have d_k columns".into()));
    }
    Ok(weights_shifted(q, k, params, 0.0))
}

/// `softmax(QK^T / (tau sqrt(d_k))) V`.
///
/// ```
/// use yamlsmith::quant::{attention, AttentionParams, Matrix};
///
/// let one = Matrix::new(1, 1, vec![1.0]).unwrap();
/// let out = attention(&one, &one, &one, &AttentionParams::new(1, 1)).unwrap();
/// assert_eq!(out.values(), &[1.0]);
/// ```
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix, params: &AttentionParams) -> Result<Matrix, QuantError> {
    attention_with_shift(q, k, v, params, 0.0)
}

/// Attention with `shift` added to every logit before the softmax. The
/// result matches [`attention`] up to rounding; it exists to check that
/// invariance.
pub fn attention_with_shift(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    params: &AttentionParams,
    shift: f64,
) -> Result<Matrix, QuantError> {
    check_qkv(q, k, v, params)?;
    let a = weights_shifted(q, k, params, shift);
    let out = matmul_f64(&a, &v.to_f64(), q.rows(), k.rows(), v.cols());
    Matrix::from_f64(q.rows(), v.cols(), &out)
}

/// `Concat(head_1, ..., head_h) W_O` with `head_i = Attention(Q W_Q_i, K W_K_i, V W_V_i)`.
pub fn multi_head_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    weights: &HeadWeights,
    params: &AttentionParams,
) -> Result<Matrix, QuantError> {
    multi_head_attention_with_shift(q, k, v, weights, params, 0.0)
}

pub fn multi_head_attention_with_shift(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    weights: &HeadWeights,
    params: &AttentionParams,
    shift: f64,
) -> Result<Matrix, QuantError> {
    params.validate()?;
    let d_model = q.cols();
    if k.cols() != d_model || v.cols() != d_model {
        return Err(QuantError::Shape("Q, K and V must share d_model columns".into()));
    }
    weights.validate(d_model, params)?;
    let heads = (0..params.heads)
        .map(|i| {
            let qi = q.matmul(&weights.w_q[i])?;
            let ki = k.matmul(&weights.w_k[i])?;
            let vi = v.matmul(&weights.w_v[i])?;
            attention_with_shift(&qi, &ki, &vi, params, shift)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Matrix::hconcat(&heads)?.matmul(&weights.w_o)
}
