use serde::{Deserialize, Serialize};

use super::{attention, dequantize, quantize, quantize_with_range, AttentionParams, Matrix, QuantError};

/// How the quantization range was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum QuantMode {
    /// Range taken from the tensor itself.
    Dynamic,
    /// Range fixed ahead of time, as calibration would.
    Static { w_min: f32, w_max: f32 },
}

impl QuantMode {
    pub fn label(&self) -> &'static str {
        match self {
            QuantMode::Dynamic => "dynamic",
            QuantMode::Static { .. } => "static",
        }
    }
}

/// Inputs for comparing attention before and after quantizing Q, K and V.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionProbe {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub params: AttentionParams,
}

impl AttentionProbe {
    /// Seeded uniform `[-1, 1)` square inputs of side `n`.
    pub fn random(n: usize, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let q = Matrix::random_with(n, n, -1.0, 1.0, &mut rng);
        let k = Matrix::random_with(n, n, -1.0, 1.0, &mut rng);
        let v = Matrix::random_with(n, n, -1.0, 1.0, &mut rng);
        AttentionProbe { q, k, v, params: AttentionParams::new(n, n) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitsError {
    pub bits: u32,
    pub max_abs: f64,
    pub rel_frobenius: f64,
    /// Half of one quantization step, the bound `max_abs` should respect.
    pub half_step: f64,
    pub probe_cosine: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub mode: QuantMode,
    pub rows: usize,
    pub cols: usize,
    pub per_bits: Vec<BitsError>,
}

impl ErrorReport {
    pub fn for_bits(&self, bits: u32) -> Option<&BitsError> {
        self.per_bits.iter().find(|e| e.bits == bits)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("quantization error ({} mode, {}x{})\n", self.mode.label(), self.rows, self.cols);
        out.push_str("bits  max_abs       rel_frobenius  half_step     probe_cosine\n");
        for e in &self.per_bits {
            let cos = e.probe_cosine.map_or_else(|| "-".to_string(), |c| format!("{c:.9}"));
            out.push_str(&format!(
                "{:<5} {:<13.6e} {:<14.6e} {:<13.6e} {}\n",
                e.bits, e.max_abs, e.rel_frobenius, e.half_step, cos
            ));
        }
        out
    }
}

/// Cosine of the angle between two equal-length vectors; 1 when both are zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (false, false) => dot / (na * nb),
        _ => 0.0,
    }
}

fn roundtrip(w: &Matrix, bits: u32, mode: QuantMode) -> Result<(Matrix, f64), QuantError> {
    let q = match mode {
        QuantMode::Dynamic => quantize(w, bits)?,
        QuantMode::Static { w_min, w_max } => quantize_with_range(w, bits, w_min, w_max)?,
    };
    Ok((dequantize(&q), q.step() / 2.0))
}

/// Round-trip error of `w` at each bit width, plus optionally the cosine
/// between attention outputs on original and dequantized probe inputs.
pub fn quant_error_report(
    w: &Matrix,
    bits: &[u32],
    probe: Option<&AttentionProbe>,
    mode: QuantMode,
) -> Result<ErrorReport, QuantError> {
    let original = w.to_f64();
    let norm = original.iter().map(|x| x * x).sum::<f64>().sqrt();
    let reference = probe.map(|p| attention(&p.q, &p.k, &p.v, &p.params)).transpose()?;
    let mut per_bits = Vec::with_capacity(bits.len());
    for &n in bits {
        let (restored, half_step) = roundtrip(w, n, mode)?;
        let diff: Vec<f64> = original.iter().zip(restored.to_f64()).map(|(a, b)| a - b).collect();
        let max_abs = diff.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
        let diff_norm = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
        let rel_frobenius = if norm == 0.0 { diff_norm } else { diff_norm / norm };
        let probe_cosine = match (probe, &reference) {
            (Some(p), Some(base)) => {
                let (q, _) = roundtrip(&p.q, n, QuantMode::Dynamic)?;
                let (k, _) = roundtrip(&p.k, n, QuantMode::Dynamic)?;
                let (v, _) = roundtrip(&p.v, n, QuantMode::Dynamic)?;
                let out = attention(&q, &k, &v, &p.params)?;
                Some(cosine_similarity(&base.to_f64(), &out.to_f64()))
            }
            _ => None,
        };
        per_bits.push(BitsError { bits: n, max_abs, rel_frobenius, half_step, probe_cosine });
    }
    Ok(ErrorReport { mode, rows: w.rows(), cols: w.cols(), per_bits })
}
