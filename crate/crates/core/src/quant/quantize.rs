use serde::{Deserialize, Serialize};

use super::{Matrix, QuantError};

pub const SUPPORTED_BITS: [u32; 2] = [4, 8];

/// Unsigned affine codes plus the range they were taken over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedTensor {
    pub rows: usize,
    pub cols: usize,
    pub codes: Vec<u8>,
    pub bits: u32,
    pub w_min: f32,
    pub w_max: f32,
}

impl QuantizedTensor {
    pub fn levels(&self) -> u32 {
        (1 << self.bits) - 1
    }

    /// Width of one quantization step; zero for a degenerate range.
    pub fn step(&self) -> f64 {
        (f64::from(self.w_max) - f64::from(self.w_min)) / f64::from(self.levels())
    }
}

fn check_bits(bits: u32) -> Result<u32, QuantError> {
    if SUPPORTED_BITS.contains(&bits) {
        Ok((1 << bits) - 1)
    } else {
        Err(QuantError::UnsupportedBits(bits))
    }
}

/// `round((w - min) * (2^n - 1) / (max - min))` over the matrix's own range,
/// rounding halves away from zero. A constant matrix yields all-zero codes.
pub fn quantize(w: &Matrix, bits: u32) -> Result<QuantizedTensor, QuantError> {
    let (lo, hi) = w.min_max().unwrap_or((0.0, 0.0));
    quantize_with_range(w, bits, lo, hi)
}

/// Quantize over a caller-chosen range, as static calibration would supply.
/// Values outside the range saturate at the end codes.
pub fn quantize_with_range(w: &Matrix, bits: u32, w_min: f32, w_max: f32) -> Result<QuantizedTensor, QuantError> {
    let levels = check_bits(bits)?;
    if !w_min.is_finite() || !w_max.is_finite() {
        return Err(QuantError::Params("range bounds must be finite".into()));
    }
    if w_min > w_max {
        return Err(QuantError::Range { min: w_min.into(), max: w_max.into() });
    }
    if let Some(i) = w.values().iter().position(|v| !v.is_finite()) {
        return Err(QuantError::NonFinite(i));
    }
    let (lo, hi) = (f64::from(w_min), f64::from(w_max));
    let scale = f64::from(levels) / (hi - lo);
    let codes = w
        .values()
        .iter()
        .map(|&v| {
            if hi == lo {
                0
            } else {
                ((f64::from(v) - lo) * scale).round().clamp(0.0, f64::from(levels)) as u8
            }
        })
        .collect();
    Ok(QuantizedTensor { rows: w.rows(), cols: w.cols(), codes, bits, w_min, w_max })
}

/// `w' = min + code * (max - min) / (2^n - 1)`.
pub fn dequantize(q: &QuantizedTensor) -> Matrix {
    let lo = f64::from(q.w_min);
    let step = q.step();
    let values: Vec<f64> = q.codes.iter().map(|&c| lo + f64::from(c) * step).collect();
    Matrix::from_f64(q.rows, q.cols, &values).expect("codes reconstruct to finite values")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(values: &[f32]) -> Matrix {
        Matrix::new(1, values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn endpoints_map_to_extremes() {
        assert_eq!(quantize(&row(&[0.0, 1.0]), 8).unwrap().codes, vec![0, 255]);
    }

    #[test]
    fn midpoint_rounds_away_from_zero() {
        assert_eq!(quantize(&row(&[-1.0, 0.0, 1.0]), 4).unwrap().codes, vec![0, 8, 15]);
    }

    #[test]
    fn constant_matrix_is_degenerate() {
        let q = quantize(&Matrix::filled(2, 3, 3.7), 4).unwrap();
        assert!(q.codes.iter().all(|&c| c == 0));
        assert_eq!((q.w_min, q.w_max), (3.7, 3.7));
        assert_eq!(dequantize(&q), Matrix::filled(2, 3, 3.7));
    }

    #[test]
    fn dequantize_hits_range_ends() {
        let q = quantize(&row(&[-2.5, 0.1, 4.0]), 8).unwrap();
        let d = dequantize(&q);
        assert_eq!(d.values()[0], -2.5);
        assert_eq!(d.values()[2], 4.0);
    }

    #[test]
    fn bits_and_ranges_checked() {
        assert_eq!(quantize(&row(&[1.0]), 16), Err(QuantError::UnsupportedBits(16)));
        assert!(matches!(quantize_with_range(&row(&[1.0]), 8, 2.0, 1.0), Err(QuantError::Range { .. })));
        let q = quantize_with_range(&row(&[-5.0, 0.5, 5.0]), 8, 0.0, 1.0).unwrap();
        assert_eq!(q.codes, vec![0, 128, 255]);
    }
}
