use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::QuantError;

/// Dense row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self, QuantError> {
        if values.len() != rows * cols {
            return Err(QuantError::Shape(format!("{} values for a {rows}x{cols} matrix", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(QuantError::NonFinite(i));
        }
        Ok(Matrix { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, values: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f32) -> Self {
        Matrix { rows, cols, values: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, QuantError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(QuantError::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Rounds each `f64` to `f32`; non-finite results are rejected.
    pub fn from_f64(rows: usize, cols: usize, values: &[f64]) -> Result<Self, QuantError> {
        Self::new(rows, cols, values.iter().map(|&v| v as f32).collect())
    }

    /// Entries drawn uniformly from `[low, high)` with a seeded ChaCha8 stream.
    pub fn random(rows: usize, cols: usize, low: f32, high: f32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::random_with(rows, cols, low, high, &mut rng)
    }

    pub fn random_with(rows: usize, cols: usize, low: f32, high: f32, rng: &mut impl rand::Rng) -> Self {
        let values = (0..rows * cols).map(|_| rng.random_range(low..high)).collect();
        Matrix { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.values[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn min_max(&self) -> Option<(f32, f32)> {
        let first = *self.values.first()?;
        Some(self.values.iter().fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v))))
    }

    pub fn transpose(&self) -> Matrix {
        let mut values = Vec::with_capacity(self.values.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                values.push(self.get(r, c));
            }
        }
        Matrix { rows: self.cols, cols: self.rows, values }
    }

    /// `self · other`, accumulated in `f64`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, QuantError> {
        if self.cols != other.rows {
            return Err(QuantError::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let out = matmul_f64(&self.to_f64(), &other.to_f64(), self.rows, self.cols, other.cols);
        Matrix::from_f64(self.rows, other.cols, &out)
    }

    /// Horizontal concatenation.
    pub fn hconcat(parts: &[Matrix]) -> Result<Matrix, QuantError> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if parts.iter().any(|m| m.rows != rows) {
            return Err(QuantError::Shape("concatenated parts differ in row count".into()));
        }
        let cols = parts.iter().map(|m| m.cols).sum();
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for m in parts {
                values.extend_from_slice(m.row(r));
            }
        }
        Ok(Matrix { rows, cols, values })
    }
}

pub(crate) fn matmul_f64(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for p in 0..k {
            let x = a[i * k + p];
            for j in 0..m {
                out[i * m + j] += x * b[p * m + j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(Matrix::new(2, 2, vec![0.0; 3]), Err(QuantError::Shape(_))));
        assert_eq!(Matrix::new(1, 2, vec![0.0, f32::NAN]), Err(QuantError::NonFinite(1)));
    }

    #[test]
    fn matmul_and_transpose() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let p = a.matmul(&a.transpose()).unwrap();
        assert_eq!(p.values(), &[5.0, 11.0, 11.0, 25.0]);
        assert_eq!(a.matmul(&Matrix::identity(2)).unwrap(), a);
        assert!(a.matmul(&Matrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn seeded_random_is_reproducible() {
        let a = Matrix::random(4, 4, -1.0, 1.0, 9);
        assert_eq!(a, Matrix::random(4, 4, -1.0, 1.0, 9));
        assert!(a.values().iter().all(|v| (-1.0..1.0).contains(v)));
    }
}
