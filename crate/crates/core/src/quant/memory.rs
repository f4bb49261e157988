use serde::{Deserialize, Serialize};

use super::attention::softmax;
use super::{Matrix, QuantError};

/// Position term `p(t, c)` as a scalar lookup keyed by the offset `t - c`,
/// clipped to `[-max_offset, max_offset]`. The scalar is added to every
/// feature of `V_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionTable {
    max_offset: usize,
    table: Vec<f64>,
}

impl PositionTable {
    /// All-zero table, the default when no position signal is wanted.
    pub fn zeros(max_offset: usize) -> Self {
        PositionTable { max_offset, table: vec![0.0; 2 * max_offset + 1] }
    }

    /// `table[i]` holds the term for offset `i - max_offset`.
    pub fn from_values(max_offset: usize, table: Vec<f64>) -> Result<Self, QuantError> {
        if table.len() != 2 * max_offset + 1 {
            return Err(QuantError::Shape(format!(
                "position table needs {} entries, got {}",
                2 * max_offset + 1,
                table.len()
            )));
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(QuantError::Params("position table must be finite".into()));
        }
        Ok(PositionTable { max_offset, table })
    }

    pub fn max_offset(&self) -> usize {
        self.max_offset
    }

    pub fn get(&self, t: usize, c: usize) -> f64 {
        let m = self.max_offset as i64;
        let offset = (t as i64 - c as i64).clamp(-m, m);
        self.table[(offset + m) as usize]
    }
}

impl Default for PositionTable {
    fn default() -> Self {
        Self::zeros(0)
    }
}

/// What the memory read at step `t` attends over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryContext {
    pub t: usize,
    /// `C_t`: rows of `values` taking part in the read.
    pub context: Vec<usize>,
    pub values: Matrix,
    /// `S_tc`, aligned with `context`.
    pub scores: Vec<f64>,
    pub position: PositionTable,
}

impl MemoryContext {
    pub fn validate(&self) -> Result<(), QuantError> {
        if self.context.is_empty() {
            return Err(QuantError::EmptyContext);
        }
        if self.scores.len() != self.context.len() {
            return Err(QuantError::Shape(format!(
                "{} scores for {} context entries",
                self.scores.len(),
                self.context.len()
            )));
        }
        if let Some(&c) = self.context.iter().find(|&&c| c >= self.values.rows()) {
            return Err(QuantError::Shape(format!("context index {c} outside {} value rows", self.values.rows())));
        }
        if self.scores.iter().any(|s| !s.is_finite()) {
            return Err(QuantError::Params("scores must be finite".into()));
        }
        Ok(())
    }
}

/// `a_tc = softmax(S_tc / sqrt(d_h))` over the context.
pub fn memory_weights(ctx: &MemoryContext, d_h: usize) -> Result<Vec<f64>, QuantError> {
    ctx.validate()?;
    if d_h == 0 {
        return Err(QuantError::Params("d_h must be positive".into()));
    }
    let scale = (d_h as f64).sqrt();
    Ok(softmax(&ctx.scores.iter().map(|s| s / scale).collect::<Vec<_>>()))
}

/// `y_t = sum over c in C_t of a_tc (V_c + p(t, c))`.
pub fn neural_memory_forward(ctx: &MemoryContext, d_h: usize) -> Result<Vec<f64>, QuantError> {
    let a = memory_weights(ctx, d_h)?;
    let mut y = vec![0.0; ctx.values.cols()];
    for (&c, &a_tc) in ctx.context.iter().zip(&a) {
        let p = ctx.position.get(ctx.t, c);
        for (out, &v) in y.iter_mut().zip(ctx.values.row(c)) {
            *out += a_tc * (f64::from(v) + p);
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_context_returns_value_row() {
        let values = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, -4.0]]).unwrap();
        let ctx = MemoryContext { t: 1, context: vec![1], values, scores: vec![7.5], position: PositionTable::zeros(2) };
        assert_eq!(neural_memory_forward(&ctx, 4).unwrap(), vec![3.0, -4.0]);
    }

    #[test]
    fn offsets_clip() {
        let p = PositionTable::from_values(1, vec![-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(p.get(5, 0), 1.0);
        assert_eq!(p.get(0, 5), -1.0);
        assert_eq!(p.get(3, 3), 0.0);
        assert!(PositionTable::from_values(1, vec![0.0]).is_err());
    }

    #[test]
    fn empty_context_rejected() {
        let ctx = MemoryContext {
            t: 0,
            context: vec![],
            values: Matrix::zeros(1, 1),
            scores: vec![],
            position: PositionTable::default(),
        };
        assert_eq!(neural_memory_forward(&ctx, 1), Err(QuantError::EmptyContext));
    }
}
