use crate::{Result, TensorError};

/// Boolean mask over a matrix; `true` marks an entry that is excluded from a
/// softmax (its logit is treated as `-inf`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    masked: Vec<bool>,
}

impl Mask {
    pub fn none(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            masked: vec![false; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, masked: Vec<bool>) -> Result<Self> {
        if masked.len() != rows * cols {
            return Err(TensorError::shape(
                "Mask::from_vec",
                format!("{rows}x{cols} mask needs {} flags, got {}", rows * cols, masked.len()),
            ));
        }
        Ok(Mask { rows, cols, masked })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_masked(&self, r: usize, c: usize) -> bool {
        self.masked[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, masked: bool) {
        self.masked[r * self.cols + c] = masked;
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.masked[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [bool] {
        &mut self.masked[r * self.cols..(r + 1) * self.cols]
    }
}
