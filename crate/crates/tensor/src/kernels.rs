//! Untracked numeric kernels shared by the tape and by plain inference code.

use crate::{Mask, Result, Tensor, TensorError};

/// `c = op(a) * op(b) + beta * c`, where `op(a)` is `m x k` and `op(b)` is
/// `k x n`. A transposed operand is stored in its untransposed row-major form.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_trans { (1, k) } else { (n, 1) };
    // SAFETY: the slices have exactly the lengths the strides address.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Standard matrix product of two 2-D tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(TensorError::shape(
            "matmul",
            format!("[{m}, {k}] x [{k2}, {n}]"),
        ));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, 0.0, &mut out);
    Tensor::matrix(m, n, out)
}

pub(crate) fn check_scale(scale: f64) -> Result<()> {
    if scale > 0.0 && scale.is_finite() {
        Ok(())
    } else {
        Err(TensorError::Domain(format!(
            "softmax scale must be positive and finite, got {scale}"
        )))
    }
}

pub(crate) fn check_mask(mask: Option<&Mask>, rows: usize, cols: usize) -> Result<()> {
    match mask {
        Some(m) if m.dims() != (rows, cols) => Err(TensorError::shape(
            "softmax_rows",
            format!("mask {:?} vs logits [{rows}, {cols}]", m.dims()),
        )),
        _ => Ok(()),
    }
}

/// Writes the softmax of `scale * logits` into `out`, treating masked entries
/// as `-inf`. Returns the log of the normalizer relative to the row max, i.e.
/// `ln sum exp(z - max z)`.
pub(crate) fn softmax_row_into(
    logits: &[f64],
    scale: f64,
    masked: Option<&[bool]>,
    row: usize,
    out: &mut [f64],
) -> Result<(f64, f64)> {
    let keep = |j: usize| masked.is_none_or(|m| !m[j]);
    let mut max = f64::NEG_INFINITY;
    for (j, &x) in logits.iter().enumerate() {
        if keep(j) {
            max = max.max(x * scale);
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(TensorError::DegenerateRow { row });
    }
    let mut sum = 0.0;
    for (j, &x) in logits.iter().enumerate() {
        let e = if keep(j) { (x * scale - max).exp() } else { 0.0 };
        out[j] = e;
        sum += e;
    }
    if !sum.is_finite() || !max.is_finite() {
        return Err(TensorError::NonFinite {
            context: format!("softmax row {row}"),
        });
    }
    let inv = 1.0 / sum;
    for p in out.iter_mut() {
        *p *= inv;
    }
    Ok((max, sum.ln()))
}

/// Row-wise softmax of `scale * logits` with optional masking.
pub fn softmax_rows(logits: &Tensor, scale: f64, mask: Option<&Mask>) -> Result<Tensor> {
    check_scale(scale)?;
    let (rows, cols) = logits.dims2()?;
    check_mask(mask, rows, cols)?;
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        softmax_row_into(
            logits.row_slice(r),
            scale,
            mask.map(|m| m.row(r)),
            r,
            &mut out[r * cols..(r + 1) * cols],
        )?;
    }
    Tensor::matrix(rows, cols, out)
}
