//! Building blocks for attention encoder-decoder policies.

use crate::{Mask, Result, TensorError, Var};

/// `x * w + b`.
pub fn linear<'t>(x: &Var<'t>, w: &Var<'t>, b: Option<&Var<'t>>) -> Result<Var<'t>> {
    let y = x.matmul(w)?;
    match b {
        Some(b) => y.add_row(b),
        None => Ok(y),
    }
}

/// Row-wise layer normalization followed by the affine `gamma * x + beta`.
pub fn layer_norm<'t>(x: &Var<'t>, gamma: &Var<'t>, beta: &Var<'t>) -> Result<Var<'t>> {
    x.layer_norm()?.mul_row(gamma)?.add_row(beta)
}

pub fn relu<'t>(x: &Var<'t>) -> Var<'t> {
    x.relu()
}

/// `clip * tanh(x)`, the usual logit clipping of pointer layers.
pub fn tanh_clip<'t>(x: &Var<'t>, clip: f64) -> Result<Var<'t>> {
    x.tanh_clip(clip)
}

/// Softmax multiplier for one head: `1/sqrt(d_head)`, times the entropy
/// scaling factor when one is given. `None` skips the extra multiply.
pub fn logit_scale(d_head: usize, esf: Option<f64>) -> Result<f64> {
    let base = 1.0 / (d_head as f64).sqrt();
    match esf {
        None => Ok(base),
        Some(f) if f > 0.0 && f.is_finite() => Ok(base * f),
        Some(f) => Err(TensorError::Domain(format!("scaling factor must be positive, got {f}"))),
    }
}

/// Scaled dot-product attention per head, heads concatenated along columns.
///
/// `q` is `[m, d]`, `k` and `v` are `[n, d]`; `d` must divide into `heads`.
/// Each head computes `softmax(q_h k_h^T / sqrt(d_head) * esf) v_h`.
pub fn attention_heads<'t>(
    q: &Var<'t>,
    k: &Var<'t>,
    v: &Var<'t>,
    heads: usize,
    esf: Option<f64>,
    mask: Option<&Mask>,
) -> Result<Var<'t>> {
    let d = q.cols();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(TensorError::shape(
            "attention",
            format!("hidden width {d} not divisible by {heads} heads"),
        ));
    }
    if k.cols() != d || v.cols() != d || k.rows() != v.rows() {
        return Err(TensorError::shape(
            "attention",
            format!("q {:?}, k {:?}, v {:?}", q.shape(), k.shape(), v.shape()),
        ));
    }
    let dh = d / heads;
    let scale = logit_scale(dh, esf)?;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q.clone(), k.clone(), v.clone())
        } else {
            (
                q.slice_cols(h * dh, dh)?,
                k.slice_cols(h * dh, dh)?,
                v.slice_cols(h * dh, dh)?,
            )
        };
        let weights = qh.matmul_t(&kh)?.softmax_rows(scale, mask)?;
        outs.push(weights.matmul(&vh)?);
    }
    if outs.len() == 1 {
        Ok(outs.pop().expect("one head"))
    } else {
        Var::concat_cols(&outs)
    }
}

/// Multi-head attention with output projection `concat(heads) * wo + bo`.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention<'t>(
    q: &Var<'t>,
    k: &Var<'t>,
    v: &Var<'t>,
    heads: usize,
    esf: Option<f64>,
    mask: Option<&Mask>,
    wo: &Var<'t>,
    bo: Option<&Var<'t>>,
) -> Result<Var<'t>> {
    let heads_out = attention_heads(q, k, v, heads, esf, mask)?;
    linear(&heads_out, wo, bo)
}
