use crate::{Result, Tape, Tensor, TensorError, Var};

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// max over coordinates of `|autodiff - central| / (|central| + 1e-12)`
    pub max_rel_err: f64,
    /// Coordinate attaining the maximum.
    pub worst_index: usize,
    pub autodiff: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares the tape gradient of a scalar function against central
/// differences with step `eps` at `point`.
pub fn grad_check<F>(f: F, point: &Tensor, eps: f64) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &Var<'t>) -> Result<Var<'t>>,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(TensorError::Domain(format!(
            "finite-difference step {eps} outside [1e-7, 1e-4]"
        )));
    }

    let tape = Tape::new();
    let x = tape.param(point.clone());
    let y = f(&tape, &x)?;
    if y.value().len() != 1 {
        return Err(TensorError::shape("grad_check", "function must be scalar-valued"));
    }
    finite(y.value().data()[0], "function value")?;
    let autodiff = tape.backward(&y)?.wrt(&x).into_data();

    let eval = |data: Vec<f64>| -> Result<f64> {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(point.shape().to_vec(), data)?);
        let y = f(&tape, &x)?;
        finite(y.value().data()[0], "perturbed function value")
    };

    let mut numeric = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let mut plus = point.data().to_vec();
        let mut minus = point.data().to_vec();
        plus[i] += eps;
        minus[i] -= eps;
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * eps));
    }

    let mut max_rel_err = 0.0;
    let mut worst_index = 0;
    for (i, (a, n)) in autodiff.iter().zip(&numeric).enumerate() {
        finite(*a, "autodiff gradient")?;
        let err = (a - n).abs() / (n.abs() + 1e-12);
        if err > max_rel_err {
            max_rel_err = err;
            worst_index = i;
        }
    }
    Ok(GradCheck {
        max_rel_err,
        worst_index,
        autodiff,
        numeric,
    })
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(TensorError::NonFinite {
            context: what.to_string(),
        })
    }
}
