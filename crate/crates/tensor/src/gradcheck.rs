//! Central finite-difference verification of analytic gradients.
//!
//! Each checked element contributes
//! `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`; the checker
//! reports the maximum over all elements it visited.

use thiserror::Error;

use crate::error::TensorError;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;
const DENOMINATOR_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("function is not deterministic: two evaluations gave {first} and {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error("checked function must return a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("tensor `{0}` does not require gradients")]
    NotDifferentiable(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Relative error between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR)
}

/// Worst element of one checked tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

fn eval_scalar<F>(f: &F) -> Result<f64, GradCheckError>
where
    F: Fn() -> Result<Tensor, TensorError>,
{
    let out = f()?;
    if out.numel() != 1 {
        return Err(GradCheckError::NotScalar(out.shape().to_vec()));
    }
    Ok(out.item())
}

/// Checks `f` (which closes over the tensors in `inputs`) against central
/// differences. `indices` selects which elements of each input to perturb;
/// `None` means all of them.
pub fn check_gradients<F>(
    f: F,
    inputs: &[(&str, &Tensor)],
    eps: f64,
    indices: impl Fn(&Tensor) -> Option<Vec<usize>>,
) -> Result<Vec<TensorCheck>, GradCheckError>
where
    F: Fn() -> Result<Tensor, TensorError>,
{
    for (name, x) in inputs {
        if !x.requires_grad() {
            return Err(GradCheckError::NotDifferentiable(name.to_string()));
        }
        x.zero_grad();
    }
    let out = f()?;
    if out.numel() != 1 {
        return Err(GradCheckError::NotScalar(out.shape().to_vec()));
    }
    let first = out.item();
    out.backward()?;
    drop(out);
    let second = eval_scalar(&f)?;
    if first.to_bits() != second.to_bits() {
        return Err(GradCheckError::NonDeterministic { first, second });
    }

    let mut report = Vec::with_capacity(inputs.len());
    for (name, x) in inputs {
        let analytic = x.grad().unwrap_or_else(|| vec![0.0; x.numel()]);
        let which = indices(x).unwrap_or_else(|| (0..x.numel()).collect());
        let mut worst = TensorCheck {
            name: name.to_string(),
            max_relative_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            checked: which.len(),
        };
        for &i in &which {
            let original = x.data()[i];
            // divide by the step actually represented after rounding
            let (up, down) = (original + eps, original - eps);
            x.update_data(|d| d[i] = up);
            let plus = eval_scalar(&f);
            x.update_data(|d| d[i] = down);
            let minus = eval_scalar(&f);
            x.update_data(|d| d[i] = original);
            let numeric = (plus? - minus?) / (up - down);
            let err = relative_error(analytic[i], numeric);
            if err > worst.max_relative_error || err.is_nan() {
                worst.max_relative_error = err;
                worst.worst_index = i;
                worst.analytic = analytic[i];
                worst.numeric = numeric;
            }
        }
        x.zero_grad();
        report.push(worst);
    }
    Ok(report)
}

/// Maximum relative error of `f` at `x` over every element of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64, GradCheckError>
where
    F: Fn(&Tensor) -> Result<Tensor, TensorError>,
{
    let report = check_gradients(|| f(x), &[("x", x)], eps, |_| None)?;
    Ok(report[0].max_relative_error)
}
