//! Central finite-difference gradient checking.

use super::{grad, Tensor};
use crate::error::{Error, Result};

/// Outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over checked entries of `|a - n| / max(|a|, |n|, 1e-8)`.
    pub max_rel_error: f64,
    /// `(input index, flat element index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    /// Location of the first non-finite analytic gradient, which fails the check.
    pub non_finite: Option<(usize, usize)>,
    pub entries_checked: usize,
    /// Diagnostic: the same maximum with the denominator floor raised to
    /// `max(1e-8, SCALE_FLOOR · max |a|)` over all inputs. Entries whose true
    /// derivative is zero or tiny are then compared on the gradient's overall
    /// scale instead of dividing roundoff by a near-zero value.
    pub max_scaled_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.non_finite.is_none() && self.max_rel_error <= tol
    }
}

/// Relative error used by every check: `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    scaled_error(analytic, numeric, 1e-8)
}

/// See [`GradCheckReport::max_scaled_error`].
pub const SCALE_FLOOR: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn scaled_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares analytic gradients of the scalar `f(inputs)` against central
/// differences with step `eps`, over every entry of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    grad_check_sampled(f, inputs, eps, usize::MAX)
}

/// Like [`grad_check`] but checks at most `per_input` evenly strided entries of
/// each input (the analytic gradient is still computed in full).
pub fn grad_check_sampled<F>(
    f: F,
    inputs: &[Tensor],
    eps: f64,
    per_input: usize,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::invalid(
            "grad_check",
            format!("eps {eps} outside (0, 1e-3]"),
        ));
    }
    for (i, x) in inputs.iter().enumerate() {
        if let Some(j) = x.first_non_finite() {
            return Err(Error::NonFinite {
                what: format!("grad_check input {i}"),
                index: j,
            });
        }
    }
    let leaves: Vec<Tensor> = inputs.iter().map(|x| x.detach().requires_grad()).collect();
    let out = f(&leaves)?;
    if out.numel() != 1 {
        return Err(Error::NonScalarLoss(out.shape().to_vec()));
    }
    let analytic = grad(&out, &leaves, false)?;

    let scale = analytic.iter().map(|a| a.max_abs()).fold(0.0, f64::max);
    let floor = (SCALE_FLOOR * scale).max(1e-8);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        non_finite: None,
        entries_checked: 0,
        max_scaled_error: 0.0,
    };
    for (i, (x, a)) in inputs.iter().zip(&analytic).enumerate() {
        if let Some(j) = a.first_non_finite() {
            report.non_finite = Some((i, j));
            report.max_rel_error = f64::INFINITY;
            report.max_scaled_error = f64::INFINITY;
            report.worst = Some((i, j));
            return Ok(report);
        }
        let n = x.numel();
        let stride = n.div_ceil(per_input.min(n)).max(1);
        for j in (0..n).step_by(stride) {
            // Perturbed points are evaluated with grad-enabled leaves so that
            // functions which differentiate internally see the same graph.
            let eval = |delta: f64| -> Result<f64> {
                let mut v = x.to_vec();
                v[j] += delta;
                let mut args: Vec<Tensor> = leaves.clone();
                args[i] = Tensor::new(v, x.shape())?.requires_grad();
                f(&args)?.item()
            };
            let numeric = (eval(eps)? - eval(-eps)?) / (2.0 * eps);
            let e = rel_error(a.data()[j], numeric);
            report.entries_checked += 1;
            let scaled = scaled_error(a.data()[j], numeric, floor);
            report.max_scaled_error = report.max_scaled_error.max(if scaled.is_nan() {
                f64::INFINITY
            } else {
                scaled
            });
            if e > report.max_rel_error || e.is_nan() {
                report.max_rel_error = if e.is_nan() { f64::INFINITY } else { e };
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}
