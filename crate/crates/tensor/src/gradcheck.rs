//! Central finite-difference gradient checks.
//!
//! The numeric side only ever evaluates the loss closure with grad mode
//! off, so it does not depend on any gradient rule.

use crate::error::Result;
use crate::tensor::{no_grad, Tensor};

/// Denominator floor for relative errors, so entries whose true gradient is
/// zero are judged on absolute error instead.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mismatch {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub checked: usize,
    /// Entry with the largest relative error.
    pub worst: Option<Mismatch>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.worst.map_or(0.0, |w| w.rel_error)
    }
}

/// Compare backward-pass gradients of every entry of `params` with
/// `(f(x + h) - f(x - h)) / 2h`.
///
/// `loss` must be deterministic: it is called once with grad mode on and
/// twice per entry with grad mode off.
pub fn check_gradients(params: &[Tensor], mut loss: impl FnMut() -> Result<Tensor>, step: f64) -> Result<GradReport> {
    params.iter().for_each(Tensor::zero_grad);
    loss()?.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let mut report = GradReport { checked: 0, worst: None };
    for (pi, (p, grads)) in params.iter().zip(&analytic).enumerate() {
        for (index, &a) in grads.iter().enumerate() {
            let original = p.data()[index];
            p.data_mut()[index] = original + step;
            let plus = no_grad(&mut loss)?.item();
            p.data_mut()[index] = original - step;
            let minus = no_grad(&mut loss)?.item();
            p.data_mut()[index] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let rel_error = relative_error(a, numeric);
            report.checked += 1;
            if report.worst.is_none_or(|w| rel_error > w.rel_error) {
                report.worst = Some(Mismatch {
                    param: pi,
                    index,
                    analytic: a,
                    numeric,
                    rel_error,
                });
            }
        }
    }
    Ok(report)
}
