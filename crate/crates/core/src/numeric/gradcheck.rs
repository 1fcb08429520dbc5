//! Central finite-difference gradient checker.
//!
//! The checker only ever evaluates the function forward; it shares no code
//! with the backward rules it verifies.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `|analytic − numeric| / (|analytic| + |numeric| + 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Central differences of a scalar function at every coordinate of `x`.
pub fn central_differences<F>(mut f: F, x: &Tensor, step: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let base = f(x)?;
    if !base.is_finite() {
        return Err(Error::NonFinite { op: "finite_diff_check" });
    }
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let hi = f(&probe)?;
        probe.data_mut()[i] = orig - step;
        let lo = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::NonFinite { op: "finite_diff_check" });
        }
        out.data_mut()[i] = (hi - lo) / (2.0 * step);
    }
    Ok(out)
}

/// Worst coordinate-wise [`relative_error`] between two gradients.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Compare the tape gradient of the scalar built by `f` against central
/// differences at `x`. Returns the max relative error over coordinates.
pub fn finite_diff_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape<'_>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let loss = f(&mut tape, xv)?;
    let analytic = tape
        .backward(loss)?
        .take(xv)
        .unwrap_or_else(|| Tensor::zeros(x.shape()));
    let numeric = central_differences(
        |p| {
            let mut t = Tape::new();
            let v = t.constant(p.clone());
            let out = f(&mut t, v)?;
            Ok(t.value(out).data()[0])
        },
        x,
        step,
    )?;
    Ok(max_relative_error(&analytic, &numeric))
}
