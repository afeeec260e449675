//! Central-difference gradient checking.

use crate::error::{invalid, numeric, Result};
use crate::scalar::Real;

use super::Tensor;

/// Compares the analytic gradient attached to `at` (its `grad` buffer)
/// against central finite differences of `f`.
///
/// Returns the max over elements of
/// `|analytic - central| / max(1, |central|)`.
pub fn finite_diff_check<S: Real>(
    f: impl Fn(&Tensor<S>) -> Result<S>,
    at: &Tensor<S>,
    step: S,
) -> Result<S> {
    if step.is_nan() || step <= S::zero() {
        return Err(invalid("finite_diff_check step must be positive"));
    }
    let analytic = at
        .grad()
        .ok_or_else(|| invalid("finite_diff_check needs an analytic gradient on the tensor"))?;

    let mut probe = at.clone();
    probe.clear_grad();
    let mut max_err = S::zero();
    for (i, &expected) in analytic.iter().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(numeric(format!(
                "objective returned a non-finite value near element {i}"
            )));
        }
        let central = (plus - minus) / (step + step);
        let denom = if central.abs() > S::one() { central.abs() } else { S::one() };
        let err = (expected - central).abs() / denom;
        if err > max_err {
            max_err = err;
        }
    }
    Ok(max_err)
}
