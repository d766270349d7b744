//! Finite-difference gradient verification.
//!
//! [`numeric_grad`] estimates a gradient by central differences and is the
//! oracle the test suite holds every analytic backward formula against.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Default acceptance threshold for [`max_relative_error`].
pub const FD_TOLERANCE: f64 = 1e-4;

/// Floor for the relative-error denominator, below which differences are
/// compared absolutely.
const REL_FLOOR: f64 = 1e-6;

/// Central-difference gradient of `f` at `at` with step `h`:
/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` per coordinate. `f` must be a
/// deterministic function of its argument.
pub fn numeric_grad<F>(mut f: F, at: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::config(alloc::format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut point = at.to_vec();
    let mut out = Vec::with_capacity(at.len());
    for i in 0..at.len() {
        let orig = point[i];
        point[i] = orig + h;
        let hi = f(&point)?;
        point[i] = orig - h;
        let lo = f(&point)?;
        point[i] = orig;
        out.push((hi - lo) / (2.0 * h));
    }
    Ok(out)
}

/// `|a − b| / max(|a|, |b|, 1e-6)`: relative for meaningful magnitudes,
/// absolute near zero where finite differences bottom out in rounding noise.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Worst [`relative_error`] across paired coordinates.
///
/// # Panics
/// Panics if the slices differ in length.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(
        analytic.len(),
        numeric.len(),
        "gradient length mismatch: {} vs {}",
        analytic.len(),
        numeric.len()
    );
    analytic
        .iter()
        .zip(numeric.iter())
        .fold(0.0, |acc, (a, b)| acc.max(relative_error(*a, *b)))
}
