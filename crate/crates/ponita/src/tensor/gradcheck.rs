//! Finite-difference oracles for gradient verification.
//!
//! Analytic gradients throughout this crate are validated against central
//! differences `(f(x+h) − f(x−h)) / 2h` at float64. The comparison is the
//! scaled relative error of [`relative_error`]: ordinary relative error
//! for O(1) gradients, absolute for tiny ones (where finite differences
//! bottom out at subtraction noise).

/// Central finite difference of `f` in coordinate `i` of `x`.
pub fn central_difference<F>(f: &mut F, x: &[f64], i: usize, h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// |a − n| / max(|a|, |n|, 1): relative error with an absolute floor.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Largest [`relative_error`] between an analytic gradient and central
/// differences of `f`, over the given coordinates of `x`.
pub fn max_relative_error<F>(
    f: &mut F,
    x: &[f64],
    analytic_grad: &[f64],
    coords: &[usize],
    h: f64,
) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut worst: f64 = 0.0;
    for &i in coords {
        let numeric = central_difference(f, x, i, h);
        worst = worst.max(relative_error(analytic_grad[i], numeric));
    }
    worst
}
