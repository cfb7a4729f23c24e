//! One-dimensional root finding for monotone derivatives.
//!
//! Every regularized primitive in this crate minimizes a strictly convex
//! function of a single real variable. The minimizer is the root of the
//! (nondecreasing, possibly discontinuous) derivative, so all of them go
//! through [`minimize_convex_1d`]: bracket by doubling around zero, then
//! refine with Brent-Dekker.

use crate::error::SolverError;

const DOUBLING_BUDGET: usize = 1100;
const BRENT_MAX_ITER: usize = 500;
const RELATIVE_TOL: f64 = 4.0 * f64::EPSILON;

/// Returns `m` within `tol` of the root of a continuous-or-monotone,
/// nondecreasing `derivative`.
///
/// The bracket starts at `[-1, 1]` and each side doubles until the derivative
/// changes sign.
pub fn minimize_convex_1d<F>(derivative: F, tol: f64) -> Result<f64, SolverError>
where
    F: Fn(f64) -> f64,
{
    minimize_convex_1d_around(derivative, 0.0, tol)
}

/// Same as [`minimize_convex_1d`], bracketing around `center` instead of 0.
pub fn minimize_convex_1d_around<F>(derivative: F, center: f64, tol: f64) -> Result<f64, SolverError>
where
    F: Fn(f64) -> f64,
{
    let eval = |x: f64| -> Result<f64, SolverError> {
        let d = derivative(x);
        if d.is_nan() {
            Err(SolverError::NotANumber { at: x })
        } else {
            Ok(d)
        }
    };

    let mut lo = center - 1.0;
    let mut hi = center + 1.0;
    let mut step = 1.0_f64;
    let mut d_lo = eval(lo)?;
    let mut d_hi = eval(hi)?;

    let mut budget = DOUBLING_BUDGET;
    while d_lo > 0.0 {
        if budget == 0 || !lo.is_finite() {
            return Err(SolverError::Unbounded { last_probe: lo });
        }
        budget -= 1;
        hi = lo;
        d_hi = d_lo;
        step *= 2.0;
        lo = center - step;
        d_lo = eval(lo)?;
    }
    while d_hi < 0.0 {
        if budget == 0 || !hi.is_finite() {
            return Err(SolverError::Unbounded { last_probe: hi });
        }
        budget -= 1;
        lo = hi;
        d_lo = d_hi;
        step *= 2.0;
        hi = center + step;
        d_hi = eval(hi)?;
    }
    if d_lo == 0.0 {
        return Ok(lo);
    }
    if d_hi == 0.0 {
        return Ok(hi);
    }
    brent_root_with_values(&eval, lo, hi, d_lo, d_hi, tol)
}

/// Brent-Dekker root of `f` on `[a, b]`; `f(a)` and `f(b)` must have
/// opposite signs (or one of them vanish).
pub fn brent_root<F>(f: F, a: f64, b: f64, tol: f64) -> Result<f64, SolverError>
where
    F: Fn(f64) -> f64,
{
    let eval = |x: f64| -> Result<f64, SolverError> {
        let y = f(x);
        if y.is_nan() {
            Err(SolverError::NotANumber { at: x })
        } else {
            Ok(y)
        }
    };
    let fa = eval(a)?;
    let fb = eval(b)?;
    brent_root_with_values(&eval, a, b, fa, fb, tol)
}

fn brent_root_with_values<F>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    xtol: f64,
) -> Result<f64, SolverError>
where
    F: Fn(f64) -> Result<f64, SolverError>,
{
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(SolverError::NoSignChange { lo: a, hi: b });
    }

    let (mut xpre, mut xcur) = (a, b);
    let (mut fpre, mut fcur) = (fa, fb);
    let (mut xblk, mut fblk) = (0.0, 0.0);
    let (mut spre, mut scur) = (0.0_f64, 0.0_f64);

    for _ in 0..BRENT_MAX_ITER {
        if fpre != 0.0 && fcur != 0.0 && fpre.is_sign_negative() != fcur.is_sign_negative() {
            xblk = xpre;
            fblk = fpre;
            spre = xcur - xpre;
            scur = spre;
        }
        if fblk.abs() < fcur.abs() {
            xpre = xcur;
            xcur = xblk;
            xblk = xpre;
            fpre = fcur;
            fcur = fblk;
            fblk = fpre;
        }

        let delta = (xtol + RELATIVE_TOL * xcur.abs()) / 2.0;
        let sbis = (xblk - xcur) / 2.0;
        if fcur == 0.0 || sbis.abs() < delta {
            return Ok(xcur);
        }

        if spre.abs() > delta && fcur.abs() < fpre.abs() {
            let stry = if xpre == xblk {
                // secant
                -fcur * (xcur - xpre) / (fcur - fpre)
            } else {
                // inverse quadratic interpolation
                let dpre = (fpre - fcur) / (xpre - xcur);
                let dblk = (fblk - fcur) / (xblk - xcur);
                -fcur * (fblk * dblk - fpre * dpre) / (dblk * dpre * (fblk - fpre))
            };
            if 2.0 * stry.abs() < spre.abs().min(3.0 * sbis.abs() - delta) {
                spre = scur;
                scur = stry;
            } else {
                spre = sbis;
                scur = sbis;
            }
        } else {
            spre = sbis;
            scur = sbis;
        }

        xpre = xcur;
        fpre = fcur;
        if scur.abs() > delta {
            xcur += scur;
        } else {
            xcur += if sbis > 0.0 { delta } else { -delta };
        }
        fcur = f(xcur)?;
    }
    Err(SolverError::IterationLimit {
        iterations: BRENT_MAX_ITER,
        last: xcur,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_derivative() {
        let m = minimize_convex_1d(|m| m - 3.0, 1e-9).unwrap();
        assert!((m - 3.0).abs() <= 1e-9);
    }

    #[test]
    fn cubic_derivative_root_at_zero() {
        let m = minimize_convex_1d(|m| m * m * m, 1e-6).unwrap();
        assert!(m.abs() <= 1e-6);
    }

    #[test]
    fn far_root_found_by_doubling() {
        let m = minimize_convex_1d(|m| m + 12345.678, 1e-8).unwrap();
        assert!((m + 12345.678).abs() <= 1e-8);
    }

    #[test]
    fn step_derivative_converges_to_jump() {
        // derivative of |m - 2.5|: jumps from -1 to 1 at 2.5
        let m = minimize_convex_1d(|m| if m < 2.5 { -1.0 } else { 1.0 }, 1e-10).unwrap();
        assert!((m - 2.5).abs() <= 1e-9);
    }

    #[test]
    fn single_input_regularized_median() {
        // m/L + sign(m - 10) with L = 1 has its root at m = 1
        let d = |m: f64| m + if m > 10.0 { 1.0 } else if m < 10.0 { -1.0 } else { 0.0 };
        let m = minimize_convex_1d(d, 1e-9).unwrap();
        assert!((m - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn constant_negative_derivative_is_unbounded() {
        let err = minimize_convex_1d(|_| -1.0, 1e-6).unwrap_err();
        assert!(matches!(err, SolverError::Unbounded { .. }));
    }

    #[test]
    fn nan_is_reported() {
        let err = minimize_convex_1d(|_| f64::NAN, 1e-6).unwrap_err();
        assert!(matches!(err, SolverError::NotANumber { .. }));
    }

    #[test]
    fn brent_rejects_same_sign_bracket() {
        let err = brent_root(|x| x * x + 1.0, -1.0, 1.0, 1e-6).unwrap_err();
        assert!(matches!(err, SolverError::NoSignChange { .. }));
    }

    #[test]
    fn brent_transcendental() {
        let r = brent_root(|x: f64| x.cos() - x, 0.0, 1.0, 1e-12).unwrap();
        assert!((r - 0.739_085_133_215_160_6).abs() < 1e-11);
    }
}
