//! Scalar root finding for monotone residuals on `(0, inf)`.

use crate::error::{HdbError, Result};

/// Initial bracket for the conjugation point.
pub const DEFAULT_BRACKET: (f64, f64) = (1e-6, 1e3);

/// Maximum number of geometric bracket expansions.
pub const MAX_EXPANSIONS: usize = 60;

fn finite(v: f64, at: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(HdbError::non_finite(format!("residual at {at:e}")))
    }
}

/// Bracket for a residual that is increasing in `y` (negative at small `y`,
/// positive at large `y`). Each expansion divides `lo` or multiplies `hi` by
/// ten. Returns `(lo, hi, f(lo), f(hi))`.
pub fn expand_bracket(
    f: &mut impl FnMut(f64) -> f64,
    lo: f64,
    hi: f64,
    max_expansions: usize,
) -> Result<(f64, f64, f64, f64)> {
    let (mut lo, mut hi) = (lo, hi);
    let mut f_lo = finite(f(lo), lo)?;
    let mut f_hi = finite(f(hi), hi)?;
    let mut n = 0;
    while f_lo > 0.0 || f_hi < 0.0 {
        if n == max_expansions {
            return Err(HdbError::NoBracket { lo, hi, f_lo, f_hi });
        }
        if f_lo > 0.0 {
            hi = lo;
            f_hi = f_lo;
            lo /= 10.0;
            f_lo = finite(f(lo), lo)?;
        } else {
            lo = hi;
            f_lo = f_hi;
            hi *= 10.0;
            f_hi = finite(f(hi), hi)?;
        }
        n += 1;
    }
    Ok((lo, hi, f_lo, f_hi))
}

/// Geometric bisection on a bracketed increasing residual. Stops when
/// `|f| <= f_tol` or the relative bracket width falls below `1e-12`.
pub fn bisect(f: &mut impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, f_tol: f64) -> Result<f64> {
    for _ in 0..400 {
        let mid = (lo * hi).sqrt();
        let fm = finite(f(mid), mid)?;
        if fm.abs() <= f_tol {
            return Ok(mid);
        }
        if fm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-12 {
            return Ok((lo * hi).sqrt());
        }
    }
    Err(HdbError::NoConvergence(format!(
        "bisection stalled in [{lo:e}, {hi:e}]"
    )))
}

/// Increasing residual: expand the default bracket, then bisect.
pub fn solve_increasing(f: &mut impl FnMut(f64) -> f64, f_tol: f64) -> Result<f64> {
    let (lo, hi, f_lo, f_hi) =
        expand_bracket(f, DEFAULT_BRACKET.0, DEFAULT_BRACKET.1, MAX_EXPANSIONS)?;
    if f_lo.abs() <= f_tol {
        return Ok(lo);
    }
    if f_hi.abs() <= f_tol {
        return Ok(hi);
    }
    bisect(f, lo, hi, f_tol)
}

/// Newton iteration on an increasing residual, kept inside a bracket that is
/// tightened every step; falls back to a bisection step whenever the Newton
/// step leaves the bracket or fails to halve the residual. `fdf` returns the
/// residual and its derivative.
pub fn newton_safeguarded(
    fdf: &mut impl FnMut(f64) -> (f64, f64),
    mut lo: f64,
    mut hi: f64,
    x0: f64,
    f_tol: f64,
    max_iter: usize,
) -> Result<f64> {
    let mut x = x0.clamp(lo, hi);
    let mut last_abs = f64::INFINITY;
    for _ in 0..max_iter {
        let (fx, dfx) = fdf(x);
        finite(fx, x)?;
        if fx.abs() <= f_tol {
            return Ok(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - fx / dfx;
        let bisect_pt = (lo * hi).sqrt();
        x = if dfx > 0.0 && newton > lo && newton < hi && fx.abs() < 0.5 * last_abs {
            newton
        } else {
            bisect_pt
        };
        last_abs = fx.abs();
        if hi / lo - 1.0 < 1e-14 {
            return Ok(x);
        }
    }
    Err(HdbError::NoConvergence(format!(
        "safeguarded Newton did not converge in {max_iter} iterations (bracket [{lo:e}, {hi:e}])"
    )))
}
