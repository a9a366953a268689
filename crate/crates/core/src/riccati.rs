//! Closed-form solution of the backward system
//!
//! ```text
//! D'(t) = a D^2 + b D + eta,   D(t_hi) = f2
//! C'(t) = d1 D + d2,           C(t_hi) = f1
//! ```
//!
//! with constant coefficients on `[t_lo, t_hi]`, over `f64` or `Complex64`.
//!
//! With `k1 = sqrt(b^2 - 4 a eta)`, roots `m1,2 = (-b -/+ k1) / (2a)`,
//! `tau = t_hi - t` and `eps = 1 - exp(-k1 tau)` the solution is
//!
//! ```text
//! D = [f2 (m2 - m1) + eps m1 (f2 - m2)] / [(m2 - m1) (1 + eps g)]
//! C = f1 - (d2 + d1 m2) tau - (d1 / a) ln(1 + eps g),   g = (f2 - m2) / (m2 - m1)
//! ```
//!
//! This is the usual `D = (m1 - m2) / (1 - k2 exp(k1 tau)) + m2` form with
//! `k2 = (f2 - m1) / (f2 - m2)` rearranged so that nothing overflows for large
//! `k1 tau` and the equilibrium case `f2 = m2` needs no special handling.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_complex::Complex64;

use crate::error::{HdbError, Result};

/// Field the Riccati system is solved over.
pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Mul<f64, Output = Self>
{
    const IS_COMPLEX: bool;
    fn from_f64(x: f64) -> Self;
    /// Principal square root.
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn expm1(self) -> Self;
    /// Principal branch of `ln(1 + w)`.
    fn ln1p(self) -> Self;
    fn norm(self) -> f64;
    fn re(self) -> f64;
    fn im(self) -> f64;
    fn is_finite(self) -> bool;
}

impl Scalar for f64 {
    const IS_COMPLEX: bool = false;
    fn from_f64(x: f64) -> Self {
        x
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn expm1(self) -> Self {
        f64::exp_m1(self)
    }
    fn ln1p(self) -> Self {
        f64::ln_1p(self)
    }
    fn norm(self) -> f64 {
        self.abs()
    }
    fn re(self) -> f64 {
        self
    }
    fn im(self) -> f64 {
        0.0
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

impl Scalar for Complex64 {
    const IS_COMPLEX: bool = true;
    fn from_f64(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn sqrt(self) -> Self {
        Complex64::sqrt(self)
    }
    fn exp(self) -> Self {
        Complex64::exp(self)
    }
    fn expm1(self) -> Self {
        // exp(x + iy) - 1 = (expm1(x) cos y - 2 sin^2(y/2)) + i e^x sin y
        let (x, y) = (self.re, self.im);
        let s = (0.5 * y).sin();
        Complex64::new(x.exp_m1() * y.cos() - 2.0 * s * s, x.exp() * y.sin())
    }
    fn ln1p(self) -> Self {
        let (a, b) = (self.re, self.im);
        Complex64::new(0.5 * (2.0 * a + a * a + b * b).ln_1p(), b.atan2(1.0 + a))
    }
    fn norm(self) -> f64 {
        Complex64::norm(self)
    }
    fn re(self) -> f64 {
        self.re
    }
    fn im(self) -> f64 {
        self.im
    }
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

/// Coefficients and terminal data of one constant-coefficient segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiCoeffs<S> {
    pub a: S,
    pub b: S,
    pub eta: S,
    pub d1: S,
    pub d2: S,
    pub t_lo: f64,
    pub t_hi: f64,
    /// `C(t_hi)`.
    pub f1: S,
    /// `D(t_hi)`.
    pub f2: S,
}

impl<S: Scalar> RiccatiCoeffs<S> {
    /// Segment with zero terminal values.
    pub fn new(a: S, b: S, eta: S, d1: S, d2: S, t_lo: f64, t_hi: f64) -> Self {
        RiccatiCoeffs {
            a,
            b,
            eta,
            d1,
            d2,
            t_lo,
            t_hi,
            f1: S::from_f64(0.0),
            f2: S::from_f64(0.0),
        }
    }

    pub fn with_terminal(mut self, f1: S, f2: S) -> Self {
        self.f1 = f1;
        self.f2 = f2;
        self
    }
}

/// Solved segment; evaluates `C(t)` and `D(t)` on `[t_lo, t_hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiSolution<S> {
    pub coeffs: RiccatiCoeffs<S>,
    pub k1: S,
    pub m1: S,
    pub m2: S,
    /// `(f2 - m1) / (f2 - m2)`; `None` on the equilibrium solution `f2 = m2`.
    pub k2: Option<S>,
    g: S,
}

impl<S: Scalar> RiccatiSolution<S> {
    #[inline]
    fn eps_at(&self, t: f64) -> S {
        let tau = self.coeffs.t_hi - t;
        -((-(self.k1 * tau)).expm1())
    }

    #[inline]
    pub fn d(&self, t: f64) -> S {
        let c = &self.coeffs;
        let eps = self.eps_at(t);
        let span = self.m2 - self.m1;
        let num = c.f2 * span + eps * self.m1 * (c.f2 - self.m2);
        let den = span + eps * (c.f2 - self.m2);
        num / den
    }

    #[inline]
    pub fn c(&self, t: f64) -> S {
        let c = &self.coeffs;
        let tau = c.t_hi - t;
        let eps = self.eps_at(t);
        c.f1 - (c.d2 + c.d1 * self.m2) * tau - (c.d1 / c.a) * (eps * self.g).ln1p()
    }

    /// `(C(t), D(t))`.
    #[inline]
    pub fn eval(&self, t: f64) -> (S, S) {
        (self.c(t), self.d(t))
    }

    /// Like [`eval`](Self::eval) but rejects points where the denominator of
    /// `D` is within `1e-12` of zero or the result is not finite.
    pub fn checked_eval(&self, t: f64) -> Result<(S, S)> {
        let eps = self.eps_at(t);
        if (S::from_f64(1.0) + eps * self.g).norm() <= 1e-12 {
            return Err(self.invalid(format!("denominator of D vanishes at t = {t}")));
        }
        let (c, d) = self.eval(t);
        if !(c.is_finite() && d.is_finite()) {
            return Err(HdbError::non_finite(format!(
                "riccati evaluation at t = {t}"
            )));
        }
        Ok((c, d))
    }

    pub fn t_lo(&self) -> f64 {
        self.coeffs.t_lo
    }

    pub fn t_hi(&self) -> f64 {
        self.coeffs.t_hi
    }

    fn invalid(&self, reason: String) -> HdbError {
        HdbError::RiccatiInvalid {
            t_lo: self.coeffs.t_lo,
            t_hi: self.coeffs.t_hi,
            reason,
        }
    }
}

fn segment_error(c_lo: f64, c_hi: f64, reason: impl Into<String>) -> HdbError {
    HdbError::RiccatiInvalid {
        t_lo: c_lo,
        t_hi: c_hi,
        reason: reason.into(),
    }
}

/// Shared construction; `branch_check` enables the complex continuity test.
fn solve_generic<S: Scalar>(
    coeffs: RiccatiCoeffs<S>,
    branch_check: bool,
) -> Result<RiccatiSolution<S>> {
    let (t_lo, t_hi) = (coeffs.t_lo, coeffs.t_hi);
    if !(t_lo < t_hi) || !t_lo.is_finite() || !t_hi.is_finite() {
        return Err(segment_error(
            t_lo,
            t_hi,
            "segment must satisfy t_lo < t_hi",
        ));
    }
    for (name, v) in [
        ("a", coeffs.a),
        ("b", coeffs.b),
        ("eta", coeffs.eta),
        ("d1", coeffs.d1),
        ("d2", coeffs.d2),
        ("f1", coeffs.f1),
        ("f2", coeffs.f2),
    ] {
        if !v.is_finite() {
            return Err(segment_error(
                t_lo,
                t_hi,
                format!("coefficient {name} is not finite"),
            ));
        }
    }
    if coeffs.a.norm() == 0.0 {
        return Err(segment_error(t_lo, t_hi, "quadratic coefficient a is zero"));
    }
    let disc = coeffs.b * coeffs.b - coeffs.a * coeffs.eta * 4.0;
    if !S::IS_COMPLEX && disc.re() <= 0.0 {
        return Err(segment_error(
            t_lo,
            t_hi,
            format!(
                "discriminant b^2 - 4 a eta = {:e} is not positive",
                disc.re()
            ),
        ));
    }
    let k1 = disc.sqrt();
    if k1.norm() == 0.0 {
        return Err(segment_error(t_lo, t_hi, "repeated root (k1 = 0)"));
    }
    let two_a = coeffs.a * 2.0;
    let m1 = (-coeffs.b - k1) / two_a;
    let m2 = (-coeffs.b + k1) / two_a;
    let span = m2 - m1;
    let g = (coeffs.f2 - m2) / span;
    let k2 = if coeffs.f2 == m2 {
        None
    } else {
        Some((coeffs.f2 - m1) / (coeffs.f2 - m2))
    };
    let sol = RiccatiSolution {
        coeffs,
        k1,
        m1,
        m2,
        k2,
        g,
    };

    if !S::IS_COMPLEX {
        if let Some(k2) = k2 {
            // Pole of D inside the segment: k2 = exp(-k1 tau) for some tau in [0, delta].
            let lo = (-(k1.re()) * (t_hi - t_lo)).exp();
            let k2 = k2.re();
            if (lo..=1.0).contains(&k2) {
                return Err(sol.invalid(format!("hypersingular: k2 = {k2:e} lies in [{lo:e}, 1]")));
            }
        }
        sol.checked_eval(t_lo)?;
    } else {
        let delta = k1 * (t_hi - t_lo);
        if !delta.exp().is_finite() && delta.re() > 0.0 {
            return Err(HdbError::non_finite("exp(k1 * delta)"));
        }
        let n = 32;
        let mut prev: Option<f64> = None;
        for j in 0..=n {
            let t = t_hi - (t_hi - t_lo) * j as f64 / n as f64;
            sol.checked_eval(t)?;
            if branch_check {
                let w = sol.eps_at(t) * g;
                let im = w.ln1p().im();
                if let Some(p) = prev {
                    let jump = (im - p).abs();
                    if jump > std::f64::consts::PI {
                        return Err(HdbError::BranchCut { t_lo, t_hi, jump });
                    }
                }
                prev = Some(im);
            }
        }
    }
    Ok(sol)
}

/// Solves one real segment, rejecting `a = 0`, a non-positive discriminant
/// and segments containing a pole of `D`.
pub fn solve_segment(coeffs: RiccatiCoeffs<f64>) -> Result<RiccatiSolution<f64>> {
    solve_generic(coeffs, false)
}

/// Solves one complex segment with the principal square root and logarithm,
/// failing if the logarithm jumps across its branch cut on a 32-point grid.
pub fn solve_segment_complex(
    coeffs: RiccatiCoeffs<Complex64>,
) -> Result<RiccatiSolution<Complex64>> {
    solve_generic(coeffs, true)
}

/// Complex solve of a real system whose discriminant is not positive. The
/// imaginary part of `C` is discarded by the caller, so a wrapped logarithm is
/// harmless and only poles are rejected.
pub(crate) fn solve_segment_oscillatory(
    coeffs: RiccatiCoeffs<f64>,
) -> Result<RiccatiSolution<Complex64>> {
    let z = |x: f64| Complex64::new(x, 0.0);
    solve_generic(
        RiccatiCoeffs {
            a: z(coeffs.a),
            b: z(coeffs.b),
            eta: z(coeffs.eta),
            d1: z(coeffs.d1),
            d2: z(coeffs.d2),
            t_lo: coeffs.t_lo,
            t_hi: coeffs.t_hi,
            f1: z(coeffs.f1),
            f2: z(coeffs.f2),
        },
        false,
    )
}

/// Segments chained backward from the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseRiccati<S> {
    pub pieces: Vec<RiccatiSolution<S>>,
}

impl<S: Scalar> PiecewiseRiccati<S> {
    pub fn t_lo(&self) -> f64 {
        self.pieces[0].t_lo()
    }

    pub fn t_hi(&self) -> f64 {
        self.pieces[self.pieces.len() - 1].t_hi()
    }

    /// Index of the piece owning `t`; pieces own `(t_lo, t_hi]` and the first
    /// also owns its left end.
    pub fn piece_index(&self, t: f64) -> usize {
        let idx = self.pieces.partition_point(|p| p.t_hi() < t);
        idx.min(self.pieces.len() - 1)
    }

    pub fn eval(&self, t: f64) -> (S, S) {
        self.pieces[self.piece_index(t)].eval(t)
    }

    pub fn c(&self, t: f64) -> S {
        self.eval(t).0
    }

    pub fn d(&self, t: f64) -> S {
        self.eval(t).1
    }
}

fn check_tiling<S: Scalar>(segments: &[RiccatiCoeffs<S>]) -> Result<()> {
    if segments.is_empty() {
        return Err(HdbError::invalid(
            "segments",
            "at least one segment is required",
        ));
    }
    for (j, w) in segments.windows(2).enumerate() {
        if (w[0].t_hi - w[1].t_lo).abs() > 1e-12 * w[1].t_lo.abs().max(1.0) {
            return Err(HdbError::RiccatiPiece {
                index: j + 1,
                source: Box::new(segment_error(
                    w[1].t_lo,
                    w[1].t_hi,
                    format!(
                        "does not start where the previous piece ends ({})",
                        w[0].t_hi
                    ),
                )),
            });
        }
    }
    Ok(())
}

fn solve_piecewise_with<S: Scalar>(
    segments: &[RiccatiCoeffs<S>],
    solve: impl Fn(RiccatiCoeffs<S>) -> Result<RiccatiSolution<S>>,
) -> Result<PiecewiseRiccati<S>> {
    check_tiling(segments)?;
    let n = segments.len();
    let mut pieces = Vec::with_capacity(n);
    let (mut f1, mut f2) = (segments[n - 1].f1, segments[n - 1].f2);
    for (index, seg) in segments.iter().enumerate().rev() {
        let seg = seg.with_terminal(f1, f2);
        let sol = solve(seg).map_err(|e| HdbError::RiccatiPiece {
            index,
            source: Box::new(e),
        })?;
        (f1, f2) = sol.eval(seg.t_lo);
        pieces.push(sol);
    }
    pieces.reverse();
    Ok(PiecewiseRiccati { pieces })
}

/// Solves ascending, tiling segments backward. Terminal values come from the
/// last segment; those of earlier segments are replaced by continuity.
pub fn solve_piecewise(segments: &[RiccatiCoeffs<f64>]) -> Result<PiecewiseRiccati<f64>> {
    solve_piecewise_with(segments, solve_segment)
}

pub fn solve_piecewise_complex(
    segments: &[RiccatiCoeffs<Complex64>],
) -> Result<PiecewiseRiccati<Complex64>> {
    solve_piecewise_with(segments, solve_segment_complex)
}

/// Piece of a real system: the hyperbolic closed form when the
/// discriminant is positive, otherwise the complex closed form whose real
/// part solves the real system.
#[derive(Debug, Clone, PartialEq)]
pub enum RealPiece {
    Hyperbolic(RiccatiSolution<f64>),
    Oscillatory(RiccatiSolution<Complex64>),
}

impl RealPiece {
    pub fn eval(&self, t: f64) -> (f64, f64) {
        match self {
            RealPiece::Hyperbolic(s) => s.eval(t),
            RealPiece::Oscillatory(s) => {
                let (c, d) = s.eval(t);
                (c.re, d.re)
            }
        }
    }

    pub fn t_lo(&self) -> f64 {
        match self {
            RealPiece::Hyperbolic(s) => s.t_lo(),
            RealPiece::Oscillatory(s) => s.t_lo(),
        }
    }

    pub fn t_hi(&self) -> f64 {
        match self {
            RealPiece::Hyperbolic(s) => s.t_hi(),
            RealPiece::Oscillatory(s) => s.t_hi(),
        }
    }
}

/// Real piecewise system accepting any sign of the discriminant.
#[derive(Debug, Clone, PartialEq)]
pub struct RealPiecewise {
    pub pieces: Vec<RealPiece>,
}

impl RealPiecewise {
    pub fn t_hi(&self) -> f64 {
        self.pieces[self.pieces.len() - 1].t_hi()
    }

    pub fn eval(&self, t: f64) -> (f64, f64) {
        let idx = self
            .pieces
            .partition_point(|p| p.t_hi() < t)
            .min(self.pieces.len() - 1);
        self.pieces[idx].eval(t)
    }

    /// True when every piece uses the hyperbolic form.
    pub fn is_hyperbolic(&self) -> bool {
        self.pieces
            .iter()
            .all(|p| matches!(p, RealPiece::Hyperbolic(_)))
    }
}

/// For a real system, `Im C` is a multiple of `2 pi d1 / a` (the wrap of the
/// principal logarithm) unless `D` passed through a pole, which shifts it by
/// an odd multiple of `pi d1 / a`.
fn check_no_pole(sol: RiccatiSolution<Complex64>) -> Result<RiccatiSolution<Complex64>> {
    let unit = std::f64::consts::PI * (sol.coeffs.d1.re / sol.coeffs.a.re).abs();
    if unit > 0.0 {
        let turns = sol.c(sol.t_lo()).im / unit;
        let odd = (turns - 2.0 * (0.5 * turns).round()).abs();
        if odd > 0.5 {
            return Err(sol.invalid("D has a pole inside the segment".into()));
        }
    }
    Ok(sol)
}

/// Like [`solve_piecewise`], but pieces with `b^2 - 4 a eta <= 0` go through
/// the complex closed form instead of failing. Poles are still rejected.
pub fn solve_piecewise_real(segments: &[RiccatiCoeffs<f64>]) -> Result<RealPiecewise> {
    check_tiling(segments)?;
    let n = segments.len();
    let mut pieces = Vec::with_capacity(n);
    let (mut f1, mut f2) = (segments[n - 1].f1, segments[n - 1].f2);
    for (index, seg) in segments.iter().enumerate().rev() {
        let seg = seg.with_terminal(f1, f2);
        let piece = if seg.b * seg.b - 4.0 * seg.a * seg.eta > 0.0 {
            solve_segment(seg).map(RealPiece::Hyperbolic)
        } else {
            solve_segment_oscillatory(seg)
                .and_then(check_no_pole)
                .map(RealPiece::Oscillatory)
        }
        .map_err(|e| HdbError::RiccatiPiece {
            index,
            source: Box::new(e),
        })?;
        (f1, f2) = piece.eval(seg.t_lo);
        if !(f1.is_finite() && f2.is_finite()) {
            return Err(HdbError::RiccatiPiece {
                index,
                source: Box::new(HdbError::non_finite("riccati chain")),
            });
        }
        pieces.push(piece);
    }
    pieces.reverse();
    Ok(RealPiecewise { pieces })
}
