//! Market model, utility functions and their convex conjugates.
//!
//! The risky asset follows `dS = S[(r + A v) dt + sqrt(v) dW^s]` with the
//! variance a square-root process `dv = kappa(theta - v) dt + xi sqrt(v) dW^v`
//! and `d<W^s, W^v> = rho dt`. Utilities are defined on `[0, inf)` with
//! `U(0) = 0`; their conjugates `U~(y) = sup_x [U(x) - x y]` are evaluated
//! in closed form.

use crate::error::{HdbError, Result};

/// Heston market coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HestonParams {
    /// Riskless rate.
    pub r: f64,
    /// Correlation between the asset and variance drivers.
    pub rho: f64,
    /// Mean-reversion speed of the variance.
    pub kappa: f64,
    /// Long-run variance.
    pub theta: f64,
    /// Volatility of variance.
    pub xi: f64,
    /// Market price of risk `A` (excess drift is `A v`).
    pub market_price: f64,
}

impl HestonParams {
    pub fn new(
        r: f64,
        rho: f64,
        kappa: f64,
        theta: f64,
        xi: f64,
        market_price: f64,
    ) -> Result<Self> {
        let p = HestonParams {
            r,
            rho,
            kappa,
            theta,
            xi,
            market_price,
        };
        p.validate()?;
        Ok(p)
    }

    /// The parameter set used throughout the benchmark tables.
    pub fn reference() -> Self {
        HestonParams {
            r: 0.05,
            rho: -0.5,
            kappa: 10.0,
            theta: 0.05,
            xi: 0.5,
            market_price: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("model.r", self.r),
            ("model.rho", self.rho),
            ("model.kappa", self.kappa),
            ("model.theta", self.theta),
            ("model.xi", self.xi),
            ("model.a", self.market_price),
        ];
        for (field, value) in finite {
            if !value.is_finite() {
                return Err(HdbError::invalid(field, "must be finite"));
            }
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(HdbError::invalid(
                "model.rho",
                format!("{} outside [-1, 1]", self.rho),
            ));
        }
        if self.kappa <= 0.0 {
            return Err(HdbError::invalid("model.kappa", "must be > 0"));
        }
        if self.theta <= 0.0 {
            return Err(HdbError::invalid("model.theta", "must be > 0"));
        }
        if self.xi < 0.0 {
            return Err(HdbError::invalid("model.xi", "must be >= 0"));
        }
        Ok(())
    }

    /// `sqrt(1 - rho^2)`, the loading of the asset driver on the
    /// independent normal.
    pub fn rho_bar(&self) -> f64 {
        (1.0 - self.rho * self.rho).max(0.0).sqrt()
    }
}

/// Feller condition `2 kappa theta >= xi^2`.
pub fn feller_satisfied(params: &HestonParams) -> bool {
    2.0 * params.kappa * params.theta >= params.xi * params.xi
}

/// Point in the primal/dual state space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketState {
    pub t: f64,
    pub horizon: f64,
    pub x: f64,
    pub v: f64,
    pub y: f64,
}

impl MarketState {
    pub fn new(t: f64, horizon: f64, x: f64, v: f64, y: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(HdbError::invalid(
                "state.horizon",
                "must be positive and finite",
            ));
        }
        if !(0.0..=horizon).contains(&t) {
            return Err(HdbError::invalid(
                "state.t",
                format!("{t} outside [0, {horizon}]"),
            ));
        }
        if !(x >= 0.0 && x.is_finite()) {
            return Err(HdbError::invalid("state.x0", "wealth must be >= 0"));
        }
        if !(v >= 0.0 && v.is_finite()) {
            return Err(HdbError::invalid("state.v0", "variance must be >= 0"));
        }
        if !(y > 0.0 && y.is_finite()) {
            return Err(HdbError::invalid("state.y", "dual state must be > 0"));
        }
        Ok(MarketState {
            t,
            horizon,
            x,
            v,
            y,
        })
    }

    /// Log dual state.
    pub fn z(&self) -> f64 {
        self.y.ln()
    }

    pub fn time_to_go(&self) -> f64 {
        self.horizon - self.t
    }
}

/// Exponents of the non-HARA dual `y^-3 / 3 + y^-1`.
pub const NON_HARA_EXPONENTS: [f64; 2] = [-3.0, -1.0];

/// Utility selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UtilitySpec {
    /// `x^p / p` with `0 < p < 1`.
    Power { p: f64 },
    /// `H^-3/3 + H^-1 + x H` with `H(x) = (2 / (sqrt(1 + 4x) - 1))^(1/2)`.
    NonHara,
    /// `min(x, L)`.
    Yaari { cap: f64 },
}

impl UtilitySpec {
    pub fn power(p: f64) -> Result<Self> {
        let u = UtilitySpec::Power { p };
        u.validate()?;
        Ok(u)
    }

    pub fn yaari(cap: f64) -> Result<Self> {
        let u = UtilitySpec::Yaari { cap };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            UtilitySpec::Power { p } if !(p > 0.0 && p < 1.0) => Err(HdbError::invalid(
                "utility.p",
                format!("{p} outside (0, 1)"),
            )),
            UtilitySpec::Yaari { cap } if !(cap > 0.0 && cap.is_finite()) => {
                Err(HdbError::invalid("utility.l", "threshold must be > 0"))
            }
            _ => Ok(()),
        }
    }

    /// Conjugate exponent `q = p / (p - 1)` for power utility.
    pub fn power_conjugate_exponent(p: f64) -> f64 {
        p / (p - 1.0)
    }

    /// Terms `(weight_i, q_i)` when the dual is a sum `sum_i w_i y^{q_i}`
    /// with `w_i = -1/q_i`; `None` for Yaari.
    pub fn dual_power_terms(&self) -> Option<Vec<f64>> {
        match *self {
            UtilitySpec::Power { p } => Some(vec![Self::power_conjugate_exponent(p)]),
            UtilitySpec::NonHara => Some(NON_HARA_EXPONENTS.to_vec()),
            UtilitySpec::Yaari { .. } => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            UtilitySpec::Power { .. } => "power",
            UtilitySpec::NonHara => "nonhara",
            UtilitySpec::Yaari { .. } => "yaari",
        }
    }
}

/// Inverse marginal utility of the non-HARA utility,
/// `H(x) = (2 / (sqrt(1 + 4x) - 1))^(1/2)`, written to avoid the
/// cancellation in the denominator for small `x`.
pub fn non_hara_h(x: f64) -> f64 {
    let s = (1.0 + 4.0 * x).sqrt();
    ((1.0 + s) / (2.0 * x)).sqrt()
}

/// Relative risk aversion of the non-HARA utility.
pub fn non_hara_risk_aversion(x: f64) -> f64 {
    0.25 * (1.0 + 1.0 / (1.0 + 4.0 * x).sqrt())
}

/// Primal utility `U(x)`; rejects negative wealth.
pub fn utility(spec: &UtilitySpec, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(HdbError::invalid("x", format!("wealth {x} must be >= 0")));
    }
    Ok(utility_unchecked(spec, x))
}

#[inline]
pub(crate) fn utility_unchecked(spec: &UtilitySpec, x: f64) -> f64 {
    match *spec {
        UtilitySpec::Power { p } => x.powf(p) / p,
        UtilitySpec::NonHara => {
            if x == 0.0 {
                return 0.0;
            }
            let h = non_hara_h(x);
            1.0 / (3.0 * h * h * h) + 1.0 / h + x * h
        }
        UtilitySpec::Yaari { cap } => x.min(cap),
    }
}

/// Conjugate utility `U~(y)`.
pub fn dual_utility(spec: &UtilitySpec, y: f64) -> Result<f64> {
    check_dual_arg(y)?;
    Ok(dual_utility_unchecked(spec, y))
}

/// Derivative `U~'(y)`; for Yaari the value at the kink `y = 1` is 0.
pub fn dual_utility_deriv(spec: &UtilitySpec, y: f64) -> Result<f64> {
    check_dual_arg(y)?;
    Ok(dual_utility_deriv_unchecked(spec, y))
}

fn check_dual_arg(y: f64) -> Result<()> {
    if !(y > 0.0) {
        return Err(HdbError::invalid(
            "y",
            format!("dual state {y} must be > 0"),
        ));
    }
    Ok(())
}

#[inline]
pub(crate) fn dual_utility_unchecked(spec: &UtilitySpec, y: f64) -> f64 {
    match *spec {
        UtilitySpec::Power { p } => {
            let q = UtilitySpec::power_conjugate_exponent(p);
            -y.powf(q) / q
        }
        UtilitySpec::NonHara => {
            let inv = 1.0 / y;
            inv * inv * inv / 3.0 + inv
        }
        UtilitySpec::Yaari { cap } => cap * (1.0 - y).max(0.0),
    }
}

#[inline]
pub(crate) fn dual_utility_deriv_unchecked(spec: &UtilitySpec, y: f64) -> f64 {
    match *spec {
        UtilitySpec::Power { p } => {
            let q = UtilitySpec::power_conjugate_exponent(p);
            -y.powf(q - 1.0)
        }
        UtilitySpec::NonHara => {
            let inv2 = 1.0 / (y * y);
            -inv2 * inv2 - inv2
        }
        UtilitySpec::Yaari { cap } => {
            if y < 1.0 {
                -cap
            } else {
                0.0
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn feller_examples() {
        let mut p = HestonParams::reference();
        assert!(feller_satisfied(&p));
        p.kappa = 1.0;
        p.theta = 0.01;
        p.xi = 1.0;
        assert!(!feller_satisfied(&p));
        p.kappa = 2.0;
        p.theta = 0.25;
        assert!(feller_satisfied(&p));
    }

    #[test]
    fn parameter_validation_names_field() {
        let err = HestonParams::new(0.05, 1.5, 10.0, 0.05, 0.5, 0.5).unwrap_err();
        assert!(matches!(
            err,
            HdbError::InvalidParameter {
                field: "model.rho",
                ..
            }
        ));
        assert!(HestonParams::new(0.05, 0.0, 0.0, 0.05, 0.5, 0.5).is_err());
        assert!(HestonParams::new(0.05, 0.0, 1.0, -0.05, 0.5, 0.5).is_err());
        assert!(HestonParams::new(0.05, 0.0, 1.0, 0.05, -0.5, 0.5).is_err());
        assert!(UtilitySpec::power(1.0).is_err());
        assert!(UtilitySpec::yaari(0.0).is_err());
    }

    #[test]
    fn utility_examples() {
        assert!(close(
            utility(&UtilitySpec::Power { p: 0.5 }, 1.0).unwrap(),
            2.0,
            1e-15
        ));
        assert!(close(
            utility(&UtilitySpec::NonHara, 2.0).unwrap(),
            10.0 / 3.0,
            1e-14
        ));
        assert_eq!(utility(&UtilitySpec::Yaari { cap: 2.0 }, 3.0).unwrap(), 2.0);
        for u in [
            UtilitySpec::Power { p: 0.5 },
            UtilitySpec::NonHara,
            UtilitySpec::Yaari { cap: 2.0 },
        ] {
            assert_eq!(utility(&u, 0.0).unwrap(), 0.0);
            assert!(utility(&u, -1e-3).is_err());
        }
    }

    #[test]
    fn dual_examples() {
        let p = UtilitySpec::Power { p: 0.5 };
        assert!(close(dual_utility(&p, 2.0).unwrap(), 0.5, 1e-15));
        assert!(close(dual_utility_deriv(&p, 2.0).unwrap(), -0.25, 1e-15));
        let nh = UtilitySpec::NonHara;
        assert!(close(dual_utility(&nh, 1.0).unwrap(), 4.0 / 3.0, 1e-15));
        assert!(close(dual_utility_deriv(&nh, 1.0).unwrap(), -2.0, 1e-15));
        let ya = UtilitySpec::Yaari { cap: 2.0 };
        assert_eq!(dual_utility(&ya, 0.5).unwrap(), 1.0);
        assert_eq!(dual_utility_deriv(&ya, 0.5).unwrap(), -2.0);
        assert_eq!(dual_utility(&ya, 1.5).unwrap(), 0.0);
        assert_eq!(dual_utility_deriv(&ya, 1.5).unwrap(), 0.0);
        assert_eq!(dual_utility_deriv(&ya, 1.0).unwrap(), 0.0);
        assert!(dual_utility(&ya, 0.0).is_err());
        assert!(dual_utility_deriv(&nh, -1.0).is_err());
    }

    #[test]
    fn yaari_dual_vanishes_beyond_one() {
        let ya = UtilitySpec::Yaari { cap: 3.0 };
        for y in [1.0, 1.0 + 1e-12, 2.0, 1e6] {
            assert_eq!(dual_utility(&ya, y).unwrap(), 0.0);
        }
        for u in [UtilitySpec::Power { p: 0.5 }, UtilitySpec::NonHara] {
            assert!(dual_utility(&u, 1e9).unwrap() < 1e-8);
        }
    }

    #[test]
    fn conjugate_duality_on_grid() {
        // min over a log grid on (0, 1e3] plus the Yaari kink, refined around the argmin.
        let specs = [
            UtilitySpec::Power { p: 0.5 },
            UtilitySpec::NonHara,
            UtilitySpec::Yaari { cap: 2.0 },
        ];
        let n = 200_000;
        let grid: Vec<f64> = (0..=n)
            .map(|i| 10f64.powf(-9.0 + 12.0 * i as f64 / n as f64))
            .chain(std::iter::once(1.0))
            .collect();
        for spec in specs {
            let mut x = 0.01;
            while x <= 10.0 {
                let u = utility(&spec, x).unwrap();
                let best = grid
                    .iter()
                    .map(|&y| dual_utility(&spec, y).unwrap() + x * y)
                    .fold(f64::INFINITY, f64::min);
                assert!(best >= u - 1e-9, "{spec:?} x={x}: {best} < {u}");
                assert!(best - u <= 1e-6, "{spec:?} x={x}: gap {}", best - u);
                x *= 1.37;
            }
        }
    }

    #[test]
    fn monotone_and_convex() {
        let specs = [
            UtilitySpec::Power { p: 0.3 },
            UtilitySpec::NonHara,
            UtilitySpec::Yaari { cap: 2.0 },
        ];
        for spec in specs {
            let xs: Vec<f64> = (1..200).map(|i| i as f64 * 0.05).collect();
            for w in xs.windows(2) {
                assert!(utility(&spec, w[1]).unwrap() >= utility(&spec, w[0]).unwrap());
            }
            let ys: Vec<f64> = (1..200).map(|i| i as f64 * 0.02).collect();
            for w in ys.windows(3) {
                let (a, b, c) = (
                    dual_utility(&spec, w[0]).unwrap(),
                    dual_utility(&spec, w[1]).unwrap(),
                    dual_utility(&spec, w[2]).unwrap(),
                );
                assert!(b <= a + 1e-15);
                assert!(
                    a - 2.0 * b + c >= -1e-12,
                    "{spec:?} not convex near {}",
                    w[1]
                );
            }
        }
    }

    #[test]
    fn non_hara_risk_aversion_matches_fd() {
        let u = |x: f64| utility(&UtilitySpec::NonHara, x).unwrap();
        let mut x = 0.1;
        while x <= 10.0 {
            // U'(x) = H(x) exactly; U'' by a central difference of H.
            let h = 1e-6 * x;
            let u1 = non_hara_h(x);
            let u2 = (non_hara_h(x + h) - non_hara_h(x - h)) / (2.0 * h);
            let fd_u1 = (u(x + h) - u(x - h)) / (2.0 * h);
            assert!((fd_u1 - u1).abs() < 1e-6 * u1.max(1.0));
            let ra = -x * u2 / u1;
            assert!((ra - non_hara_risk_aversion(x)).abs() < 1e-6, "x={x}");
            x += 0.3;
        }
    }
}
