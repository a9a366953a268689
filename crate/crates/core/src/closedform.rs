//! Closed-form dual values, bounds and benchmarks.
//!
//! For a dual of the form `U~(y) = sum_i -y^{q_i} / q_i` and the control
//! family `gamma = c(t) sqrt(v)`, `E[exp(q_i M_{t,T})] = exp(C_i(t) + D_i(t) v)`
//! with `(C_i, D_i)` solving a piecewise Riccati system, so the dual value,
//! the conjugation point `y*` and the feedback policy are all explicit.

use crate::error::{HdbError, Result};
use crate::model::{HestonParams, UtilitySpec, NON_HARA_EXPONENTS};
use crate::normal;
use crate::riccati::{solve_piecewise_real, solve_segment, RealPiecewise, RiccatiCoeffs};
use crate::roots;
use crate::simulate::{ControlFamily, DualControl, Policy};

/// Which closed form produced a benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchmarkFormula {
    PowerHeston,
    NonHaraConstVol,
    YaariConstVol,
}

/// Benchmark value of the primal problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkValue {
    pub value: f64,
    pub formula: BenchmarkFormula,
    /// `(W1, W2)` for the constant-volatility non-HARA formula.
    pub aux: Option<(f64, f64)>,
}

/// Optimal value and policy for power utility.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerBenchmark {
    pub value: f64,
    pub c: f64,
    pub d: f64,
    /// Optimal fraction `A / (1 - p) + xi rho D(t)` at the evaluation time.
    pub pi: f64,
    solution: Option<crate::riccati::RiccatiSolution<f64>>,
    params: HestonParams,
    p: f64,
}

impl PowerBenchmark {
    /// Optimal fraction at time `s`.
    pub fn optimal_pi(&self, s: f64) -> f64 {
        let d = self.solution.map_or(0.0, |sol| sol.d(s));
        self.params.market_price / (1.0 - self.p) + self.params.xi * self.params.rho * d
    }

    pub fn as_benchmark(&self) -> BenchmarkValue {
        BenchmarkValue {
            value: self.value,
            formula: BenchmarkFormula::PowerHeston,
            aux: None,
        }
    }
}

fn check_time(t: f64, horizon: f64) -> Result<()> {
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
    Ok(())
}

/// Optimal value `x^p / p exp[(1 - p)(C(t) + D(t) v)]` for power utility.
pub fn power_benchmark(
    params: &HestonParams,
    p: f64,
    t: f64,
    x: f64,
    v: f64,
    horizon: f64,
) -> Result<PowerBenchmark> {
    params.validate()?;
    UtilitySpec::power(p)?;
    check_time(t, horizon)?;
    if !(x >= 0.0) {
        return Err(HdbError::invalid("state.x0", "wealth must be >= 0"));
    }
    let terminal = x.powf(p) / p;
    if t == horizon {
        return Ok(PowerBenchmark {
            value: terminal,
            c: 0.0,
            d: 0.0,
            pi: params.market_price / (1.0 - p),
            solution: None,
            params: *params,
            p,
        });
    }
    let (r, rho, kappa, theta, xi, a) = (
        params.r,
        params.rho,
        params.kappa,
        params.theta,
        params.xi,
        params.market_price,
    );
    let coeffs = RiccatiCoeffs::new(
        0.5 * xi * xi * (p * (1.0 - rho * rho) - 1.0),
        kappa - a * xi * rho * p / (1.0 - p),
        -0.5 * p * a * a / ((1.0 - p) * (1.0 - p)),
        -kappa * theta,
        r * p / (p - 1.0),
        t,
        horizon,
    );
    let sol = solve_segment(coeffs)?;
    let (c, d) = sol.eval(t);
    let value = terminal * ((1.0 - p) * (c + d * v)).exp();
    if !value.is_finite() {
        return Err(HdbError::non_finite("power benchmark"));
    }
    Ok(PowerBenchmark {
        value,
        c,
        d,
        pi: a / (1.0 - p) + xi * rho * d,
        solution: Some(sol),
        params: *params,
        p,
    })
}

/// Riccati coefficients of `E[exp(q M)]` on a piece with control `c`.
pub fn dual_factor_coeffs(
    params: &HestonParams,
    q: f64,
    c: f64,
    t_lo: f64,
    t_hi: f64,
) -> RiccatiCoeffs<f64> {
    let (r, rho, kappa, theta, xi, a) = (
        params.r,
        params.rho,
        params.kappa,
        params.theta,
        params.xi,
        params.market_price,
    );
    let rb2 = 1.0 - rho * rho;
    RiccatiCoeffs::new(
        -0.5 * xi * xi,
        kappa - q * xi * (c * rb2 - a * rho),
        -0.5 * q * (q - 1.0) * (a * a + c * c * rb2),
        -kappa * theta,
        r * q,
        t_lo,
        t_hi,
    )
}

/// Dual value `sum_i -y^{q_i}/q_i F_i(t, v)` with `F_i = exp(C_i + D_i v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SumPowerDual {
    pub exponents: Vec<f64>,
    pub params: HestonParams,
    solutions: Vec<RealPiecewise>,
}

/// Factors and their `D` at one `(t, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorValues {
    pub f: Vec<f64>,
    pub d: Vec<f64>,
}

impl SumPowerDual {
    pub fn horizon(&self) -> f64 {
        self.solutions[0].t_hi()
    }

    /// `(C_i(t), D_i(t))` for every exponent.
    pub fn riccati_at(&self, t: f64) -> Vec<(f64, f64)> {
        self.solutions.iter().map(|s| s.eval(t)).collect()
    }

    pub fn factors(&self, t: f64, v: f64) -> FactorValues {
        let cd = self.riccati_at(t);
        FactorValues {
            f: cd.iter().map(|&(c, d)| (c + d * v).exp()).collect(),
            d: cd.iter().map(|&(_, d)| d).collect(),
        }
    }

    /// `Z(t, y, v)`.
    pub fn value(&self, t: f64, y: f64, v: f64) -> f64 {
        let f = self.factors(t, v).f;
        self.exponents
            .iter()
            .zip(&f)
            .map(|(&q, &fi)| -y.powf(q) / q * fi)
            .sum()
    }

    /// `Z_y(t, y, v)`.
    pub fn value_y(&self, t: f64, y: f64, v: f64) -> f64 {
        let f = self.factors(t, v).f;
        self.exponents
            .iter()
            .zip(&f)
            .map(|(&q, &fi)| -y.powf(q - 1.0) * fi)
            .sum()
    }

    /// Whether every factor went through the real hyperbolic closed form.
    pub fn is_hyperbolic(&self) -> bool {
        self.solutions.iter().all(|s| s.is_hyperbolic())
    }
}

/// Builds the factors `F_i` for power or non-HARA utility under
/// `gamma = c(t) sqrt(v)`. Other families have no closed form and are
/// reported as unsupported.
pub fn dual_factors(
    spec: &UtilitySpec,
    control: &DualControl,
    params: &HestonParams,
) -> Result<SumPowerDual> {
    params.validate()?;
    let exponents = spec.dual_power_terms().ok_or_else(|| {
        HdbError::Unsupported(format!("{} utility has no sum-of-powers dual", spec.name()))
    })?;
    if control.family != ControlFamily::TimesSqrtV {
        return Err(HdbError::Unsupported(format!(
            "closed-form dual factors need gamma = c(t) sqrt(v), got family `{}`",
            control.family.name()
        )));
    }
    if params.xi == 0.0 {
        return Err(HdbError::Unsupported(
            "closed-form dual factors need xi > 0".into(),
        ));
    }
    let solutions = exponents
        .iter()
        .map(|&q| {
            let segs: Vec<_> = control
                .coefficients
                .iter()
                .enumerate()
                .map(|(j, &c)| {
                    dual_factor_coeffs(
                        params,
                        q,
                        c,
                        control.breakpoints[j],
                        control.breakpoints[j + 1],
                    )
                })
                .collect();
            solve_piecewise_real(&segs)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SumPowerDual {
        exponents,
        params: *params,
        solutions,
    })
}

/// Root of `sum_i y^{q_i - 1} F_i = x`.
pub fn sum_powers_ystar(exponents: &[f64], f: &[f64], x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(HdbError::invalid("x", "wealth must be > 0"));
    }
    let y = match exponents {
        [q] => (f[0] / x).powf(1.0 / (1.0 - q)),
        [q1, q2] if *q1 == NON_HARA_EXPONENTS[0] && *q2 == NON_HARA_EXPONENTS[1] => {
            ((f[1] + (f[1] * f[1] + 4.0 * x * f[0]).sqrt()) / (2.0 * x)).sqrt()
        }
        _ => {
            let eval = |y: f64| {
                let mut g = 0.0;
                let mut dg = 0.0;
                for (&q, &fi) in exponents.iter().zip(f) {
                    g += y.powf(q - 1.0) * fi;
                    dg += (q - 1.0) * y.powf(q - 2.0) * fi;
                }
                // residual increasing in y: x - sum y^{q-1} F
                (x - g, -dg)
            };
            let tol = 1e-12 * x;
            let mut fdf = eval;
            let mut plain = |y: f64| eval(y).0;
            let (lo, hi, _, _) = roots::expand_bracket(
                &mut plain,
                roots::DEFAULT_BRACKET.0,
                roots::DEFAULT_BRACKET.1,
                roots::MAX_EXPANSIONS,
            )?;
            match roots::newton_safeguarded(&mut fdf, lo, hi, (lo * hi).sqrt(), tol, 100) {
                Ok(y) => y,
                Err(_) => roots::bisect(&mut plain, lo, hi, tol)?,
            }
        }
    };
    if !(y.is_finite() && y > 0.0) {
        return Err(HdbError::non_finite("conjugation point y*"));
    }
    Ok(y)
}

/// Upper bound with its conjugation point and feedback fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SumPowerUpper {
    pub value: f64,
    pub y_star: f64,
    pub pi: f64,
}

fn feedback_fraction(
    params: &HestonParams,
    exponents: &[f64],
    fv: &FactorValues,
    y: f64,
    x: f64,
) -> f64 {
    let a = params.market_price;
    let xr = params.xi * params.rho;
    let s: f64 = exponents
        .iter()
        .zip(fv.f.iter().zip(&fv.d))
        .map(|(&q, (&fi, &di))| (a * (1.0 - q) + xr * di) * y.powf(q - 1.0) * fi)
        .sum();
    s / x
}

/// `W = sum_i U~_i(y*) F_i + x y*` and the feedback fraction at `(t, x, v)`.
pub fn upper_bound_sum_powers(
    dual: &SumPowerDual,
    t: f64,
    x: f64,
    v: f64,
) -> Result<SumPowerUpper> {
    let fv = dual.factors(t, v);
    let y = sum_powers_ystar(&dual.exponents, &fv.f, x)?;
    let value = dual
        .exponents
        .iter()
        .zip(&fv.f)
        .map(|(&q, &fi)| -y.powf(q) / q * fi)
        .sum::<f64>()
        + x * y;
    if !value.is_finite() {
        return Err(HdbError::non_finite("sum-of-powers upper bound"));
    }
    Ok(SumPowerUpper {
        value,
        y_star: y,
        pi: feedback_fraction(&dual.params, &dual.exponents, &fv, y, x),
    })
}

/// Feedback policy of a sum-of-powers dual. Riccati values can be cached on
/// the simulation's step times.
#[derive(Debug, Clone)]
pub struct SumPowerPolicy {
    dual: SumPowerDual,
    cache_times: Vec<f64>,
    cache: Vec<Vec<(f64, f64)>>,
}

impl SumPowerPolicy {
    pub fn new(dual: SumPowerDual) -> Self {
        SumPowerPolicy {
            dual,
            cache_times: Vec::new(),
            cache: Vec::new(),
        }
    }

    /// Precomputes `(C_i, D_i)` at the given ascending times.
    pub fn with_time_grid(mut self, times: &[f64]) -> Self {
        self.cache_times = times.to_vec();
        self.cache = times.iter().map(|&t| self.dual.riccati_at(t)).collect();
        self
    }

    pub fn dual(&self) -> &SumPowerDual {
        &self.dual
    }

    fn riccati_at(&self, t: f64) -> std::borrow::Cow<'_, [(f64, f64)]> {
        let i = self.cache_times.partition_point(|&s| s < t - 1e-12);
        if i < self.cache_times.len() && (self.cache_times[i] - t).abs() <= 1e-12 {
            std::borrow::Cow::Borrowed(&self.cache[i])
        } else {
            std::borrow::Cow::Owned(self.dual.riccati_at(t))
        }
    }

    /// Fraction when wealth is positive.
    pub fn fraction(&self, t: f64, x: f64, v: f64) -> Result<f64> {
        let cd = self.riccati_at(t);
        let fv = FactorValues {
            f: cd.iter().map(|&(c, d)| (c + d * v).exp()).collect(),
            d: cd.iter().map(|&(_, d)| d).collect(),
        };
        let y = sum_powers_ystar(&self.dual.exponents, &fv.f, x)?;
        Ok(feedback_fraction(
            &self.dual.params,
            &self.dual.exponents,
            &fv,
            y,
            x,
        ))
    }
}

impl Policy for SumPowerPolicy {
    fn pi(&self, t: f64, x: f64, v: f64) -> Result<f64> {
        self.fraction(t, x, v)
    }
}

/// Lower bound for power utility from the piecewise-constant approximation
/// of the feedback fraction `(1 - q) A + xi rho D(t)`: the fraction is
/// sampled at the right end of each of `n2` equal pieces and the expected
/// utility of the resulting strategy is `x^p / p exp(C(t) + D(t) v)`.
pub fn power_lower_bound_closed(
    params: &HestonParams,
    p: f64,
    control: &DualControl,
    x: f64,
    v: f64,
    t: f64,
    horizon: f64,
    n2: usize,
) -> Result<f64> {
    UtilitySpec::power(p)?;
    check_time(t, horizon)?;
    if n2 == 0 {
        return Err(HdbError::invalid("bounds.closed_pieces", "must be >= 1"));
    }
    let terminal = x.powf(p) / p;
    if t == horizon {
        return Ok(terminal);
    }
    let dual = dual_factors(&UtilitySpec::Power { p }, control, params)?;
    let q = UtilitySpec::power_conjugate_exponent(p);
    let (rho, kappa, theta, xi, a) = (
        params.rho,
        params.kappa,
        params.theta,
        params.xi,
        params.market_price,
    );
    let grid: Vec<f64> = (0..=n2)
        .map(|k| {
            if k == n2 {
                horizon
            } else {
                t + (horizon - t) * k as f64 / n2 as f64
            }
        })
        .collect();
    let segs: Vec<RiccatiCoeffs<f64>> = (1..=n2)
        .map(|k| {
            let d = dual.riccati_at(grid[k])[0].1;
            let pi = (1.0 - q) * a + xi * rho * d;
            RiccatiCoeffs::new(
                -0.5 * xi * xi,
                kappa - xi * pi * rho * p,
                -a * p * pi - 0.5 * pi * pi * p * (p - 1.0),
                -kappa * theta,
                -params.r * p,
                grid[k - 1],
                grid[k],
            )
        })
        .collect();
    let sol = solve_piecewise_real(&segs)?;
    let (c, d) = sol.eval(t);
    let value = terminal * (c + d * v).exp();
    if !value.is_finite() {
        return Err(HdbError::non_finite("closed-form lower bound"));
    }
    Ok(value)
}

fn check_constvol(params: &HestonParams, v0: f64) -> Result<()> {
    params.validate()?;
    if params.xi != 0.0 {
        return Err(HdbError::Unsupported(
            "constant-volatility benchmark needs xi = 0".into(),
        ));
    }
    if (v0 - params.theta).abs() > 1e-12 {
        return Err(HdbError::Unsupported(
            "constant-volatility benchmark needs v0 = theta".into(),
        ));
    }
    Ok(())
}

/// Non-HARA value with constant variance `theta`.
pub fn nonhara_constvol_benchmark(
    params: &HestonParams,
    v0: f64,
    t: f64,
    x: f64,
    horizon: f64,
) -> Result<BenchmarkValue> {
    check_constvol(params, v0)?;
    check_time(t, horizon)?;
    if !(x > 0.0) {
        return Err(HdbError::invalid("state.x0", "wealth must be > 0"));
    }
    let tau = horizon - t;
    let (r, a, theta) = (params.r, params.market_price, params.theta);
    let w1 = ((3.0 * r + 6.0 * a * a * theta) * tau).exp();
    let w2 = ((r + a * a * theta) * tau).exp();
    let y = ((w2 + (w2 * w2 + 4.0 * x * w1).sqrt()) / (2.0 * x)).sqrt();
    Ok(BenchmarkValue {
        value: 2.0 / 3.0 * (w2 / y + 2.0 * x * y),
        formula: BenchmarkFormula::NonHaraConstVol,
        aux: Some((w1, w2)),
    })
}

/// Yaari value with constant variance `theta`.
pub fn yaari_constvol_benchmark(
    params: &HestonParams,
    cap: f64,
    v0: f64,
    t: f64,
    x: f64,
    horizon: f64,
) -> Result<BenchmarkValue> {
    check_constvol(params, v0)?;
    check_time(t, horizon)?;
    UtilitySpec::yaari(cap)?;
    if !(x >= 0.0) {
        return Err(HdbError::invalid("state.x0", "wealth must be >= 0"));
    }
    let tau = horizon - t;
    let value = if x >= cap * (-params.r * tau).exp() {
        cap
    } else {
        let z = normal::inv_cdf(x / cap * (params.r * tau).exp());
        cap * normal::cdf(z + params.market_price * (params.theta * tau).sqrt())
    };
    Ok(BenchmarkValue {
        value,
        formula: BenchmarkFormula::YaariConstVol,
        aux: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::utility;
    use crate::riccati::tests::rk4_backward;

    fn params() -> HestonParams {
        HestonParams::reference()
    }

    fn sqrt_control(c: f64) -> DualControl {
        DualControl::constant(ControlFamily::TimesSqrtV, c, 0.0, 1.0).unwrap()
    }

    #[test]
    fn power_benchmark_values() {
        let b = power_benchmark(&params(), 0.5, 0.0, 1.0, 0.5, 1.0).unwrap();
        assert!((b.value - 2.074842).abs() < 5e-7, "{}", b.value);
        let t = power_benchmark(&params(), 0.5, 1.0, 1.0, 0.5, 1.0).unwrap();
        assert_eq!(t.value, 2.0);
        assert!((b.optimal_pi(0.0) - b.pi).abs() < 1e-15);
    }

    #[test]
    fn power_benchmark_without_premium_matches_rk4() {
        let mut p = params();
        p.market_price = 0.0;
        let b = power_benchmark(&p, 0.5, 0.0, 1.0, 0.5, 1.0).unwrap();
        let c = RiccatiCoeffs::new(
            0.5 * p.xi * p.xi * (0.5 * (1.0 - p.rho * p.rho) - 1.0),
            p.kappa,
            0.0,
            -p.kappa * p.theta,
            -p.r,
            0.0,
            1.0,
        );
        let (rc, rd) = rk4_backward(&c, 0.0, 1e-5);
        let expect = 2.0 * (0.5 * (rc + rd * 0.5)).exp();
        assert!((b.value - expect).abs() < 1e-9);
        // with no premium the factor reduces to riskless growth
        assert!((b.value - 2.0 * (0.5 * p.r).exp()).abs() < 1e-12);
    }

    #[test]
    fn factors_terminal_and_positive() {
        for spec in [UtilitySpec::Power { p: 0.5 }, UtilitySpec::NonHara] {
            let d = dual_factors(&spec, &sqrt_control(0.1), &params()).unwrap();
            assert!(d.factors(1.0, 0.7).f.iter().all(|&f| f == 1.0));
            for t in [0.0, 0.5] {
                assert!(d.factors(t, 0.5).f.iter().all(|&f| f > 0.0));
            }
        }
    }

    #[test]
    fn unsupported_families() {
        let c = DualControl::constant(ControlFamily::Constant, 0.0, 0.0, 1.0).unwrap();
        assert!(matches!(
            dual_factors(&UtilitySpec::NonHara, &c, &params()),
            Err(HdbError::Unsupported(_))
        ));
        assert!(matches!(
            dual_factors(
                &UtilitySpec::Yaari { cap: 2.0 },
                &sqrt_control(0.0),
                &params()
            ),
            Err(HdbError::Unsupported(_))
        ));
    }

    #[test]
    fn power_upper_bound_at_zero_control() {
        let d = dual_factors(
            &UtilitySpec::Power { p: 0.5 },
            &sqrt_control(0.0),
            &params(),
        )
        .unwrap();
        let ub = upper_bound_sum_powers(&d, 0.0, 1.0, 0.5).unwrap();
        assert!((ub.value - 2.074844628).abs() < 1e-6, "{}", ub.value);
        let bench = power_benchmark(&params(), 0.5, 0.0, 1.0, 0.5, 1.0)
            .unwrap()
            .value;
        assert!(ub.value >= bench);
    }

    #[test]
    fn nonhara_terminal_conjugacy() {
        let d = dual_factors(&UtilitySpec::NonHara, &sqrt_control(0.0), &params()).unwrap();
        let ub = upper_bound_sum_powers(&d, 1.0, 1.0, 0.5).unwrap();
        let h1 = ((1.0 + 5f64.sqrt()) / 2.0).sqrt();
        assert!((ub.y_star - h1).abs() < 1e-14);
        assert!((ub.value - utility(&UtilitySpec::NonHara, 1.0).unwrap()).abs() < 1e-14);
        // terminal feedback: x pi = sum (y*)^{q-1} A (1 - q)
        let a = params().market_price;
        let expect = a * 4.0 * h1.powi(-4) + a * 2.0 * h1.powi(-2);
        assert!((ub.pi - expect).abs() < 1e-14);
    }

    #[test]
    fn ystar_residual_and_general_newton() {
        let f = [1.3, 0.7];
        for x in [0.05, 1.0, 20.0] {
            let y = sum_powers_ystar(&NON_HARA_EXPONENTS, &f, x).unwrap();
            let res = y.powi(-4) * f[0] + y.powi(-2) * f[1] - x;
            assert!(res.abs() <= 1e-10 * x);
            let yn = sum_powers_ystar(&[-2.5, -0.5], &f, x).unwrap();
            let res = yn.powf(-3.5) * f[0] + yn.powf(-1.5) * f[1] - x;
            assert!(res.abs() <= 1e-10 * x, "{res}");
        }
        assert!(sum_powers_ystar(&[-1.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn power_policy_is_state_free() {
        let p = params();
        let d = dual_factors(&UtilitySpec::Power { p: 0.5 }, &sqrt_control(0.2), &p).unwrap();
        let pol = SumPowerPolicy::new(d.clone());
        for t in [0.0, 0.3, 0.9] {
            let dd = d.riccati_at(t)[0].1;
            let expect = 2.0 * p.market_price + p.xi * p.rho * dd;
            for (x, v) in [(0.1, 0.01), (1.0, 0.5), (7.0, 2.0)] {
                assert!((pol.pi(t, x, v).unwrap() - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cached_policy_matches_direct() {
        let d = dual_factors(&UtilitySpec::NonHara, &sqrt_control(0.1), &params()).unwrap();
        let times: Vec<f64> = (0..100).map(|k| k as f64 * 0.01).collect();
        let cached = SumPowerPolicy::new(d.clone()).with_time_grid(&times);
        let direct = SumPowerPolicy::new(d);
        for &t in &[0.0, 0.37, 0.5, 0.555] {
            assert_eq!(
                cached.pi(t, 1.2, 0.3).unwrap(),
                direct.pi(t, 1.2, 0.3).unwrap()
            );
        }
    }

    #[test]
    fn closed_lower_bound_values() {
        let p = params();
        let lb =
            power_lower_bound_closed(&p, 0.5, &sqrt_control(0.0), 1.0, 0.5, 0.0, 1.0, 100).unwrap();
        assert!((lb - 2.074842060).abs() < 1e-6, "{lb}");
        let bench = power_benchmark(&p, 0.5, 0.0, 1.0, 0.5, 1.0).unwrap().value;
        assert!((lb - bench).abs() < 1e-6);
        assert_eq!(
            power_lower_bound_closed(&p, 0.5, &sqrt_control(0.0), 1.0, 0.5, 1.0, 1.0, 100).unwrap(),
            2.0
        );
    }

    #[test]
    fn closed_lower_bound_converges_to_continuous_policy() {
        // RK4 on the lower-bound system with the exact, continuously varying fraction.
        let p = params();
        let control = sqrt_control(0.3);
        let dual = dual_factors(&UtilitySpec::Power { p: 0.5 }, &control, &p).unwrap();
        let rhs = |t: f64, d: f64| -> (f64, f64) {
            let pi = 2.0 * p.market_price + p.xi * p.rho * dual.riccati_at(t)[0].1;
            let pp = 0.5;
            (
                -p.kappa * p.theta * d - p.r * pp,
                -0.5 * p.xi * p.xi * d * d + (p.kappa - p.xi * pi * p.rho * pp) * d
                    - p.market_price * pp * pi
                    - 0.5 * pi * pi * pp * (pp - 1.0),
            )
        };
        let n = 20_000;
        let h = 1.0 / n as f64;
        let (mut c, mut d) = (0.0, 0.0);
        for k in 0..n {
            let t = 1.0 - k as f64 * h;
            let (a1, b1) = rhs(t, d);
            let (a2, b2) = rhs(t - 0.5 * h, d - 0.5 * h * b1);
            let (a3, b3) = rhs(t - 0.5 * h, d - 0.5 * h * b2);
            let (a4, b4) = rhs(t - h, d - h * b3);
            c -= h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
            d -= h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        }
        let oracle = 2.0 * (c + d * 0.5).exp();
        let lb = power_lower_bound_closed(&p, 0.5, &control, 1.0, 0.5, 0.0, 1.0, 1000).unwrap();
        assert!((lb - oracle).abs() < 1e-7, "{lb} vs {oracle}");
    }

    #[test]
    fn constvol_benchmarks() {
        let mut p = params();
        p.xi = 0.0;
        let nh = nonhara_constvol_benchmark(&p, p.theta, 0.0, 1.0, 1.0).unwrap();
        assert!((nh.value - 2.307810).abs() < 5e-6, "{}", nh.value);
        let term = nonhara_constvol_benchmark(&p, p.theta, 1.0, 1.0, 1.0).unwrap();
        assert!((term.value - 2.22013).abs() < 1e-5);
        assert!((term.value - utility(&UtilitySpec::NonHara, 1.0).unwrap()).abs() < 1e-14);
        let ya = yaari_constvol_benchmark(&p, 2.0, p.theta, 0.0, 1.0, 1.0).unwrap();
        assert!((ya.value - 1.139790).abs() < 2e-6, "{}", ya.value);
        assert_eq!(
            yaari_constvol_benchmark(&p, 2.0, p.theta, 0.0, 1.95, 1.0)
                .unwrap()
                .value,
            2.0
        );
        assert!(nonhara_constvol_benchmark(&params(), 0.05, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn constvol_without_opportunity() {
        let mut p = params();
        p.xi = 0.0;
        p.market_price = 0.0;
        p.r = 0.0;
        for t in [0.0, 0.5] {
            let nh = nonhara_constvol_benchmark(&p, p.theta, t, 1.7, 1.0).unwrap();
            assert!((nh.value - utility(&UtilitySpec::NonHara, 1.7).unwrap()).abs() < 1e-12);
        }
        let mut p = params();
        p.xi = 0.0;
        p.market_price = 0.0;
        for x in [0.3, 1.0, 1.8] {
            let ya = yaari_constvol_benchmark(&p, 2.0, p.theta, 0.0, x, 1.0).unwrap();
            assert!((ya.value - (x * p.r.exp()).min(2.0)).abs() < 1e-9, "x={x}");
        }
    }

    #[test]
    fn yaari_constvol_matches_quadrature() {
        // dual side: inf_y E[L(1 - y e^M)^+] + x y with Gaussian M, by Simpson's rule
        let mut p = params();
        p.xi = 0.0;
        let (cap, x, tau) = (2.0, 1.0, 1.0);
        let s2 = p.market_price * p.market_price * p.theta * tau;
        let mu = -p.r * tau - 0.5 * s2;
        let n = 4000;
        let dual = |y: f64| {
            // Simpson on z in [-10, 10]
            let h = 20.0 / n as f64;
            let mut acc = 0.0;
            for i in 0..=n {
                let z = -10.0 + i as f64 * h;
                let w = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += w * cap * (1.0 - y * (mu + s2.sqrt() * z).exp()).max(0.0) * normal::pdf(z);
            }
            acc * h / 3.0 + x * y
        };
        let mut best = f64::INFINITY;
        let mut y = 0.5;
        while y < 2.0 {
            best = best.min(dual(y));
            y += 1e-4;
        }
        let b = yaari_constvol_benchmark(&p, cap, p.theta, 0.0, x, tau)
            .unwrap()
            .value;
        assert!((best - b).abs() < 2e-5, "{best} vs {b}");
    }
}
