//! Fourier-cosine evaluation of the Yaari dual value `E[L (1 - Y_T)^+]`.
//!
//! Under `gamma = c sqrt(v)` with constant `c`, `ln Y_T = z + M` where the
//! characteristic function of `M` is `phi(omega) = exp(C(t; omega) + D(t; omega) v)`
//! from a complex Riccati system. The density of `ln Y_T` is expanded in a
//! cosine series on `[z + c1 - L1 sqrt|c2|, z + c1 + L1 sqrt|c2|]`, `c1, c2`
//! being the first two cumulants of `M`, and integrated against the put
//! payoff in closed form.
//!
//! The interval follows the query point `z`, so the phase factor
//! `phi_k exp(i u_k (z - zeta1))` does not depend on `z` and one table per
//! `(t, v)` serves every `y`.

use num_complex::Complex64;

use crate::error::{HdbError, Result};
use crate::model::HestonParams;
use crate::riccati::{solve_segment_complex, RiccatiCoeffs};
use crate::roots;

/// Series length and truncation width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosConfig {
    pub n: usize,
    pub l1: f64,
}

impl Default for CosConfig {
    fn default() -> Self {
        CosConfig { n: 64, l1: 10.0 }
    }
}

impl CosConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 8 {
            return Err(HdbError::invalid("cos.n", "must be >= 8"));
        }
        if !(self.l1 > 0.0 && self.l1.is_finite()) {
            return Err(HdbError::invalid("cos.l1", "must be > 0"));
        }
        Ok(())
    }
}

/// Truncation interval for `M` (that is, for `ln Y_T` at `y = 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationInterval {
    pub zeta1: f64,
    pub zeta2: f64,
    pub c1: f64,
    pub c2: f64,
}

fn char_coeffs(
    params: &HestonParams,
    c: f64,
    t: f64,
    horizon: f64,
    omega: f64,
) -> RiccatiCoeffs<Complex64> {
    let i = Complex64::i();
    let w = Complex64::new(omega, 0.0);
    let rb2 = 1.0 - params.rho * params.rho;
    let a = params.market_price;
    RiccatiCoeffs::new(
        Complex64::new(-0.5 * params.xi * params.xi, 0.0),
        params.kappa - i * w * params.xi * (c * rb2 - a * params.rho),
        (w * w + i * w) * (0.5 * (a * a + c * c * rb2)),
        Complex64::new(-params.kappa * params.theta, 0.0),
        i * w * params.r,
        t,
        horizon,
    )
}

/// `(C(t; omega), D(t; omega))`.
pub fn char_exponent(
    params: &HestonParams,
    c: f64,
    t: f64,
    horizon: f64,
    omega: f64,
) -> Result<(Complex64, Complex64)> {
    if omega == 0.0 || t >= horizon {
        return Ok((Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)));
    }
    if params.xi == 0.0 {
        return Err(HdbError::Unsupported(
            "COS characteristic function needs xi > 0".into(),
        ));
    }
    let sol = solve_segment_complex(char_coeffs(params, c, t, horizon, omega))?;
    Ok(sol.eval(t))
}

/// `E[exp(i omega M_{t,T}) | v_t = v]`.
pub fn char_fn(
    params: &HestonParams,
    c: f64,
    t: f64,
    v: f64,
    horizon: f64,
    omega: f64,
) -> Result<Complex64> {
    let (cc, d) = char_exponent(params, c, t, horizon, omega)?;
    Ok((cc + d * v).exp())
}

/// Cumulants of `M` by central differences of `C + D v` at `omega = 0` with
/// step `1e-3`, and the interval `c1 -/+ L1 sqrt|c2|`.
pub fn truncation_interval(
    params: &HestonParams,
    c: f64,
    t: f64,
    v: f64,
    horizon: f64,
    cfg: &CosConfig,
) -> Result<TruncationInterval> {
    cfg.validate()?;
    let h = 1e-3;
    let (cp, dp) = char_exponent(params, c, t, horizon, h)?;
    let (cm, dm) = char_exponent(params, c, t, horizon, -h)?;
    let lp = cp + dp * v;
    let lm = cm + dm * v;
    let c1 = ((lp - lm) / (2.0 * h)).im;
    let c2 = -((lp + lm) / (h * h)).re;
    if !(c2.abs() >= 1e-14) {
        return Err(HdbError::invalid(
            "cos",
            format!("degenerate distribution (c2 = {c2:e})"),
        ));
    }
    let half = cfg.l1 * c2.abs().sqrt();
    Ok(TruncationInterval {
        zeta1: c1 - half,
        zeta2: c1 + half,
        c1,
        c2,
    })
}

/// `Z~_k = 2/(zeta2 - zeta1) L [psi_k - chi_k]`, integrating over
/// `[zeta1, min(0, zeta2)]` where the put payoff is positive.
pub fn payoff_cos_coeffs(cap: f64, zeta1: f64, zeta2: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    if zeta1 >= 0.0 {
        return out;
    }
    let width = zeta2 - zeta1;
    let up = zeta2.min(0.0);
    let span = up - zeta1;
    let e_up = up.exp();
    let e_lo = zeta1.exp();
    let scale = 2.0 / width * cap;
    let u1 = std::f64::consts::PI / width;
    let step = Complex64::from_polar(1.0, u1 * span);
    let mut rot = Complex64::new(1.0, 0.0);
    for (k, slot) in out.iter_mut().enumerate() {
        let (cs, sn) = (rot.re, rot.im);
        let u = u1 * k as f64;
        let psi = if k == 0 { span } else { sn / u };
        let chi = (cs * e_up - e_lo + u * sn * e_up) / (1.0 + u * u);
        *slot = scale * (psi - chi);
        rot *= step;
    }
    out
}

/// Per-`(t, v)` table of the series.
#[derive(Debug, Clone, PartialEq)]
pub struct CosTables {
    pub cap: f64,
    /// `e^{-r (T - t)}`, the limit of `-Z_y / L` as `y -> 0`.
    pub discount: f64,
    pub interval: TruncationInterval,
    /// `u_k = k pi / (zeta2 - zeta1)`.
    pub u: Vec<f64>,
    /// `phi(u_k)`.
    pub phi: Vec<Complex64>,
    /// `D(t; u_k)`.
    pub d: Vec<Complex64>,
    /// `phi(u_k) exp(i u_k (z - zeta1(z)))`, independent of `z`.
    pub e: Vec<Complex64>,
}

/// `(Z_y, Z_yy, Z_yv)` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosDerivs {
    pub z_y: f64,
    pub z_yy: f64,
    pub z_yv: f64,
}

impl CosTables {
    pub fn new(
        params: &HestonParams,
        cap: f64,
        c: f64,
        t: f64,
        v: f64,
        horizon: f64,
        cfg: &CosConfig,
    ) -> Result<Self> {
        let interval = truncation_interval(params, c, t, v, horizon, cfg)?;
        let width = interval.zeta2 - interval.zeta1;
        let half = 0.5 * width;
        let mut u = Vec::with_capacity(cfg.n);
        let mut phi = Vec::with_capacity(cfg.n);
        let mut d = Vec::with_capacity(cfg.n);
        let mut e = Vec::with_capacity(cfg.n);
        for k in 0..cfg.n {
            let uk = k as f64 * std::f64::consts::PI / width;
            let (cc, dd) = char_exponent(params, c, t, horizon, uk)?;
            let ph = (cc + dd * v).exp();
            if !(ph.re.is_finite() && ph.im.is_finite()) {
                return Err(HdbError::non_finite(format!(
                    "characteristic function at u = {uk}"
                )));
            }
            u.push(uk);
            phi.push(ph);
            d.push(dd);
            // z - zeta1(z) = L1 sqrt|c2| - c1
            e.push(ph * Complex64::from_polar(1.0, uk * (half - interval.c1)));
        }
        Ok(CosTables {
            cap,
            discount: (-params.r * (horizon - t)).exp(),
            interval,
            u,
            phi,
            d,
            e,
        })
    }

    /// Interval for `ln Y_T` given `ln y = z`.
    pub fn interval_at(&self, z: f64) -> (f64, f64) {
        (z + self.interval.zeta1, z + self.interval.zeta2)
    }

    fn coeffs_at(&self, y: f64) -> Vec<f64> {
        let (z1, z2) = self.interval_at(y.ln());
        payoff_cos_coeffs(self.cap, z1, z2, self.u.len())
    }

    /// `Z(t, y, v)`.
    pub fn value(&self, y: f64) -> f64 {
        let zk = self.coeffs_at(y);
        let head = 0.5 * self.e[0].re * zk[0];
        head + self.e[1..]
            .iter()
            .zip(&zk[1..])
            .map(|(e, z)| e.re * z)
            .sum::<f64>()
    }

    /// `(Z, Z_y)`.
    pub fn value_and_slope(&self, y: f64) -> (f64, f64) {
        let zk = self.coeffs_at(y);
        let mut z = 0.5 * self.e[0].re * zk[0];
        let mut zy = 0.0;
        for ((e, &u), z_k) in self.e.iter().zip(&self.u).zip(&zk).skip(1) {
            z += e.re * z_k;
            zy += (e * Complex64::new(0.0, u)).re * z_k;
        }
        (z, zy / y)
    }

    pub fn derivs(&self, y: f64) -> CosDerivs {
        let zk = self.coeffs_at(y);
        let (mut zy, mut zyy, mut zyv) = (0.0, 0.0, 0.0);
        for (k, &z_k) in zk.iter().enumerate().skip(1) {
            let (u, ek) = (self.u[k], self.e[k]);
            let iu = Complex64::new(0.0, u);
            zy += (ek * iu).re * z_k;
            zyy -= (ek * Complex64::new(u * u, u)).re * z_k;
            zyv += (ek * self.d[k] * iu).re * z_k;
        }
        CosDerivs {
            z_y: zy / y,
            z_yy: zyy / (y * y),
            z_yv: zyv / y,
        }
    }

    /// Root of `Z_y(y) + x = 0` by Newton with `Z_yy`, kept inside a bracket
    /// grown geometrically from `[1e-6, 1e3]`.
    pub fn solve_ystar(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Err(HdbError::invalid("x", "wealth must be > 0"));
        }
        // -Z_y < L e^{-r (T - t)} everywhere, so there is no root once x reaches it.
        let limit = self.cap * self.discount;
        if x >= limit {
            return Err(HdbError::NoBracket {
                lo: 0.0,
                hi: f64::INFINITY,
                f_lo: x - limit,
                f_hi: x,
            });
        }
        let mut f = |y: f64| self.value_and_slope(y).1 + x;
        let (lo, hi, f_lo, f_hi) = roots::expand_bracket(
            &mut f,
            roots::DEFAULT_BRACKET.0,
            roots::DEFAULT_BRACKET.1,
            roots::MAX_EXPANSIONS,
        )?;
        let tol = 1e-11 * x;
        if f_lo.abs() <= tol {
            return Ok(lo);
        }
        if f_hi.abs() <= tol {
            return Ok(hi);
        }
        let mut fdf = |y: f64| {
            let d = self.derivs(y);
            (d.z_y + x, d.z_yy)
        };
        match roots::newton_safeguarded(&mut fdf, lo, hi, (lo * hi).sqrt(), tol, 200) {
            Ok(y) => Ok(y),
            Err(_) => roots::bisect(&mut f, lo, hi, tol),
        }
    }
}

/// `E[L (1 - Y_T)^+ | Y_t = y, v_t = v]`.
#[allow(clippy::too_many_arguments)]
pub fn cos_dual_value(
    params: &HestonParams,
    cap: f64,
    c: f64,
    t: f64,
    y: f64,
    v: f64,
    horizon: f64,
    cfg: &CosConfig,
) -> Result<f64> {
    if !(y > 0.0) {
        return Err(HdbError::invalid("y", "must be > 0"));
    }
    Ok(CosTables::new(params, cap, c, t, v, horizon, cfg)?.value(y))
}

#[allow(clippy::too_many_arguments)]
pub fn cos_dual_derivs(
    params: &HestonParams,
    cap: f64,
    c: f64,
    t: f64,
    y: f64,
    v: f64,
    horizon: f64,
    cfg: &CosConfig,
) -> Result<CosDerivs> {
    if !(y > 0.0) {
        return Err(HdbError::invalid("y", "must be > 0"));
    }
    Ok(CosTables::new(params, cap, c, t, v, horizon, cfg)?.derivs(y))
}

/// Upper bound `Z(t, y*, v) + x y*` with its conjugation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosUpper {
    pub value: f64,
    pub y_star: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn yaari_upper_bound(
    params: &HestonParams,
    cap: f64,
    c: f64,
    t: f64,
    x: f64,
    v: f64,
    horizon: f64,
    cfg: &CosConfig,
) -> Result<CosUpper> {
    let tables = CosTables::new(params, cap, c, t, v, horizon, cfg)?;
    let y = tables.solve_ystar(x)?;
    Ok(CosUpper {
        value: tables.value(y) + x * y,
        y_star: y,
    })
}

/// Feedback fraction `A y Z_yy / x - xi rho Z_yv / x` at the conjugation
/// point; zero once `x >= L e^{-r (T - t)}`, where the cap is reachable
/// without risk.
pub fn yaari_feedback(params: &HestonParams, tables: &CosTables, x: f64) -> Result<f64> {
    if x >= tables.cap * tables.discount {
        return Ok(0.0);
    }
    let y = tables.solve_ystar(x)?;
    let d = tables.derivs(y);
    Ok(params.market_price * y * d.z_yy / x - params.xi * params.rho * d.z_yv / x)
}
