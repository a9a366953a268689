//! Path simulation for the variance, dual and wealth processes.
//!
//! Each step draws two independent standard normals `(z1, z2)`: `z1` drives
//! the variance, and the asset is driven by `rho z1 + sqrt(1 - rho^2) z2`.
//! The variance uses full-truncation Euler, the dual process an exact
//! log-Euler step and wealth a plain Euler step absorbed at zero.
//!
//! Random numbers come from ChaCha8 keyed by `(seed, domain)` with one
//! stream per path, so path `i` draws the same normals whatever the number of
//! worker threads. Results are collected in path order.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;

use crate::error::{HdbError, Result};
use crate::model::HestonParams;

/// Stream domain of the upper-bound (dual) simulations.
pub const DOMAIN_UPPER: u64 = 0x5550_5045_5200_0001;
/// Stream domain of the lower-bound wealth simulations.
pub const DOMAIN_LOWER: u64 = 0x4c4f_5745_5200_0002;
/// Stream domain of the simulations behind Monte Carlo policies.
pub const DOMAIN_POLICY: u64 = 0x504f_4c49_4359_0003;

/// Simulation sizes and seeding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub num_paths: usize,
    pub num_steps: usize,
    pub seed: u64,
    /// Relative finite-difference step.
    pub fd_step: f64,
    /// Pair path `2k` with the sign-flipped normals of path `2k + 1`.
    pub antithetic: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            num_paths: 100_000,
            num_steps: 100,
            seed: 20_240_601,
            fd_step: 1e-3,
            antithetic: false,
        }
    }
}

impl SimConfig {
    pub fn new(num_paths: usize, num_steps: usize, seed: u64) -> Result<Self> {
        let cfg = SimConfig {
            num_paths,
            num_steps,
            seed,
            ..SimConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_paths == 0 {
            return Err(HdbError::invalid("sim.paths", "must be >= 1"));
        }
        if self.num_steps == 0 {
            return Err(HdbError::invalid("sim.steps", "must be >= 1"));
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(HdbError::invalid("sim.fd_step", "must be > 0"));
        }
        Ok(())
    }
}

/// How the dual control multiplies the coefficient `c(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControlFamily {
    /// `gamma = c(t)`
    Constant,
    /// `gamma = c(t) sqrt(v)`
    TimesSqrtV,
    /// `gamma = c(t) v`
    TimesV,
}

impl ControlFamily {
    pub fn name(&self) -> &'static str {
        match self {
            ControlFamily::Constant => "c",
            ControlFamily::TimesSqrtV => "c_sqrt_v",
            ControlFamily::TimesV => "c_v",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "c" | "constant" => Some(ControlFamily::Constant),
            "c_sqrt_v" | "sqrt_v" => Some(ControlFamily::TimesSqrtV),
            "c_v" | "v" => Some(ControlFamily::TimesV),
            _ => None,
        }
    }
}

/// Piecewise-constant dual control `gamma_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualControl {
    pub family: ControlFamily,
    pub coefficients: Vec<f64>,
    /// `t_0 < t_1 < ... < t_n`; coefficient `j` applies on `(t_j, t_{j+1}]`.
    pub breakpoints: Vec<f64>,
}

impl DualControl {
    pub fn new(
        family: ControlFamily,
        coefficients: Vec<f64>,
        breakpoints: Vec<f64>,
    ) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(HdbError::invalid(
                "controls.pieces",
                "need at least one coefficient",
            ));
        }
        if breakpoints.len() != coefficients.len() + 1 {
            return Err(HdbError::invalid(
                "controls.pieces",
                format!(
                    "{} coefficients need {} breakpoints",
                    coefficients.len(),
                    coefficients.len() + 1
                ),
            ));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(HdbError::invalid(
                "controls.pieces",
                "breakpoints must increase strictly",
            ));
        }
        if coefficients
            .iter()
            .chain(&breakpoints)
            .any(|x| !x.is_finite())
        {
            return Err(HdbError::invalid(
                "controls",
                "coefficients and breakpoints must be finite",
            ));
        }
        Ok(DualControl {
            family,
            coefficients,
            breakpoints,
        })
    }

    /// Equally spaced pieces on `[t0, horizon]`.
    pub fn uniform(
        family: ControlFamily,
        coefficients: Vec<f64>,
        t0: f64,
        horizon: f64,
    ) -> Result<Self> {
        let n = coefficients.len().max(1);
        let breakpoints = (0..=n)
            .map(|j| {
                if j == n {
                    horizon
                } else {
                    t0 + (horizon - t0) * j as f64 / n as f64
                }
            })
            .collect();
        Self::new(family, coefficients, breakpoints)
    }

    pub fn constant(family: ControlFamily, c: f64, t0: f64, horizon: f64) -> Result<Self> {
        Self::uniform(family, vec![c], t0, horizon)
    }

    pub fn t_start(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn t_end(&self) -> f64 {
        self.breakpoints[self.breakpoints.len() - 1]
    }

    pub fn pieces(&self) -> usize {
        self.coefficients.len()
    }

    /// `c(s)`, left-continuous at interior breakpoints.
    #[inline]
    pub fn coefficient_at(&self, s: f64) -> f64 {
        let n = self.coefficients.len();
        if n == 1 {
            return self.coefficients[0];
        }
        let idx = self.breakpoints[1..n].partition_point(|&b| b < s);
        self.coefficients[idx]
    }

    /// `gamma(s, v)` using `v+ = max(v, 0)`.
    #[inline]
    pub fn gamma(&self, s: f64, v: f64) -> f64 {
        let c = self.coefficient_at(s);
        let vp = v.max(0.0);
        match self.family {
            ControlFamily::Constant => c,
            ControlFamily::TimesSqrtV => c * vp.sqrt(),
            ControlFamily::TimesV => c * vp,
        }
    }

    /// Same coefficients restricted to `[t0, t_end]`.
    pub fn restricted(&self, t0: f64) -> Result<Self> {
        let mut coefficients = Vec::new();
        let mut breakpoints = vec![t0];
        for (j, &c) in self.coefficients.iter().enumerate() {
            if self.breakpoints[j + 1] > t0 {
                coefficients.push(c);
                breakpoints.push(self.breakpoints[j + 1]);
            }
        }
        Self::new(self.family, coefficients, breakpoints)
    }
}

/// Terminal values of one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    /// `Y_T = y0 exp(M)`.
    pub y_terminal: f64,
    /// Exponent `M_{t,T}`.
    pub exponent: f64,
    /// Terminal wealth when a policy was simulated alongside.
    pub x_terminal: Option<f64>,
}

/// Trading policy `pi(t, x, v)`, the fraction of wealth in the risky asset.
pub trait Policy: Sync {
    fn pi(&self, t: f64, x: f64, v: f64) -> Result<f64>;
}

/// Policy holding a fixed fraction.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy(pub f64);

impl Policy for ConstantPolicy {
    fn pi(&self, _t: f64, _x: f64, _v: f64) -> Result<f64> {
        Ok(self.0)
    }
}

/// Adapter for plain functions.
pub struct FnPolicy<F>(pub F);

impl<F: Fn(f64, f64, f64) -> f64 + Sync> Policy for FnPolicy<F> {
    fn pi(&self, t: f64, x: f64, v: f64) -> Result<f64> {
        Ok((self.0)(t, x, v))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Normal pairs for one path. Step `k` consumes words `4k..4k+4` of the
/// ChaCha stream, so the draw is a function of `(seed, domain, path, k)`.
pub struct PathNormals {
    rng: ChaCha8Rng,
    sign: f64,
}

impl PathNormals {
    pub fn new(seed: u64, domain: u64, path: u64, antithetic: bool) -> Self {
        let mut key = [0u8; 32];
        let mut s = splitmix64(seed ^ splitmix64(domain));
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&s.to_le_bytes());
            s = splitmix64(s);
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        let (stream, sign) = if antithetic {
            (path / 2, if path.is_multiple_of(2) { 1.0 } else { -1.0 })
        } else {
            (path, 1.0)
        };
        rng.set_stream(stream);
        PathNormals { rng, sign }
    }

    /// Normals for step `k` regardless of what was drawn before.
    pub fn seek(&mut self, step: u64) {
        self.rng.set_word_pos(4 * step as u128);
    }

    /// Uniform on `[0, 1)`, ignoring the antithetic sign.
    pub fn next_uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Box-Muller pair.
    #[inline]
    pub fn next_pair(&mut self) -> (f64, f64) {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * SCALE;
        let u2 = (self.rng.next_u64() >> 11) as f64 * SCALE;
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        (self.sign * r * c, self.sign * r * s)
    }
}

/// Full-truncation Euler step of the variance.
#[inline]
pub fn step_variance(v: f64, params: &HestonParams, dt: f64, z1: f64) -> f64 {
    let vp = v.max(0.0);
    v + params.kappa * (params.theta - vp) * dt + params.xi * vp.sqrt() * dt.sqrt() * z1
}

/// Increment of `ln Y` over one step with control value `gamma` at variance
/// `v` (truncated at zero). `Y e^{rt}` is an exact discrete martingale.
#[inline]
pub fn dual_log_increment(
    params: &HestonParams,
    gamma: f64,
    v: f64,
    dt: f64,
    z1: f64,
    z2: f64,
) -> f64 {
    let vp = v.max(0.0);
    let sq = vp.sqrt();
    let a = params.market_price;
    let rho = params.rho;
    let rho_bar = params.rho_bar();
    let sdt = dt.sqrt();
    let ws = rho * z1 + rho_bar * z2;
    (-params.r - 0.5 * (1.0 - rho * rho) * gamma * gamma - 0.5 * a * a * vp) * dt
        - (a * sq + gamma * rho) * ws * sdt
        + gamma * sdt * z1
}

/// Euler step of wealth under fraction `pi`.
#[inline]
pub fn wealth_step(
    params: &HestonParams,
    x: f64,
    pi: f64,
    v: f64,
    dt: f64,
    z1: f64,
    z2: f64,
) -> f64 {
    let vp = v.max(0.0);
    let sq = vp.sqrt();
    let ws = params.rho * z1 + params.rho_bar() * z2;
    x + params.r * x * dt + pi * x * sq * (params.market_price * sq * dt + ws * dt.sqrt())
}

/// Time grid of a simulation from `t0` to `horizon` with `steps` steps.
pub fn step_size(t0: f64, horizon: f64, steps: usize) -> f64 {
    (horizon - t0) / steps as f64
}

/// Paths of `ln(Y_T / y0)` from `(t0, v0)` to the control's end time.
pub fn simulate_exponents(
    params: &HestonParams,
    control: &DualControl,
    v0: f64,
    t0: f64,
    cfg: &SimConfig,
    domain: u64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let horizon = control.t_end();
    if !(t0 <= horizon) {
        return Err(HdbError::invalid(
            "state.t",
            format!("start {t0} after horizon {horizon}"),
        ));
    }
    if horizon - t0 <= 0.0 {
        return Ok(vec![0.0; cfg.num_paths]);
    }
    let steps = cfg.num_steps;
    let dt = step_size(t0, horizon, steps);
    (0..cfg.num_paths as u64)
        .into_par_iter()
        .map(|path| {
            let mut normals = PathNormals::new(cfg.seed, domain, path, cfg.antithetic);
            let mut v = v0;
            let mut m = 0.0;
            for k in 0..steps {
                let (z1, z2) = normals.next_pair();
                let t_mid = t0 + (k as f64 + 0.5) * dt;
                let gamma = control.gamma(t_mid, v);
                m += dual_log_increment(params, gamma, v, dt, z1, z2);
                v = step_variance(v, params, dt, z1);
            }
            if m.is_finite() {
                Ok(m)
            } else {
                Err(HdbError::non_finite(format!("dual path {path}")))
            }
        })
        .collect()
}

/// Terminal dual values from `Y_{t0} = y0`, `v_{t0} = v0`.
pub fn simulate_dual_terminal(
    params: &HestonParams,
    control: &DualControl,
    y0: f64,
    v0: f64,
    t0: f64,
    cfg: &SimConfig,
    domain: u64,
) -> Result<Vec<PathSample>> {
    if !(y0 > 0.0) {
        return Err(HdbError::invalid("y", "initial dual value must be > 0"));
    }
    let exps = simulate_exponents(params, control, v0, t0, cfg, domain)?;
    Ok(exps
        .into_iter()
        .map(|m| PathSample {
            y_terminal: y0 * m.exp(),
            exponent: m,
            x_terminal: None,
        })
        .collect())
}

fn simulate_wealth_path(
    params: &HestonParams,
    policy: &dyn Policy,
    x0: f64,
    v0: f64,
    t0: f64,
    dt: f64,
    steps: usize,
    normals: &mut PathNormals,
    mut dual: Option<(&DualControl, &mut f64)>,
) -> Result<f64> {
    let mut x = x0;
    let mut v = v0;
    let mut alive = true;
    for k in 0..steps {
        let (z1, z2) = normals.next_pair();
        let t = t0 + k as f64 * dt;
        if let Some((control, m)) = dual.as_mut() {
            let gamma = control.gamma(t + 0.5 * dt, v);
            **m += dual_log_increment(params, gamma, v, dt, z1, z2);
        }
        if alive {
            let pi = policy.pi(t, x, v.max(0.0)).map_err(|e| {
                HdbError::NoConvergence(format!("policy at t = {t}, x = {x}, v = {v}: {e}"))
            })?;
            x = wealth_step(params, x, pi, v, dt, z1, z2);
            if !x.is_finite() {
                return Err(HdbError::non_finite(format!("wealth at t = {t}")));
            }
            if x <= 0.0 {
                x = 0.0;
                alive = false;
                if dual.is_none() {
                    break;
                }
            }
        }
        v = step_variance(v, params, dt, z1);
    }
    Ok(x)
}

/// Terminal wealth under `policy` from `(t0, x0, v0)` to `horizon`. Paths
/// reaching zero stay at zero.
pub fn simulate_wealth_terminal(
    params: &HestonParams,
    policy: &dyn Policy,
    x0: f64,
    v0: f64,
    t0: f64,
    horizon: f64,
    cfg: &SimConfig,
    domain: u64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if !(x0 > 0.0) {
        return Err(HdbError::invalid("state.x0", "initial wealth must be > 0"));
    }
    if horizon - t0 <= 0.0 {
        return Ok(vec![x0; cfg.num_paths]);
    }
    let dt = step_size(t0, horizon, cfg.num_steps);
    (0..cfg.num_paths as u64)
        .into_par_iter()
        .map(|path| {
            let mut normals = PathNormals::new(cfg.seed, domain, path, cfg.antithetic);
            simulate_wealth_path(
                params,
                policy,
                x0,
                v0,
                t0,
                dt,
                cfg.num_steps,
                &mut normals,
                None,
            )
        })
        .collect()
}

/// Dual and wealth driven by the same normals on every path.
pub fn simulate_paired(
    params: &HestonParams,
    control: &DualControl,
    policy: &dyn Policy,
    x0: f64,
    y0: f64,
    v0: f64,
    t0: f64,
    cfg: &SimConfig,
    domain: u64,
) -> Result<Vec<PathSample>> {
    cfg.validate()?;
    let horizon = control.t_end();
    if horizon - t0 <= 0.0 {
        return Ok(vec![
            PathSample {
                y_terminal: y0,
                exponent: 0.0,
                x_terminal: Some(x0),
            };
            cfg.num_paths
        ]);
    }
    let dt = step_size(t0, horizon, cfg.num_steps);
    (0..cfg.num_paths as u64)
        .into_par_iter()
        .map(|path| {
            let mut normals = PathNormals::new(cfg.seed, domain, path, cfg.antithetic);
            let mut m = 0.0;
            let x = simulate_wealth_path(
                params,
                policy,
                x0,
                v0,
                t0,
                dt,
                cfg.num_steps,
                &mut normals,
                Some((control, &mut m)),
            )?;
            Ok(PathSample {
                y_terminal: y0 * m.exp(),
                exponent: m,
                x_terminal: Some(x),
            })
        })
        .collect()
}
