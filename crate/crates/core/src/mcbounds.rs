//! Dual-control Monte Carlo bounds.
//!
//! For a candidate control `gamma`, the upper bound is `Z(t, y*, v) + x y*`
//! where `Z(t, y, v) = E[U~(Y_T)]` and `Z_y(t, y*, v) + x = 0`. The lower
//! bound is the expected utility of the feedback policy
//! `pi = A y* Z_yy / x - xi rho Z_yv / x` built from the same dual. Depending
//! on the utility and control family `Z` comes from the sum-of-powers closed
//! form, the Fourier-cosine series or simulation.

use std::time::Instant;

use rayon::prelude::*;

use crate::closedform::{self, SumPowerPolicy};
use crate::cosmethod::{self, CosConfig, CosTables};
use crate::error::{HdbError, Result};
use crate::model::{
    dual_utility_deriv_unchecked, dual_utility_unchecked, utility_unchecked, HestonParams,
    UtilitySpec,
};
use crate::roots;
use crate::simulate::{
    self, simulate_exponents, ControlFamily, DualControl, Policy, SimConfig, DOMAIN_LOWER,
    DOMAIN_POLICY, DOMAIN_UPPER,
};
use crate::stats::{self, mean_se_paired, Estimate};

/// How the dual value and its derivatives are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    /// Sum-of-powers closed form.
    Analytic,
    /// Fourier-cosine series.
    Cos,
    /// Simulation.
    MonteCarlo,
}

impl Route {
    pub fn name(&self) -> &'static str {
        match self {
            Route::Analytic => "analytic",
            Route::Cos => "cos",
            Route::MonteCarlo => "mc",
        }
    }
}

/// Cheapest applicable route.
pub fn select_route(params: &HestonParams, utility: &UtilitySpec, control: &DualControl) -> Route {
    if params.xi == 0.0 || control.family != ControlFamily::TimesSqrtV {
        return Route::MonteCarlo;
    }
    match utility {
        UtilitySpec::Power { .. } | UtilitySpec::NonHara => Route::Analytic,
        UtilitySpec::Yaari { .. } if control.pieces() == 1 => Route::Cos,
        UtilitySpec::Yaari { .. } => Route::MonteCarlo,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpperMethod {
    Auto,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LowerMethod {
    /// Closed form for power utility on the analytic route, otherwise simulation.
    Auto,
    MonteCarlo,
    Closed,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyEval {
    /// Direct evaluation on the analytic route, the lattice otherwise.
    Auto,
    Direct,
    Lattice,
}

/// Sizes of the policy lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeSpec {
    /// Time nodes; `0` means one node per simulation step.
    pub t_nodes: usize,
    pub x_nodes: usize,
    pub x_lo_mult: f64,
    pub x_hi_mult: f64,
    pub v_nodes: usize,
    pub v_hi_mult: f64,
}

impl Default for LatticeSpec {
    fn default() -> Self {
        LatticeSpec {
            t_nodes: 0,
            x_nodes: 41,
            x_lo_mult: 0.01,
            x_hi_mult: 20.0,
            v_nodes: 21,
            v_hi_mult: 4.0,
        }
    }
}

/// Everything the bound computations need besides the model and state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsConfig {
    pub sim: SimConfig,
    /// Paths per lattice node on the simulation route.
    pub policy_paths: usize,
    pub cos: CosConfig,
    pub upper: UpperMethod,
    pub lower: LowerMethod,
    pub policy_eval: PolicyEval,
    /// Pieces of the closed-form lower bound's fraction.
    pub closed_pieces: usize,
    /// Use the discounted dual `e^{r(T-t)} Y_T / y - 1` (mean zero) as a
    /// control variate for simulated lower bounds.
    pub control_variate: bool,
    pub lattice: LatticeSpec,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig {
            sim: SimConfig::default(),
            policy_paths: 10_000,
            cos: CosConfig::default(),
            upper: UpperMethod::Auto,
            lower: LowerMethod::Auto,
            policy_eval: PolicyEval::Auto,
            closed_pieces: 100,
            control_variate: false,
            lattice: LatticeSpec::default(),
        }
    }
}

impl BoundsConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.cos.validate()?;
        if self.policy_paths == 0 {
            return Err(HdbError::invalid("sim.policy_paths", "must be >= 1"));
        }
        if self.closed_pieces == 0 {
            return Err(HdbError::invalid("bounds.closed_pieces", "must be >= 1"));
        }
        let l = &self.lattice;
        if l.x_nodes < 2 || l.v_nodes < 2 {
            return Err(HdbError::invalid(
                "lattice",
                "x and v axes need at least 2 nodes",
            ));
        }
        if !(l.x_lo_mult > 0.0 && l.x_hi_mult > l.x_lo_mult && l.v_hi_mult > 0.0) {
            return Err(HdbError::invalid(
                "lattice",
                "axis ranges must be positive and increasing",
            ));
        }
        Ok(())
    }
}

/// Point of evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub t: f64,
    pub x: f64,
    pub v: f64,
    pub horizon: f64,
}

impl EvalPoint {
    pub fn new(t: f64, x: f64, v: f64, horizon: f64) -> Result<Self> {
        crate::model::MarketState::new(t, horizon, x, v, 1.0)?;
        if !(x > 0.0) {
            return Err(HdbError::invalid("state.x0", "wealth must be > 0"));
        }
        Ok(EvalPoint { t, x, v, horizon })
    }
}

/// Simulated dual value and pathwise slope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualValueEstimate {
    pub z: f64,
    pub z_y: f64,
    pub z_se: f64,
    pub z_y_se: f64,
    pub paths: usize,
}

/// `Z = mean U~(Y_T)` and `Z_y = mean Y_T U~'(Y_T) / y` from `Y_t = y`.
pub fn mc_dual_estimate(
    params: &HestonParams,
    control: &DualControl,
    utility: &UtilitySpec,
    y: f64,
    v: f64,
    t: f64,
    cfg: &SimConfig,
) -> Result<DualValueEstimate> {
    if !(y > 0.0) {
        return Err(HdbError::invalid("y", "must be > 0"));
    }
    let exps = simulate_exponents(params, control, v, t, cfg, DOMAIN_UPPER)?;
    Ok(dual_estimate_from_exponents(
        utility,
        &exps,
        y,
        cfg.antithetic,
    ))
}

fn dual_estimate_from_exponents(
    utility: &UtilitySpec,
    exps: &[f64],
    y: f64,
    antithetic: bool,
) -> DualValueEstimate {
    let vals: Vec<f64> = exps
        .iter()
        .map(|m| dual_utility_unchecked(utility, y * m.exp()))
        .collect();
    let slopes: Vec<f64> = exps
        .iter()
        .map(|m| {
            let yt = y * m.exp();
            yt * dual_utility_deriv_unchecked(utility, yt) / y
        })
        .collect();
    let z = mean_se_paired(&vals, antithetic);
    let zy = mean_se_paired(&slopes, antithetic);
    DualValueEstimate {
        z: z.mean,
        z_y: zy.mean,
        z_se: z.se,
        z_y_se: zy.se,
        paths: exps.len(),
    }
}

/// Dual value as a function of `y` from one set of simulated exponents, so
/// every `y` sees the same random numbers.
#[derive(Debug, Clone, PartialEq)]
pub enum EmpiricalDual {
    /// `Z(y) = sum_i -y^{q_i}/q_i F_i` with `F_i` the sample mean of `e^{q_i M}`.
    SumPowers {
        exponents: Vec<f64>,
        moments: Vec<f64>,
    },
    /// `Z(y) = L/n sum_{M_j < -ln y} (1 - y e^{M_j})` via sorted exponents.
    Threshold {
        cap: f64,
        sorted: Vec<f64>,
        /// `prefix[j] = sum_{i < j} e^{sorted_i}`.
        prefix: Vec<f64>,
        /// Kernel half-width used by the policy derivatives.
        bandwidth: f64,
    },
}

/// Epanechnikov kernel and its integral on `[-1, 1]`.
#[inline]
fn epanechnikov(u: f64) -> (f64, f64) {
    if u <= -1.0 {
        (0.0, 0.0)
    } else if u >= 1.0 {
        (0.0, 1.0)
    } else {
        (0.75 * (1.0 - u * u), 0.5 + 0.75 * (u - u * u * u / 3.0))
    }
}

impl EmpiricalDual {
    pub fn from_exponents(utility: &UtilitySpec, exps: &[f64]) -> Self {
        match utility {
            UtilitySpec::Yaari { cap } => {
                let mut sorted = exps.to_vec();
                sorted.sort_by(f64::total_cmp);
                let n = sorted.len() as f64;
                let mean = sorted.iter().sum::<f64>() / n;
                let sd = (sorted.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n).sqrt();
                // rule-of-thumb width for the Epanechnikov kernel
                let bandwidth = (2.34 * sd * n.powf(-0.2)).max(1e-8);
                let mut prefix = Vec::with_capacity(sorted.len() + 1);
                let mut acc = 0.0;
                prefix.push(0.0);
                for m in &sorted {
                    acc += m.exp();
                    prefix.push(acc);
                }
                EmpiricalDual::Threshold {
                    cap: *cap,
                    sorted,
                    prefix,
                    bandwidth,
                }
            }
            _ => {
                let exponents = utility.dual_power_terms().unwrap_or_default();
                let n = exps.len() as f64;
                let moments = exponents
                    .iter()
                    .map(|&q| exps.iter().map(|m| (q * m).exp()).sum::<f64>() / n)
                    .collect();
                EmpiricalDual::SumPowers { exponents, moments }
            }
        }
    }

    fn count_below(sorted: &[f64], y: f64) -> usize {
        let z = -y.ln();
        sorted.partition_point(|&m| m < z)
    }

    pub fn value(&self, y: f64) -> f64 {
        match self {
            EmpiricalDual::SumPowers { exponents, moments } => exponents
                .iter()
                .zip(moments)
                .map(|(&q, &f)| -y.powf(q) / q * f)
                .sum(),
            EmpiricalDual::Threshold {
                cap,
                sorted,
                prefix,
                ..
            } => {
                let j = Self::count_below(sorted, y);
                cap * (j as f64 - y * prefix[j]) / sorted.len() as f64
            }
        }
    }

    /// `Z_y(y)`.
    pub fn slope(&self, y: f64) -> f64 {
        match self {
            EmpiricalDual::SumPowers { exponents, moments } => exponents
                .iter()
                .zip(moments)
                .map(|(&q, &f)| -y.powf(q - 1.0) * f)
                .sum(),
            EmpiricalDual::Threshold {
                cap,
                sorted,
                prefix,
                ..
            } => {
                let j = Self::count_below(sorted, y);
                -cap * prefix[j] / sorted.len() as f64
            }
        }
    }

    /// `(Z_y, Z_yy)` for the feedback policy. The threshold dual has a
    /// step-function slope, so its indicator is smoothed with a kernel;
    /// sums of powers use a central difference with relative step `fd_step`.
    pub fn policy_derivs(&self, y: f64, fd_step: f64) -> (f64, f64) {
        match self {
            EmpiricalDual::SumPowers { .. } => {
                let h = fd_step * y;
                (
                    self.slope(y),
                    (self.slope(y + h) - self.slope(y - h)) / (2.0 * h),
                )
            }
            EmpiricalDual::Threshold {
                cap,
                sorted,
                prefix,
                bandwidth,
            } => {
                let z = -y.ln();
                let lo = sorted.partition_point(|&m| m <= z - bandwidth);
                let hi = sorted.partition_point(|&m| m < z + bandwidth);
                let (mut s, mut ds) = (prefix[lo], 0.0);
                for &m in &sorted[lo..hi] {
                    let (k, kk) = epanechnikov((z - m) / bandwidth);
                    let w = m.exp();
                    s += w * kk;
                    ds += w * k;
                }
                let scale = cap / sorted.len() as f64;
                (-scale * s, scale * ds / (y * bandwidth))
            }
        }
    }

    /// `sup_y -Z_y(y)` when finite: no conjugation point exists for `x` at or
    /// above it.
    pub fn slope_limit(&self) -> Option<f64> {
        match self {
            EmpiricalDual::SumPowers { .. } => None,
            EmpiricalDual::Threshold {
                cap,
                sorted,
                prefix,
                ..
            } => Some(cap * prefix[sorted.len()] / sorted.len() as f64),
        }
    }
}

/// Tolerance on `|Z_y(y*) + x|`.
pub fn ystar_tolerance(x: f64) -> f64 {
    (1e-6 * x).max(1e-8)
}

/// Root of `Z_y(y) + x` by bisection on a bracket grown from `[1e-6, 1e3]`.
pub fn solve_ystar(deriv: impl Fn(f64) -> f64, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(HdbError::invalid("x", "wealth must be > 0"));
    }
    let mut f = |y: f64| deriv(y) + x;
    roots::solve_increasing(&mut f, ystar_tolerance(x))
}

/// Feedback fraction from an empirical dual and its `v`-perturbed copies.
fn empirical_feedback(
    params: &HestonParams,
    base: &EmpiricalDual,
    v_pair: Option<(&EmpiricalDual, &EmpiricalDual, f64)>,
    x: f64,
    fd_step: f64,
) -> Result<f64> {
    if let Some(limit) = base.slope_limit() {
        if x >= limit {
            return Ok(0.0);
        }
    }
    let y = solve_ystar(|y| base.policy_derivs(y, fd_step).0, x)?;
    let z_yy = base.policy_derivs(y, fd_step).1;
    let z_yv = match v_pair {
        Some((up, down, dv)) => {
            (up.policy_derivs(y, fd_step).0 - down.policy_derivs(y, fd_step).0) / dv
        }
        None => 0.0,
    };
    Ok(params.market_price * y * z_yy / x - params.xi * params.rho * z_yv / x)
}

/// One lattice axis; a single node makes the axis constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub nodes: Vec<f64>,
}

impl Axis {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(HdbError::invalid("lattice", "axis without nodes"));
        }
        if nodes.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(HdbError::invalid(
                "lattice",
                "axis nodes must increase strictly",
            ));
        }
        Ok(Axis { nodes })
    }

    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 1 || lo == hi {
            return Self::new(vec![lo]);
        }
        Self::new(
            (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect(),
        )
    }

    pub fn geometric(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 1 {
            return Self::new(vec![lo]);
        }
        let ratio = hi / lo;
        Self::new(
            (0..n)
                .map(|i| lo * ratio.powf(i as f64 / (n - 1) as f64))
                .collect(),
        )
    }

    /// Nodes uniform in `sqrt(s)` on `[0, hi]`.
    pub fn sqrt_uniform(hi: f64, n: usize) -> Result<Self> {
        if n == 1 {
            return Self::new(vec![0.0]);
        }
        Self::new(
            (0..n)
                .map(|i| hi * (i as f64 / (n - 1) as f64).powi(2))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Lower node index and weight of the upper node, clamped to the range.
    #[inline]
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let n = self.nodes.len();
        if n == 1 || x <= self.nodes[0] {
            return (0, 0.0);
        }
        if x >= self.nodes[n - 1] {
            return (n - 2, 1.0);
        }
        let i = self.nodes.partition_point(|&s| s <= x) - 1;
        let w = (x - self.nodes[i]) / (self.nodes[i + 1] - self.nodes[i]);
        (i, w)
    }
}

/// Policy values on a `(t, x, v)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySurface {
    pub t: Axis,
    pub x: Axis,
    pub v: Axis,
    /// Indexed `[t][v][x]`.
    pub values: Vec<f64>,
    /// When set, the `x` axis holds wealth relative to the lock-in level.
    pub lock_in: Option<LockIn>,
}

/// Wealth `cap e^{-r (horizon - t)}` that buys the capped payoff outright;
/// the threshold policy holds no risky asset at or above it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LockIn {
    pub cap: f64,
    pub r: f64,
    pub horizon: f64,
}

impl LockIn {
    pub fn level(&self, t: f64) -> f64 {
        self.cap * (-self.r * (self.horizon - t)).exp()
    }
}

impl PolicySurface {
    #[inline]
    fn at(&self, it: usize, iv: usize, ix: usize) -> f64 {
        self.values[(it * self.v.len() + iv) * self.x.len() + ix]
    }

    /// Trilinear interpolation with clamping.
    pub fn interpolate(&self, t: f64, x: f64, v: f64) -> f64 {
        let x = match self.lock_in {
            Some(lock) => {
                let b = lock.level(t);
                if x >= b {
                    return 0.0;
                }
                x / b
            }
            None => x,
        };
        let (it, wt) = self.t.locate(t);
        let (ix, wx) = self.x.locate(x);
        let (iv, wv) = self.v.locate(v);
        let nt = if self.t.len() > 1 { 1 } else { 0 };
        let nx = if self.x.len() > 1 { 1 } else { 0 };
        let nv = if self.v.len() > 1 { 1 } else { 0 };
        let mut acc = 0.0;
        for (dt, ft) in [(0, 1.0 - wt), (nt, wt)] {
            if ft == 0.0 {
                continue;
            }
            for (dv, fv) in [(0, 1.0 - wv), (nv, wv)] {
                if fv == 0.0 {
                    continue;
                }
                for (dx, fx) in [(0, 1.0 - wx), (nx, wx)] {
                    if fx == 0.0 {
                        continue;
                    }
                    acc += ft * fv * fx * self.at(it + dt, iv + dv, ix + dx);
                }
            }
        }
        acc
    }
}

impl Policy for PolicySurface {
    fn pi(&self, t: f64, x: f64, v: f64) -> Result<f64> {
        Ok(self.interpolate(t, x, v))
    }
}

/// Policy values for all `x` nodes at one `(t, v)`.
type NodeFn<'a> = dyn Fn(f64, f64, &[f64]) -> Result<Vec<f64>> + Sync + 'a;

/// Builds a surface from a node function returning the policy for all `x`
/// nodes at one `(t, v)`. Nodes are evaluated in parallel.
pub fn build_policy_lattice<F>(t: Axis, x: Axis, v: Axis, node: F) -> Result<PolicySurface>
where
    F: Fn(f64, f64, &[f64]) -> Result<Vec<f64>> + Sync,
{
    let nv = v.len();
    let rows: Vec<Vec<f64>> = (0..t.len() * nv)
        .into_par_iter()
        .map(|k| {
            let (tt, vv) = (t.nodes[k / nv], v.nodes[k % nv]);
            let row = node(tt, vv, &x.nodes)?;
            if let Some(i) = row.iter().position(|p| !p.is_finite()) {
                return Err(HdbError::non_finite(format!(
                    "policy lattice at t = {tt}, x = {}, v = {vv}",
                    x.nodes[i]
                )));
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(PolicySurface {
        t,
        x,
        v,
        values: rows.into_iter().flatten().collect(),
        lock_in: None,
    })
}

/// Like [`build_policy_lattice`] with `q` holding wealth as a fraction of the
/// lock-in level. The node function still receives absolute wealth; nodes at
/// `q >= 1` are set to zero.
pub fn build_locked_lattice<F>(
    t: Axis,
    q: Axis,
    v: Axis,
    lock: LockIn,
    node: F,
) -> Result<PolicySurface>
where
    F: Fn(f64, f64, &[f64]) -> Result<Vec<f64>> + Sync,
{
    let qs = q.nodes.clone();
    let mut surface = build_policy_lattice(t, q, v, |tt, vv, _| {
        let b = lock.level(tt);
        let xs: Vec<f64> = qs.iter().map(|q| q * b).collect();
        let mut row = node(tt, vv, &xs)?;
        for (p, &q) in row.iter_mut().zip(&qs) {
            if q >= 1.0 {
                *p = 0.0;
            }
        }
        Ok(row)
    })?;
    surface.lock_in = Some(lock);
    Ok(surface)
}

/// Policy surfaces for a list of candidates: the fourth lattice axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlLattice {
    pub candidates: Vec<Vec<f64>>,
    pub surfaces: Vec<PolicySurface>,
}

impl ControlLattice {
    pub fn new(candidates: Vec<Vec<f64>>, surfaces: Vec<PolicySurface>) -> Result<Self> {
        if candidates.len() != surfaces.len() || candidates.is_empty() {
            return Err(HdbError::invalid(
                "lattice",
                "one surface per candidate is required",
            ));
        }
        Ok(ControlLattice {
            candidates,
            surfaces,
        })
    }

    /// Interpolates in `(t, x, v)` and, for single-piece controls, linearly
    /// between the two nearest candidates; multi-piece candidates must match.
    pub fn interpolate(&self, t: f64, x: f64, v: f64, c: &[f64]) -> Result<f64> {
        if let Some(i) = self.candidates.iter().position(|k| k.as_slice() == c) {
            return Ok(self.surfaces[i].interpolate(t, x, v));
        }
        if c.len() != 1 || self.candidates.iter().any(|k| k.len() != 1) {
            return Err(HdbError::invalid(
                "controls",
                "candidate not on the lattice",
            ));
        }
        let mut order: Vec<usize> = (0..self.candidates.len()).collect();
        order.sort_by(|&a, &b| self.candidates[a][0].total_cmp(&self.candidates[b][0]));
        let axis = Axis::new(order.iter().map(|&i| self.candidates[i][0]).collect())?;
        let (i, w) = axis.locate(c[0]);
        let lo = self.surfaces[order[i]].interpolate(t, x, v);
        if axis.len() == 1 {
            return Ok(lo);
        }
        let hi = self.surfaces[order[i + 1]].interpolate(t, x, v);
        Ok((1.0 - w) * lo + w * hi)
    }
}

/// Axes of the policy lattice for a run from `point`.
/// With `lock` set the `x` axis is relative to the lock-in level and ends at 1.
pub fn lattice_axes(
    params: &HestonParams,
    point: &EvalPoint,
    v0: f64,
    lock: Option<&LockIn>,
    cfg: &BoundsConfig,
) -> Result<(Axis, Axis, Axis)> {
    let steps = cfg.sim.num_steps;
    let dt = simulate::step_size(point.t, point.horizon, steps);
    let t_axis = if cfg.lattice.t_nodes == 0 || cfg.lattice.t_nodes >= steps {
        Axis::new((0..steps).map(|k| point.t + k as f64 * dt).collect())?
    } else {
        let n = cfg.lattice.t_nodes;
        let stride = steps as f64 / n as f64;
        let mut ks: Vec<usize> = (0..n)
            .map(|j| (j as f64 * stride).round() as usize)
            .collect();
        ks.dedup();
        Axis::new(ks.into_iter().map(|k| point.t + k as f64 * dt).collect())?
    };
    let l = &cfg.lattice;
    let x_axis = match lock {
        Some(lock) => Axis::geometric((l.x_lo_mult * point.x / lock.cap).min(0.5), 1.0, l.x_nodes)?,
        None => Axis::geometric(l.x_lo_mult * point.x, l.x_hi_mult * point.x, l.x_nodes)?,
    };
    let v_axis = if params.xi == 0.0 {
        // variance is deterministic and stays between v0 and theta
        let (lo, hi) = (v0.min(params.theta), v0.max(params.theta));
        Axis::uniform(lo, hi, if hi > lo { l.v_nodes } else { 1 })?
    } else {
        // the policy varies with sqrt(v), so nodes are denser near zero
        Axis::sqrt_uniform(l.v_hi_mult * v0.max(params.theta), l.v_nodes)?
    };
    Ok((t_axis, x_axis, v_axis))
}

/// Feedback policy used for the lower bound.
#[derive(Debug, Clone)]
pub enum FeedbackPolicy {
    Direct(SumPowerPolicy),
    Lattice(PolicySurface),
}

impl Policy for FeedbackPolicy {
    fn pi(&self, t: f64, x: f64, v: f64) -> Result<f64> {
        match self {
            FeedbackPolicy::Direct(p) => p.pi(t, x, v),
            FeedbackPolicy::Lattice(s) => s.pi(t, x, v),
        }
    }
}

/// Builds the feedback policy for `control` on the route that applies.
pub fn feedback_policy(
    params: &HestonParams,
    control: &DualControl,
    utility: &UtilitySpec,
    point: &EvalPoint,
    cfg: &BoundsConfig,
) -> Result<FeedbackPolicy> {
    let route = select_route(params, utility, control);
    let lock = match *utility {
        UtilitySpec::Yaari { cap } => Some(LockIn {
            cap,
            r: params.r,
            horizon: point.horizon,
        }),
        _ => None,
    };
    let (t_axis, x_axis, v_axis) = lattice_axes(params, point, point.v, lock.as_ref(), cfg)?;
    let build = |node: &NodeFn| match lock {
        Some(lock) => {
            build_locked_lattice(t_axis.clone(), x_axis.clone(), v_axis.clone(), lock, node)
        }
        None => build_policy_lattice(t_axis.clone(), x_axis.clone(), v_axis.clone(), node),
    };
    match route {
        Route::Analytic => {
            let policy = SumPowerPolicy::new(closedform::dual_factors(utility, control, params)?)
                .with_time_grid(&t_axis.nodes);
            if cfg.policy_eval == PolicyEval::Lattice {
                let surface =
                    build(&|t, v, xs| xs.iter().map(|&x| policy.fraction(t, x, v)).collect())?;
                Ok(FeedbackPolicy::Lattice(surface))
            } else {
                Ok(FeedbackPolicy::Direct(policy))
            }
        }
        Route::Cos => {
            if cfg.policy_eval == PolicyEval::Direct {
                return Err(HdbError::Unsupported(
                    "direct policy evaluation needs the analytic route".into(),
                ));
            }
            let UtilitySpec::Yaari { cap } = *utility else {
                unreachable!("cos route is only selected for threshold utility")
            };
            let c = control.coefficients[0];
            let surface = build(&|t, v, xs| {
                let tables = CosTables::new(params, cap, c, t, v, point.horizon, &cfg.cos)?;
                xs.iter()
                    .map(|&x| cosmethod::yaari_feedback(params, &tables, x))
                    .collect()
            })?;
            Ok(FeedbackPolicy::Lattice(surface))
        }
        Route::MonteCarlo => {
            if cfg.policy_eval == PolicyEval::Direct {
                return Err(HdbError::Unsupported(
                    "direct policy evaluation needs the analytic route".into(),
                ));
            }
            let dt = simulate::step_size(point.t, point.horizon, cfg.sim.num_steps);
            let need_v = params.xi * params.rho != 0.0;
            let surface = build(&|t, v, xs| {
                let remaining = (((point.horizon - t) / dt).round() as usize).max(1);
                let sub = SimConfig {
                    num_paths: cfg.policy_paths,
                    num_steps: remaining,
                    ..cfg.sim
                };
                let sim = |v0: f64| -> Result<EmpiricalDual> {
                    let exps = simulate_exponents(params, control, v0, t, &sub, DOMAIN_POLICY)?;
                    Ok(EmpiricalDual::from_exponents(utility, &exps))
                };
                let base = sim(v)?;
                let pair = if need_v {
                    let h = cfg.sim.fd_step * v.max(0.01);
                    let lo = (v - h).max(0.0);
                    Some((sim(v + h)?, sim(lo)?, v + h - lo))
                } else {
                    None
                };
                xs.iter()
                    .map(|&x| {
                        let vp = pair.as_ref().map(|(u, d, dv)| (u, d, *dv));
                        empirical_feedback(params, &base, vp, x, cfg.sim.fd_step)
                    })
                    .collect()
            })?;
            Ok(FeedbackPolicy::Lattice(surface))
        }
    }
}

/// Bound value with its standard error (zero for closed forms).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundEstimate {
    pub value: f64,
    pub se: f64,
    /// Conjugation point for upper bounds.
    pub y_star: Option<f64>,
    pub route: Route,
}

/// Upper bound `Z(t, y*, v) + x y*` for one control.
pub fn upper_bound(
    params: &HestonParams,
    control: &DualControl,
    utility: &UtilitySpec,
    point: &EvalPoint,
    cfg: &BoundsConfig,
) -> Result<BoundEstimate> {
    let route = match (cfg.upper, select_route(params, utility, control)) {
        (UpperMethod::MonteCarlo, _) => Route::MonteCarlo,
        (_, r) => r,
    };
    match route {
        Route::Analytic => {
            let dual = closedform::dual_factors(utility, control, params)?;
            let ub = closedform::upper_bound_sum_powers(&dual, point.t, point.x, point.v)?;
            Ok(BoundEstimate {
                value: ub.value,
                se: 0.0,
                y_star: Some(ub.y_star),
                route,
            })
        }
        Route::Cos => {
            let UtilitySpec::Yaari { cap } = *utility else {
                unreachable!("cos route is only selected for threshold utility")
            };
            let ub = cosmethod::yaari_upper_bound(
                params,
                cap,
                control.coefficients[0],
                point.t,
                point.x,
                point.v,
                point.horizon,
                &cfg.cos,
            )?;
            Ok(BoundEstimate {
                value: ub.value,
                se: 0.0,
                y_star: Some(ub.y_star),
                route,
            })
        }
        Route::MonteCarlo => {
            let exps =
                simulate_exponents(params, control, point.v, point.t, &cfg.sim, DOMAIN_UPPER)?;
            let dual = EmpiricalDual::from_exponents(utility, &exps);
            if let Some(limit) = dual.slope_limit() {
                if point.x >= limit {
                    return Err(HdbError::NoBracket {
                        lo: 0.0,
                        hi: f64::INFINITY,
                        f_lo: point.x - limit,
                        f_hi: point.x,
                    });
                }
            }
            let y = solve_ystar(|y| dual.slope(y), point.x)?;
            let vals: Vec<f64> = exps
                .iter()
                .map(|m| dual_utility_unchecked(utility, y * m.exp()) + point.x * y)
                .collect();
            let est = mean_se_paired(&vals, cfg.sim.antithetic);
            Ok(BoundEstimate {
                value: est.mean,
                se: est.se,
                y_star: Some(y),
                route,
            })
        }
    }
}

/// Expected utility of terminal wealth under `policy`. With `control` set,
/// the dual driven by the same normals is used as a control variate; the
/// wealth paths are identical either way.
pub fn lower_bound_with_policy(
    params: &HestonParams,
    utility: &UtilitySpec,
    policy: &dyn Policy,
    point: &EvalPoint,
    cfg: &SimConfig,
    control: Option<&DualControl>,
) -> Result<Estimate> {
    let Some(control) = control else {
        let xs = simulate::simulate_wealth_terminal(
            params,
            policy,
            point.x,
            point.v,
            point.t,
            point.horizon,
            cfg,
            DOMAIN_LOWER,
        )?;
        let us: Vec<f64> = xs.iter().map(|&x| utility_unchecked(utility, x)).collect();
        return Ok(mean_se_paired(&us, cfg.antithetic));
    };
    let samples = simulate::simulate_paired(
        params,
        control,
        policy,
        point.x,
        1.0,
        point.v,
        point.t,
        cfg,
        DOMAIN_LOWER,
    )?;
    let growth = params.r * (point.horizon - point.t);
    let us: Vec<f64> = samples
        .iter()
        .map(|s| utility_unchecked(utility, s.x_terminal.unwrap_or(0.0)))
        .collect();
    let ws: Vec<f64> = samples
        .iter()
        .map(|s| (s.exponent + growth).exp() - 1.0)
        .collect();
    Ok(stats::control_variate(&us, &ws, cfg.antithetic))
}

/// Lower bound for one control.
pub fn lower_bound(
    params: &HestonParams,
    control: &DualControl,
    utility: &UtilitySpec,
    point: &EvalPoint,
    cfg: &BoundsConfig,
) -> Result<BoundEstimate> {
    let route = select_route(params, utility, control);
    let closed = match cfg.lower {
        LowerMethod::Closed => true,
        LowerMethod::Auto => {
            route == Route::Analytic && matches!(utility, UtilitySpec::Power { .. })
        }
        LowerMethod::MonteCarlo => false,
        LowerMethod::None => return Err(HdbError::Config("lower bound disabled".into())),
    };
    if closed {
        let UtilitySpec::Power { p } = *utility else {
            return Err(HdbError::Unsupported(
                "closed-form lower bound needs power utility".into(),
            ));
        };
        let value = closedform::power_lower_bound_closed(
            params,
            p,
            control,
            point.x,
            point.v,
            point.t,
            point.horizon,
            cfg.closed_pieces,
        )?;
        return Ok(BoundEstimate {
            value,
            se: 0.0,
            y_star: None,
            route,
        });
    }
    let policy = feedback_policy(params, control, utility, point, cfg)?;
    let cv = cfg.control_variate.then_some(control);
    let est = lower_bound_with_policy(params, utility, &policy, point, &cfg.sim, cv)?;
    Ok(BoundEstimate {
        value: est.mean,
        se: est.se,
        y_star: None,
        route,
    })
}

/// Stream domain of randomly sampled candidates.
pub const DOMAIN_CANDIDATES: u64 = 0x4341_4e44_0000_0004;

/// How candidate coefficient vectors are produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    /// Uniform grid including both ends; a one-point grid is the midpoint.
    Grid,
    /// Independent uniform draws per piece.
    Random { seed: u64 },
}

/// Candidate set: `count` values per piece on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateSpec {
    pub count: usize,
    pub lo: f64,
    pub hi: f64,
    pub pieces: usize,
    pub sampling: Sampling,
}

impl CandidateSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(HdbError::invalid("controls.grid_count", "must be >= 1"));
        }
        if self.pieces == 0 {
            return Err(HdbError::invalid("controls.pieces", "must be >= 1"));
        }
        if !(self.lo <= self.hi && self.lo.is_finite() && self.hi.is_finite()) {
            return Err(HdbError::invalid(
                "controls.interval_lo",
                "interval must satisfy lo <= hi",
            ));
        }
        Ok(())
    }

    /// Per-piece values.
    pub fn axis(&self) -> Vec<f64> {
        match self.sampling {
            Sampling::Grid => {
                if self.count == 1 {
                    vec![0.5 * (self.lo + self.hi)]
                } else {
                    (0..self.count)
                        .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (self.count - 1) as f64)
                        .collect()
                }
            }
            Sampling::Random { .. } => Vec::new(),
        }
    }

    /// Grid: Cartesian product of per-piece grids. Random: `count` vectors.
    pub fn candidates(&self) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        match self.sampling {
            Sampling::Grid => {
                let axis = self.axis();
                let mut out: Vec<Vec<f64>> = vec![Vec::new()];
                for _ in 0..self.pieces {
                    out = out
                        .into_iter()
                        .flat_map(|prefix| {
                            axis.iter().map(move |&c| {
                                let mut v = prefix.clone();
                                v.push(c);
                                v
                            })
                        })
                        .collect();
                }
                Ok(out)
            }
            Sampling::Random { seed } => {
                let mut stream = simulate::PathNormals::new(seed, DOMAIN_CANDIDATES, 0, false);
                Ok((0..self.count)
                    .map(|_| {
                        (0..self.pieces)
                            .map(|_| self.lo + (self.hi - self.lo) * stream.next_uniform())
                            .collect()
                    })
                    .collect())
            }
        }
    }
}

/// One candidate's bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRow {
    pub coefficients: Vec<f64>,
    pub lb: Option<BoundEstimate>,
    pub ub: Option<BoundEstimate>,
    pub lb_time: f64,
    pub ub_time: f64,
    pub error: Option<String>,
}

/// Per-candidate bounds and their extrema.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub rows: Vec<CandidateRow>,
    /// Index of the row with the largest lower bound.
    pub best_lb: Option<usize>,
    /// Index of the row with the smallest upper bound.
    pub best_ub: Option<usize>,
}

impl BoundsReport {
    pub fn tight_lb(&self) -> Option<BoundEstimate> {
        self.best_lb.and_then(|i| self.rows[i].lb)
    }

    pub fn tight_ub(&self) -> Option<BoundEstimate> {
        self.best_ub.and_then(|i| self.rows[i].ub)
    }

    pub fn c_lb(&self) -> Option<&[f64]> {
        self.best_lb.map(|i| self.rows[i].coefficients.as_slice())
    }

    pub fn c_ub(&self) -> Option<&[f64]> {
        self.best_ub.map(|i| self.rows[i].coefficients.as_slice())
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

/// Bounds for every candidate; a failing candidate is recorded in its row
/// and does not stop the others.
pub fn optimize_controls(
    params: &HestonParams,
    utility: &UtilitySpec,
    family: ControlFamily,
    candidates: &[Vec<f64>],
    point: &EvalPoint,
    cfg: &BoundsConfig,
) -> Result<BoundsReport> {
    if candidates.is_empty() {
        return Err(HdbError::invalid(
            "controls.grid_count",
            "empty candidate set",
        ));
    }
    params.validate()?;
    utility.validate()?;
    cfg.validate()?;
    let rows: Vec<CandidateRow> = candidates
        .par_iter()
        .map(|coeffs| {
            let mut row = CandidateRow {
                coefficients: coeffs.clone(),
                lb: None,
                ub: None,
                lb_time: 0.0,
                ub_time: 0.0,
                error: None,
            };
            let control = match DualControl::uniform(family, coeffs.clone(), point.t, point.horizon)
            {
                Ok(c) => c,
                Err(e) => {
                    row.error = Some(e.to_string());
                    return row;
                }
            };
            let mut errors = Vec::new();
            let (ub, ub_time) = timed(|| upper_bound(params, &control, utility, point, cfg));
            row.ub_time = ub_time;
            match ub {
                Ok(b) => row.ub = Some(b),
                Err(e) => errors.push(format!("upper: {e}")),
            }
            if cfg.lower != LowerMethod::None {
                let (lb, lb_time) = timed(|| lower_bound(params, &control, utility, point, cfg));
                row.lb_time = lb_time;
                match lb {
                    Ok(b) => row.lb = Some(b),
                    Err(e) => errors.push(format!("lower: {e}")),
                }
            }
            if !errors.is_empty() {
                row.error = Some(errors.join("; "));
            }
            row
        })
        .collect();
    let best_lb = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.lb.map(|b| (i, b.value)))
        .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
            Some((_, bv)) if bv >= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i);
    let best_ub = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.ub.map(|b| (i, b.value)))
        .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
            Some((_, bv)) if bv <= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i);
    Ok(BoundsReport {
        rows,
        best_lb,
        best_ub,
    })
}
