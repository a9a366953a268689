//! Run configuration: `key = value` lines with `#` comments.
//!
//! Every key is optional and falls back to the reference setup. Unknown or
//! repeated keys are rejected, and all values are validated before any
//! computation starts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{HdbError, Result};
use crate::mcbounds::{
    BoundsConfig, CandidateSpec, EvalPoint, LowerMethod, PolicyEval, Sampling, UpperMethod,
};
use crate::model::{HestonParams, UtilitySpec};
use crate::simulate::ControlFamily;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UtilityKind {
    Power,
    NonHara,
    Yaari,
}

impl UtilityKind {
    pub fn name(&self) -> &'static str {
        match self {
            UtilityKind::Power => "power",
            UtilityKind::NonHara => "nonhara",
            UtilityKind::Yaari => "yaari",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "power" => Some(UtilityKind::Power),
            "nonhara" | "non_hara" => Some(UtilityKind::NonHara),
            "yaari" => Some(UtilityKind::Yaari),
            _ => None,
        }
    }
}

/// Uniform sampling ranges for the robustness sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSpec {
    pub samples: usize,
    pub seed: u64,
    pub r: (f64, f64),
    pub rho: (f64, f64),
    pub kappa: (f64, f64),
    pub theta: (f64, f64),
    pub xi: (f64, f64),
    pub market_price: (f64, f64),
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            samples: 10,
            seed: 7,
            r: (0.01, 0.08),
            rho: (-1.0, 1.0),
            kappa: (1.0, 10.0),
            theta: (0.01, 1.0),
            xi: (0.1, 1.0),
            market_price: (0.1, 1.5),
        }
    }
}

/// Grid of the policy surface and histogram size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSpec {
    pub t_nodes: usize,
    pub x_nodes: usize,
    pub x_lo: f64,
    pub x_hi: f64,
    pub v_nodes: usize,
    pub v_lo: f64,
    pub v_hi: f64,
    pub bins: usize,
}

impl Default for SurfaceSpec {
    fn default() -> Self {
        SurfaceSpec {
            t_nodes: 5,
            x_nodes: 20,
            x_lo: 0.5,
            x_hi: 2.0,
            v_nodes: 5,
            v_lo: 0.05,
            v_hi: 0.5,
            bins: 50,
        }
    }
}

/// Everything a CLI run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: HestonParams,
    pub x0: f64,
    pub v0: f64,
    pub t0: f64,
    pub horizon: f64,
    pub utility_kind: UtilityKind,
    pub p: f64,
    pub cap: f64,
    pub family: ControlFamily,
    pub candidates: CandidateSpec,
    /// Seed of random candidate sampling; kept when sampling is `grid`.
    pub control_seed: u64,
    pub bounds: BoundsConfig,
    pub output: Option<PathBuf>,
    pub histogram_output: Option<PathBuf>,
    pub timings: bool,
    pub sweep: SweepSpec,
    pub surface: SurfaceSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            params: HestonParams::reference(),
            x0: 1.0,
            v0: 0.5,
            t0: 0.0,
            horizon: 1.0,
            utility_kind: UtilityKind::Power,
            p: 0.5,
            cap: 2.0,
            family: ControlFamily::TimesSqrtV,
            candidates: CandidateSpec {
                count: 20,
                lo: -0.5,
                hi: 0.5,
                pieces: 1,
                sampling: Sampling::Grid,
            },
            control_seed: 1,
            bounds: BoundsConfig::default(),
            output: None,
            histogram_output: None,
            timings: false,
            sweep: SweepSpec::default(),
            surface: SurfaceSpec::default(),
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .map_err(|_| HdbError::Config(format!("{key}: `{v}` is not a number")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse::<usize>()
        .map_err(|_| HdbError::Config(format!("{key}: `{v}` is not a non-negative integer")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse::<u64>()
        .map_err(|_| HdbError::Config(format!("{key}: `{v}` is not a non-negative integer")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(HdbError::Config(format!("{key}: `{v}` is not a boolean"))),
    }
}

fn bad_choice(key: &str, v: &str, choices: &str) -> HdbError {
    HdbError::Config(format!("{key}: `{v}` is not one of {choices}"))
}

/// Splits the text into `key -> (line, value)`.
fn parse_pairs(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(HdbError::Config(format!(
                "line {}: expected `key = value`",
                i + 1
            )));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(HdbError::Config(format!("line {}: empty key", i + 1)));
        }
        if let Some((first, _)) = out.insert(k.to_string(), (i + 1, v.to_string())) {
            return Err(HdbError::Config(format!(
                "line {}: `{k}` already set on line {first}",
                i + 1
            )));
        }
    }
    Ok(out)
}

impl RunConfig {
    pub fn utility(&self) -> UtilitySpec {
        match self.utility_kind {
            UtilityKind::Power => UtilitySpec::Power { p: self.p },
            UtilityKind::NonHara => UtilitySpec::NonHara,
            UtilityKind::Yaari => UtilitySpec::Yaari { cap: self.cap },
        }
    }

    pub fn point(&self) -> Result<EvalPoint> {
        EvalPoint::new(self.t0, self.x0, self.v0, self.horizon)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HdbError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses and validates.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (key, (line, v)) in parse_pairs(text)? {
            cfg.set(&key, &v).map_err(|e| match e {
                HdbError::Config(m) => HdbError::Config(format!("line {line}: {m}")),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let f = |v: &str| parse_f64(key, v);
        let sw = &mut self.sweep;
        let sf = &mut self.surface;
        let lat = &mut self.bounds.lattice;
        match key {
            "model.r" => self.params.r = f(v)?,
            "model.rho" => self.params.rho = f(v)?,
            "model.kappa" => self.params.kappa = f(v)?,
            "model.theta" => self.params.theta = f(v)?,
            "model.xi" => self.params.xi = f(v)?,
            "model.a" => self.params.market_price = f(v)?,
            "state.x0" => self.x0 = f(v)?,
            "state.v0" => self.v0 = f(v)?,
            "state.t" => self.t0 = f(v)?,
            "state.horizon" => self.horizon = f(v)?,
            "utility.kind" => {
                self.utility_kind = UtilityKind::parse(v)
                    .ok_or_else(|| bad_choice(key, v, "power, nonhara, yaari"))?
            }
            "utility.p" => self.p = f(v)?,
            "utility.l" => self.cap = f(v)?,
            "controls.family" => {
                self.family =
                    ControlFamily::parse(v).ok_or_else(|| bad_choice(key, v, "c, c_sqrt_v, c_v"))?
            }
            "controls.grid_count" => self.candidates.count = parse_usize(key, v)?,
            "controls.interval_lo" => self.candidates.lo = f(v)?,
            "controls.interval_hi" => self.candidates.hi = f(v)?,
            "controls.pieces" => self.candidates.pieces = parse_usize(key, v)?,
            "controls.sampling" => {
                self.candidates.sampling = match v {
                    "grid" => Sampling::Grid,
                    "random" => Sampling::Random {
                        seed: self.control_seed,
                    },
                    _ => return Err(bad_choice(key, v, "grid, random")),
                }
            }
            "controls.seed" => {
                self.control_seed = parse_u64(key, v)?;
                if let Sampling::Random { seed } = &mut self.candidates.sampling {
                    *seed = self.control_seed;
                }
            }
            "sim.paths" => self.bounds.sim.num_paths = parse_usize(key, v)?,
            "sim.steps" => self.bounds.sim.num_steps = parse_usize(key, v)?,
            "sim.seed" => self.bounds.sim.seed = parse_u64(key, v)?,
            "sim.fd_step" => self.bounds.sim.fd_step = f(v)?,
            "sim.antithetic" => self.bounds.sim.antithetic = parse_bool(key, v)?,
            "sim.policy_paths" => self.bounds.policy_paths = parse_usize(key, v)?,
            "cos.n" => self.bounds.cos.n = parse_usize(key, v)?,
            "cos.l1" => self.bounds.cos.l1 = f(v)?,
            "bounds.upper_method" => {
                self.bounds.upper = match v {
                    "auto" => UpperMethod::Auto,
                    "mc" => UpperMethod::MonteCarlo,
                    _ => return Err(bad_choice(key, v, "auto, mc")),
                }
            }
            "bounds.lower_method" => {
                self.bounds.lower = match v {
                    "auto" => LowerMethod::Auto,
                    "mc" => LowerMethod::MonteCarlo,
                    "closed" => LowerMethod::Closed,
                    "none" => LowerMethod::None,
                    _ => return Err(bad_choice(key, v, "auto, mc, closed, none")),
                }
            }
            "bounds.policy_eval" => {
                self.bounds.policy_eval = match v {
                    "auto" => PolicyEval::Auto,
                    "direct" => PolicyEval::Direct,
                    "lattice" => PolicyEval::Lattice,
                    _ => return Err(bad_choice(key, v, "auto, direct, lattice")),
                }
            }
            "bounds.closed_pieces" => self.bounds.closed_pieces = parse_usize(key, v)?,
            "sim.control_variate" => self.bounds.control_variate = parse_bool(key, v)?,
            "lattice.t_nodes" => lat.t_nodes = parse_usize(key, v)?,
            "lattice.x_nodes" => lat.x_nodes = parse_usize(key, v)?,
            "lattice.x_lo" => lat.x_lo_mult = f(v)?,
            "lattice.x_hi" => lat.x_hi_mult = f(v)?,
            "lattice.v_nodes" => lat.v_nodes = parse_usize(key, v)?,
            "lattice.v_hi" => lat.v_hi_mult = f(v)?,
            "output.path" => {
                self.output = if v.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(v))
                }
            }
            "output.histogram_path" => {
                self.histogram_output = if v.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(v))
                }
            }
            "output.timings" => self.timings = parse_bool(key, v)?,
            "sweep.samples" => sw.samples = parse_usize(key, v)?,
            "sweep.seed" => sw.seed = parse_u64(key, v)?,
            "sweep.r_lo" => sw.r.0 = f(v)?,
            "sweep.r_hi" => sw.r.1 = f(v)?,
            "sweep.rho_lo" => sw.rho.0 = f(v)?,
            "sweep.rho_hi" => sw.rho.1 = f(v)?,
            "sweep.kappa_lo" => sw.kappa.0 = f(v)?,
            "sweep.kappa_hi" => sw.kappa.1 = f(v)?,
            "sweep.theta_lo" => sw.theta.0 = f(v)?,
            "sweep.theta_hi" => sw.theta.1 = f(v)?,
            "sweep.xi_lo" => sw.xi.0 = f(v)?,
            "sweep.xi_hi" => sw.xi.1 = f(v)?,
            "sweep.a_lo" => sw.market_price.0 = f(v)?,
            "sweep.a_hi" => sw.market_price.1 = f(v)?,
            "surface.t_nodes" => sf.t_nodes = parse_usize(key, v)?,
            "surface.x_nodes" => sf.x_nodes = parse_usize(key, v)?,
            "surface.x_lo" => sf.x_lo = f(v)?,
            "surface.x_hi" => sf.x_hi = f(v)?,
            "surface.v_nodes" => sf.v_nodes = parse_usize(key, v)?,
            "surface.v_lo" => sf.v_lo = f(v)?,
            "surface.v_hi" => sf.v_hi = f(v)?,
            "surface.bins" => sf.bins = parse_usize(key, v)?,
            _ => return Err(HdbError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }
}

fn check_range(field: &'static str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(HdbError::invalid(
            field,
            format!("range [{lo}, {hi}] must be finite with lo <= hi"),
        ));
    }
    Ok(())
}

impl RunConfig {
    /// Checks every value, whether or not the chosen command uses it.
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.utility().validate()?;
        self.point()?;
        self.candidates.validate()?;
        self.bounds.validate()?;
        let sw = &self.sweep;
        if sw.samples == 0 {
            return Err(HdbError::invalid("sweep.samples", "must be >= 1"));
        }
        check_range("sweep.r_lo", sw.r)?;
        check_range("sweep.rho_lo", sw.rho)?;
        check_range("sweep.kappa_lo", sw.kappa)?;
        check_range("sweep.theta_lo", sw.theta)?;
        check_range("sweep.xi_lo", sw.xi)?;
        check_range("sweep.a_lo", sw.market_price)?;
        if sw.rho.0 < -1.0 || sw.rho.1 > 1.0 {
            return Err(HdbError::invalid(
                "sweep.rho_lo",
                "range must lie in [-1, 1]",
            ));
        }
        if sw.kappa.0 <= 0.0 || sw.theta.0 <= 0.0 || sw.xi.0 < 0.0 {
            return Err(HdbError::invalid(
                "sweep.kappa_lo",
                "kappa and theta must be > 0, xi >= 0",
            ));
        }
        let sf = &self.surface;
        if sf.t_nodes == 0 || sf.x_nodes == 0 || sf.v_nodes == 0 || sf.bins == 0 {
            return Err(HdbError::invalid(
                "surface.t_nodes",
                "grid sizes and bins must be >= 1",
            ));
        }
        if !(sf.x_lo > 0.0 && sf.x_lo <= sf.x_hi) {
            return Err(HdbError::invalid("surface.x_lo", "need 0 < x_lo <= x_hi"));
        }
        if !(sf.v_lo >= 0.0 && sf.v_lo <= sf.v_hi) {
            return Err(HdbError::invalid("surface.v_lo", "need 0 <= v_lo <= v_hi"));
        }
        Ok(())
    }

    /// All keys with their current values, parseable by [`RunConfig::parse`].
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let p = &self.params;
        let b = &self.bounds;
        let l = &b.lattice;
        let sw = &self.sweep;
        let sf = &self.surface;
        let path = |o: &Option<PathBuf>| {
            o.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let lines: Vec<(&str, String)> = vec![
            ("model.r", p.r.to_string()),
            ("model.rho", p.rho.to_string()),
            ("model.kappa", p.kappa.to_string()),
            ("model.theta", p.theta.to_string()),
            ("model.xi", p.xi.to_string()),
            ("model.a", p.market_price.to_string()),
            ("state.x0", self.x0.to_string()),
            ("state.v0", self.v0.to_string()),
            ("state.t", self.t0.to_string()),
            ("state.horizon", self.horizon.to_string()),
            ("utility.kind", self.utility_kind.name().to_string()),
            ("utility.p", self.p.to_string()),
            ("utility.l", self.cap.to_string()),
            ("controls.family", self.family.name().to_string()),
            ("controls.grid_count", self.candidates.count.to_string()),
            ("controls.interval_lo", self.candidates.lo.to_string()),
            ("controls.interval_hi", self.candidates.hi.to_string()),
            ("controls.pieces", self.candidates.pieces.to_string()),
            (
                "controls.sampling",
                match self.candidates.sampling {
                    Sampling::Grid => "grid",
                    Sampling::Random { .. } => "random",
                }
                .to_string(),
            ),
            ("controls.seed", self.control_seed.to_string()),
            ("sim.paths", b.sim.num_paths.to_string()),
            ("sim.steps", b.sim.num_steps.to_string()),
            ("sim.seed", b.sim.seed.to_string()),
            ("sim.fd_step", b.sim.fd_step.to_string()),
            ("sim.antithetic", b.sim.antithetic.to_string()),
            ("sim.policy_paths", b.policy_paths.to_string()),
            ("sim.control_variate", b.control_variate.to_string()),
            ("cos.n", b.cos.n.to_string()),
            ("cos.l1", b.cos.l1.to_string()),
            (
                "bounds.upper_method",
                match b.upper {
                    UpperMethod::Auto => "auto",
                    UpperMethod::MonteCarlo => "mc",
                }
                .to_string(),
            ),
            (
                "bounds.lower_method",
                match b.lower {
                    LowerMethod::Auto => "auto",
                    LowerMethod::MonteCarlo => "mc",
                    LowerMethod::Closed => "closed",
                    LowerMethod::None => "none",
                }
                .to_string(),
            ),
            (
                "bounds.policy_eval",
                match b.policy_eval {
                    PolicyEval::Auto => "auto",
                    PolicyEval::Direct => "direct",
                    PolicyEval::Lattice => "lattice",
                }
                .to_string(),
            ),
            ("bounds.closed_pieces", b.closed_pieces.to_string()),
            ("lattice.t_nodes", l.t_nodes.to_string()),
            ("lattice.x_nodes", l.x_nodes.to_string()),
            ("lattice.x_lo", l.x_lo_mult.to_string()),
            ("lattice.x_hi", l.x_hi_mult.to_string()),
            ("lattice.v_nodes", l.v_nodes.to_string()),
            ("lattice.v_hi", l.v_hi_mult.to_string()),
            ("output.path", path(&self.output)),
            ("output.histogram_path", path(&self.histogram_output)),
            ("output.timings", self.timings.to_string()),
            ("sweep.samples", sw.samples.to_string()),
            ("sweep.seed", sw.seed.to_string()),
            ("sweep.r_lo", sw.r.0.to_string()),
            ("sweep.r_hi", sw.r.1.to_string()),
            ("sweep.rho_lo", sw.rho.0.to_string()),
            ("sweep.rho_hi", sw.rho.1.to_string()),
            ("sweep.kappa_lo", sw.kappa.0.to_string()),
            ("sweep.kappa_hi", sw.kappa.1.to_string()),
            ("sweep.theta_lo", sw.theta.0.to_string()),
            ("sweep.theta_hi", sw.theta.1.to_string()),
            ("sweep.xi_lo", sw.xi.0.to_string()),
            ("sweep.xi_hi", sw.xi.1.to_string()),
            ("sweep.a_lo", sw.market_price.0.to_string()),
            ("sweep.a_hi", sw.market_price.1.to_string()),
            ("surface.t_nodes", sf.t_nodes.to_string()),
            ("surface.x_nodes", sf.x_nodes.to_string()),
            ("surface.x_lo", sf.x_lo.to_string()),
            ("surface.x_hi", sf.x_hi.to_string()),
            ("surface.v_nodes", sf.v_nodes.to_string()),
            ("surface.v_lo", sf.v_lo.to_string()),
            ("surface.v_hi", sf.v_hi.to_string()),
            ("surface.bins", sf.bins.to_string()),
        ];
        for (k, v) in lines {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
