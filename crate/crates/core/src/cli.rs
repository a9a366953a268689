//! Command implementations behind the `hdb` binary.
//!
//! Commands compute their full output before anything is written, so a
//! failing run leaves no partial CSV. Exit codes: 0 success, 1 configuration
//! error, 2 numerical failure.

use std::path::{Path, PathBuf};

use crate::closedform::{self, BenchmarkFormula, BenchmarkValue};
use crate::config::RunConfig;
use crate::error::{HdbError, Result};
use crate::mcbounds::{
    feedback_policy, optimize_controls, select_route, Axis, BoundsReport, LowerMethod, PolicyEval,
    Route,
};
use crate::model::{HestonParams, UtilitySpec};
use crate::output::{fmt_coeffs, fmt_num, fmt_opt, fmt_text, write_atomic, CsvTable};
use crate::simulate::{self, ControlFamily, DualControl, PathNormals, Policy, DOMAIN_LOWER};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

/// Stream domain of sampled sweep parameters.
pub const DOMAIN_SWEEP: u64 = 0x5357_4545_5000_0005;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Bounds,
    Benchmark,
    Sweep,
    Surface,
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub steps: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Text for stdout and files to write.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommandOutput {
    pub stdout: String,
    pub files: Vec<(PathBuf, String)>,
}

pub fn exit_code(e: &HdbError) -> i32 {
    if e.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_NUMERICAL
    }
}

/// Reads the config file and applies overrides; validation runs last.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HdbError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(seed) = overrides.seed {
        cfg.bounds.sim.seed = seed;
    }
    if let Some(paths) = overrides.paths {
        cfg.bounds.sim.num_paths = paths;
    }
    if let Some(steps) = overrides.steps {
        cfg.bounds.sim.num_steps = steps;
    }
    if let Some(out) = &overrides.out {
        cfg.output = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Benchmark for the configured utility, when a closed form exists.
pub fn benchmark_value(cfg: &RunConfig) -> Result<BenchmarkValue> {
    match cfg.utility() {
        UtilitySpec::Power { p } => {
            if cfg.params.xi == 0.0 {
                return Err(HdbError::Unsupported(
                    "power benchmark needs model.xi > 0".into(),
                ));
            }
            Ok(
                closedform::power_benchmark(&cfg.params, p, cfg.t0, cfg.x0, cfg.v0, cfg.horizon)?
                    .as_benchmark(),
            )
        }
        UtilitySpec::NonHara => {
            closedform::nonhara_constvol_benchmark(&cfg.params, cfg.v0, cfg.t0, cfg.x0, cfg.horizon)
        }
        UtilitySpec::Yaari { cap } => closedform::yaari_constvol_benchmark(
            &cfg.params,
            cap,
            cfg.v0,
            cfg.t0,
            cfg.x0,
            cfg.horizon,
        ),
    }
}

fn formula_name(f: BenchmarkFormula) -> &'static str {
    match f {
        BenchmarkFormula::PowerHeston => "power_heston",
        BenchmarkFormula::NonHaraConstVol => "nonhara_constvol",
        BenchmarkFormula::YaariConstVol => "yaari_constvol",
    }
}

/// Rejects method choices that cannot apply to the configured run.
fn check_compatibility(cfg: &RunConfig, params: &HestonParams) -> Result<()> {
    let utility = cfg.utility();
    if cfg.bounds.lower == LowerMethod::Closed
        && (!matches!(utility, UtilitySpec::Power { .. })
            || cfg.family != ControlFamily::TimesSqrtV)
    {
        return Err(HdbError::Unsupported(
            "bounds.lower_method = closed needs power utility and controls.family = c_sqrt_v"
                .into(),
        ));
    }
    if cfg.bounds.policy_eval == PolicyEval::Direct {
        let probe = DualControl::uniform(
            cfg.family,
            vec![0.0; cfg.candidates.pieces],
            cfg.t0,
            cfg.horizon,
        )?;
        if select_route(params, &utility, &probe) != Route::Analytic {
            return Err(HdbError::Unsupported(
                "bounds.policy_eval = direct needs the sum-of-powers closed form".into(),
            ));
        }
    }
    Ok(())
}

fn rel_diff(diff: f64, benchmark: Option<f64>, ub: f64) -> f64 {
    100.0 * diff / benchmark.unwrap_or(ub)
}

/// Header of the bounds CSV; timing columns are appended when enabled.
pub const BOUNDS_HEADER: [&str; 13] = [
    "kind",
    "index",
    "coefficients",
    "ub_coefficients",
    "lb",
    "lb_se",
    "ub",
    "ub_se",
    "diff",
    "rel_diff_pct",
    "route",
    "benchmark",
    "error",
];

/// Candidate rows followed by the summary row.
pub fn bounds_csv(report: &BoundsReport, benchmark: Option<f64>, timings: bool) -> CsvTable {
    let mut header = BOUNDS_HEADER.to_vec();
    if timings {
        header.extend(["lb_time", "ub_time"]);
    }
    let mut table = CsvTable::new(&header);
    for (i, row) in report.rows.iter().enumerate() {
        let (lb, ub) = (row.lb.map(|b| b.value), row.ub.map(|b| b.value));
        let diff = lb.zip(ub).map(|(l, u)| u - l);
        let route = row.ub.or(row.lb).map(|b| b.route.name()).unwrap_or("");
        let mut cells = vec![
            "candidate".to_string(),
            i.to_string(),
            fmt_coeffs(&row.coefficients),
            String::new(),
            fmt_opt(lb),
            fmt_opt(row.lb.map(|b| b.se)),
            fmt_opt(ub),
            fmt_opt(row.ub.map(|b| b.se)),
            fmt_opt(diff),
            fmt_opt(diff.zip(ub).map(|(d, u)| rel_diff(d, benchmark, u))),
            route.to_string(),
            fmt_opt(benchmark),
            row.error.as_deref().map(fmt_text).unwrap_or_default(),
        ];
        if timings {
            cells.push(fmt_num(row.lb_time));
            cells.push(fmt_num(row.ub_time));
        }
        table.push(cells);
    }
    let (lb, ub) = (report.tight_lb(), report.tight_ub());
    let diff = lb.zip(ub).map(|(l, u)| u.value - l.value);
    let mut cells = vec![
        "summary".to_string(),
        String::new(),
        report.c_lb().map(fmt_coeffs).unwrap_or_default(),
        report.c_ub().map(fmt_coeffs).unwrap_or_default(),
        fmt_opt(lb.map(|b| b.value)),
        fmt_opt(lb.map(|b| b.se)),
        fmt_opt(ub.map(|b| b.value)),
        fmt_opt(ub.map(|b| b.se)),
        fmt_opt(diff),
        fmt_opt(diff.zip(ub).map(|(d, u)| rel_diff(d, benchmark, u.value))),
        String::new(),
        fmt_opt(benchmark),
        String::new(),
    ];
    if timings {
        let total_lb: f64 = report.rows.iter().map(|r| r.lb_time).sum();
        let total_ub: f64 = report.rows.iter().map(|r| r.ub_time).sum();
        cells.push(fmt_num(total_lb));
        cells.push(fmt_num(total_ub));
    }
    table.push(cells);
    table
}

fn first_row_error(report: &BoundsReport) -> String {
    report
        .rows
        .iter()
        .find_map(|r| r.error.clone())
        .unwrap_or_else(|| "no candidate produced a bound".into())
}

/// Runs the candidate search for `params` and checks that the requested
/// bounds exist.
fn solve_bounds(cfg: &RunConfig, params: &HestonParams) -> Result<BoundsReport> {
    check_compatibility(cfg, params)?;
    let candidates = cfg.candidates.candidates()?;
    let report = optimize_controls(
        params,
        &cfg.utility(),
        cfg.family,
        &candidates,
        &cfg.point()?,
        &cfg.bounds,
    )?;
    let lb_missing = cfg.bounds.lower != LowerMethod::None && report.tight_lb().is_none();
    if report.tight_ub().is_none() || lb_missing {
        return Err(HdbError::NoConvergence(first_row_error(&report)));
    }
    Ok(report)
}

pub fn cmd_bounds(cfg: &RunConfig) -> Result<CommandOutput> {
    let report = solve_bounds(cfg, &cfg.params)?;
    let benchmark = benchmark_value(cfg).ok().map(|b| b.value);
    let csv = bounds_csv(&report, benchmark, cfg.timings).into_string();
    Ok(match &cfg.output {
        Some(path) => {
            let lb = report
                .tight_lb()
                .map(|b| fmt_num(b.value))
                .unwrap_or_else(|| "-".into());
            let ub = report
                .tight_ub()
                .map(|b| fmt_num(b.value))
                .unwrap_or_else(|| "-".into());
            CommandOutput {
                stdout: format!("tight_lb = {lb}\ntight_ub = {ub}\n"),
                files: vec![(path.clone(), csv)],
            }
        }
        None => CommandOutput {
            stdout: csv,
            files: Vec::new(),
        },
    })
}

pub fn cmd_benchmark(cfg: &RunConfig) -> Result<CommandOutput> {
    let b = benchmark_value(cfg)?;
    let mut out = CommandOutput {
        stdout: format!("{}\n", fmt_num(b.value)),
        files: Vec::new(),
    };
    if let Some(path) = &cfg.output {
        let mut t = CsvTable::new(&["utility", "formula", "value"]);
        t.push(vec![
            cfg.utility().name().to_string(),
            formula_name(b.formula).to_string(),
            fmt_num(b.value),
        ]);
        out.files.push((path.clone(), t.into_string()));
    }
    Ok(out)
}

/// Header of the sweep CSV.
pub const SWEEP_HEADER: [&str; 20] = [
    "kind",
    "sample",
    "r",
    "rho",
    "kappa",
    "theta",
    "xi",
    "a",
    "c_lb",
    "c_ub",
    "lb",
    "lb_se",
    "ub",
    "ub_se",
    "diff",
    "rel_diff_pct",
    "benchmark",
    "within_3se",
    "diff_over_se",
    "error",
];

/// Parameter sets drawn uniformly from the configured ranges.
pub fn sweep_parameters(cfg: &RunConfig) -> Vec<HestonParams> {
    let sw = &cfg.sweep;
    let mut stream = PathNormals::new(sw.seed, DOMAIN_SWEEP, 0, false);
    let mut draw = |(lo, hi): (f64, f64)| lo + (hi - lo) * stream.next_uniform();
    (0..sw.samples)
        .map(|_| HestonParams {
            r: draw(sw.r),
            rho: draw(sw.rho),
            kappa: draw(sw.kappa),
            theta: draw(sw.theta),
            xi: draw(sw.xi),
            market_price: draw(sw.market_price),
        })
        .collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<CommandOutput> {
    let mut table = CsvTable::new(&SWEEP_HEADER);
    let (mut diffs, mut rels) = (Vec::new(), Vec::new());
    for (i, params) in sweep_parameters(cfg).iter().enumerate() {
        let mut cells = vec![
            "sample".to_string(),
            i.to_string(),
            fmt_num(params.r),
            fmt_num(params.rho),
            fmt_num(params.kappa),
            fmt_num(params.theta),
            fmt_num(params.xi),
            fmt_num(params.market_price),
        ];
        let sample_cfg = RunConfig {
            params: *params,
            ..cfg.clone()
        };
        match solve_bounds(&sample_cfg, params) {
            Ok(report) => {
                let benchmark = benchmark_value(&sample_cfg).ok().map(|b| b.value);
                let ub = report.tight_ub().expect("checked in solve_bounds");
                let lb = report.tight_lb();
                let diff = lb.map(|l| ub.value - l.value);
                let rel = diff.map(|d| rel_diff(d, benchmark, ub.value));
                let se = lb.map(|l| (l.se * l.se + ub.se * ub.se).sqrt());
                let ok = diff.zip(se).map(|(d, s)| d >= -3.0 * s - 1e-12);
                if let (Some(d), Some(r)) = (diff, rel) {
                    diffs.push(d);
                    rels.push(r);
                }
                cells.extend([
                    report.c_lb().map(fmt_coeffs).unwrap_or_default(),
                    report.c_ub().map(fmt_coeffs).unwrap_or_default(),
                    fmt_opt(lb.map(|b| b.value)),
                    fmt_opt(lb.map(|b| b.se)),
                    fmt_num(ub.value),
                    fmt_num(ub.se),
                    fmt_opt(diff),
                    fmt_opt(rel),
                    fmt_opt(benchmark),
                    ok.map(|b| b.to_string()).unwrap_or_default(),
                    fmt_opt(diff.zip(se).filter(|(_, s)| *s > 0.0).map(|(d, s)| d / s)),
                    String::new(),
                ]);
            }
            Err(e) => {
                cells.extend((0..9).map(|_| String::new()));
                cells.extend([String::new(), String::new(), fmt_text(&e.to_string())]);
            }
        }
        table.push(cells);
    }
    if diffs.is_empty() {
        return Err(HdbError::NoConvergence("every sweep sample failed".into()));
    }
    let (dm, ds) = mean_std(&diffs);
    let (rm, rs) = mean_std(&rels);
    for (kind, d, r) in [("mean", dm, rm), ("std", ds, rs)] {
        let mut cells: Vec<String> = vec![kind.to_string()];
        cells.extend((0..13).map(|_| String::new()));
        cells.extend([fmt_num(d), fmt_num(r)]);
        cells.extend((0..4).map(|_| String::new()));
        table.push(cells);
    }
    let csv = table.into_string();
    Ok(match &cfg.output {
        Some(path) => CommandOutput {
            stdout: format!(
                "mean_diff = {}\nmean_rel_diff_pct = {}\n",
                fmt_num(dm),
                fmt_num(rm)
            ),
            files: vec![(path.clone(), csv)],
        },
        None => CommandOutput {
            stdout: csv,
            files: Vec::new(),
        },
    })
}

/// Histogram of `values` on `[0, max]` with equal bins; the last bin is
/// closed so every value is counted.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    let hi = values.iter().cloned().fold(0.0f64, f64::max);
    let hi = if hi > 0.0 { hi } else { 1.0 };
    let width = hi / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = ((v / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| {
            (
                k as f64 * width,
                if k + 1 == bins {
                    hi
                } else {
                    (k + 1) as f64 * width
                },
                c,
            )
        })
        .collect()
}

fn histogram_path(cfg: &RunConfig, surface: &Path) -> PathBuf {
    if let Some(p) = &cfg.histogram_output {
        return p.clone();
    }
    let stem = surface
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    surface.with_file_name(format!("{stem}_hist.csv"))
}

pub fn cmd_surface(cfg: &RunConfig) -> Result<CommandOutput> {
    let report = solve_bounds(cfg, &cfg.params)?;
    let coeffs = report
        .c_lb()
        .or(report.c_ub())
        .expect("checked in solve_bounds")
        .to_vec();
    let utility = cfg.utility();
    let point = cfg.point()?;
    let control = DualControl::uniform(cfg.family, coeffs, cfg.t0, cfg.horizon)?;
    let policy = feedback_policy(&cfg.params, &control, &utility, &point, &cfg.bounds)?;
    let sf = &cfg.surface;
    let ts: Vec<f64> = (0..sf.t_nodes)
        .map(|k| cfg.t0 + (cfg.horizon - cfg.t0) * k as f64 / sf.t_nodes as f64)
        .collect();
    let xs = Axis::uniform(sf.x_lo, sf.x_hi, sf.x_nodes)?;
    let vs = Axis::uniform(sf.v_lo, sf.v_hi, sf.v_nodes)?;
    let mut surface = CsvTable::new(&["t", "x", "v", "pi"]);
    for &t in &ts {
        for &x in &xs.nodes {
            for &v in &vs.nodes {
                let pi = policy.pi(t, x, v)?;
                if !pi.is_finite() {
                    return Err(HdbError::non_finite(format!(
                        "policy at t = {t}, x = {x}, v = {v}"
                    )));
                }
                surface.push(vec![fmt_num(t), fmt_num(x), fmt_num(v), fmt_num(pi)]);
            }
        }
    }
    let wealth = simulate::simulate_wealth_terminal(
        &cfg.params,
        &policy,
        cfg.x0,
        cfg.v0,
        cfg.t0,
        cfg.horizon,
        &cfg.bounds.sim,
        DOMAIN_LOWER,
    )?;
    let mut hist = CsvTable::new(&["bin_left", "bin_right", "count"]);
    for (lo, hi, c) in histogram(&wealth, sf.bins) {
        hist.push(vec![fmt_num(lo), fmt_num(hi), c.to_string()]);
    }
    Ok(match &cfg.output {
        Some(path) => CommandOutput {
            stdout: format!("control = {}\n", fmt_coeffs(&control.coefficients)),
            files: vec![
                (path.clone(), surface.into_string()),
                (histogram_path(cfg, path), hist.into_string()),
            ],
        },
        None => CommandOutput {
            stdout: format!("{}\n{}", surface.as_str(), hist.as_str()),
            files: Vec::new(),
        },
    })
}

pub fn execute(command: Command, cfg: &RunConfig) -> Result<CommandOutput> {
    match command {
        Command::Bounds => cmd_bounds(cfg),
        Command::Benchmark => cmd_benchmark(cfg),
        Command::Sweep => cmd_sweep(cfg),
        Command::Surface => cmd_surface(cfg),
    }
}

/// Writes every file or none of them.
pub fn write_outputs(files: &[(PathBuf, String)]) -> Result<()> {
    for (i, (path, content)) in files.iter().enumerate() {
        if let Err(e) = write_atomic(path, content) {
            for (done, _) in &files[..i] {
                let _ = std::fs::remove_file(done);
            }
            return Err(e);
        }
    }
    Ok(())
}

/// Loads the config, runs the command and writes its output. Returns the
/// process exit code; diagnostics go to stderr.
pub fn run(command: Command, config: &Path, overrides: &Overrides) -> i32 {
    let cfg = match load_config(config, overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("hdb: {e}");
            return EXIT_CONFIG;
        }
    };
    let result = execute(command, &cfg).and_then(|out| {
        write_outputs(&out.files)?;
        Ok(out)
    });
    match result {
        Ok(out) => {
            print!("{}", out.stdout);
            EXIT_OK
        }
        Err(e) => {
            if let Some(path) = &cfg.output {
                let _ = std::fs::remove_file(path);
            }
            eprintln!("hdb: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> RunConfig {
        RunConfig::parse(text).unwrap()
    }

    #[test]
    fn power_benchmark_command() {
        let out = cmd_benchmark(&cfg("")).unwrap();
        let v: f64 = out.stdout.trim().parse().unwrap();
        assert!((v - 2.074842).abs() < 5e-6, "{v}");
    }

    #[test]
    fn incompatible_benchmark_is_a_config_error() {
        let e = cmd_benchmark(&cfg("utility.kind = nonhara\n")).unwrap_err();
        assert_eq!(exit_code(&e), EXIT_CONFIG);
    }

    #[test]
    fn bounds_single_candidate_summary() {
        let out = cmd_bounds(&cfg("controls.grid_count = 1\n")).unwrap();
        let lines: Vec<&str> = out.stdout.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("kind,index,coefficients"));
        let summary: Vec<&str> = lines[2].split(',').collect();
        assert_eq!(summary[0], "summary");
        let lb: f64 = summary[4].parse().unwrap();
        let ub: f64 = summary[6].parse().unwrap();
        assert!((lb - 2.074842060).abs() < 1e-6, "{lb}");
        assert!((ub - 2.074844628).abs() < 1e-6, "{ub}");
    }

    #[test]
    fn closed_lower_bound_needs_power() {
        let c = cfg("utility.kind = nonhara\nbounds.lower_method = closed\n");
        assert_eq!(exit_code(&cmd_bounds(&c).unwrap_err()), EXIT_CONFIG);
    }

    #[test]
    fn histogram_counts_everything() {
        let h = histogram(&[0.0, 0.5, 1.0, 2.0, 2.0], 4);
        assert_eq!(h.iter().map(|b| b.2).sum::<usize>(), 5);
        assert_eq!(h[3], (1.5, 2.0, 2));
        assert_eq!(
            histogram(&[0.0, 0.0], 3).iter().map(|b| b.2).sum::<usize>(),
            2
        );
    }

    #[test]
    fn sweep_parameters_are_in_range_and_reproducible() {
        let c = cfg("");
        let a = sweep_parameters(&c);
        assert_eq!(a.len(), 10);
        assert_eq!(a, sweep_parameters(&c));
        for p in &a {
            assert!((0.01..=0.08).contains(&p.r) && (-1.0..=1.0).contains(&p.rho));
            assert!((0.1..=1.5).contains(&p.market_price) && (0.1..=1.0).contains(&p.xi));
        }
    }
}
