//! Acceptance suite: one PASS/FAIL line per criterion. Runs as a plain
//! binary so the lines are always shown; exits non-zero on any FAIL.

use std::time::Instant;

use hdb_core::cli::{cmd_benchmark, cmd_bounds, cmd_sweep, SWEEP_HEADER};
use hdb_core::closedform::dual_factor_coeffs;
use hdb_core::config::RunConfig;
use hdb_core::cosmethod::{cos_dual_value, CosConfig};
use hdb_core::mcbounds::{mc_dual_estimate, optimize_controls, BoundsReport};
use hdb_core::model::{dual_utility, utility, HestonParams, UtilitySpec};
use hdb_core::riccati::{solve_segment, RiccatiCoeffs};
use hdb_core::simulate::{simulate_exponents, ControlFamily, DualControl, SimConfig, DOMAIN_UPPER};
use hdb_core::stats::mean_se;

struct Suite {
    failures: usize,
    /// Every candidate row of every bounds run, for the weak-duality check.
    rows: Vec<(String, f64, f64, f64, f64)>,
}

impl Suite {
    fn check(&mut self, id: &str, pass: bool, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("{} {id}: {detail}", if pass { "PASS" } else { "FAIL" });
    }

    fn bounds(&mut self, label: &str, text: &str) -> (BoundsReport, f64) {
        let cfg = RunConfig::parse(text).expect("acceptance config parses");
        let start = Instant::now();
        let report = optimize_controls(
            &cfg.params,
            &cfg.utility(),
            cfg.family,
            &cfg.candidates.candidates().unwrap(),
            &cfg.point().unwrap(),
            &cfg.bounds,
        )
        .expect("bounds run");
        let secs = start.elapsed().as_secs_f64();
        for row in &report.rows {
            if let (Some(lb), Some(ub)) = (row.lb, row.ub) {
                self.rows
                    .push((label.to_string(), lb.value, lb.se, ub.value, ub.se));
            }
        }
        (report, secs)
    }
}

fn benchmark(text: &str) -> (f64, f64) {
    let cfg = RunConfig::parse(text).unwrap();
    let start = Instant::now();
    let out = cmd_benchmark(&cfg).expect("benchmark");
    let secs = start.elapsed().as_secs_f64();
    let value = out
        .stdout
        .trim()
        .rsplit([' ', '='])
        .next()
        .unwrap()
        .parse()
        .unwrap();
    (value, secs)
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

/// Backward RK4 for `D' = a D^2 + b D + eta`, `C' = d1 D + d2` from `t_hi` to `t`.
fn rk4(k: &RiccatiCoeffs<f64>, t: f64, steps: usize) -> (f64, f64) {
    let f = |d: f64| (k.d1 * d + k.d2, k.a * d * d + k.b * d + k.eta);
    let h = (k.t_hi - t) / steps as f64;
    let (mut c, mut d) = (k.f1, k.f2);
    for _ in 0..steps {
        let (c1, d1) = f(d);
        let (c2, d2) = f(d - 0.5 * h * d1);
        let (c3, d3) = f(d - 0.5 * h * d2);
        let (c4, d4) = f(d - h * d3);
        c -= h / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4);
        d -= h / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4);
    }
    (c, d)
}

fn conjugate_gap(spec: &UtilitySpec) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..=100 {
        let x = 0.01 * (1000.0f64).powf(i as f64 / 100.0);
        let f = |s: f64| dual_utility(spec, s.exp()).unwrap() + x * s.exp();
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (-30.0f64, 30.0f64);
        for _ in 0..300 {
            let (c, d) = (b - g * (b - a), a + g * (b - a));
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        worst = worst.max((f(0.5 * (a + b)) - utility(spec, x).unwrap()).abs());
    }
    worst
}

fn main() {
    let mut s = Suite {
        failures: 0,
        rows: Vec::new(),
    };

    // 1
    let (b, secs) = benchmark("");
    s.check(
        "C1 power benchmark",
        within(b, 2.074842, 5e-6) && secs < 1.0,
        format!("{b:.9} (target 2.074842 +/- 5e-6), {secs:.3} s (< 1 s)"),
    );

    // 2
    let (r, secs) = s.bounds(
        "C2",
        "controls.grid_count = 1\nbounds.lower_method = closed\n",
    );
    let (lb, ub) = (r.tight_lb().unwrap().value, r.tight_ub().unwrap().value);
    s.check(
        "C2 closed-form pair at c = 0",
        within(ub, 2.074844628, 1e-6) && within(lb, 2.074842060, 1e-6) && secs < 1.0,
        format!("UB {ub:.9} (2.074844628 +/- 1e-6), LB {lb:.9} (2.074842060 +/- 1e-6), {secs:.3} s (< 1 s)"),
    );

    // 3
    let (r, secs) = s.bounds(
        "C3",
        "controls.grid_count = 600\nbounds.lower_method = closed\n",
    );
    let ub = r.tight_ub().unwrap().value;
    s.check(
        "C3 600-point grid tightening",
        ub <= 2.0748422 && secs < 5.0,
        format!("tight UB {ub:.9} (<= 2.0748422), {secs:.3} s (< 5 s)"),
    );

    // 4
    let (r, _) = s.bounds("C4", "controls.grid_count = 1\nbounds.lower_method = mc\n");
    let plain = r.tight_lb().unwrap();
    s.check(
        "C4 MC lower bound, plain estimator",
        within(plain.value, 2.074823, 3.0 * plain.se),
        format!(
            "{:.6} +/- {:.1e} (2.074823 within 3 SE; M = 1e5, 100 steps)",
            plain.value, plain.se
        ),
    );
    let (r, secs) = s.bounds(
        "C4",
        "controls.grid_count = 1\nbounds.lower_method = mc\nsim.control_variate = true\nsim.antithetic = true\n",
    );
    let cv = r.tight_lb().unwrap();
    s.check(
        "C4 MC lower bound, control variate",
        within(cv.value, 2.074823, 5e-4),
        format!(
            "{:.6} +/- {:.1e} (|LB - 2.074823| <= 5e-4; M = 1e5, 100 steps), {secs:.1} s",
            cv.value, cv.se
        ),
    );

    // 5
    let flat = "utility.kind = nonhara\nmodel.xi = 0\nstate.v0 = 0.05\n";
    let (bench, _) = benchmark(flat);
    let (r, secs) = s.bounds(
        "C5",
        &format!(
            "{flat}controls.grid_count = 5\nbounds.lower_method = mc\nsim.control_variate = true\n"
        ),
    );
    let (lb, ub) = (r.tight_lb().unwrap(), r.tight_ub().unwrap());
    s.check(
        "C5 constant-volatility non-HARA",
        within(bench, 2.307810, 5e-6)
            && (2.3068..=2.3082).contains(&lb.value)
            && ub.value >= bench - 3.0 * ub.se,
        format!(
            "benchmark {bench:.7} (2.307810 +/- 5e-6), LB {:.6} +/- {:.1e} (in [2.3068, 2.3082]), \
             UB {:.6} +/- {:.1e} (>= benchmark - 3 SE), {secs:.1} s",
            lb.value, lb.se, ub.value, ub.se
        ),
    );

    // 6
    let (r, secs) = s.bounds(
        "C6",
        "utility.kind = nonhara\ncontrols.grid_count = 41\nbounds.lower_method = mc\nsim.control_variate = true\n",
    );
    let (lb, ub) = (r.tight_lb().unwrap(), r.tight_ub().unwrap());
    s.check(
        "C6 non-HARA Heston, 41-point grid",
        (2.32782..=2.32792).contains(&ub.value)
            && (2.3270..=2.3281).contains(&lb.value)
            && lb.value <= ub.value + 3.0 * lb.se,
        format!(
            "UB {:.7} (in [2.32782, 2.32792]), LB {:.6} +/- {:.1e} (in [2.3270, 2.3281]; LB <= UB within 3 SE), {secs:.1} s",
            ub.value, lb.value, lb.se
        ),
    );

    // 7
    let yflat = "utility.kind = yaari\nutility.l = 2\nmodel.xi = 0\nstate.v0 = 0.05\n";
    let (bench, _) = benchmark(yflat);
    let (r, secs) = s.bounds(
        "C7",
        &format!(
            "{yflat}controls.grid_count = 1\nbounds.lower_method = mc\nsim.control_variate = true\nsim.paths = 1000000\n"
        ),
    );
    let lb = r.tight_lb().unwrap();
    s.check(
        "C7 constant-volatility Yaari",
        within(bench, 1.139790, 2e-5) && (1.130..=1.141).contains(&lb.value),
        format!(
            "benchmark {bench:.7} (1.139790 +/- 2e-5), LB {:.6} +/- {:.1e} (in [1.130, 1.141]; M = 1e6), {secs:.1} s",
            lb.value, lb.se
        ),
    );

    // 8
    let yaari = "utility.kind = yaari\nutility.l = 2\ncontrols.grid_count = 41\n";
    let (r, ub_secs) = s.bounds("C8", &format!("{yaari}bounds.lower_method = none\n"));
    let ub = r.tight_ub().unwrap();
    let (r, secs) = s.bounds(
        "C8",
        &format!("{yaari}bounds.lower_method = mc\nsim.control_variate = true\n"),
    );
    let lb = r.tight_lb().unwrap();
    s.check(
        "C8 Yaari Heston, COS upper bound",
        (1.1730..=1.1738).contains(&ub.value) && ub_secs < 5.0,
        format!(
            "UB {:.7} (in [1.1730, 1.1738]), {ub_secs:.2} s (< 5 s)",
            ub.value
        ),
    );
    s.check(
        "C8 Yaari Heston, MC lower bound",
        (1.168..=1.174).contains(&lb.value),
        format!(
            "LB {:.6} +/- {:.1e} (in [1.168, 1.174]), {secs:.1} s",
            lb.value, lb.se
        ),
    );

    // 9
    let worst = s
        .rows
        .iter()
        .map(|(_, lb, lse, ub, use_)| (lb - ub) / (lse + use_).max(1e-300))
        .fold(f64::NEG_INFINITY, f64::max);
    let violations = s
        .rows
        .iter()
        .filter(|(_, lb, lse, ub, use_)| *lb > ub + 3.0 * (lse + use_) + 1e-12)
        .count();
    s.check(
        "C9 weak duality on every run",
        violations == 0,
        format!(
            "{} candidate rows, {violations} with LB > UB + 3 SE (max (LB - UB)/SE = {worst:.2})",
            s.rows.len()
        ),
    );

    let params = HestonParams::reference();
    let mut err = 0.0f64;
    for &(q, c) in &[(-1.0, 0.0), (-3.0, 0.2), (-1.0, -0.4), (0.5, 0.3)] {
        let k = dual_factor_coeffs(&params, q, c, 0.0, 1.0);
        let sol = solve_segment(k).unwrap();
        for &t in &[0.0, 0.3, 0.75] {
            let (c_rk, d_rk) = rk4(&k, t, 20_000);
            let (c_cf, d_cf) = sol.eval(t);
            err = err.max((c_rk - c_cf).abs()).max((d_rk - d_cf).abs());
        }
    }
    s.check(
        "C9 Riccati closed form vs RK4",
        err <= 1e-9,
        format!("max |difference| {err:.1e} (<= 1e-9)"),
    );

    let sim = SimConfig {
        num_paths: 1_000_000,
        ..SimConfig::default()
    };
    let control = DualControl::constant(ControlFamily::TimesSqrtV, 0.0, 0.0, 1.0).unwrap();
    let exps = simulate_exponents(&params, &control, 0.5, 0.0, &sim, DOMAIN_UPPER).unwrap();
    let y = 0.9;
    let mc = mean_se(
        &exps
            .iter()
            .map(|m| 2.0 * (1.0 - y * m.exp()).max(0.0))
            .collect::<Vec<_>>(),
    );
    let cos = cos_dual_value(&params, 2.0, 0.0, 0.0, y, 0.5, 1.0, &CosConfig::default()).unwrap();
    s.check(
        "C9 COS vs 1e6-path MC",
        (cos - mc.mean).abs() <= 3.0 * mc.se,
        format!(
            "COS {cos:.6}, MC {:.6} +/- {:.1e} (within 3 SE)",
            mc.mean, mc.se
        ),
    );

    let small = SimConfig {
        num_paths: 50_000,
        num_steps: 50,
        ..SimConfig::default()
    };
    let mut detail = Vec::new();
    let mut ok = true;
    for spec in [
        UtilitySpec::Power { p: 0.5 },
        UtilitySpec::NonHara,
        UtilitySpec::Yaari { cap: 2.0 },
    ] {
        let y = 0.8;
        let h = 1e-3 * y;
        let est = |y| mc_dual_estimate(&params, &control, &spec, y, 0.5, 0.0, &small).unwrap();
        let (mid, up, down) = (est(y), est(y + h), est(y - h));
        let fd = (up.z - down.z) / (2.0 * h);
        let se =
            (mid.z_y_se.powi(2) + (up.z_se.powi(2) + down.z_se.powi(2)) / (4.0 * h * h)).sqrt();
        let kink = if matches!(spec, UtilitySpec::Yaari { .. }) {
            2.0 * mid.z_y.abs() * h / y
        } else {
            0.0
        };
        ok &= (mid.z_y - fd).abs() <= 3.0 * se + kink;
        detail.push(format!("{} {:.2e}", spec.name(), (mid.z_y - fd).abs()));
    }
    s.check(
        "C9 pathwise Z_y vs finite difference",
        ok,
        format!(
            "|pathwise - FD|: {} (within 3 combined SE)",
            detail.join(", ")
        ),
    );

    let gaps: Vec<f64> = [
        UtilitySpec::Power { p: 0.5 },
        UtilitySpec::NonHara,
        UtilitySpec::Yaari { cap: 2.0 },
    ]
    .iter()
    .map(conjugate_gap)
    .collect();
    s.check(
        "C9 conjugate duality",
        gaps.iter().all(|&g| g <= 1e-6),
        format!(
            "max gaps power {:.1e}, non-HARA {:.1e}, Yaari {:.1e} (<= 1e-6)",
            gaps[0], gaps[1], gaps[2]
        ),
    );

    let det = "utility.kind = nonhara\ncontrols.grid_count = 3\nbounds.lower_method = mc\nsim.paths = 5000\nsim.steps = 20\n";
    let cfg = RunConfig::parse(det).unwrap();
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let a = one.install(|| cmd_bounds(&cfg).unwrap().stdout);
    let b = cmd_bounds(&cfg).unwrap().stdout;
    s.check(
        "C9 determinism",
        a == b,
        format!(
            "bounds CSV from 1 thread and the default pool identical: {}",
            a == b
        ),
    );

    // 10
    let cfg = RunConfig::parse(
        "controls.grid_count = 20\nbounds.lower_method = closed\nsweep.samples = 10\n",
    )
    .unwrap();
    let start = Instant::now();
    let csv = cmd_sweep(&cfg).expect("sweep").stdout;
    let secs = start.elapsed().as_secs_f64();
    let col = |name: &str| SWEEP_HEADER.iter().position(|h| *h == name).unwrap();
    let lines: Vec<Vec<&str>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    let samples: Vec<&Vec<&str>> = lines.iter().filter(|r| r[0] == "sample").collect();
    let all_within = samples.len() == 10 && samples.iter().all(|r| r[col("within_3se")] == "true");
    let mean_rel: f64 = lines.iter().find(|r| r[0] == "mean").unwrap()[col("rel_diff_pct")]
        .parse()
        .unwrap();
    s.check(
        "C10 robustness sweep",
        all_within && mean_rel <= 0.5,
        format!(
            "{} samples, all LB <= UB within 3 SE: {all_within}; mean rel-diff {mean_rel:.4}% (<= 0.5%), {secs:.1} s",
            samples.len()
        ),
    );

    println!("{} failure(s)", s.failures);
    if s.failures > 0 {
        std::process::exit(1);
    }
}
