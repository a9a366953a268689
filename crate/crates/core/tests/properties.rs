use hdb_core::closedform::{
    dual_factors, power_lower_bound_closed, upper_bound_sum_powers, SumPowerPolicy,
};
use hdb_core::mcbounds::{optimize_controls, BoundsConfig, EvalPoint, LowerMethod};
use hdb_core::model::{dual_utility, utility, HestonParams, UtilitySpec};
use hdb_core::simulate::{
    simulate_paired, simulate_wealth_terminal, ConstantPolicy, ControlFamily, DualControl,
    SimConfig, DOMAIN_LOWER,
};
use proptest::prelude::*;

fn utility_strategy() -> impl Strategy<Value = UtilitySpec> {
    prop_oneof![
        (0.05f64..0.95).prop_map(|p| UtilitySpec::Power { p }),
        Just(UtilitySpec::NonHara),
        (0.5f64..5.0).prop_map(|cap| UtilitySpec::Yaari { cap }),
    ]
}

fn params_strategy() -> impl Strategy<Value = HestonParams> {
    (
        0.01f64..0.08,
        -1.0f64..=1.0,
        1.0f64..10.0,
        0.01f64..1.0,
        0.1f64..1.0,
        0.1f64..1.5,
    )
        .prop_map(|(r, rho, kappa, theta, xi, a)| HestonParams {
            r,
            rho,
            kappa,
            theta,
            xi,
            market_price: a,
        })
}

/// `min_y U~(y) + x y` by golden-section search in `ln y`; the objective is
/// convex in `y`, hence unimodal in `ln y`.
fn conjugate_min(spec: &UtilitySpec, x: f64) -> f64 {
    let f = |s: f64| dual_utility(spec, s.exp()).unwrap() + x * s.exp();
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (-30.0f64, 30.0f64);
    for _ in 0..300 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    f(0.5 * (a + b))
}

fn power_point() -> EvalPoint {
    EvalPoint::new(0.0, 1.0, 0.5, 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conjugate_duality(spec in utility_strategy(), x in 0.01f64..10.0) {
        let u = utility(&spec, x).unwrap();
        let m = conjugate_min(&spec, x);
        prop_assert!((u - m).abs() <= 1e-6 * u.abs().max(1.0), "{spec:?} x = {x}: {u} vs {m}");
    }

    #[test]
    fn dual_utility_decreasing_and_convex(spec in utility_strategy(), y in 0.01f64..5.0, h in 1e-3f64..0.5) {
        let f = |y: f64| dual_utility(&spec, y).unwrap();
        prop_assert!(f(y + h) <= f(y) + 1e-12);
        prop_assert!(f(y) <= 0.5 * (f(y - h.min(0.5 * y)) + f(y + h.min(0.5 * y))) + 1e-9 * f(y).abs().max(1.0));
    }

    #[test]
    fn utility_increasing(spec in utility_strategy(), x in 0.01f64..10.0, h in 1e-4f64..1.0) {
        prop_assert!(utility(&spec, x + h).unwrap() >= utility(&spec, x).unwrap());
    }

    #[test]
    fn power_policy_is_state_free(
        params in params_strategy(),
        p in 0.05f64..0.95,
        c in -0.5f64..0.5,
        t in 0.0f64..0.99,
        states in prop::collection::vec((0.01f64..10.0, 0.0f64..2.0), 2..6),
    ) {
        let control = DualControl::constant(ControlFamily::TimesSqrtV, c, 0.0, 1.0).unwrap();
        // the dual Riccati system may blow up on the horizon for extreme draws
        let dual = dual_factors(&UtilitySpec::Power { p }, &control, &params);
        prop_assume!(dual.is_ok());
        let dual = dual.unwrap();
        let policy = SumPowerPolicy::new(dual);
        let first = policy.fraction(t, states[0].0, states[0].1).unwrap();
        for &(x, v) in &states[1..] {
            prop_assert!((policy.fraction(t, x, v).unwrap() - first).abs() <= 1e-12 * first.abs().max(1.0));
        }
    }

    #[test]
    fn closed_forms_obey_weak_duality(params in params_strategy(), p in 0.1f64..0.9, c in -0.5f64..0.5) {
        let spec = UtilitySpec::Power { p };
        let control = DualControl::constant(ControlFamily::TimesSqrtV, c, 0.0, 1.0).unwrap();
        let ub = dual_factors(&spec, &control, &params).and_then(|d| upper_bound_sum_powers(&d, 0.0, 1.0, 0.5));
        let lb = power_lower_bound_closed(&params, p, &control, 1.0, 0.5, 0.0, 1.0, 100);
        prop_assume!(ub.is_ok() && lb.is_ok());
        let (ub, lb) = (ub.unwrap(), lb.unwrap());
        prop_assert!(lb <= ub.value * (1.0 + 1e-9), "lb {lb} ub {}", ub.value);
    }

    #[test]
    fn enlarging_the_grid_never_loosens_bounds(mask in prop::collection::vec(any::<bool>(), 9)) {
        let grid: Vec<Vec<f64>> = (0..9).map(|i| vec![-0.5 + 0.125 * i as f64]).collect();
        let subset: Vec<Vec<f64>> = grid.iter().zip(&mask).filter(|(_, &m)| m).map(|(c, _)| c.clone()).collect();
        prop_assume!(!subset.is_empty());
        let cfg = BoundsConfig { lower: LowerMethod::Closed, ..BoundsConfig::default() };
        let params = HestonParams::reference();
        let spec = UtilitySpec::Power { p: 0.5 };
        let run = |cands: &[Vec<f64>]| {
            optimize_controls(&params, &spec, ControlFamily::TimesSqrtV, cands, &power_point(), &cfg).unwrap()
        };
        let (small, full) = (run(&subset), run(&grid));
        prop_assert!(full.tight_ub().unwrap().value <= small.tight_ub().unwrap().value);
        prop_assert!(full.tight_lb().unwrap().value >= small.tight_lb().unwrap().value);
    }

    #[test]
    fn simulated_states_stay_in_range(seed in any::<u64>(), c in -0.5f64..0.5, pi in -3.0f64..6.0) {
        let params = HestonParams::reference();
        let cfg = SimConfig { num_paths: 64, num_steps: 20, seed, ..SimConfig::default() };
        let control = DualControl::constant(ControlFamily::TimesSqrtV, c, 0.0, 1.0).unwrap();
        let samples = simulate_paired(&params, &control, &ConstantPolicy(pi), 1.0, 1.0, 0.5, 0.0, &cfg, DOMAIN_LOWER).unwrap();
        for s in &samples {
            prop_assert!(s.y_terminal > 0.0);
            prop_assert!(s.x_terminal.unwrap() >= 0.0);
        }
        let again = simulate_wealth_terminal(&params, &ConstantPolicy(pi), 1.0, 0.5, 0.0, 1.0, &cfg, DOMAIN_LOWER).unwrap();
        prop_assert_eq!(again, samples.iter().map(|s| s.x_terminal.unwrap()).collect::<Vec<_>>());
    }
}
