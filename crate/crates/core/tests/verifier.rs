mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust_search::model::{mixture_optimal_value, mixture_rule_value, optimal_value, rule_value};
use robust_search::rules::{binary_robust_ratio, constant_rule, q_star, rho};
use robust_search::verifier::*;
use robust_search::{CostModel, Environment, Error, StoppingRule};

const INF: f64 = f64::INFINITY;

fn binary() -> RatioOptions {
    RatioOptions { class: EnvClass::Binary, ..Default::default() }
}

fn coarse(class: EnvClass) -> RatioOptions {
    RatioOptions {
        class,
        grids: Grids { y_points: 64, ..Default::default() },
        ..Default::default()
    }
}

#[test]
fn exact_sigma_search_matches_dense_grids() {
    let cases: Vec<(StoppingRule, f64, f64, CostModel)> = vec![
        (StoppingRule::QStar { xbar: 1.0, delta: 0.9 }, 0.05, 1.0, CostModel::discount(0.9).unwrap()),
        (StoppingRule::Linear { alpha: 1.2, delta: 0.5 }, 0.1, 1.0, CostModel::discount(0.5).unwrap()),
        (StoppingRule::Constant { q: 0.2 }, 0.3, 2.0, CostModel::new(0.8, 0.01).unwrap()),
        (StoppingRule::DynamicRobust { x0: 0.02, xbar: 1.0, delta: 0.7 }, 0.04, 1.0, CostModel::discount(0.7).unwrap()),
    ];
    for (rule, y, xbar, c) in cases {
        for (class, bin) in [(EnvClass::General, false), (EnvClass::Binary, true)] {
            let opts = RatioOptions { class, ..Default::default() };
            let got = pointwise_ratio_with(&rule, y, xbar, &c, &opts).unwrap().ratio;
            let oracle = common::brute_ratio(&rule, y, xbar, &c, bin);
            assert!(got <= oracle + 1e-9, "{rule:?} y={y}: {got} above grid {oracle}");
            assert!(oracle - got < 1e-4, "{rule:?} y={y}: {got} vs grid {oracle}");
        }
    }
}

#[test]
fn pointwise_value_is_pinned() {
    let c = CostModel::discount(0.9).unwrap();
    let p = pointwise_ratio(&StoppingRule::QStar { xbar: 1.0, delta: 0.9 }, 0.05, 1.0, &c).unwrap();
    let oracle = common::brute_ratio(&StoppingRule::QStar { xbar: 1.0, delta: 0.9 }, 0.05, 1.0, &c, false);
    assert!((p.ratio - oracle).abs() < 1e-6);
    assert!((p.ratio - 0.557943620933035).abs() < 1e-9, "{}", p.ratio);
}

#[test]
fn sure_stopping_loses_only_the_wait_for_the_top() {
    let c = CostModel::discount(0.7).unwrap();
    let rule = StoppingRule::Constant { q: 1.0 };
    for y in [0.1, 0.3, 0.69, 0.8] {
        let p = pointwise_ratio(&rule, y, 1.0, &c).unwrap();
        assert!((p.ratio - y / y.max(0.7)).abs() < 1e-12, "y={y}: {}", p.ratio);
    }
}

#[test]
fn constant_rule_stop_scenario_is_one_half() {
    for d in [0.3, 0.9] {
        let c = CostModel::discount(d).unwrap();
        let rule = constant_rule(&c).unwrap();
        let p = pointwise_ratio_with(&rule, 0.2, INF, &c, &binary()).unwrap();
        assert!((p.ratio - 0.5).abs() < 1e-12);
        assert_eq!(p.scenario, Scenario::Stop);
    }
}

#[test]
fn q_star_ratio_does_not_depend_on_delta() {
    for x in [0.05, 0.2, 0.5] {
        for d in [0.3, 0.6, 0.9] {
            let c = CostModel::discount(d).unwrap();
            let rule = StoppingRule::Constant { q: q_star(x, d) };
            let rep = performance_ratio(&rule, x, 1.0, &c, &coarse(EnvClass::Binary)).unwrap();
            assert!((rep.ratio - rho(x)).abs() < 1e-4, "x={x} d={d}: {}", rep.ratio);
        }
    }
}

#[test]
fn bounded_binary_worst_case_puts_the_high_value_at_the_top() {
    let c = CostModel::discount(0.9).unwrap();
    // A high stopping probability makes the wait scenario bind.
    for q in [0.5, 0.9] {
        let rule = StoppingRule::Constant { q };
        for y in [0.05, 0.2, 0.4, 0.6] {
            let p = pointwise_ratio_with(&rule, y, 1.0, &c, &binary()).unwrap();
            assert_eq!(p.scenario, Scenario::Wait);
            assert_eq!(p.z, Some(1.0));
        }
    }
}

#[test]
fn ratios_are_scale_invariant() {
    let c = CostModel::new(0.85, 0.01).unwrap();
    for lambda in [0.01, 3.0, 250.0] {
        let cs = CostModel::new(0.85, 0.01 * lambda).unwrap();
        let rule = StoppingRule::QStar { xbar: 1.0, delta: 0.85 };
        let scaled = StoppingRule::QStar { xbar: lambda, delta: 0.85 };
        for y in [0.05, 0.3] {
            let a = pointwise_ratio(&rule, y, 1.0, &c).unwrap().ratio;
            let b = pointwise_ratio(&scaled, y * lambda, lambda, &cs).unwrap().ratio;
            assert!((a - b).abs() < 1e-10, "lambda={lambda}: {a} vs {b}");
        }
    }
}

#[test]
fn ratio_curves_are_monotone_for_q_star_and_constant_rules() {
    let c = CostModel::discount(0.8).unwrap();
    for rule in [StoppingRule::QStar { xbar: 1.0, delta: 0.8 }, StoppingRule::Constant { q: 0.3 }, constant_rule(&c).unwrap()] {
        let rep = performance_ratio(&rule, 0.01, 1.0, &c, &coarse(EnvClass::General)).unwrap();
        assert!(rep.monotone_ratio, "{rule:?}");
        assert!(rep.note.is_none());
    }
}

#[test]
fn nonmonotone_rule_is_a_validation_error() {
    let c = CostModel::discount(0.8).unwrap();
    let rule = StoppingRule::Piecewise { knots: vec![0.0, 0.5], probs: vec![0.9, 0.1] };
    assert!(matches!(pointwise_ratio(&rule, 0.3, 1.0, &c), Err(Error::Validation(_))));
}

#[test]
fn constant_rule_guarantees_a_quarter_when_unbounded() {
    let c = CostModel::discount(0.9).unwrap();
    let rule = constant_rule(&c).unwrap();
    let rep = performance_ratio(&rule, 0.1, INF, &c, &coarse(EnvClass::General)).unwrap();
    assert!(rep.ratio >= 0.25 - 1e-9 && rep.ratio <= 0.251, "{}", rep.ratio);
    assert_eq!(rep.argmin.scenario, Scenario::Limit);
    assert!(rep.xbar.is_none());
}

#[test]
fn no_constant_rule_beats_the_unbounded_limits() {
    let c = CostModel::discount(0.6).unwrap();
    for i in 0..=100 {
        let rule = StoppingRule::Constant { q: i as f64 / 100.0 };
        let g = pointwise_ratio(&rule, 1.0, INF, &c).unwrap().ratio;
        let b = pointwise_ratio_with(&rule, 1.0, INF, &c, &binary()).unwrap().ratio;
        assert!(g <= 0.25 + 1e-3 && b <= 0.5 + 1e-3, "q={}: {g} {b}", i as f64 / 100.0);
    }
}

#[test]
fn costly_search_keeps_a_quarter_above_the_cost_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let d: f64 = rng.random_range(0.2..0.95);
        let k: f64 = rng.random_range(0.001..0.05);
        let c = CostModel::new(d, k).unwrap();
        let rule = constant_rule(&c).unwrap();
        let x0 = 2.0 * d * k / (1.0 - d);
        let rep = performance_ratio(&rule, x0, INF, &c, &coarse(EnvClass::General)).unwrap();
        assert!(rep.ratio >= 0.25 - 1e-6, "d={d} k={k}: {}", rep.ratio);
    }
}

#[test]
fn two_point_search_contains_the_binary_slice() {
    let c = CostModel::discount(0.9).unwrap();
    let rule = StoppingRule::QStar { xbar: 1.0, delta: 0.9 };
    let tp = twopoint_ratio(&rule, 0.2, 1.0, &c, &RatioOptions::default()).unwrap();
    for p in &tp.curve {
        let b = pointwise_ratio(&rule, p.y, 1.0, &c).unwrap();
        assert!(p.ratio <= b.ratio + 1e-12);
        if p.w.is_none() {
            assert!((p.ratio - b.ratio).abs() < 1e-9);
        }
    }
    assert!((tp.ratio - rho(0.2)).abs() < 1e-4, "{}", tp.ratio);
    assert_eq!((tp.argmin.w, tp.argmin.z), (None, Some(1.0)));
}

#[test]
fn two_point_search_needs_discounting_only() {
    let c = CostModel::new(0.9, 0.01).unwrap();
    let rule = StoppingRule::Constant { q: 0.5 };
    assert!(matches!(twopoint_ratio(&rule, 0.2, 1.0, &c, &RatioOptions::default()), Err(Error::Unsupported(_))));
    let c = CostModel::discount(0.9).unwrap();
    assert!(twopoint_ratio(&rule, 0.2, INF, &c, &RatioOptions::default()).is_err());
}

#[test]
fn cutoff_rules_respect_the_deterministic_ceiling() {
    let c = CostModel::discount(0.9).unwrap();
    let o = coarse(EnvClass::General);
    let at_x0 = deterministic_bound_check(0.2, 0.3, 1.0, &c, &o).unwrap();
    assert!((at_x0.measured - 0.3 / 0.9).abs() < 1e-9);
    let never = deterministic_bound_check(1.5, 0.3, 1.0, &c, &o).unwrap();
    assert_eq!(never.measured, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let cut: f64 = rng.random_range(0.0..1.2);
        let chk = deterministic_bound_check(cut, 0.3, 1.0, &c, &o).unwrap();
        assert!(chk.holds, "cutoff {cut}: {chk:?}");
    }
}

#[test]
fn past_offers_do_not_change_the_ratio() {
    let c = CostModel::discount(0.8).unwrap();
    let rule = StoppingRule::QStar { xbar: 1.0, delta: 0.8 };
    for history in [vec![0.1], vec![0.05, 0.3, 0.2], vec![0.4, 0.4]] {
        let y = history.iter().cloned().fold(0.0, f64::max);
        let base = pointwise_ratio(&rule, y, 1.0, &c).unwrap().ratio;
        let h = history_ratio(&rule, &history, 1.0, &c, 1e-9).unwrap();
        assert!((h - base).abs() < 1e-6, "{history:?}: {h} vs {base}");
    }
}

#[test]
fn mixtures_are_never_worse_than_their_worst_component() {
    let c = CostModel::discount(0.85).unwrap();
    let rule = StoppingRule::QStar { xbar: 2.0, delta: 0.85 };
    let comps = vec![Environment::binary(2.0, 0.05), Environment::binary(0.5, 0.6), Environment::binary(1.0, 0.2)];
    let mix = Environment::Mixture { components: comps.clone(), weights: vec![0.5, 0.2, 0.3] };
    let y = 0.3;
    let ratio = mixture_rule_value(&rule, &mix, y, &c).unwrap() / mixture_optimal_value(&mix, y, &c, 1e-12).unwrap();
    let worst = comps
        .iter()
        .map(|e| rule_value(&rule, e, y, &c).unwrap() / optimal_value(e, y, &c).unwrap())
        .fold(INF, f64::min);
    assert!(ratio >= worst - 1e-12, "{ratio} < {worst}");
}

#[test]
fn csv_export_has_fixed_columns() {
    let c = CostModel::discount(0.9).unwrap();
    let rep = performance_ratio(&StoppingRule::Constant { q: 0.5 }, 0.1, 1.0, &c, &coarse(EnvClass::General)).unwrap();
    let csv = rep.to_csv();
    assert!(csv.starts_with("y,ratio,argmin_z,argmin_sigma,scenario\n"));
    assert_eq!(csv.lines().count(), rep.curve.len() + 1);
}

#[test]
fn robust_rule_attains_the_bound_on_the_full_y_grid() {
    let c = CostModel::discount(0.9).unwrap();
    let rule = StoppingRule::DynamicRobust { x0: 0.05, xbar: 1.0, delta: 0.9 };
    let rep = performance_ratio(&rule, 0.05, 1.0, &c, &RatioOptions::default()).unwrap();
    let target = binary_robust_ratio(0.05, 0.9).unwrap();
    assert!((rep.ratio - target).abs() < 1e-9, "{} vs {target}", rep.ratio);
}

#[test]
fn parallel_and_sequential_sweeps_agree() {
    let c = CostModel::discount(0.9).unwrap();
    let rule = StoppingRule::QStar { xbar: 1.0, delta: 0.9 };
    let mut o = coarse(EnvClass::General);
    o.exec = robust_search::Exec::Parallel;
    let a = performance_ratio(&rule, 0.02, 1.0, &c, &o).unwrap();
    o.exec = robust_search::Exec::Sequential;
    let b = performance_ratio(&rule, 0.02, 1.0, &c, &o).unwrap();
    assert_eq!(a, b);
}
