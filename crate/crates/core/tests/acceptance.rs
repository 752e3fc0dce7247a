//! One PASS/FAIL line per headline result. Exits nonzero if any fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust_search::calibrate::{calibrate_linear, calibrate_sqrt, CalibrationOptions};
use robust_search::derive::derive_rule;
use robust_search::model::{
    mixture_optimal_value, mixture_rule_value, optimal_value, rule_value, rule_value_binary,
};
use robust_search::rules::{binary_robust_ratio, binary_robust_rule, constant_rule, rho};
use robust_search::simulator::{estimate_value, simulate_paths, SimOptions};
use robust_search::verifier::*;
use robust_search::{CostModel, Environment, StoppingRule};

const INF: f64 = f64::INFINITY;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn budget(o: Outcome, elapsed: Duration, limit: Option<Duration>) -> Outcome {
    match limit {
        Some(l) if elapsed > l => outcome(false, format!("{}; over budget {:?}", o.detail, l)),
        _ => o,
    }
}

fn rho_values() -> Outcome {
    let expected = [
        (1.0 / 89.0, 0.538),
        (1.0 / 20.0, 0.5855536),
        (0.1, 0.625),
        (1.0 / 6.0, 0.666),
        (0.2, 0.685),
        (0.25, 0.71),
        (1.0 / 3.0, 0.75),
        (0.5, 0.82),
    ];
    let mut bad = Vec::new();
    for (x, want) in expected {
        let got = rho(x);
        if (got - want).abs() > 0.005 {
            bad.push(format!("rho({x:.4})={got:.4} want {want}"));
        }
    }
    outcome(bad.is_empty(), if bad.is_empty() { "8 values within 0.005".into() } else { bad.join("; ") })
}

fn constant_rule_binary() -> Outcome {
    let opts = RatioOptions { class: EnvClass::Binary, ..Default::default() };
    let mut worst = INF;
    let mut highest = 0.0f64;
    for d in [0.3, 0.6, 0.9, 0.99] {
        let c = CostModel::discount(d).unwrap();
        let rule = constant_rule(&c).unwrap();
        for x0 in [0.01, 0.1, 0.5] {
            let r = performance_ratio(&rule, x0, INF, &c, &opts).unwrap().ratio;
            worst = worst.min(r);
            highest = highest.max(r);
        }
    }
    outcome(
        worst >= 0.5 - 1e-6 && highest <= 0.5 + 1e-3,
        format!("ratios in [{worst:.7}, {highest:.7}]"),
    )
}

fn constant_rule_general() -> Outcome {
    let mut worst = INF;
    let mut highest = 0.0f64;
    for d in [0.3, 0.6, 0.9, 0.99] {
        let c = CostModel::discount(d).unwrap();
        let rule = constant_rule(&c).unwrap();
        for x0 in [0.01, 0.1, 0.5] {
            let r = performance_ratio(&rule, x0, INF, &c, &RatioOptions::default()).unwrap().ratio;
            worst = worst.min(r);
            highest = highest.max(r);
        }
    }
    // Unbounded ratios are scale free, so one y per q gives an upper bound.
    let mut best_q = (0.0, 0.0);
    for d in [0.3, 0.9] {
        let c = CostModel::discount(d).unwrap();
        for i in 0..=1000 {
            let q = i as f64 / 1000.0;
            let r = pointwise_ratio(&StoppingRule::Constant { q }, 1.0, INF, &c).unwrap().ratio;
            if r > best_q.1 {
                best_q = (q, r);
            }
        }
    }
    outcome(
        worst >= 0.25 - 1e-6 && highest <= 0.251 && best_q.1 <= 0.251,
        format!(
            "ratios in [{worst:.7}, {highest:.7}], best swept q={} gives {:.7}",
            best_q.0, best_q.1
        ),
    )
}

fn maximin_closed_form() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut err_q = 0.0f64;
    let mut err_r = 0.0f64;
    for _ in 0..50 {
        let d: f64 = rng.random_range(0.05..0.98);
        let x: f64 = rng.random_range(0.002..1.0);
        let (qbar, _) = binary_robust_rule(x, d).unwrap();
        let r = binary_robust_ratio(x, d).unwrap();
        let (q, v) = common::maximin(x, d);
        err_q = err_q.max((qbar - q).abs());
        err_r = err_r.max((r - v).abs());
    }
    outcome(
        err_q <= 1e-4 && err_r <= 1e-4,
        format!("max |q-q_grid|={err_q:.2e}, max |R-R_grid|={err_r:.2e}"),
    )
}

fn pstar_two_point() -> Outcome {
    let c = CostModel::discount(0.9).unwrap();
    let rule = StoppingRule::QStar { xbar: 1.0, delta: 0.9 };
    let opts = RatioOptions::default();
    let mut bad = Vec::new();
    let mut parts = Vec::new();
    for x in [1.0 / 6.0, 0.2, 0.3] {
        let rep = twopoint_ratio(&rule, x, 1.0, &c, &opts).unwrap();
        let at_top = rep.argmin.w.is_none() && rep.argmin.z == Some(1.0);
        parts.push(format!("{x:.3}:{:.6}", rep.ratio));
        if (rep.ratio - rho(x)).abs() > 1e-4 || !at_top {
            bad.push(format!("x={x}: {:.6} vs {:.6} at w={:?} z={:?}", rep.ratio, rho(x), rep.argmin.w, rep.argmin.z));
        }
    }
    let low = twopoint_ratio(&rule, 0.01, 1.0, &c, &opts).unwrap();
    parts.push(format!("0.01:{:.6}<{:.6} z={:?}", low.ratio, rho(0.01), low.argmin.z));
    if !(low.ratio < rho(0.01) && low.argmin.z.is_some_and(|z| z < 1.0)) {
        bad.push("x=0.01 not below rho with interior z".into());
    }
    outcome(bad.is_empty(), if bad.is_empty() { parts.join(", ") } else { bad.join("; ") })
}

fn compute_l_check() -> Outcome {
    let opts = RatioOptions::default();
    let a = compute_l(0.5, 1e-4, &opts).unwrap();
    let b = compute_l(0.9, 1e-4, &opts).unwrap();
    let cap = 1.0 / 89.0 + 1e-4;
    outcome(
        a <= cap && b <= cap && (a - b).abs() <= 2e-4,
        format!("L(0.5)={a:.6}, L(0.9)={b:.6}, cap {cap:.6}"),
    )
}

fn calibrated_families() -> Outcome {
    let o = CalibrationOptions::default();
    let l5 = calibrate_linear(0.5, &o).unwrap();
    let l9 = calibrate_linear(0.9, &o).unwrap();
    let s95 = calibrate_sqrt(0.95, &o).unwrap();
    let ok = |c: &robust_search::calibrate::Calibration, p: f64, e: f64| {
        (c.param - p).abs() <= 0.05 && (c.loss - e).abs() <= 0.005
    };
    outcome(
        ok(&l5, 1.19, 0.048) && ok(&l9, 0.6, 0.055) && ok(&s95, 0.8, 0.016),
        format!(
            "linear(0.5) {:.3}/{:.2}%, linear(0.9) {:.3}/{:.2}%, sqrt(0.95) {:.3}/{:.2}%",
            l5.param,
            100.0 * l5.loss,
            l9.param,
            100.0 * l9.loss,
            s95.param,
            100.0 * s95.loss
        ),
    )
}

fn costly_search() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst = INF;
    let mut err = 0.0f64;
    for _ in 0..20 {
        let d: f64 = rng.random_range(0.2..0.97);
        let k: f64 = rng.random_range(0.001..0.05);
        let c = CostModel::new(d, k).unwrap();
        let rule = constant_rule(&c).unwrap();
        for m in [1.0, 1.5, 3.0] {
            let x0 = 2.0 * d * k / (1.0 - d) * m;
            let r = performance_ratio(&rule, x0, INF, &c, &RatioOptions::default()).unwrap().ratio;
            worst = worst.min(r);
            let y = x0 * 1.7;
            let u = rule_value_binary(&rule, &Environment::binary(5.0 * y, 0.0), y, &c).unwrap();
            err = err.max((u - 0.5 * (y - d * k / (1.0 - d))).abs());
        }
    }
    outcome(worst >= 0.25 - 1e-6 && err <= 1e-10, format!("min ratio {worst:.7}, closed-form error {err:.1e}"))
}

fn derive_check() -> Outcome {
    let d: f64 = 0.9;
    let grid = 256;
    let c = CostModel::discount(d).unwrap();
    let mut bad = Vec::new();
    let mut parts = Vec::new();
    for x in [0.05, 0.1, 0.3] {
        let r = rho(x);
        let out = derive_rule(r, d, grid, Default::default()).unwrap();
        let k = (x.ln() / d.ln()).floor();
        let cell = (d.powf(k) - d.powf(k + 1.0)) / grid as f64;
        let rep = performance_ratio(&out.rule, out.x0, 1.0, &c, &RatioOptions::default()).unwrap();
        parts.push(format!("{x}: x0={:.5} recheck {:.5}/{:.5}", out.x0, rep.ratio, r));
        if (out.x0 - x).abs() > 2.0 * cell || rep.ratio < r - 1e-3 {
            bad.push(format!("x={x}"));
        }
    }
    let msg = parts.join(", ");
    outcome(bad.is_empty(), if bad.is_empty() { msg } else { format!("{msg}; failing {}", bad.join(" ")) })
}

fn random_binary(rng: &mut ChaCha8Rng, hi: f64) -> Environment {
    Environment::binary(rng.random_range(0.05..hi), rng.random_range(0.01..1.0))
}

fn structural_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut mixture_fail = 0;
    for _ in 0..100 {
        let d: f64 = rng.random_range(0.3..0.97);
        let c = CostModel::discount(d).unwrap();
        let n = rng.random_range(2..5);
        let comps: Vec<Environment> = (0..n).map(|_| random_binary(&mut rng, 2.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = w.iter().sum();
        let mix = Environment::Mixture { components: comps.clone(), weights: w.iter().map(|x| x / total).collect() };
        let rule = StoppingRule::QStar { xbar: 2.0, delta: d };
        let y = rng.random_range(0.01..0.5);
        let ratio = mixture_rule_value(&rule, &mix, y, &c).unwrap() / mixture_optimal_value(&mix, y, &c, 1e-13).unwrap();
        let worst = comps
            .iter()
            .map(|e| rule_value(&rule, e, y, &c).unwrap() / optimal_value(e, y, &c).unwrap())
            .fold(INF, f64::min);
        if ratio < worst - 1e-9 {
            mixture_fail += 1;
        }
    }

    let mut history_err = 0.0f64;
    for _ in 0..20 {
        let d: f64 = rng.random_range(0.3..0.97);
        let c = CostModel::discount(d).unwrap();
        let rule = if rng.random_bool(0.5) {
            StoppingRule::QStar { xbar: 1.0, delta: d }
        } else {
            StoppingRule::Constant { q: rng.random_range(0.05..1.0) }
        };
        let len = rng.random_range(1..5);
        let history: Vec<f64> = (0..len).map(|_| rng.random_range(0.01..0.8)).collect();
        let y = history.iter().cloned().fold(0.0, f64::max);
        let base = pointwise_ratio(&rule, y, 1.0, &c).unwrap().ratio;
        let h = history_ratio(&rule, &history, 1.0, &c, 1e-9).unwrap();
        history_err = history_err.max((h - base).abs());
    }

    let c = CostModel::discount(0.9).unwrap();
    let opts = RatioOptions { grids: Grids { y_points: 128, ..Default::default() }, ..Default::default() };
    let mut bound_fail = 0;
    for _ in 0..50 {
        let cut = rng.random_range(0.0..1.2);
        let x0 = rng.random_range(0.02..0.8);
        if !deterministic_bound_check(cut, x0, 1.0, &c, &opts).unwrap().holds {
            bound_fail += 1;
        }
    }
    outcome(
        mixture_fail == 0 && history_err <= 1e-6 && bound_fail == 0,
        format!(
            "mixture violations {mixture_fail}/100, history gap {history_err:.1e} on 20, bound violations {bound_fail}/50"
        ),
    )
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Environment, StoppingRule, CostModel, f64) {
    let d: f64 = rng.random_range(0.5..0.97);
    let k = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..0.02) };
    let env = if rng.random_bool(0.5) {
        random_binary(rng, 1.0)
    } else {
        let n = rng.random_range(2..5);
        let mut support: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        support.sort_by(f64::total_cmp);
        support.dedup();
        let w: Vec<f64> = support.iter().map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = w.iter().sum();
        Environment::Discrete { probs: w.iter().map(|x| x / total).collect(), support }
    };
    let rule = match rng.random_range(0..4) {
        0 => StoppingRule::Constant { q: rng.random_range(0.05..1.0) },
        1 => StoppingRule::QStar { xbar: 1.0, delta: d },
        2 => StoppingRule::Linear { alpha: rng.random_range(0.2..2.0), delta: d },
        _ => StoppingRule::Piecewise { knots: vec![0.0, 0.3, 0.6], probs: vec![0.1, 0.4, 1.0] },
    };
    let x0 = rng.random_range(0.0..0.3);
    (env, rule, CostModel::new(d, k).unwrap(), x0)
}

fn simulator() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let opts = SimOptions::default();
    let mut misses = Vec::new();
    let mut worst_z = 0.0f64;
    for i in 0..30 {
        let (env, rule, c, x0) = random_instance(&mut rng);
        let exact = rule_value(&rule, &env, x0, &c).unwrap();
        let est = estimate_value(&env, &rule, x0, &c, 100_000, 1000 + i, &opts).unwrap();
        let z = (est.mean - exact).abs() / est.standard_error;
        worst_z = worst_z.max(z);
        if z > 3.0 {
            misses.push(i);
        }
    }
    let (env, rule, c, x0) = random_instance(&mut rng);
    let a = simulate_paths(&env, &rule, x0, &c, 20_000, 5, &opts).unwrap();
    let b = simulate_paths(&env, &rule, x0, &c, 20_000, 5, &opts).unwrap();
    let same = a.len() == b.len() && a.iter().zip(&b).all(|(p, q)| p.payoff.to_bits() == q.payoff.to_bits() && p.stop_round == q.stop_round);
    outcome(
        misses.is_empty() && same,
        format!("largest deviation {worst_z:.2} SE over 30 instances, misses {misses:?}, reproducible {same}"),
    )
}

fn main() -> ExitCode {
    type Check = (&'static str, fn() -> Outcome, Option<u64>);
    let checks: &[Check] = &[
        ("rho_at_tabulated_starts", rho_values, Some(1)),
        ("constant_rule_half_on_binary", constant_rule_binary, Some(10)),
        ("constant_rule_quarter_on_general", constant_rule_general, Some(60)),
        ("robust_rule_closed_form_vs_maximin", maximin_closed_form, None),
        ("pstar_against_two_point", pstar_two_point, None),
        ("compute_l", compute_l_check, Some(600)),
        ("calibrated_linear_and_sqrt", calibrated_families, None),
        ("constant_rule_with_costs", costly_search, None),
        ("derived_rule_threshold", derive_check, None),
        ("mixture_history_and_cutoff_bounds", structural_properties, None),
        ("simulator", simulator, None),
    ];
    let mut failed = 0;
    for (name, f, limit) in checks {
        let t = Instant::now();
        let o = f();
        let el = t.elapsed();
        let o = budget(o, el, limit.map(Duration::from_secs));
        if !o.pass {
            failed += 1;
        }
        println!("{} {name} ({}; {:.2}s)", if o.pass { "PASS" } else { "FAIL" }, o.detail, el.as_secs_f64());
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
