//! Worst-case performance ratios.
//!
//! The pointwise ratio `r_p(y)` is the infimum of `U_p / V` over binary
//! environments `(z, σ)` started at best-so-far `y`. The σ-infimum is solved
//! exactly for each `z`: the ratio is a quotient of two linear-fractional
//! maps, so its critical points are roots of a quadratic. The `z` dimension
//! is a geometric grid plus the rule's breakpoints and a local refinement.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};
use crate::model::{binary_reservation, stay_value, wait_value, CostModel, Lottery};
use crate::par::{self, Exec};
use crate::rules::{r_star, StoppingRule};

/// Which binary environments the adversary draws from.
///
/// Under `Binary` the searcher stops as soon as the high value arrives (it is
/// the last improvement possible). Under `General` the rule keeps applying
/// after the arrival, which is what matters once richer environments exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvClass {
    Binary,
    #[default]
    General,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// σ → 0: nothing better ever arrives.
    Stop,
    Wait,
    /// z → ∞ with σz → ∞, reached only in the limit.
    Limit,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::Stop => "stop",
            Scenario::Wait => "wait",
            Scenario::Limit => "limit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grids {
    pub z_per_decade: usize,
    pub y_points: usize,
    /// Unbounded case: largest `z` is this multiple of `y`.
    pub z_cap: f64,
    /// Unbounded case: largest `y` is this multiple of `x0`.
    pub y_cap: f64,
    pub two_point_y: usize,
    pub two_point_z: usize,
    pub two_point_w: usize,
    pub two_point_sigma: usize,
}

impl Default for Grids {
    fn default() -> Self {
        Grids {
            z_per_decade: 512,
            y_points: 1024,
            z_cap: 1e6,
            y_cap: 1e4,
            two_point_y: 48,
            two_point_z: 40,
            two_point_w: 24,
            two_point_sigma: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RatioOptions {
    pub class: EnvClass,
    pub grids: Grids,
    pub exec: Exec,
}

/// Ratio at one best-so-far value together with the environment attaining it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointRatio {
    pub y: f64,
    pub ratio: f64,
    pub z: Option<f64>,
    pub sigma: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub w: Option<f64>,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub x0: f64,
    /// `None` when alternatives are unbounded.
    pub xbar: Option<f64>,
    pub ratio: f64,
    pub argmin: PointRatio,
    pub curve: Vec<PointRatio>,
    /// Whether `r_p(y)` was nondecreasing along the grid.
    pub monotone_ratio: bool,
    pub note: Option<String>,
}

impl RatioReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("y,ratio,argmin_z,argmin_sigma,scenario\n");
        for p in &self.curve {
            let z = p.z.map(|z| z.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.y,
                p.ratio,
                z,
                p.sigma,
                p.scenario.as_str()
            ));
        }
        out
    }
}

const MONOTONE_TOL: f64 = 1e-6;

fn check_inputs(rule: &StoppingRule, y: f64, xbar: f64, cost: &CostModel) -> Result<()> {
    cost.validate()?;
    rule.validate()?;
    check_finite("y", y)?;
    if y <= 0.0 {
        return Err(Error::Validation(format!("y must be positive, got {y}")));
    }
    if xbar.is_nan() || xbar <= 0.0 {
        return Err(Error::Validation(format!("xbar must be positive, got {xbar}")));
    }
    Ok(())
}

type Lin = [f64; 2];

/// Product of three linear factors scaled by `k`, as cubic coefficients.
fn cubic(k: f64, a: Lin, b: Lin, c: Lin) -> [f64; 4] {
    let q = [a[0] * b[0], a[0] * b[1] + a[1] * b[0], a[1] * b[1]];
    [
        k * q[0] * c[0],
        k * (q[0] * c[1] + q[1] * c[0]),
        k * (q[1] * c[1] + q[2] * c[0]),
        k * q[2] * c[1],
    ]
}

/// Real roots of `a σ² + b σ + c` without cancellation; NaN marks a
/// missing root.
fn quadratic_roots(a: f64, b: f64, c: f64) -> [f64; 2] {
    let none = [f64::NAN; 2];
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return none;
    }
    if a.abs() <= 1e-14 * scale {
        return if b != 0.0 { [-c / b, f64::NAN] } else { none };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return none;
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    [q / a, if q != 0.0 { c / q } else { f64::NAN }]
}

/// `min over σ ∈ [σ_c, 1]` of `U(σ) / c(σ)` where `σ_c` is the smallest σ
/// with reservation value at least `y`. `None` if no such σ exists.
pub(crate) fn wait_min(s: f64, y: f64, z: f64, uz: f64, cost: &CostModel) -> Option<(f64, f64)> {
    let (d, k) = (cost.delta, cost.kappa);
    if z <= y {
        return None;
    }
    let sigma_c = (y * (1.0 - d) + d * k) / (d * (z - y));
    if sigma_c >= 1.0 {
        return None;
    }
    let lo = sigma_c.max(0.0);
    let f = |sig: f64| {
        let c = binary_reservation(z, sig, cost).max(y);
        wait_value(s, y, uz, sig, cost) / c
    };
    let mut best = (f(1.0), 1.0);
    let mut consider = |sig: f64| {
        let v = f(sig);
        if v < best.0 {
            best = (v, sig);
        }
    };
    consider(lo);
    if s < 1.0 {
        let cc = d * (1.0 - s);
        let n1: Lin = [s * y - (1.0 - s) * d * k, (1.0 - s) * d * uz];
        let d1: Lin = [1.0 - cc, cc];
        let n2: Lin = [1.0 - d, d];
        let d2: Lin = [-k, z];
        // Numerator of the derivative; the cubic terms cancel.
        let t1 = cubic(n1[1], n2, d1, d2);
        let t2 = cubic(d, n1, d1, d2);
        let t3 = cubic(cc, n1, n2, d2);
        let t4 = cubic(z, n1, n2, d1);
        let p: [f64; 3] = std::array::from_fn(|i| t1[i] + t2[i] - t3[i] - t4[i]);
        for r in quadratic_roots(p[2], p[1], p[0]) {
            if r > lo && r < 1.0 {
                consider(r);
            }
        }
    }
    Some(best)
}

struct Ctx<'a> {
    rule: &'a StoppingRule,
    cost: &'a CostModel,
    class: EnvClass,
    s: f64,
    y: f64,
}

impl Ctx<'_> {
    fn uz(&self, z: f64, pz: f64) -> f64 {
        match self.class {
            EnvClass::Binary => z,
            EnvClass::General => stay_value(pz, z, self.cost),
        }
    }

    fn at(&self, z: f64, pz: f64) -> Option<(f64, f64)> {
        wait_min(self.s, self.y, z, self.uz(z, pz), self.cost)
    }

    fn at_z(&self, z: f64) -> f64 {
        self.at(z, self.rule.prob(z)).map_or(f64::INFINITY, |r| r.0)
    }
}

/// `r_p(y)` over the general binary class with default grids.
pub fn pointwise_ratio(
    rule: &StoppingRule,
    y: f64,
    xbar: f64,
    cost: &CostModel,
) -> Result<PointRatio> {
    pointwise_ratio_with(rule, y, xbar, cost, &RatioOptions::default())
}

pub fn pointwise_ratio_with(
    rule: &StoppingRule,
    y: f64,
    xbar: f64,
    cost: &CostModel,
    opts: &RatioOptions,
) -> Result<PointRatio> {
    check_inputs(rule, y, xbar, cost)?;
    Ok(pointwise_unchecked(rule, y, xbar, cost, opts))
}

const TIE_TOL: f64 = 1e-12;

pub(crate) fn pointwise_unchecked(
    rule: &StoppingRule,
    y: f64,
    xbar: f64,
    cost: &CostModel,
    opts: &RatioOptions,
) -> PointRatio {
    let d = cost.delta;
    let s = rule.prob(y);
    let mut best = PointRatio {
        y,
        ratio: stay_value(s, y, cost) / y,
        z: None,
        sigma: 0.0,
        w: None,
        scenario: Scenario::Stop,
    };
    let ctx = Ctx {
        rule,
        cost,
        class: opts.class,
        s,
        y,
    };
    let z_lo = y / d;
    let bounded = xbar.is_finite();
    let z_hi = if bounded { xbar } else { opts.grids.z_cap * y };
    if z_hi <= z_lo {
        return best;
    }

    let take = |z: f64, pz: f64, best: &mut PointRatio| -> bool {
        match ctx.at(z, pz) {
            // A wait scenario tying with the stop scenario is reported as the argmin.
            Some((v, sig))
                if v < best.ratio
                    || (best.scenario == Scenario::Stop && v <= best.ratio * (1.0 + TIE_TOL)) =>
            {
                *best = PointRatio {
                    y,
                    ratio: v.min(best.ratio),
                    z: Some(z),
                    sigma: sig,
                    w: None,
                    scenario: Scenario::Wait,
                };
                true
            }
            _ => false,
        }
    };

    // Within a cell of a step rule the ratio falls as z grows, so with
    // κ = 0 the right ends of cells (taken as left limits) are exhaustive.
    let steps = matches!(rule, StoppingRule::Piecewise { .. }) && cost.kappa == 0.0;
    let n = if steps {
        1
    } else {
        ((z_hi / z_lo).log10() * opts.grids.z_per_decade as f64)
            .ceil()
            .max(1.0) as usize
    };
    let step = (z_hi / z_lo).powf(1.0 / n as f64);
    let zs: Vec<f64> = (1..=n)
        .map(|i| if i == n { z_hi } else { z_lo * step.powi(i as i32) })
        .collect();
    let mut best_i = None;
    for (i, &z) in zs.iter().enumerate() {
        if take(z, rule.prob(z), &mut best) {
            best_i = Some(i);
        }
    }
    if let StoppingRule::Piecewise { knots, probs } = rule {
        let from = knots.partition_point(|&k| k <= z_lo);
        for i in from..knots.len() {
            let b = knots[i];
            if b > z_hi {
                break;
            }
            take(b, probs[i.saturating_sub(1)], &mut best);
            if !steps {
                take(b, probs[i], &mut best);
            }
        }
    } else {
        for b in rule.breakpoints() {
            if b > z_lo && b <= z_hi {
                take(b, rule.prob(b), &mut best);
                if take(b, rule.prob_left(b), &mut best) {
                    best_i = None;
                }
            }
        }
    }
    if let (Some(i), false) = (best_i, matches!(rule, StoppingRule::Piecewise { .. })) {
        let a = if i == 0 { z_lo } else { zs[i - 1] };
        let b = zs[(i + 1).min(n - 1)];
        let z = golden_min(|z| ctx.at_z(z), a, b, 1e-12 * b);
        take(z, rule.prob(z), &mut best);
    }

    if !bounded {
        let g = match opts.class {
            EnvClass::Binary => 1.0,
            EnvClass::General => {
                let p = rule.limit_at_infinity();
                if p > 0.0 {
                    p / (1.0 - d * (1.0 - p))
                } else {
                    0.0
                }
            }
        };
        let lim = (1.0 - s) * (1.0 - d) * g / (1.0 - d * (1.0 - s));
        if lim < best.ratio {
            best = PointRatio {
                y,
                ratio: lim,
                z: None,
                sigma: 0.0,
                w: None,
                scenario: Scenario::Limit,
            };
        }
    }
    best
}

/// Minimizer of a unimodal function on `[a, b]`.
pub(crate) fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut e = a + g * (b - a);
    let (mut fc, mut fe) = (f(c), f(e));
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc <= fe {
            b = e;
            e = c;
            fe = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + g * (b - a);
            fe = f(e);
        }
    }
    if fc <= fe {
        c
    } else {
        e
    }
}

/// Log-spaced grid on `[lo, hi]` with both ends included, merged with any
/// extra points inside the range.
pub(crate) fn log_grid(lo: f64, hi: f64, n: usize, extra: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(n + extra.len());
    if hi <= lo || n < 2 {
        v.push(lo);
    } else {
        let r = (hi / lo).ln();
        for i in 0..n {
            v.push(if i == n - 1 { hi } else { lo * (r * i as f64 / (n - 1) as f64).exp() });
        }
    }
    v.extend(extra.iter().copied().filter(|&x| x >= lo && x <= hi));
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn y_grid(rule: &StoppingRule, x0: f64, y_hi: f64, n: usize) -> Vec<f64> {
    // Step rules are worst at the left end of each cell; other rules may
    // also jump, so the left limit at each breakpoint is added.
    let steps = matches!(rule, StoppingRule::Piecewise { .. });
    let mut extra = Vec::new();
    for b in rule.breakpoints() {
        extra.push(b);
        if b > 0.0 && !steps {
            extra.push(b.next_down());
        }
    }
    log_grid(x0, y_hi, n, &extra)
}

fn is_monotone(curve: &[PointRatio]) -> bool {
    curve.windows(2).all(|w| w[1].ratio >= w[0].ratio - MONOTONE_TOL)
}

/// `R_p(x0) = inf over y ≥ x0` of `r_p(y)` on the y grid.
pub fn performance_ratio(
    rule: &StoppingRule,
    x0: f64,
    xbar: f64,
    cost: &CostModel,
    opts: &RatioOptions,
) -> Result<RatioReport> {
    check_inputs(rule, x0, xbar, cost)?;
    let y_hi = if xbar.is_finite() {
        xbar.max(x0)
    } else {
        x0 * opts.grids.y_cap
    };
    let ys = y_grid(rule, x0, y_hi, opts.grids.y_points);
    let curve = par::map(opts.exec, &ys, |&y| pointwise_unchecked(rule, y, xbar, cost, opts));
    Ok(report(x0, xbar, curve))
}

fn report(x0: f64, xbar: f64, curve: Vec<PointRatio>) -> RatioReport {
    let mut argmin = curve[0];
    for p in &curve[1..] {
        if p.ratio < argmin.ratio {
            argmin = *p;
        }
    }
    let monotone = is_monotone(&curve);
    RatioReport {
        x0,
        xbar: xbar.is_finite().then_some(xbar),
        ratio: argmin.ratio,
        argmin,
        monotone_ratio: monotone,
        note: (!monotone).then(|| "binary-only lower bound not certified".to_string()),
        curve,
    }
}

fn two_point_reservation(w: f64, z: f64, sigma: f64, cost: &CostModel) -> f64 {
    let d = cost.delta;
    let hi = d * (sigma * z - cost.kappa) / (1.0 - d * (1.0 - sigma));
    if hi >= w {
        hi
    } else {
        d * (sigma * z + (1.0 - sigma) * w - cost.kappa)
    }
}

/// Worst case over two-point environments `{w, z}` with `y < w < z ≤ xbar`,
/// together with the `w = 0` binary slice.
pub fn twopoint_ratio(
    rule: &StoppingRule,
    x0: f64,
    xbar: f64,
    cost: &CostModel,
    opts: &RatioOptions,
) -> Result<RatioReport> {
    check_inputs(rule, x0, xbar, cost)?;
    if cost.kappa != 0.0 {
        return Err(Error::Unsupported("two-point search needs kappa = 0".into()));
    }
    if !xbar.is_finite() {
        return Err(Error::Unsupported("two-point search needs bounded alternatives".into()));
    }
    let g = opts.grids;
    let general = RatioOptions {
        class: EnvClass::General,
        ..*opts
    };
    let ys = y_grid(rule, x0, xbar.max(x0), g.two_point_y);
    let mut sigmas = vec![0.0];
    sigmas.extend(log_grid(1e-4, 1.0, g.two_point_sigma, &[]));
    let curve = par::map(opts.exec, &ys, |&y| {
        let mut best = pointwise_unchecked(rule, y, xbar, cost, &general);
        if xbar <= y {
            return best;
        }
        let zs = log_grid(y, xbar, g.two_point_z + 1, &[]);
        for &z in &zs[1..] {
            let ws = log_grid(y, z, g.two_point_w + 2, &[]);
            for &w in &ws[1..ws.len() - 1] {
                for &sigma in &sigmas {
                    let lot = Lottery {
                        values: vec![w, z],
                        probs: vec![1.0 - sigma, sigma],
                    };
                    let u = lot.rule_value(rule, y, cost);
                    let v = two_point_reservation(w, z, sigma, cost).max(y);
                    let r = u / v;
                    if r < best.ratio {
                        best = PointRatio {
                            y,
                            ratio: r,
                            z: Some(z),
                            sigma,
                            w: Some(w),
                            scenario: Scenario::Wait,
                        };
                    }
                }
            }
        }
        best
    });
    Ok(report(x0, xbar, curve))
}

/// Smallest `x0` (to within `resolution`, with `x̄ = 1`) at which the
/// dynamically robust rule still attains `R*(x0)` against two-point
/// environments.
pub fn compute_l(delta: f64, resolution: f64, opts: &RatioOptions) -> Result<f64> {
    let cost = CostModel::discount(delta)?;
    if delta >= 1.0 {
        return Err(Error::Config("delta must be below 1".into()));
    }
    if !(resolution > 0.0 && resolution < delta) {
        return Err(Error::Validation(format!("resolution must lie in (0, delta), got {resolution}")));
    }
    let attains = |x0: f64| -> Result<bool> {
        let rule = StoppingRule::DynamicRobust { x0, xbar: 1.0, delta };
        let rep = twopoint_ratio(&rule, x0, 1.0, &cost, opts)?;
        Ok(rep.ratio >= r_star(x0, delta) - 1e-7)
    };
    let mut lo = resolution;
    let mut hi = delta;
    if attains(lo)? {
        return Ok(lo);
    }
    if !attains(hi)? {
        return Err(Error::Unsupported(format!("no x0 below {delta} attains the bound")));
    }
    while hi - lo > resolution {
        let mid = 0.5 * (lo + hi);
        if attains(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub measured: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Ratio of the cutoff rule `1{y ≥ cutoff}` against the ceiling
/// `x0 / sup_F V(F, x0)` that no deterministic rule can beat.
pub fn deterministic_bound_check(
    cutoff: f64,
    x0: f64,
    xbar: f64,
    cost: &CostModel,
    opts: &RatioOptions,
) -> Result<BoundCheck> {
    check_finite("cutoff", cutoff)?;
    let rule = if cutoff > 0.0 {
        StoppingRule::Piecewise {
            knots: vec![0.0, cutoff],
            probs: vec![0.0, 1.0],
        }
    } else {
        StoppingRule::Constant { q: 1.0 }
    };
    let measured = performance_ratio(&rule, x0, xbar, cost, opts)?.ratio;
    let bound = if xbar.is_finite() {
        x0 / x0.max(cost.delta * (xbar - cost.kappa))
    } else {
        0.0
    };
    Ok(BoundCheck {
        measured,
        bound,
        holds: measured <= bound + 1e-6,
    })
}

/// Ratio after an arbitrary history whose best value is `max(history)`.
///
/// The environment is the pointwise worst case, perturbed so that every
/// observed offer keeps positive probability: mass `eps` is spread over the
/// offers and σ is kept inside `[eps, 1 - eps]`.
pub fn history_ratio(
    rule: &StoppingRule,
    history: &[f64],
    xbar: f64,
    cost: &CostModel,
    eps: f64,
) -> Result<f64> {
    let y = history.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    check_inputs(rule, y, xbar, cost)?;
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::Validation(format!("eps must lie in (0, 1/2), got {eps}")));
    }
    let worst = pointwise_ratio(rule, y, xbar, cost)?;
    let z = match worst.z {
        Some(z) => z,
        None if xbar.is_finite() => xbar,
        None => 2.0 * y / cost.delta,
    };
    let sigma = worst.sigma.clamp(eps, 1.0 - eps);
    let mut pts: Vec<(f64, f64)> = vec![(0.0, (1.0 - eps) * (1.0 - sigma)), (z, (1.0 - eps) * sigma)];
    for &h in history {
        pts.push((h, eps / history.len() as f64));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (values, probs) = pts.into_iter().unzip();
    let lot = Lottery::from_sorted(values, probs);
    let u = lot.rule_value(rule, y, cost);
    let v = lot.reservation_value(cost).max(y);
    Ok(u / v)
}
