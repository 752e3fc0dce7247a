#![allow(dead_code)]

//! Brute-force oracles shared by the integration tests. They use only
//! grids and golden-section refinement, never the library's closed forms.

use robust_search::{CostModel, StoppingRule};

pub fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..iters {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) <= f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Grid minimum followed by golden refinement between the neighbours.
pub fn grid_min(f: impl Fn(f64) -> f64, pts: &[f64]) -> (f64, f64) {
    let mut i = 0;
    let mut best = f64::INFINITY;
    for (j, &p) in pts.iter().enumerate() {
        let v = f(p);
        if v < best {
            best = v;
            i = j;
        }
    }
    let a = pts[i.saturating_sub(1)];
    let b = pts[(i + 1).min(pts.len() - 1)];
    let (x, v) = golden_min(&f, a, b, 80);
    if v < best {
        (x, v)
    } else {
        (pts[i], best)
    }
}

pub fn log_pts(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

pub fn lin_pts(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn sigma_pts() -> Vec<f64> {
    let mut v = log_pts(1e-7, 1.0, 3000);
    v.extend(lin_pts(0.0005, 1.0, 2001));
    v.sort_by(f64::total_cmp);
    v
}

/// Payoff ratio against `(x̄, σ)` of a constant rule `q` that stops on arrival.
fn binary_objective(q: f64, x: f64, d: f64, s: f64) -> f64 {
    let stop = q / (1.0 - d * (1.0 - q));
    let wait = (q * x + (1.0 - q) * d * s) * (1.0 - d * (1.0 - s)) / ((1.0 - d * (1.0 - s) * (1.0 - q)) * d * s);
    stop.min(wait)
}

/// `min over σ` of the binary objective for a fixed `q`.
pub fn worst_case(q: f64, x: f64, d: f64) -> f64 {
    grid_min(|s| binary_objective(q, x, d, s), &sigma_pts()).1
}

/// `max over q` of `min over σ` by dense grids; returns `(q, value)`.
pub fn maximin(x: f64, d: f64) -> (f64, f64) {
    let sig = sigma_pts();
    let inner = |q: f64| grid_min(|s| binary_objective(q, x, d, s), &sig).1;
    let qs = lin_pts(0.0, 1.0, 2001);
    let (q, v) = grid_min(|q| -inner(q), &qs);
    (q, -v)
}

/// Largest `s` keeping both scenarios at ratio `r` when the single high
/// value is 1 and is accepted on arrival.
pub fn q_tilde_numeric(y: f64, r: f64, d: f64) -> f64 {
    let sig = sigma_pts();
    let ratio = |s: f64| {
        let stop = s / (1.0 - d * (1.0 - s));
        let wait = grid_min(
            |g| {
                let c = (d * g / (1.0 - d * (1.0 - g))).max(y);
                (s * y + (1.0 - s) * d * g) / (1.0 - d * (1.0 - s) * (1.0 - g)) / c
            },
            &sig,
        )
        .1;
        stop.min(wait)
    };
    if ratio(1.0) >= r {
        return 1.0;
    }
    let ss = lin_pts(0.0, 1.0, 401);
    let (mut lo, _) = grid_min(|s| -ratio(s), &ss);
    let mut hi = 1.0;
    for _ in 0..60 {
        let m = 0.5 * (lo + hi);
        if ratio(m) >= r {
            lo = m;
        } else {
            hi = m;
        }
    }
    lo
}

/// Ratio over a dense `(z, σ)` grid under the general class.
pub fn brute_ratio(rule: &StoppingRule, y: f64, xbar: f64, c: &CostModel, binary: bool) -> f64 {
    let d = c.delta;
    let k = c.kappa;
    let stay = |p: f64, v: f64| (p * v - (1.0 - p) * d * k) / (1.0 - d * (1.0 - p));
    let s = rule.prob(y);
    let mut best = stay(s, y) / y;
    if xbar <= y / d {
        return best;
    }
    let sig = sigma_pts();
    for z in log_pts(y / d * 1.000001, xbar, 300) {
        let pz = rule.prob(z);
        let uz = if binary { z } else { stay(pz, z) };
        let f = |g: f64| {
            let v = (d * (g * z - k) / (1.0 - d * (1.0 - g))).max(y);
            let u = (s * y + (1.0 - s) * d * (g * uz - k)) / (1.0 - d * (1.0 - s) * (1.0 - g));
            u / v
        };
        best = best.min(grid_min(f, &sig).1);
    }
    best
}
