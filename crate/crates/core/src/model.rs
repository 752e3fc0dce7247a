//! Domain types and the payoff engine.
//!
//! Payoffs follow the stationary recursion
//! `U(y) = p(y) y + (1 - p(y)) δ (E[U(max{y, X})] - κ)`, solved exactly for
//! finite supports by working down from the largest support value.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_prob, Error, Result};
use crate::rules::StoppingRule;

const PROB_TOL: f64 = 1e-12;

/// Discount factor and additive per-round cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub delta: f64,
    #[serde(default)]
    pub kappa: f64,
}

impl CostModel {
    pub fn new(delta: f64, kappa: f64) -> Result<Self> {
        let c = CostModel { delta, kappa };
        c.validate()?;
        Ok(c)
    }

    pub fn discount(delta: f64) -> Result<Self> {
        Self::new(delta, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let (d, k) = (self.delta, self.kappa);
        if !(d.is_finite() && k.is_finite()) {
            return Err(Error::Config(format!("delta={d}, kappa={k} must be finite")));
        }
        if !(d > 0.0 && d <= 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1], got {d}")));
        }
        if k < 0.0 {
            return Err(Error::Config(format!("kappa must be nonnegative, got {k}")));
        }
        if k + (1.0 - d) <= 0.0 {
            return Err(Error::Config(
                "search must be costly: kappa + (1 - delta) > 0".into(),
            ));
        }
        Ok(())
    }
}

/// A distribution of alternatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Environment {
    /// `z` with probability `sigma`, otherwise 0.
    Binary { z: f64, sigma: f64 },
    /// `z` with probability `sigma`, otherwise `w`.
    TwoPoint { w: f64, z: f64, sigma: f64 },
    Discrete { support: Vec<f64>, probs: Vec<f64> },
    Mixture {
        components: Vec<Environment>,
        weights: Vec<f64>,
    },
}

impl Environment {
    pub fn binary(z: f64, sigma: f64) -> Self {
        Environment::Binary { z, sigma }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Environment::Binary { z, sigma } => {
                check_finite("z", *z)?;
                nonneg("z", *z)?;
                check_prob("sigma", *sigma)
            }
            Environment::TwoPoint { w, z, sigma } => {
                check_finite("w", *w)?;
                check_finite("z", *z)?;
                nonneg("w", *w)?;
                if z < w {
                    return Err(Error::Validation(format!("two-point needs w <= z, got w={w}, z={z}")));
                }
                check_prob("sigma", *sigma)
            }
            Environment::Discrete { support, probs } => {
                if support.is_empty() {
                    return Err(Error::Validation("empty support".into()));
                }
                if support.len() != probs.len() {
                    return Err(Error::Validation(format!(
                        "support has {} values but probs has {}",
                        support.len(),
                        probs.len()
                    )));
                }
                for (i, &v) in support.iter().enumerate() {
                    check_finite("support value", v)?;
                    nonneg("support value", v)?;
                    if i > 0 && v <= support[i - 1] {
                        return Err(Error::Validation("support must be strictly ascending".into()));
                    }
                }
                check_simplex("probs", probs)
            }
            Environment::Mixture { components, weights } => {
                if components.is_empty() {
                    return Err(Error::Validation("mixture without components".into()));
                }
                if components.len() != weights.len() {
                    return Err(Error::Validation("mixture weights do not match components".into()));
                }
                for c in components {
                    if matches!(c, Environment::Mixture { .. }) {
                        return Err(Error::Validation("nested mixtures are not allowed".into()));
                    }
                    c.validate()?;
                }
                check_simplex("weights", weights)
            }
        }
    }

    /// Ascending support with merged duplicates. Fails on mixtures.
    pub fn lottery(&self) -> Result<Lottery> {
        self.validate()?;
        let (vals, probs): (Vec<f64>, Vec<f64>) = match self {
            Environment::Binary { z, sigma } => (vec![0.0, *z], vec![1.0 - sigma, *sigma]),
            Environment::TwoPoint { w, z, sigma } => (vec![*w, *z], vec![1.0 - sigma, *sigma]),
            Environment::Discrete { support, probs } => (support.clone(), probs.clone()),
            Environment::Mixture { .. } => {
                return Err(Error::Unsupported("mixture has no single lottery".into()))
            }
        };
        Ok(Lottery::from_sorted(vals, probs))
    }
}

fn nonneg(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!("{name} must be nonnegative, got {v}")))
    }
}

fn check_simplex(name: &str, p: &[f64]) -> Result<()> {
    for &q in p {
        check_prob(name, q)?;
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PROB_TOL {
        return Err(Error::Validation(format!("{name} must sum to 1, got {s}")));
    }
    Ok(())
}

/// Finite distribution with strictly ascending values.
#[derive(Debug, Clone, PartialEq)]
pub struct Lottery {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Lottery {
    /// Builds a lottery from ascending values, merging repeats.
    pub fn from_sorted(vals: Vec<f64>, probs: Vec<f64>) -> Self {
        let mut values: Vec<f64> = Vec::with_capacity(vals.len());
        let mut ps: Vec<f64> = Vec::with_capacity(vals.len());
        for (v, p) in vals.into_iter().zip(probs) {
            match values.last() {
                Some(&last) if last == v => *ps.last_mut().unwrap() += p,
                _ => {
                    values.push(v);
                    ps.push(p);
                }
            }
        }
        Lottery { values, probs: ps }
    }

    pub fn expected_max(&self, c: f64) -> f64 {
        self.values
            .iter()
            .zip(&self.probs)
            .map(|(&v, &p)| p * v.max(c))
            .sum()
    }

    /// Unique root of `c - δ(E[max{c, X}] - κ)` by bisection.
    pub fn reservation_value(&self, cost: &CostModel) -> f64 {
        let (d, k) = (cost.delta, cost.kappa);
        let top = *self.values.last().unwrap();
        let g = |c: f64| c - d * (self.expected_max(c) - k);
        // g(-δκ) <= 0 since E[max{c, X}] >= 0, and g(δ·top) >= δκ >= 0.
        let mut lo = -d * k;
        let mut hi = if d < 1.0 { d * top } else { top };
        if hi < lo {
            hi = lo;
        }
        for _ in 0..200 {
            if hi - lo <= 1e-12 {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Payoff of a stationary rule from best-so-far `y`.
    pub fn rule_value(&self, rule: &StoppingRule, y: f64, cost: &CostModel) -> f64 {
        let d = cost.delta;
        let k = cost.kappa;
        let mut tail = 0.0; // sum of prob * U over values already processed
        let mut mass_above = 0.0;
        let level = |s: f64, v: f64, below: f64, tail: f64| -> f64 {
            if s >= 1.0 {
                return v;
            }
            let den = 1.0 - (1.0 - s) * d * below;
            if den <= 0.0 || tail == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            (s * v + (1.0 - s) * d * (tail - k)) / den
        };
        for (&v, &pi) in self.values.iter().zip(&self.probs).rev() {
            if v <= y {
                break;
            }
            let u = level(rule.prob(v), v, 1.0 - mass_above, tail);
            if pi > 0.0 {
                tail += pi * u;
            }
            mass_above += pi;
        }
        level(rule.prob(y), y, (1.0 - mass_above).max(0.0), tail)
    }
}

/// Best-so-far alternative and rounds elapsed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub y: f64,
    pub t: u64,
}

impl SearchState {
    pub fn start(x0: f64) -> Self {
        SearchState { y: x0, t: 0 }
    }

    pub fn observe(&mut self, x: f64) {
        self.y = self.y.max(x);
        self.t += 1;
    }
}

/// Payoff when no better alternative can ever arrive.
pub fn stay_value(s: f64, y: f64, cost: &CostModel) -> f64 {
    if s >= 1.0 {
        return y;
    }
    let den = 1.0 - cost.delta * (1.0 - s);
    if den <= 0.0 {
        return f64::NEG_INFINITY;
    }
    (s * y - (1.0 - s) * cost.delta * cost.kappa) / den
}

/// Payoff at `y` in a binary environment `(z, σ)` with `z > y`, given the
/// continuation payoff `uz` once `z` has arrived.
pub fn wait_value(s: f64, y: f64, uz: f64, sigma: f64, cost: &CostModel) -> f64 {
    if s >= 1.0 {
        return y;
    }
    let d = cost.delta;
    let den = 1.0 - d * (1.0 - s) * (1.0 - sigma);
    if den <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let gain = if sigma > 0.0 { sigma * uz } else { 0.0 };
    (s * y + (1.0 - s) * d * (gain - cost.kappa)) / den
}

/// Reservation value of a binary environment in closed form.
pub fn binary_reservation(z: f64, sigma: f64, cost: &CostModel) -> f64 {
    let (d, k) = (cost.delta, cost.kappa);
    if sigma * z >= k {
        d * (sigma * z - k) / (1.0 - d * (1.0 - sigma))
    } else {
        d * (sigma * z - k)
    }
}

pub fn reservation_value(env: &Environment, cost: &CostModel) -> Result<f64> {
    cost.validate()?;
    Ok(env.lottery()?.reservation_value(cost))
}

pub fn optimal_value(env: &Environment, y: f64, cost: &CostModel) -> Result<f64> {
    check_y(y)?;
    Ok(y.max(reservation_value(env, cost)?))
}

pub fn rule_value_binary(
    rule: &StoppingRule,
    env: &Environment,
    y: f64,
    cost: &CostModel,
) -> Result<f64> {
    let Environment::Binary { z, sigma } = *env else {
        return Err(Error::Validation("expected a binary environment".into()));
    };
    cost.validate()?;
    env.validate()?;
    rule.validate()?;
    check_y(y)?;
    let s = rule.prob(y);
    if z <= y {
        return Ok(stay_value(s, y, cost));
    }
    let uz = stay_value(rule.prob(z), z, cost);
    Ok(wait_value(s, y, uz, sigma, cost))
}

pub fn rule_value_discrete(
    rule: &StoppingRule,
    env: &Environment,
    y: f64,
    cost: &CostModel,
) -> Result<f64> {
    cost.validate()?;
    rule.validate()?;
    check_y(y)?;
    Ok(env.lottery()?.rule_value(rule, y, cost))
}

pub fn mixture_rule_value(
    rule: &StoppingRule,
    env: &Environment,
    y: f64,
    cost: &CostModel,
) -> Result<f64> {
    let Environment::Mixture { components, weights } = env else {
        return Err(Error::Validation("expected a mixture".into()));
    };
    env.validate()?;
    let mut total = 0.0;
    for (c, &w) in components.iter().zip(weights) {
        if w > 0.0 {
            total += w * rule_value(rule, c, y, cost)?;
        }
    }
    Ok(total)
}

/// Payoff of `rule` in any environment; mixtures average their components.
pub fn rule_value(
    rule: &StoppingRule,
    env: &Environment,
    y: f64,
    cost: &CostModel,
) -> Result<f64> {
    match env {
        Environment::Binary { .. } => rule_value_binary(rule, env, y, cost),
        Environment::Mixture { .. } => mixture_rule_value(rule, env, y, cost),
        _ => rule_value_discrete(rule, env, y, cost),
    }
}

/// Bayesian optimal payoff against a mixture of binary environments.
///
/// While only zeros arrive the posterior is `w_i (1 - σ_i)^t`; the first
/// positive draw reveals the top value and stopping is then optimal.
pub fn mixture_optimal_value(
    env: &Environment,
    y: f64,
    cost: &CostModel,
    horizon_eps: f64,
) -> Result<f64> {
    let Environment::Mixture { components, weights } = env else {
        return Err(Error::Validation("expected a mixture".into()));
    };
    env.validate()?;
    cost.validate()?;
    check_y(y)?;
    if cost.kappa != 0.0 || cost.delta >= 1.0 {
        return Err(Error::Unsupported("mixture oracle needs kappa = 0 and delta < 1".into()));
    }
    if horizon_eps.is_nan() || horizon_eps <= 0.0 {
        return Err(Error::Validation("horizon_eps must be positive".into()));
    }
    let mut comps = Vec::with_capacity(components.len());
    for (c, &w) in components.iter().zip(weights) {
        let Environment::Binary { z, sigma } = *c else {
            return Err(Error::Unsupported("mixture oracle supports binary components only".into()));
        };
        let sigma = if z > 0.0 { sigma } else { 0.0 };
        if w > 0.0 {
            comps.push((w, z, sigma));
        }
    }
    let d = cost.delta;
    let zmax = comps.iter().map(|c| c.1).fold(0.0, f64::max);
    if zmax <= y {
        return Ok(y);
    }
    let horizon = ((horizon_eps * (1.0 - d) / zmax).ln() / d.ln()).ceil().max(1.0) as usize;

    // For each t: probability of a positive draw next round weighted by its
    // payoff, and the probability of another zero.
    let mut gain = vec![0.0; horizon];
    let mut zero = vec![0.0; horizon];
    let logw: Vec<f64> = comps.iter().map(|c| c.0.ln()).collect();
    for t in 0..horizon {
        let lw: Vec<f64> = comps
            .iter()
            .zip(&logw)
            .map(|(c, &l)| l + t as f64 * (1.0 - c.2).ln())
            .collect();
        let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            break;
        }
        let post: Vec<f64> = lw.iter().map(|&l| (l - m).exp()).collect();
        let norm: f64 = post.iter().sum();
        for (c, pw) in comps.iter().zip(&post) {
            let pi = pw / norm;
            gain[t] += pi * c.2 * c.1.max(y);
            zero[t] += pi * (1.0 - c.2);
        }
    }
    let mut v = y;
    for t in (0..horizon).rev() {
        v = y.max(d * (gain[t] + zero[t] * v));
    }
    Ok(v)
}

fn check_y(y: f64) -> Result<()> {
    check_finite("y", y)?;
    nonneg("y", y)
}
