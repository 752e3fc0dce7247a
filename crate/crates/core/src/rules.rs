//! Stationary stopping rules and their closed forms.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_prob, Error, Result};
use crate::model::CostModel;

/// Map from the best-so-far alternative `y` to a stopping probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum StoppingRule {
    Constant { q: f64 },
    /// `p(y) = q*(y / xbar)` with the ratio clamped to `[0, 1]`.
    #[serde(alias = "pstar")]
    QStar { xbar: f64, delta: f64 },
    /// Constant `q̄(x0 / xbar)`, the maximin rule against binary environments.
    BinaryRobust { x0: f64, xbar: f64, delta: f64 },
    /// `min{(1-δ)/(2-δ) + αy, 1}`.
    Linear { alpha: f64, delta: f64 },
    /// `min{√(β(1-δ)y/(1-y)), 1}` below δ, 1 above; `y` is raised to `lower` first.
    Sqrt { beta: f64, delta: f64, lower: f64 },
    /// Right-continuous step function: `probs[i]` on `[knots[i], knots[i+1])`.
    /// Values below the first knot take `probs[0]`.
    Piecewise { knots: Vec<f64>, probs: Vec<f64> },
    /// The rule that makes every pointwise ratio at least `R*(x0/xbar)`
    /// against binary environments with values in `[0, xbar]`.
    DynamicRobust { x0: f64, xbar: f64, delta: f64 },
}

impl StoppingRule {
    pub fn prob(&self, y: f64) -> f64 {
        match self {
            StoppingRule::Constant { q } => *q,
            StoppingRule::QStar { xbar, delta } => q_star((y / xbar).clamp(0.0, 1.0), *delta),
            StoppingRule::BinaryRobust { x0, xbar, delta } => robust_q(x0 / xbar, *delta),
            StoppingRule::Linear { alpha, delta } => {
                ((1.0 - delta) / (2.0 - delta) + alpha * y).min(1.0)
            }
            StoppingRule::Sqrt { beta, delta, lower } => {
                if y >= *delta {
                    1.0
                } else {
                    let yc = y.max(*lower);
                    (beta * (1.0 - delta) * yc / (1.0 - yc)).sqrt().min(1.0)
                }
            }
            StoppingRule::Piecewise { knots, probs } => {
                let i = knots.partition_point(|&k| k <= y);
                probs[i.saturating_sub(1)]
            }
            StoppingRule::DynamicRobust { x0, xbar, delta } => {
                let r = r_star(x0 / xbar, *delta);
                q_tilde(y.max(*x0) / xbar, r, *delta)
            }
        }
    }

    /// Left limit `p(y-)`.
    pub fn prob_left(&self, y: f64) -> f64 {
        match self {
            StoppingRule::Piecewise { knots, probs } => {
                let i = knots.partition_point(|&k| k < y);
                probs[i.saturating_sub(1)]
            }
            _ if y > 0.0 => self.prob(y.next_down()),
            _ => self.prob(y),
        }
    }

    /// Points where the rule may jump or change formula.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            StoppingRule::Constant { .. } | StoppingRule::BinaryRobust { .. } => vec![],
            StoppingRule::QStar { xbar, .. } => vec![*xbar],
            StoppingRule::Linear { alpha, delta } => {
                if *alpha > 0.0 {
                    vec![(1.0 - (1.0 - delta) / (2.0 - delta)) / alpha]
                } else {
                    vec![]
                }
            }
            StoppingRule::Sqrt { beta, delta, lower } => {
                let k = 1.0 / (beta * (1.0 - delta));
                let mut v = vec![*lower, *delta];
                let full = k / (1.0 + k);
                if full > *lower && full < *delta {
                    v.push(full);
                }
                v.sort_by(f64::total_cmp);
                v
            }
            StoppingRule::Piecewise { knots, .. } => knots.clone(),
            StoppingRule::DynamicRobust { x0, xbar, delta } => {
                let r = r_star(x0 / xbar, *delta);
                let top = delta * r * xbar;
                if top > *x0 {
                    vec![*x0, top]
                } else {
                    vec![*x0]
                }
            }
        }
    }

    /// `lim p(y)` as `y → ∞`.
    pub fn limit_at_infinity(&self) -> f64 {
        match self {
            StoppingRule::Constant { q } => *q,
            StoppingRule::QStar { delta, .. } => q_star(1.0, *delta),
            StoppingRule::BinaryRobust { x0, xbar, delta } => robust_q(x0 / xbar, *delta),
            StoppingRule::Linear { alpha, delta } => {
                if *alpha > 0.0 {
                    1.0
                } else {
                    (1.0 - delta) / (2.0 - delta)
                }
            }
            StoppingRule::Sqrt { .. } | StoppingRule::DynamicRobust { .. } => 1.0,
            StoppingRule::Piecewise { probs, .. } => *probs.last().unwrap(),
        }
    }

    /// Checks parameters and monotonicity.
    pub fn validate(&self) -> Result<()> {
        match self {
            StoppingRule::Constant { q } => check_prob("q", *q),
            StoppingRule::QStar { xbar, delta } => {
                positive("xbar", *xbar)?;
                open_delta(*delta)
            }
            StoppingRule::BinaryRobust { x0, xbar, delta }
            | StoppingRule::DynamicRobust { x0, xbar, delta } => {
                positive("x0", *x0)?;
                positive("xbar", *xbar)?;
                if x0 > xbar {
                    return Err(Error::Validation(format!("x0={x0} exceeds xbar={xbar}")));
                }
                open_delta(*delta)
            }
            StoppingRule::Linear { alpha, delta } => {
                check_finite("alpha", *alpha)?;
                if *alpha < 0.0 {
                    return Err(Error::Validation(format!(
                        "alpha must be nonnegative for a monotone rule, got {alpha}"
                    )));
                }
                open_delta(*delta)
            }
            StoppingRule::Sqrt { beta, delta, lower } => {
                positive("beta", *beta)?;
                open_delta(*delta)?;
                if !(*lower > 0.0 && lower < delta) {
                    return Err(Error::Validation(format!("lower must lie in (0, delta), got {lower}")));
                }
                Ok(())
            }
            StoppingRule::Piecewise { knots, probs } => {
                if knots.is_empty() || knots.len() != probs.len() {
                    return Err(Error::Validation(
                        "piecewise rule needs equally many knots and probs, at least one".into(),
                    ));
                }
                for (i, (&k, &p)) in knots.iter().zip(probs).enumerate() {
                    check_finite("knot", k)?;
                    check_prob("p", p)?;
                    if i > 0 {
                        if k <= knots[i - 1] {
                            return Err(Error::Validation("knots must be strictly ascending".into()));
                        }
                        if p < probs[i - 1] {
                            return Err(Error::Validation(format!(
                                "rule is not monotone: p drops from {} to {p} at y={k}",
                                probs[i - 1]
                            )));
                        }
                    }
                }
                Ok(())
            }
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    check_finite(name, v)?;
    if v > 0.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!("{name} must be positive, got {v}")))
    }
}

fn open_delta(d: f64) -> Result<()> {
    if d > 0.0 && d < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("delta must lie in (0, 1), got {d}")))
    }
}

/// `q*(x) = 2(1-δ) / (4 - 2δ + x - √(x(x+8)))`.
pub fn q_star(x: f64, delta: f64) -> f64 {
    (2.0 * (1.0 - delta) / (4.0 - 2.0 * delta + x - (x * (x + 8.0)).sqrt())).min(1.0)
}

/// `ρ(x) = 1/2 + (x + √(x(x+8))) / 8`.
pub fn rho(x: f64) -> f64 {
    0.5 + (x + (x * (x + 8.0)).sqrt()) / 8.0
}

fn middle_root(xhat: f64, delta: f64) -> f64 {
    let a = 2.0 * delta - xhat;
    ((1.0 - delta) * (a * a - delta * xhat * xhat)).max(0.0).sqrt()
}

fn robust_q(xhat: f64, delta: f64) -> f64 {
    if xhat <= delta * delta / (2.0 - delta) {
        q_star(xhat, delta)
    } else if xhat < delta {
        // Rationalized so that nothing cancels as xhat approaches delta.
        let q = 2.0 * delta * (1.0 - delta)
            / (middle_root(xhat, delta) + (1.0 - delta) * (2.0 * delta - xhat));
        q.min(1.0)
    } else {
        1.0
    }
}

fn robust_sigma(xhat: f64, delta: f64) -> f64 {
    if xhat <= delta * delta / (2.0 - delta) {
        (1.0 - delta) * (3.0 * xhat + (xhat * (xhat + 8.0)).sqrt())
            / (2.0 * delta * (1.0 - xhat))
    } else {
        1.0
    }
}

pub(crate) fn r_star(xhat: f64, delta: f64) -> f64 {
    if xhat <= delta * delta / (2.0 - delta) {
        rho(xhat)
    } else if xhat < delta {
        let v = (2.0 * delta - (1.0 - delta) * xhat - middle_root(xhat, delta))
            / (2.0 * delta * delta);
        v.min(1.0)
    } else {
        1.0
    }
}

fn check_xhat(xhat: f64, delta: f64) -> Result<()> {
    check_finite("xhat", xhat)?;
    if !(xhat > 0.0 && xhat <= 1.0) {
        return Err(Error::Validation(format!("xhat must lie in (0, 1], got {xhat}")));
    }
    open_delta(delta)
}

/// Maximin pair `(q̄, σ̄)` against binary environments for `x̂ = x0/x̄`.
pub fn binary_robust_rule(xhat: f64, delta: f64) -> Result<(f64, f64)> {
    check_xhat(xhat, delta)?;
    Ok((robust_q(xhat, delta), robust_sigma(xhat, delta)))
}

/// Best attainable ratio `R*` against binary environments for `x̂ = x0/x̄`.
pub fn binary_robust_ratio(xhat: f64, delta: f64) -> Result<f64> {
    check_xhat(xhat, delta)?;
    Ok(r_star(xhat, delta))
}

/// Largest stopping probability at normalized `y` that keeps every binary
/// wait scenario at ratio `r`, when higher values stop for sure.
pub fn q_tilde(y: f64, r: f64, delta: f64) -> f64 {
    let d = delta;
    if y >= d * r {
        return 1.0;
    }
    let t = (y * r).sqrt();
    let sigma = (1.0 - d) * (y + t) / (d * (r - y));
    let q = if y < r && sigma <= 1.0 {
        let num = (1.0 - d) * (1.0 - r) * (y + t) * (r + t);
        let den = (1.0 - d) * (1.0 - r) * 2.0 * y * r
            + (d * r * r + ((1.0 - d + y) * y + (1.0 - d - (3.0 - d) * y) * r)) * t;
        num / den
    } else {
        d * (1.0 - r) / (d - y)
    };
    q.min(1.0)
}

/// `(1-δ)/(2-δ)`.
pub fn constant_rule(cost: &CostModel) -> Result<StoppingRule> {
    cost.validate()?;
    if cost.delta >= 1.0 {
        return Err(Error::Config(
            "constant rule needs delta < 1; it degenerates to never stopping".into(),
        ));
    }
    Ok(StoppingRule::Constant {
        q: (1.0 - cost.delta) / (2.0 - cost.delta),
    })
}

pub fn pstar_rule(xbar: f64, delta: f64) -> Result<StoppingRule> {
    let r = StoppingRule::QStar { xbar, delta };
    r.validate()?;
    Ok(r)
}

pub fn linear_rule(alpha: f64, delta: f64) -> Result<StoppingRule> {
    let r = StoppingRule::Linear { alpha, delta };
    r.validate()?;
    Ok(r)
}

pub const SQRT_LOWER: f64 = 1.0 / 89.0;

pub fn sqrt_rule(beta: f64, delta: f64) -> Result<StoppingRule> {
    let r = StoppingRule::Sqrt {
        beta,
        delta,
        lower: SQRT_LOWER,
    };
    r.validate()?;
    Ok(r)
}

pub fn dynamic_robust_rule(x0: f64, xbar: f64, delta: f64) -> Result<StoppingRule> {
    let r = StoppingRule::DynamicRobust { x0, xbar, delta };
    r.validate()?;
    Ok(r)
}
