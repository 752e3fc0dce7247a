//! One-parameter rule families tuned to track the robust ratio `R*`.
//!
//! The loss of a rule is the largest shortfall of `R_p(x0)` against `R*(x0)`
//! over starting values `x0 ∈ [x0_low, 1)`, with alternatives in `[0, 1]`
//! and purely discounted search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CostModel;
use crate::par::{self, Exec};
use crate::rules::{r_star, StoppingRule, SQRT_LOWER};
use crate::verifier::{golden_min, log_grid, pointwise_unchecked, wait_min, RatioOptions};

/// Binary environments the adversary may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    /// Any high value `z ∈ (y/δ, 1]`.
    #[default]
    Interval,
    /// High value fixed at 1.
    Endpoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `R* - R_p`.
    #[default]
    Absolute,
    /// `(R* - R_p) / R*`.
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    pub x0_low: f64,
    pub x0_points: usize,
    pub support: Support,
    pub loss: Loss,
    pub exec: Exec,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            x0_low: 1.0 / 89.0,
            x0_points: 400,
            support: Support::Interval,
            loss: Loss::Absolute,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub param: f64,
    pub loss: f64,
    /// Starting value where the loss is largest.
    pub worst_x0: f64,
}

/// Largest loss of `rule` over the starting-value grid.
pub fn performance_loss(
    rule: &StoppingRule,
    delta: f64,
    opts: &CalibrationOptions,
) -> Result<Calibration> {
    let cost = CostModel::discount(delta)?;
    rule.validate()?;
    if !(opts.x0_low > 0.0 && opts.x0_low < 1.0) {
        return Err(Error::Validation(format!("x0_low must lie in (0, 1), got {}", opts.x0_low)));
    }
    if opts.x0_points < 2 {
        return Err(Error::Validation("need at least two starting values".into()));
    }
    Ok(loss_unchecked(rule, &cost, opts, f64::NAN))
}

fn loss_unchecked(rule: &StoppingRule, cost: &CostModel, opts: &CalibrationOptions, param: f64) -> Calibration {
    let d = cost.delta;
    // n points on [x0_low, 1) then y = 1.
    let mut ys = log_grid(opts.x0_low, 1.0, opts.x0_points + 1, &[]);
    ys.pop();
    ys.push(1.0);
    let ratio_opts = RatioOptions {
        exec: Exec::Sequential,
        ..RatioOptions::default()
    };
    let r = par::map(opts.exec, &ys, |&y| match opts.support {
        Support::Interval => pointwise_unchecked(rule, y, 1.0, cost, &ratio_opts).ratio,
        Support::Endpoints => {
            let s = rule.prob(y);
            let stop = s / (1.0 - d * (1.0 - s));
            let p1 = rule.prob(1.0);
            let u1 = p1 / (1.0 - d * (1.0 - p1));
            wait_min(s, y, 1.0, u1, cost).map_or(stop, |w| stop.min(w.0))
        }
    });
    let mut suffix = f64::INFINITY;
    let mut best = Calibration {
        param,
        loss: f64::NEG_INFINITY,
        worst_x0: ys[0],
    };
    for i in (0..ys.len() - 1).rev() {
        suffix = suffix.min(r[i]).min(r[i + 1]);
        let target = r_star(ys[i], d);
        let gap = match opts.loss {
            Loss::Absolute => target - suffix,
            Loss::Relative => (target - suffix) / target,
        };
        if gap > best.loss {
            best.loss = gap;
            best.worst_x0 = ys[i];
        }
    }
    best
}

fn calibrate<F>(delta: f64, lo: f64, hi: f64, make: F, opts: &CalibrationOptions) -> Result<Calibration>
where
    F: Fn(f64) -> StoppingRule + Sync,
{
    let cost = CostModel::discount(delta)?;
    if delta >= 1.0 {
        return Err(Error::Config("calibration needs delta < 1".into()));
    }
    make(lo).validate()?;
    performance_loss(&make(lo), delta, opts)?;
    let eval = |p: f64| loss_unchecked(&make(p), &cost, opts, p);
    let n = 24;
    let coarse: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let losses: Vec<f64> = coarse.iter().map(|&p| eval(p).loss).collect();
    let i = (0..n).fold(0, |b, i| if losses[i] < losses[b] { i } else { b });
    let a = coarse[i.saturating_sub(1)];
    let b = coarse[(i + 1).min(n - 1)];
    let p = golden_min(|p| eval(p).loss, a, b, 1e-4);
    let refined = eval(p);
    Ok(if refined.loss <= losses[i] { refined } else { eval(coarse[i]) })
}

/// Best slope `α` for `min{(1-δ)/(2-δ) + αy, 1}`.
pub fn calibrate_linear(delta: f64, opts: &CalibrationOptions) -> Result<Calibration> {
    calibrate(delta, 0.005, 6.0, |alpha| StoppingRule::Linear { alpha, delta }, opts)
}

/// Best `β` for the square-root family.
pub fn calibrate_sqrt(delta: f64, opts: &CalibrationOptions) -> Result<Calibration> {
    calibrate(
        delta,
        0.005,
        2.0,
        |beta| StoppingRule::Sqrt {
            beta,
            delta,
            lower: SQRT_LOWER,
        },
        opts,
    )
}
