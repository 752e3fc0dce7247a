//! Building a [`StoppingRule`] from a family name and loose parameters.
//!
//! Parameters not given explicitly are taken from the surrounding query:
//! `delta` from the cost model, `xbar` and `x0` from the search problem, and
//! the constant rule's `q` defaults to `(1-δ)/(2-δ)`.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use robust_search::rules::{constant_rule, SQRT_LOWER};
use robust_search::{CostModel, StoppingRule};

use crate::error::{AppError, AppResult};

/// A family name such as `"pstar"` or a complete rule object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RuleSpec {
    Named(String),
    Full(StoppingRule),
}

#[derive(Debug, Clone, Copy)]
pub struct RuleContext {
    pub cost: CostModel,
    pub x0: Option<f64>,
    /// `f64::INFINITY` when unbounded.
    pub xbar: f64,
}

pub const FAMILIES: &[&str] = &[
    "constant",
    "pstar",
    "binary_robust",
    "linear",
    "sqrt",
    "piecewise",
    "dynamic_robust",
];

fn canonical(family: &str) -> AppResult<&'static str> {
    let f = family.trim().to_ascii_lowercase().replace('-', "_");
    let name = match f.as_str() {
        "constant" => "constant",
        "pstar" | "p_star" | "qstar" | "q_star" => "pstar",
        "binary_robust" | "qbar" => "binary_robust",
        "linear" => "linear",
        "sqrt" => "sqrt",
        "piecewise" => "piecewise",
        "dynamic_robust" | "robust" => "dynamic_robust",
        _ => {
            return Err(AppError::Input(format!(
                "unknown rule family {family:?}; expected one of {}",
                FAMILIES.join(", ")
            )))
        }
    };
    Ok(name)
}

fn number(params: &Map<String, Value>, key: &str, default: Option<f64>) -> AppResult<f64> {
    match params.get(key) {
        Some(v) => v
            .as_f64()
            .ok_or_else(|| AppError::Input(format!("parameter {key} must be a number"))),
        None => default.ok_or_else(|| AppError::Input(format!("missing parameter {key}"))),
    }
}

fn finite_xbar(ctx: &RuleContext, family: &str) -> AppResult<f64> {
    if ctx.xbar.is_finite() {
        Ok(ctx.xbar)
    } else {
        Err(AppError::Input(format!("family {family} needs a finite xbar")))
    }
}

pub fn build(family: &str, params: &Map<String, Value>, ctx: &RuleContext) -> AppResult<StoppingRule> {
    let d = number(params, "delta", Some(ctx.cost.delta))?;
    let rule = match canonical(family)? {
        "constant" => match params.get("q") {
            Some(_) => StoppingRule::Constant { q: number(params, "q", None)? },
            None => constant_rule(&ctx.cost)?,
        },
        "pstar" => StoppingRule::QStar {
            xbar: number(params, "xbar", None).or_else(|_| finite_xbar(ctx, "pstar"))?,
            delta: d,
        },
        "binary_robust" => StoppingRule::BinaryRobust {
            x0: number(params, "x0", ctx.x0)?,
            xbar: number(params, "xbar", None).or_else(|_| finite_xbar(ctx, "binary_robust"))?,
            delta: d,
        },
        "linear" => StoppingRule::Linear { alpha: number(params, "alpha", None)?, delta: d },
        "sqrt" => StoppingRule::Sqrt {
            beta: number(params, "beta", None)?,
            delta: d,
            lower: number(params, "lower", Some(SQRT_LOWER))?,
        },
        "dynamic_robust" => StoppingRule::DynamicRobust {
            x0: number(params, "x0", ctx.x0)?,
            xbar: number(params, "xbar", None).or_else(|_| finite_xbar(ctx, "dynamic_robust"))?,
            delta: d,
        },
        _ => {
            let mut obj = params.clone();
            obj.insert("family".into(), "piecewise".into());
            serde_json::from_value(Value::Object(obj))
                .map_err(|e| AppError::Input(format!("piecewise rule: {e}")))?
        }
    };
    rule.validate()?;
    Ok(rule)
}

pub fn resolve(spec: &RuleSpec, params: &Map<String, Value>, ctx: &RuleContext) -> AppResult<StoppingRule> {
    match spec {
        RuleSpec::Named(name) => build(name, params, ctx),
        RuleSpec::Full(rule) => {
            rule.validate()?;
            Ok(rule.clone())
        }
    }
}

/// Parses `--params`: a JSON object, optionally a whole rule with `family`.
pub fn parse_params(text: Option<&str>) -> AppResult<Map<String, Value>> {
    let Some(text) = text else {
        return Ok(Map::new());
    };
    match serde_json::from_str(text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(AppError::Input("params must be a JSON object".into())),
        Err(e) => Err(AppError::Input(format!("params: {e}"))),
    }
}

/// Accepts `inf` for unbounded alternatives.
pub fn parse_xbar(s: &str) -> Result<f64, String> {
    let v = match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" | "+inf" => f64::INFINITY,
        t => t.parse::<f64>().map_err(|e| format!("{s:?}: {e}"))?,
    };
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("xbar must be positive, got {s}"))
    }
}
