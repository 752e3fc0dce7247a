//! JSON over HTTP. Every body is parsed by hand so that malformed input
//! yields the same `{error}` shape as a rejected value.

use std::collections::HashMap;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use robust_search::verifier::{
    performance_ratio, pointwise_ratio, twopoint_ratio, EnvClass, Grids, PointRatio, RatioOptions,
    RatioReport,
};
use robust_search::{CostModel, StoppingRule};

use crate::error::{AppError, AppResult};
use crate::rule_spec::{self, RuleContext, RuleSpec};
use crate::session::{Session, SessionConfig, SessionStore};

/// Largest y grid a `/ratio` request may ask for.
pub const MAX_Y_POINTS: usize = 4096;
const SNIPPET_POINTS: i32 = 4;

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        let status = match &self {
            AppError::NotFound(_) => StatusCode::NOT_FOUND,
            AppError::Conflict(_) => StatusCode::CONFLICT,
            AppError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        (status, Json(self.to_json())).into_response()
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> AppResult<T> {
    serde_json::from_slice(body).map_err(|e| AppError::Input(format!("bad request body: {e}")))
}

pub fn router(store: SessionStore) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/offers", post(post_offer))
        .route("/rules/eval", get(eval_rule))
        .route("/ratio", post(ratio))
        .fallback(|| async { not_found() })
        .with_state(store)
}

async fn create_session(State(store): State<SessionStore>, body: Bytes) -> AppResult<Json<Session>> {
    let config: SessionConfig = parse(&body)?;
    Ok(Json(store.create(config)?))
}

async fn get_session(State(store): State<SessionStore>, Path(id): Path<String>) -> AppResult<Json<Session>> {
    Ok(Json(store.get(&id)?))
}

#[derive(Deserialize)]
struct OfferRequest {
    value: f64,
    /// Position of this offer in the session log; makes retries idempotent.
    #[serde(default)]
    index: Option<usize>,
}

#[derive(Serialize)]
pub struct OfferResponse {
    pub id: String,
    pub offers: Vec<f64>,
    pub y: f64,
    pub current_p: f64,
    /// Pointwise worst-case ratios on a few points around `y`.
    pub curve: Vec<PointRatio>,
}

async fn post_offer(
    State(store): State<SessionStore>,
    Path(id): Path<String>,
    body: Bytes,
) -> AppResult<Json<OfferResponse>> {
    let req: OfferRequest = parse(&body)?;
    let session = store.offer(&id, req.value, req.index)?;
    let curve = tokio::task::spawn_blocking({
        let s = session.clone();
        move || curve_snippet(&s)
    })
    .await
    .map_err(|e| AppError::Input(format!("curve computation failed: {e}")))??;
    Ok(Json(OfferResponse {
        id: session.id,
        offers: session.offers,
        y: session.y,
        current_p: session.current_p,
        curve,
    }))
}

/// `r_p` at `y·2^(k/4)` for `|k| ≤ 4`, kept inside `[x0, xbar]`.
pub fn curve_snippet(s: &Session) -> AppResult<Vec<PointRatio>> {
    let cost = s.config.cost()?;
    let xbar = s.config.xbar();
    let mut out = Vec::new();
    for k in -SNIPPET_POINTS..=SNIPPET_POINTS {
        let y = s.y * 2f64.powf(k as f64 / SNIPPET_POINTS as f64);
        if y < s.config.x0 || y > xbar {
            continue;
        }
        out.push(pointwise_ratio(&s.rule, y, xbar, &cost)?);
    }
    Ok(out)
}

fn query_number(q: &HashMap<String, String>, key: &str) -> AppResult<Option<f64>> {
    q.get(key)
        .map(|v| v.parse::<f64>().map_err(|_| AppError::Input(format!("query {key} must be a number"))))
        .transpose()
}

#[derive(Serialize)]
struct EvalResponse {
    rule: StoppingRule,
    y: f64,
    p: f64,
}

async fn eval_rule(Query(q): Query<HashMap<String, String>>) -> AppResult<Json<EvalResponse>> {
    let family = q.get("family").ok_or_else(|| AppError::Input("missing query family".into()))?;
    let y = query_number(&q, "y")?.ok_or_else(|| AppError::Input("missing query y".into()))?;
    let delta = query_number(&q, "delta")?.ok_or_else(|| AppError::Input("missing query delta".into()))?;
    let kappa = query_number(&q, "kappa")?.unwrap_or(0.0);
    let xbar = match q.get("xbar") {
        Some(s) => rule_spec::parse_xbar(s).map_err(AppError::Input)?,
        None => 1.0,
    };
    let ctx = RuleContext { cost: CostModel::new(delta, kappa)?, x0: query_number(&q, "x0")?, xbar };
    let params = rule_spec::parse_params(q.get("params").map(String::as_str))?;
    let rule = rule_spec::build(family, &params, &ctx)?;
    let p = evaluate(&rule, y)?;
    Ok(Json(EvalResponse { rule, y, p }))
}

pub fn evaluate(rule: &StoppingRule, y: f64) -> AppResult<f64> {
    if !(y.is_finite() && y >= 0.0) {
        return Err(AppError::Input(format!("y must be a finite nonnegative number, got {y}")));
    }
    Ok(rule.prob(y))
}

#[derive(Debug, Clone, Deserialize)]
pub struct RatioRequest {
    pub rule: RuleSpec,
    #[serde(default)]
    pub params: Map<String, Value>,
    pub x0: f64,
    /// Omitted or `null` for unbounded alternatives.
    #[serde(default)]
    pub xbar: Option<f64>,
    pub delta: f64,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default)]
    pub class: EnvClass,
    #[serde(default)]
    pub y_points: Option<usize>,
    /// Search two-point environments too (bounded, `kappa = 0` only).
    #[serde(default)]
    pub two_point: bool,
}

/// Shared by `POST /ratio` and the `ratio` subcommand.
pub fn run_ratio(req: &RatioRequest) -> AppResult<RatioReport> {
    let cost = CostModel::new(req.delta, req.kappa)?;
    let xbar = req.xbar.unwrap_or(f64::INFINITY);
    let ctx = RuleContext { cost, x0: Some(req.x0), xbar };
    let rule = rule_spec::resolve(&req.rule, &req.params, &ctx)?;
    let mut grids = Grids::default();
    if let Some(n) = req.y_points {
        if !(2..=MAX_Y_POINTS).contains(&n) {
            return Err(AppError::Input(format!("y_points must lie in [2, {MAX_Y_POINTS}], got {n}")));
        }
        grids.y_points = n;
    }
    let opts = RatioOptions { class: req.class, grids, ..Default::default() };
    Ok(if req.two_point {
        twopoint_ratio(&rule, req.x0, xbar, &cost, &opts)?
    } else {
        performance_ratio(&rule, req.x0, xbar, &cost, &opts)?
    })
}

async fn ratio(body: Bytes) -> AppResult<Json<RatioReport>> {
    let req: RatioRequest = parse(&body)?;
    let rep = tokio::task::spawn_blocking(move || run_ratio(&req))
        .await
        .map_err(|e| AppError::Input(format!("ratio computation failed: {e}")))??;
    Ok(Json(rep))
}

fn not_found() -> Response {
    (StatusCode::NOT_FOUND, Json(json!({"error": "no such route", "kind": "not_found"}))).into_response()
}
