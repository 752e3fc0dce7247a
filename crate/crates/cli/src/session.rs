//! Live advisor sessions.
//!
//! A session is fully determined by its config and its offer log. When a
//! state file is configured every event is appended to it as one JSON line
//! before the in-memory state changes, and opening the file replays it.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use robust_search::{CostModel, StoppingRule};

use crate::error::{AppError, AppResult};
use crate::rule_spec::{resolve, RuleContext, RuleSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub x0: f64,
    /// Omitted or `null` for unbounded alternatives.
    #[serde(default)]
    pub xbar: Option<f64>,
    pub delta: f64,
    #[serde(default)]
    pub kappa: f64,
    pub rule: RuleSpec,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub params: Map<String, Value>,
}

impl SessionConfig {
    pub fn cost(&self) -> AppResult<CostModel> {
        Ok(CostModel::new(self.delta, self.kappa)?)
    }

    pub fn xbar(&self) -> f64 {
        self.xbar.unwrap_or(f64::INFINITY)
    }

    pub fn resolve_rule(&self) -> AppResult<StoppingRule> {
        if !(self.x0 > 0.0 && self.x0.is_finite()) {
            return Err(AppError::Input(format!("x0 must be positive, got {}", self.x0)));
        }
        if let Some(xb) = self.xbar {
            if xb.is_nan() || xb < self.x0 {
                return Err(AppError::Input(format!("xbar {xb} is below x0 {}", self.x0)));
            }
        }
        let ctx = RuleContext { cost: self.cost()?, x0: Some(self.x0), xbar: self.xbar() };
        resolve(&self.rule, &self.params, &ctx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub config: SessionConfig,
    /// The rule the config resolved to.
    pub rule: StoppingRule,
    pub offers: Vec<f64>,
    pub y: f64,
    pub current_p: f64,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
}

impl Session {
    fn new(id: String, config: SessionConfig, created_at: u64) -> AppResult<Self> {
        let rule = config.resolve_rule()?;
        let y = config.x0;
        Ok(Session { id, current_p: rule.prob(y), rule, config, offers: Vec::new(), y, created_at })
    }

    fn push(&mut self, value: f64) {
        self.offers.push(value);
        self.y = self.y.max(value);
        self.current_p = self.rule.prob(self.y);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Created { id: String, config: SessionConfig, created_at: u64 },
    Offer { id: String, value: f64 },
}

#[derive(Default)]
struct Inner {
    sessions: HashMap<String, Session>,
    log: Option<File>,
}

#[derive(Clone, Default)]
pub struct SessionStore {
    inner: Arc<Mutex<Inner>>,
}

fn check_offer(value: f64) -> AppResult<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(AppError::Input(format!("offer must be a finite nonnegative number, got {value}")))
    }
}

impl SessionStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Replays `path` if it exists, then appends new events to it.
    pub fn open(path: &Path) -> AppResult<Self> {
        let mut inner = Inner::default();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: Event = serde_json::from_str(&line).map_err(|e| {
                    AppError::Input(format!("{}:{}: bad event: {e}", path.display(), n + 1))
                })?;
                apply(&mut inner.sessions, event)?;
            }
        }
        inner.log = Some(OpenOptions::new().create(true).append(true).open(path)?);
        Ok(SessionStore { inner: Arc::new(Mutex::new(inner)) })
    }

    pub fn create(&self, config: SessionConfig) -> AppResult<Session> {
        let id = uuid::Uuid::new_v4().to_string();
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let session = Session::new(id.clone(), config.clone(), created_at)?;
        let mut inner = self.inner.lock().unwrap();
        record(&mut inner.log, &Event::Created { id: id.clone(), config, created_at })?;
        inner.sessions.insert(id, session.clone());
        Ok(session)
    }

    /// Appends an offer. With `index`, a repeat of an already logged offer
    /// is a no-op and anything else that does not extend the log conflicts.
    pub fn offer(&self, id: &str, value: f64, index: Option<usize>) -> AppResult<Session> {
        check_offer(value)?;
        let mut inner = self.inner.lock().unwrap();
        let Inner { sessions, log } = &mut *inner;
        let session = sessions.get_mut(id).ok_or_else(|| AppError::NotFound(id.to_string()))?;
        if let Some(i) = index {
            let len = session.offers.len();
            if i < len && session.offers[i] == value {
                return Ok(session.clone());
            }
            if i != len {
                return Err(AppError::Conflict(format!(
                    "offer index {i} does not extend a log of {len} offers"
                )));
            }
        }
        record(log, &Event::Offer { id: id.to_string(), value })?;
        session.push(value);
        Ok(session.clone())
    }

    pub fn get(&self, id: &str) -> AppResult<Session> {
        self.inner
            .lock()
            .unwrap()
            .sessions
            .get(id)
            .cloned()
            .ok_or_else(|| AppError::NotFound(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn record(log: &mut Option<File>, event: &Event) -> AppResult<()> {
    if let Some(f) = log {
        let mut line = serde_json::to_string(event).expect("events serialize");
        line.push('\n');
        f.write_all(line.as_bytes())?;
        f.flush()?;
    }
    Ok(())
}

fn apply(sessions: &mut HashMap<String, Session>, event: Event) -> AppResult<()> {
    match event {
        Event::Created { id, config, created_at } => {
            let s = Session::new(id.clone(), config, created_at)?;
            sessions.insert(id, s);
        }
        Event::Offer { id, value } => {
            check_offer(value)?;
            sessions.get_mut(&id).ok_or_else(|| AppError::NotFound(id.clone()))?.push(value);
        }
    }
    Ok(())
}
