//! Monte Carlo search paths.
//!
//! Path `i` draws from its own ChaCha stream `(seed, i)`, so estimates do not
//! depend on how paths are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};
use crate::model::{CostModel, Environment, Lottery};
use crate::par::{self, Exec};
use crate::rules::StoppingRule;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub stop_round: u64,
    pub y_at_stop: f64,
    pub payoff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub standard_error: f64,
    pub n_paths: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimOptions {
    /// Forced stop after this many draws. Required when `δ = 1`; otherwise
    /// defaults to the round where `δ^t` falls below 1e-12.
    pub max_rounds: Option<u64>,
    pub exec: Exec,
}

struct Setup {
    lottery: Lottery,
    cum: Vec<f64>,
    cap: u64,
}

fn setup(env: &Environment, rule: &StoppingRule, x0: f64, cost: &CostModel, opts: &SimOptions) -> Result<Setup> {
    cost.validate()?;
    rule.validate()?;
    check_finite("x0", x0)?;
    if x0 < 0.0 {
        return Err(Error::Validation(format!("x0 must be nonnegative, got {x0}")));
    }
    if matches!(env, Environment::Mixture { .. }) {
        return Err(Error::Unsupported("simulation of mixtures is not supported".into()));
    }
    let lottery = env.lottery()?;
    let cap = match opts.max_rounds {
        Some(n) => n,
        None if cost.delta < 1.0 => (1e-12f64.ln() / cost.delta.ln()).ceil() as u64,
        None => {
            return Err(Error::Config("delta = 1 needs an explicit round cap".into()));
        }
    };
    let mut acc = 0.0;
    let cum = lottery
        .probs
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    Ok(Setup { lottery, cum, cap })
}

fn run(s: &Setup, rule: &StoppingRule, x0: f64, cost: &CostModel, seed: u64, index: u64) -> Path {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut y = x0;
    let mut t = 0u64;
    while t < s.cap && rng.random::<f64>() >= rule.prob(y) {
        let u: f64 = rng.random();
        let i = s.cum.partition_point(|&c| c <= u).min(s.cum.len() - 1);
        y = y.max(s.lottery.values[i]);
        t += 1;
    }
    let d = cost.delta;
    let (disc, spent) = if d < 1.0 {
        let dt = d.powi(t as i32);
        (dt, cost.kappa * d * (1.0 - dt) / (1.0 - d))
    } else {
        (1.0, cost.kappa * t as f64)
    };
    Path {
        stop_round: t,
        y_at_stop: y,
        payoff: disc * y - spent,
    }
}

/// One path on stream 0 of `seed`.
pub fn simulate_path(
    env: &Environment,
    rule: &StoppingRule,
    x0: f64,
    cost: &CostModel,
    seed: u64,
    opts: &SimOptions,
) -> Result<Path> {
    let s = setup(env, rule, x0, cost, opts)?;
    Ok(run(&s, rule, x0, cost, seed, 0))
}

/// Paths `0..n` of `seed`, in index order.
pub fn simulate_paths(
    env: &Environment,
    rule: &StoppingRule,
    x0: f64,
    cost: &CostModel,
    n: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<Vec<Path>> {
    let s = setup(env, rule, x0, cost, opts)?;
    Ok(par::map_range(opts.exec, n, |i| run(&s, rule, x0, cost, seed, i as u64)))
}

pub fn estimate_value(
    env: &Environment,
    rule: &StoppingRule,
    x0: f64,
    cost: &CostModel,
    n_paths: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<Estimate> {
    if n_paths < 100 {
        return Err(Error::Validation(format!("need at least 100 paths, got {n_paths}")));
    }
    let paths = simulate_paths(env, rule, x0, cost, n_paths, seed, opts)?;
    let n = n_paths as f64;
    let mean = paths.iter().map(|p| p.payoff).sum::<f64>() / n;
    let var = paths.iter().map(|p| (p.payoff - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(Estimate {
        mean,
        standard_error: (var / n).sqrt(),
        n_paths,
    })
}

pub fn paths_csv(paths: &[Path]) -> String {
    let mut out = String::from("path_id,stop_round,y_at_stop,payoff\n");
    for (i, p) in paths.iter().enumerate() {
        out.push_str(&format!("{i},{},{},{}\n", p.stop_round, p.y_at_stop, p.payoff));
    }
    out
}
