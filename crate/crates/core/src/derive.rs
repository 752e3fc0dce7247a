//! Recursive construction of a rule that guarantees a target ratio `r`.
//!
//! Alternatives are normalized to `[0, 1]` and search is purely discounted.
//! The rule stops for sure on `[δ, 1]`. Each lower interval `[δ^{k+1}, δ^k)`
//! is cut into equal cells, handled from the top down; a cell gets the
//! largest stopping probability that keeps every binary scenario at ratio
//! `r`, given the probabilities already fixed above it.
//!
//! For a fixed environment the constraint `U ≥ r V` is affine in the stopping
//! probability `s`, so the worst-case margin is concave in `s` and its
//! nonnegative set is an interval.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::rules::StoppingRule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedRule {
    /// A `Piecewise` rule; cells below `x0` are not covered.
    pub rule: StoppingRule,
    /// Lowest cell start where the target ratio is still attainable.
    pub x0: f64,
}

impl DerivedRule {
    /// One row per cell: `y_lo,y_hi,p`.
    pub fn to_csv(&self) -> String {
        let StoppingRule::Piecewise { knots, probs } = &self.rule else {
            unreachable!()
        };
        let mut out = String::from("y_lo,y_hi,p\n");
        for i in 0..knots.len() {
            let hi = knots.get(i + 1).copied().unwrap_or(1.0);
            out.push_str(&format!("{},{},{}\n", knots[i], hi, probs[i]));
        }
        out
    }
}

const S_TOL: f64 = 1e-10;
const MIN_Y: f64 = 1e-10;
const CHUNK: usize = 4096;

struct Candidate {
    z: f64,
    uz: f64,
}

struct Cell<'a> {
    y: f64,
    r: f64,
    d: f64,
    cands: &'a [Candidate],
    exec: Exec,
}

impl Cell<'_> {
    fn stop_margin(&self, s: f64) -> f64 {
        s * self.y - self.r * self.y * (1.0 - self.d * (1.0 - s))
    }

    /// `min over σ ∈ [σ_c, 1]` of `(sy + B'σ)(1-δ+δσ) - rδσz(1 - C + Cσ)`.
    fn wait_margin(&self, s: f64, c: &Candidate) -> f64 {
        let (y, d, r, z) = (self.y, self.d, self.r, c.z);
        let a = 1.0 - d;
        let b = (1.0 - s) * d * c.uz;
        let cc = d * (1.0 - s);
        let a0 = a * s * y;
        let a1 = a * b + d * s * y - r * d * z * (1.0 - cc);
        let a2 = d * b - r * d * z * cc;
        let h = |sig: f64| a0 + sig * (a1 + sig * a2);
        let lo = y * (1.0 - d) / (d * (z - y));
        let mut m = h(1.0).min(h(lo));
        if a2 > 0.0 {
            let v = -a1 / (2.0 * a2);
            if v > lo && v < 1.0 {
                m = m.min(h(v));
            }
        }
        m
    }

    fn margin(&self, s: f64) -> f64 {
        let stop = self.stop_margin(s);
        let scan = |cs: &[Candidate]| cs.iter().fold(f64::INFINITY, |m, c| m.min(self.wait_margin(s, c)));
        let wait = if self.cands.len() > CHUNK {
            let chunks: Vec<&[Candidate]> = self.cands.chunks(CHUNK).collect();
            par::map(self.exec, &chunks, |c| scan(c))
                .into_iter()
                .fold(f64::INFINITY, f64::min)
        } else {
            scan(self.cands)
        };
        stop.min(wait)
    }

    /// Largest `s ≤ upper` with nonnegative margin.
    fn largest_feasible(&self, upper: f64) -> Option<f64> {
        if self.margin(upper) >= 0.0 {
            return Some(upper);
        }
        let mut infeasible = upper;
        let mut step = 1e-5;
        let mut feasible = None;
        loop {
            let s = (upper - step).max(0.0);
            if self.margin(s) >= 0.0 {
                feasible = Some(s);
                break;
            }
            infeasible = s;
            if s == 0.0 {
                break;
            }
            step *= 2.0;
        }
        let mut lo = match feasible {
            Some(s) => s,
            None => {
                let s = crate::verifier::golden_min(|s| -self.margin(s), 0.0, upper, 1e-12);
                if self.margin(s) < 0.0 {
                    return None;
                }
                infeasible = upper;
                s
            }
        };
        let mut hi = infeasible;
        while hi - lo > S_TOL {
            let mid = 0.5 * (lo + hi);
            if self.margin(mid) >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(lo)
    }
}

/// Builds the rule for target ratio `r` with `grid` cells per interval.
pub fn derive_rule(r: f64, delta: f64, grid: usize, exec: Exec) -> Result<DerivedRule> {
    if !(r > 0.25 && r <= 1.0) {
        return Err(Error::Validation(format!(
            "target ratio must lie in (1/4, 1], got {r}; at 1/4 or below the recursion never ends"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("delta must lie in (0, 1), got {delta}")));
    }
    if grid == 0 {
        return Err(Error::Validation("grid must be positive".into()));
    }
    let d = delta;
    let stay = |p: f64, z: f64| p * z / (1.0 - d * (1.0 - p));

    // Cells found so far, top down: (left end, p).
    let mut cells: Vec<(f64, f64)> = vec![(d, 1.0)];
    // Candidate z values descending, each the right end of a fixed cell
    // paired with that cell's probability (the left limit there).
    let mut cands: Vec<Candidate> = vec![Candidate { z: 1.0, uz: 1.0 }];
    let mut prev = 1.0;
    let mut top = d;
    let mut x0 = d;
    'outer: loop {
        let bottom = top * d;
        if bottom < MIN_Y {
            return Err(Error::Unsupported(format!(
                "target ratio {r} still attainable below {MIN_Y}; refusing to continue"
            )));
        }
        let width = (top - bottom) / grid as f64;
        for j in (0..grid).rev() {
            let y = bottom + j as f64 * width;
            let right = if j + 1 == grid { top } else { bottom + (j + 1) as f64 * width };
            let above = cands.partition_point(|c| c.z > y / d);
            let cell = Cell {
                y,
                r,
                d,
                cands: &cands[..above],
                exec,
            };
            match cell.largest_feasible(prev) {
                Some(s) => {
                    cells.push((y, s));
                    cands.push(Candidate { z: right, uz: stay(s, right) });
                    prev = s;
                    x0 = y;
                }
                None => break 'outer,
            }
        }
        top = bottom;
    }
    cells.reverse();
    let (knots, probs) = cells.into_iter().unzip();
    Ok(DerivedRule {
        rule: StoppingRule::Piecewise { knots, probs },
        x0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_ratio_needs_immediate_stopping() {
        let out = derive_rule(1.0, 0.9, 16, Exec::Sequential).unwrap();
        assert_eq!(out.x0, 0.9);
        assert_eq!(out.rule.prob(0.1), 1.0);
    }

    #[test]
    fn quarter_is_rejected() {
        assert!(derive_rule(0.25, 0.9, 16, Exec::Sequential).is_err());
    }
}
