//! Exact bisimulation metric over a deterministic induced MDP.
//!
//! The metric is the unique fixed point of the operator pair
//!
//! ```text
//! d(s, t)  <- max_a |R(s,a) - R(t,a)| + γ d(T(s,a), T(t,a))
//! π(s, t)  <- the maximizing symbol (lowest index on ties)
//! ```
//!
//! Transitions are deterministic, so the Wasserstein coupling of the
//! general definition reduces to evaluating `d` at the successor pair.
//! Updates are synchronous (Jacobi) and double-buffered, which keeps
//! results independent of evaluation order.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::space::InducedMdp;

/// Largest absolute reward difference in the induced MDP.
pub const MAX_REWARD_GAP: f64 = 2.0;

/// Packed index of an unordered pair in a lower-triangular table.
#[inline]
pub fn pair_index(s: usize, t: usize) -> usize {
    let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
    hi * (hi + 1) / 2 + lo
}

/// Number of operator applications quoted for α accuracy,
/// `⌈ln α / ln γ⌉`. This bounds the error relative to the metric's range;
/// [`absolute_iteration_cap`] gives the count that bounds it absolutely.
pub fn iteration_count(gamma: f64, alpha: f64) -> usize {
    (alpha.ln() / gamma.ln()).ceil() as usize
}

/// Iterations after which `γ^K · 2 / (1 - γ) ≤ α`, i.e. the iterate from
/// `d⁰ = 0` is within α of the fixed point in sup norm.
pub fn absolute_iteration_cap(gamma: f64, alpha: f64) -> usize {
    ((alpha * (1.0 - gamma) / MAX_REWARD_GAP).ln() / gamma.ln()).ceil() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    n_states: usize,
    d: Vec<f64>,
    gamma: f64,
    residual: f64,
    iterations: usize,
}

impl MetricTable {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn get(&self, s: usize, t: usize) -> f64 {
        self.d[pair_index(s, t)]
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Sup-norm change of the last update.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Bound on the sup-norm distance to the fixed point,
    /// `γ r / (1 - γ)`.
    pub fn error_bound(&self) -> f64 {
        self.gamma * self.residual / (1.0 - self.gamma)
    }

    pub fn packed(&self) -> &[f64] {
        &self.d
    }

    /// Dense row-major copy.
    pub fn to_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.n_states).map(|s| (0..self.n_states).map(|t| self.get(s, t)).collect()).collect()
    }

    /// Unordered pairs `(s, t)` with `s <= t` and `d(s, t) <= tolerance`,
    /// diagonal included.
    pub fn zero_set(&self, tolerance: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for t in 0..self.n_states {
            for s in 0..=t {
                if self.get(s, t) <= tolerance {
                    out.push((s, t));
                }
            }
        }
        out
    }

    /// CSV with a header row and leading column of state labels.
    pub fn to_csv(&self, labels: &[String]) -> String {
        assert_eq!(labels.len(), self.n_states);
        let mut out = String::from("state");
        for l in labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (s, l) in labels.iter().enumerate() {
            out.push_str(l);
            for t in 0..self.n_states {
                let _ = write!(out, ",{}", crate::fmt::num(self.get(s, t)));
            }
            out.push('\n');
        }
        out
    }
}

/// Maximizing symbol for every unordered state pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairPolicy {
    n_states: usize,
    actions: Vec<u32>,
}

impl PairPolicy {
    #[inline]
    pub fn get(&self, s: usize, t: usize) -> usize {
        self.actions[pair_index(s, t)] as usize
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }
}

/// One operator application over every pair. Returns the sup-norm change.
fn apply(mdp: &InducedMdp, gamma: f64, prev: &[f64], next: &mut [f64], policy: &mut [u32]) -> f64 {
    let n = mdp.len();
    let k = mdp.alphabet_size();
    let mut residual = 0.0f64;
    for t in 0..n {
        for s in 0..=t {
            let idx = pair_index(s, t);
            let (best, arg) = best_action(mdp, gamma, prev, s, t, k);
            residual = residual.max((best - prev[idx]).abs());
            next[idx] = best;
            policy[idx] = arg as u32;
        }
    }
    residual
}

#[inline]
fn action_value(mdp: &InducedMdp, gamma: f64, d: &[f64], s: usize, t: usize, a: usize) -> f64 {
    let gap = (f64::from(mdp.reward(s, a)) - f64::from(mdp.reward(t, a))).abs();
    gap + gamma * d[pair_index(mdp.next(s, a), mdp.next(t, a))]
}

fn best_action(mdp: &InducedMdp, gamma: f64, d: &[f64], s: usize, t: usize, k: usize) -> (f64, usize) {
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    for a in 0..k {
        let v = action_value(mdp, gamma, d, s, t, a);
        if v > best {
            best = v;
            arg = a;
        }
    }
    (best, arg)
}

fn check_args(mdp: &InducedMdp, gamma: f64, alpha: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !mdp.check_closure() {
        return Err(invalid("mdp is not closed under the dfa-space step"));
    }
    Ok(())
}

/// Runs the operator pair from `d⁰ = 0` until the last update moved less
/// than `α (1 - γ)` or [`absolute_iteration_cap`] applications have been
/// made. Either way the result is within α of the fixed point in sup norm.
/// Returns the table, the argmax policy and the per-iteration residuals.
pub fn solve_with_curve(mdp: &InducedMdp, gamma: f64, alpha: f64) -> Result<(MetricTable, PairPolicy, Vec<f64>)> {
    check_args(mdp, gamma, alpha)?;
    let n = mdp.len();
    let size = n * (n + 1) / 2;
    let mut cur = vec![0.0; size];
    let mut next = vec![0.0; size];
    let mut policy = vec![0u32; size];
    let cap = absolute_iteration_cap(gamma, alpha).max(1);
    let stop = alpha * (1.0 - gamma);
    let mut curve = Vec::new();
    for _ in 0..cap {
        let r = apply(mdp, gamma, &cur, &mut next, &mut policy);
        std::mem::swap(&mut cur, &mut next);
        curve.push(r);
        if r < stop {
            break;
        }
    }
    // Policy is reported against the final table.
    for t in 0..n {
        for s in 0..=t {
            policy[pair_index(s, t)] = best_action(mdp, gamma, &cur, s, t, mdp.alphabet_size()).1 as u32;
        }
    }
    let table = MetricTable {
        n_states: n,
        d: cur,
        gamma,
        residual: *curve.last().expect("at least one iteration"),
        iterations: curve.len(),
    };
    if table.d.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Invariant("metric table holds a negative or non-finite entry".into()));
    }
    Ok((table, PairPolicy { n_states: n, actions: policy }, curve))
}

pub fn solve_fixed_point(mdp: &InducedMdp, gamma: f64, alpha: f64) -> Result<(MetricTable, PairPolicy)> {
    solve_with_curve(mdp, gamma, alpha).map(|(d, p, _)| (d, p))
}

/// Sup-norm residual of every operator application.
pub fn residual_curve(mdp: &InducedMdp, gamma: f64, alpha: f64) -> Result<Vec<f64>> {
    solve_with_curve(mdp, gamma, alpha).map(|(_, _, c)| c)
}

/// Value of the one-step operator at `(s, t)` for symbol `a` against the
/// given table.
pub fn operator_value(mdp: &InducedMdp, metric: &MetricTable, s: usize, t: usize, a: usize) -> f64 {
    action_value(mdp, metric.gamma, &metric.d, s, t, a)
}

/// Largest violation of the pseudometric axioms: negative entries,
/// nonzero diagonal, and `d(s,u) - d(s,t) - d(t,u)` over all triples.
/// Symmetry holds by construction of the packed storage.
pub fn max_axiom_violation(metric: &MetricTable) -> f64 {
    let n = metric.n_states;
    let mut worst = 0.0f64;
    for s in 0..n {
        worst = worst.max(metric.get(s, s).abs());
        for t in 0..n {
            worst = worst.max(-metric.get(s, t));
            worst = worst.max((metric.get(s, t) - metric.get(t, s)).abs());
        }
    }
    for s in 0..n {
        for t in 0..n {
            let dst = metric.get(s, t);
            for u in 0..n {
                worst = worst.max(metric.get(s, u) - dst - metric.get(t, u));
            }
        }
    }
    worst
}
