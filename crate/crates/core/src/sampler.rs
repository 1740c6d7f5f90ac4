//! Task samplers: reach (R), reach-avoid (RA) and reach-avoid-derived (RAD)
//! plan DFAs.
//!
//! - A reach task with `n` states is a chain of `n - 1` pending states;
//!   each advances on its target symbol and self-loops otherwise.
//! - A reach-avoid task with `n` states has `n - 2` pending states, each
//!   with a nonempty avoid set leading to the rejecting sink.
//! - A RAD task is an RA task advanced by a random walk of uniformly random
//!   length (0 to its diameter) in the DFA space, then minimized. Outcomes
//!   equal to either sink, or outside the state-count support, are
//!   resampled.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dfa::build::reach_avoid_chain;
use crate::dfa::{CanonicalDfa, Dfa, Symbol};
use crate::error::{invalid, Error, Result};
use crate::rng::Rng;
use crate::space::step;

pub const MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    Reach,
    ReachAvoid,
    #[serde(rename = "RAD")]
    Rad,
}

impl TaskKind {
    /// Fewest states a nontrivial task of this kind can have.
    pub fn min_states(self) -> usize {
        match self {
            TaskKind::Reach => 2,
            TaskKind::ReachAvoid | TaskKind::Rad => 3,
        }
    }
}

/// Distribution of the total state count of a sampled DFA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StateCountDist {
    /// `P(n) ∝ p (1 - p)^(n - min)` for `n` in `[min, bound]`, where `min`
    /// is the task kind's minimum state count.
    TruncatedGeometric { p: f64, bound: usize },
    /// Uniform over `[lo, hi]` (clipped below at the kind's minimum).
    Uniform { lo: usize, hi: usize },
}

impl StateCountDist {
    fn support(&self, kind: TaskKind) -> (usize, usize) {
        let min = kind.min_states();
        match *self {
            StateCountDist::TruncatedGeometric { bound, .. } => (min, bound),
            StateCountDist::Uniform { lo, hi } => (lo.max(min), hi),
        }
    }

    fn sample(&self, kind: TaskKind, rng: &mut Rng) -> usize {
        let (lo, hi) = self.support(kind);
        match *self {
            StateCountDist::TruncatedGeometric { p, .. } => {
                let weights: Vec<f64> = (lo..=hi).map(|n| (1.0 - p).powi((n - lo) as i32)).collect();
                let total: f64 = weights.iter().sum();
                let mut u = rng.gen::<f64>() * total;
                for (i, w) in weights.iter().enumerate() {
                    if u < *w {
                        return lo + i;
                    }
                    u -= w;
                }
                hi
            }
            StateCountDist::Uniform { .. } => rng.gen_range(lo..=hi),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub alphabet_size: usize,
    pub state_count_dist: StateCountDist,
    pub seed: u64,
    pub kind: TaskKind,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kind != TaskKind::Reach && self.alphabet_size < 2 {
            return Err(invalid("reach-avoid tasks need at least 2 symbols"));
        }
        if self.alphabet_size == 0 {
            return Err(invalid("alphabet_size must be >= 1"));
        }
        let (lo, hi) = self.state_count_dist.support(self.kind);
        if hi < lo {
            return Err(invalid(format!(
                "state budget {hi} is below the {lo} states a {:?} task needs",
                self.kind
            )));
        }
        if let StateCountDist::TruncatedGeometric { p, .. } = self.state_count_dist {
            if !(p > 0.0 && p < 1.0) {
                return Err(invalid(format!("geometric parameter must lie in (0, 1), got {p}")));
            }
        }
        Ok(())
    }

    pub fn max_states(&self) -> usize {
        self.state_count_dist.support(self.kind).1
    }

    /// Draws one task of the configured kind.
    pub fn sample(&self, rng: &mut Rng) -> Result<Dfa> {
        match self.kind {
            TaskKind::Reach => sample_reach(self, rng),
            TaskKind::ReachAvoid => sample_reach_avoid(self, rng),
            TaskKind::Rad => sample_rad(self, rng),
        }
    }

    /// Draws `count` tasks from a generator seeded with `self.seed`.
    pub fn sample_many(&self, count: usize) -> Result<Vec<Dfa>> {
        let mut rng = crate::rng::SeedSplitter::new(self.seed).stream("sampler");
        (0..count).map(|_| self.sample(&mut rng)).collect()
    }
}

fn random_targets(k: usize, len: usize, rng: &mut Rng) -> Vec<Symbol> {
    (0..len).map(|_| rng.gen_range(0..k)).collect()
}

/// Nonempty avoid set disjoint from `target`: each other symbol is
/// included with probability 1/2, with one forced member if none was drawn.
fn random_avoid(k: usize, target: Symbol, rng: &mut Rng) -> Vec<Symbol> {
    let others: Vec<Symbol> = (0..k).filter(|&a| a != target).collect();
    let mut avoid: Vec<Symbol> = others.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
    if avoid.is_empty() {
        avoid.push(*others.choose(rng).expect("alphabet has a non-target symbol"));
    }
    avoid
}

pub fn sample_reach(config: &SamplerConfig, rng: &mut Rng) -> Result<Dfa> {
    if config.kind != TaskKind::Reach {
        return Err(invalid("sample_reach needs kind Reach"));
    }
    config.validate()?;
    let n = config.state_count_dist.sample(TaskKind::Reach, rng);
    let targets = random_targets(config.alphabet_size, n - 1, rng);
    Ok(crate::dfa::build::reach_chain(config.alphabet_size, &targets)?.minimize())
}

fn reach_avoid_with_states(k: usize, n: usize, rng: &mut Rng) -> Result<Dfa> {
    let steps: Vec<(Symbol, Vec<Symbol>)> = random_targets(k, n - 2, rng)
        .into_iter()
        .map(|t| (t, random_avoid(k, t, rng)))
        .collect();
    Ok(reach_avoid_chain(k, &steps)?.minimize())
}

pub fn sample_reach_avoid(config: &SamplerConfig, rng: &mut Rng) -> Result<Dfa> {
    if config.kind != TaskKind::ReachAvoid {
        return Err(invalid("sample_reach_avoid needs kind ReachAvoid"));
    }
    config.validate()?;
    let n = config.state_count_dist.sample(TaskKind::ReachAvoid, rng);
    reach_avoid_with_states(config.alphabet_size, n, rng)
}

/// Longest shortest path from the initial state.
fn diameter(dfa: &Dfa) -> usize {
    let mut dist = vec![usize::MAX; dfa.num_states()];
    dist[dfa.initial()] = 0;
    let mut far = 0;
    for q in dfa.bfs_order() {
        far = far.max(dist[q]);
        for a in 0..dfa.alphabet_size() {
            let r = dfa.next(q, a);
            if dist[r] == usize::MAX {
                dist[r] = dist[q] + 1;
            }
        }
    }
    far
}

/// Advances `dfa` by `steps` uniformly random symbols through the DFA
/// space.
pub fn random_walk(dfa: &Dfa, steps: usize, rng: &mut Rng) -> Result<CanonicalDfa> {
    let mut current = dfa.minimize().canonicalize();
    for _ in 0..steps {
        let a = rng.gen_range(0..dfa.alphabet_size());
        current = step(&current, a)?;
    }
    Ok(current)
}

pub fn sample_rad(config: &SamplerConfig, rng: &mut Rng) -> Result<Dfa> {
    if config.kind != TaskKind::Rad {
        return Err(invalid("sample_rad needs kind RAD"));
    }
    config.validate()?;
    let (lo, hi) = config.state_count_dist.support(TaskKind::Rad);
    for _ in 0..MAX_ATTEMPTS {
        let n = config.state_count_dist.sample(TaskKind::Rad, rng);
        let ra = reach_avoid_with_states(config.alphabet_size, n, rng)?;
        let walk = rng.gen_range(0..=diameter(&ra));
        let derived = random_walk(&ra, walk, rng)?.into_dfa();
        let m = derived.num_states();
        if m == 1 || m < lo || m > hi {
            continue;
        }
        return Ok(derived);
    }
    Err(Error::SamplerExhausted { attempts: MAX_ATTEMPTS })
}
