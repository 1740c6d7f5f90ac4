//! Cascade composition of a labeled base MDP with a DFA space, exact
//! solution by value iteration, tabular Q-learning conditioned on DFA ids
//! or embedding keys, and ε-suboptimal step accounting.
//!
//! Product states are `(base, dfa)` pairs flattened as
//! `base * space.len() + dfa`. A move first samples the base successor
//! `s′`, then advances the DFA on the label `L(s′)`. Pairs whose DFA
//! component is `A_⊤` or `A_⊥` are absorbing with zero continuation value;
//! the transition that enters them carries reward +1 or -1.

use std::collections::HashMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::encoder::EmbeddingModel;
use crate::error::{invalid, Error, Result};
use crate::rng::{Rng, SeedSplitter};
use crate::space::InducedMdp;

const ROW_TOLERANCE: f64 = 1e-9;

/// A finite MDP whose states carry a symbol label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledMdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// Sparse rows indexed by `state * num_actions + action`.
    pub transitions: Vec<Vec<(usize, f64)>>,
    pub labels: Vec<usize>,
    pub initial: Vec<(usize, f64)>,
    pub alphabet_size: usize,
    pub gamma: f64,
}

impl LabeledMdp {
    pub fn validate(&self) -> Result<()> {
        if self.num_states == 0 || self.num_actions == 0 {
            return Err(invalid("base mdp needs at least one state and one action"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(invalid("gamma must lie in (0, 1)"));
        }
        if self.transitions.len() != self.num_states * self.num_actions {
            return Err(invalid("transition table has the wrong number of rows"));
        }
        if self.labels.len() != self.num_states {
            return Err(invalid("one label per state is required"));
        }
        if let Some(&symbol) = self.labels.iter().find(|&&l| l >= self.alphabet_size) {
            return Err(Error::SymbolOutOfRange { symbol, alphabet_size: self.alphabet_size });
        }
        for (i, row) in self.transitions.iter().enumerate() {
            check_distribution(row, self.num_states).map_err(|e| invalid(format!("row {i}: {e}")))?;
        }
        check_distribution(&self.initial, self.num_states).map_err(|e| invalid(format!("initial: {e}")))?;
        Ok(())
    }

    fn row(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[s * self.num_actions + a]
    }
}

fn check_distribution(row: &[(usize, f64)], n: usize) -> std::result::Result<(), String> {
    if let Some((s, _)) = row.iter().find(|(s, _)| *s >= n) {
        return Err(format!("state {s} out of range"));
    }
    if row.iter().any(|(_, p)| !(*p >= 0.0)) {
        return Err("negative or NaN probability".into());
    }
    let total: f64 = row.iter().map(|(_, p)| p).sum();
    if (total - 1.0).abs() > ROW_TOLERANCE {
        return Err(format!("probabilities sum to {total}"));
    }
    Ok(())
}

/// Grid world with painted labels. Actions are up, right, down, left; a
/// move into a wall leaves the agent in place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gridworld {
    pub width: usize,
    pub height: usize,
    /// `labels[row][col]`.
    pub labels: Vec<Vec<usize>>,
    /// Probability that the intended move is replaced by a uniformly random
    /// direction.
    pub slip: f64,
    /// `[row, col]`.
    pub start: [usize; 2],
    pub alphabet_size: usize,
    pub gamma: f64,
}

impl Default for Gridworld {
    /// 5×5 Latin square over five symbols, start in the top-left corner.
    fn default() -> Self {
        let labels = (0..5).map(|r| (0..5).map(|c| (c + 2 * r) % 5).collect()).collect();
        Gridworld { width: 5, height: 5, labels, slip: 0.1, start: [0, 0], alphabet_size: 5, gamma: 0.9 }
    }
}

const MOVES: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

impl Gridworld {
    pub fn from_json(s: &str) -> Result<Self> {
        let g: Gridworld = serde_json::from_str(s)?;
        g.to_mdp()?;
        Ok(g)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("gridworld serializes")
    }

    fn target(&self, r: usize, c: usize, m: usize) -> usize {
        let (dr, dc) = MOVES[m];
        let nr = r as isize + dr;
        let nc = c as isize + dc;
        if nr < 0 || nc < 0 || nr >= self.height as isize || nc >= self.width as isize {
            r * self.width + c
        } else {
            nr as usize * self.width + nc as usize
        }
    }

    pub fn to_mdp(&self) -> Result<LabeledMdp> {
        if self.width == 0 || self.height == 0 {
            return Err(invalid("grid must be nonempty"));
        }
        if self.labels.len() != self.height || self.labels.iter().any(|r| r.len() != self.width) {
            return Err(invalid("label grid does not match the dimensions"));
        }
        if !(0.0..=1.0).contains(&self.slip) {
            return Err(invalid("slip must lie in [0, 1]"));
        }
        if self.start[0] >= self.height || self.start[1] >= self.width {
            return Err(invalid("start cell is outside the grid"));
        }
        let n = self.width * self.height;
        let mut transitions = Vec::with_capacity(n * 4);
        for r in 0..self.height {
            for c in 0..self.width {
                for a in 0..4 {
                    let mut probs: Vec<(usize, f64)> = Vec::with_capacity(4);
                    for m in 0..4 {
                        let p = self.slip / 4.0 + if m == a { 1.0 - self.slip } else { 0.0 };
                        let t = self.target(r, c, m);
                        match probs.iter_mut().find(|(s, _)| *s == t) {
                            Some(e) => e.1 += p,
                            None => probs.push((t, p)),
                        }
                    }
                    probs.retain(|(_, p)| *p > 0.0);
                    transitions.push(probs);
                }
            }
        }
        let mdp = LabeledMdp {
            num_states: n,
            num_actions: 4,
            transitions,
            labels: self.labels.iter().flatten().copied().collect(),
            initial: vec![(self.start[0] * self.width + self.start[1], 1.0)],
            alphabet_size: self.alphabet_size,
            gamma: self.gamma,
        };
        mdp.validate()?;
        Ok(mdp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Successor {
    pub next: usize,
    pub prob: f64,
    pub reward: i8,
}

/// Materialized product of a labeled MDP and a DFA space.
#[derive(Debug, Clone)]
pub struct ProductMdp {
    num_base: usize,
    num_dfa: usize,
    num_actions: usize,
    gamma: f64,
    rows: Vec<Vec<Successor>>,
    terminal: Vec<bool>,
    initial: Vec<(usize, f64)>,
}

/// Builds the product with task distribution `tasks` over space ids.
pub fn compose(base: &LabeledMdp, space: &InducedMdp, tasks: &[(usize, f64)]) -> Result<ProductMdp> {
    base.validate()?;
    if base.alphabet_size != space.alphabet_size() {
        return Err(Error::AlphabetMismatch { left: base.alphabet_size, right: space.alphabet_size() });
    }
    check_distribution(tasks, space.len()).map_err(|e| invalid(format!("task distribution: {e}")))?;
    if let Some((q, _)) = tasks.iter().find(|(q, p)| *p > 0.0 && space.is_terminal(*q)) {
        return Err(invalid(format!("task distribution puts mass on terminal dfa {q}")));
    }
    let m = space.len();
    let n = base.num_states * m;
    let mut rows = Vec::with_capacity(n * base.num_actions);
    let mut terminal = Vec::with_capacity(n);
    for s in 0..base.num_states {
        for q in 0..m {
            let absorbing = space.is_terminal(q);
            terminal.push(absorbing);
            for a in 0..base.num_actions {
                let x = s * m + q;
                if absorbing {
                    rows.push(vec![Successor { next: x, prob: 1.0, reward: 0 }]);
                    continue;
                }
                let row = base
                    .row(s, a)
                    .iter()
                    .map(|&(t, p)| {
                        let label = base.labels[t];
                        Successor { next: t * m + space.next(q, label), prob: p, reward: space.reward(q, label) }
                    })
                    .collect();
                rows.push(row);
            }
        }
    }
    let mut initial = Vec::new();
    for &(s, ps) in &base.initial {
        for &(q, pq) in tasks {
            if ps * pq > 0.0 {
                initial.push((s * m + q, ps * pq));
            }
        }
    }
    Ok(ProductMdp { num_base: base.num_states, num_dfa: m, num_actions: base.num_actions, gamma: base.gamma, rows, terminal, initial })
}

/// Uniform distribution over the space ids of `dfas`, merging repeats.
pub fn task_distribution(space: &InducedMdp, dfas: &[crate::dfa::Dfa]) -> Result<Vec<(usize, f64)>> {
    if dfas.is_empty() {
        return Err(invalid("task list is empty"));
    }
    let mut weights: Vec<(usize, f64)> = Vec::new();
    for d in dfas {
        let id = space.id_of(d).ok_or_else(|| invalid("task is not in the space"))?;
        match weights.iter_mut().find(|(q, _)| *q == id) {
            Some(e) => e.1 += 1.0,
            None => weights.push((id, 1.0)),
        }
    }
    let total = dfas.len() as f64;
    weights.iter_mut().for_each(|e| e.1 /= total);
    weights.sort_by_key(|e| e.0);
    Ok(weights)
}

impl ProductMdp {
    pub fn len(&self) -> usize {
        self.num_base * self.num_dfa
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_dfa(&self) -> usize {
        self.num_dfa
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn index(&self, base: usize, dfa: usize) -> usize {
        base * self.num_dfa + dfa
    }

    /// `(base, dfa)` of a product state.
    pub fn split(&self, x: usize) -> (usize, usize) {
        (x / self.num_dfa, x % self.num_dfa)
    }

    pub fn row(&self, x: usize, a: usize) -> &[Successor] {
        &self.rows[x * self.num_actions + a]
    }

    pub fn is_terminal(&self, x: usize) -> bool {
        self.terminal[x]
    }

    pub fn initial(&self) -> &[(usize, f64)] {
        &self.initial
    }

    /// Renames the dfa component through the bijection `classes`
    /// (dfa id → class index).
    pub fn relabel(&self, classes: &[usize]) -> Result<ProductMdp> {
        let m = self.num_dfa;
        let mut seen = vec![false; m];
        if classes.len() != m || classes.iter().any(|&c| c >= m || std::mem::replace(&mut seen[c], true)) {
            return Err(invalid("dfa relabeling must be a bijection"));
        }
        let map = |x: usize| {
            let (s, q) = self.split(x);
            s * m + classes[q]
        };
        let n = self.len();
        let mut rows = vec![Vec::new(); self.rows.len()];
        let mut terminal = vec![false; n];
        for x in 0..n {
            let y = map(x);
            terminal[y] = self.terminal[x];
            for a in 0..self.num_actions {
                rows[y * self.num_actions + a] = self
                    .row(x, a)
                    .iter()
                    .map(|s| Successor { next: map(s.next), ..*s })
                    .collect();
            }
        }
        let initial = self.initial.iter().map(|&(x, p)| (map(x), p)).collect();
        Ok(ProductMdp { rows, terminal, initial, ..self.clone() })
    }

    /// Expected one-step return of action `a` under continuation values `v`.
    pub fn q_value(&self, v: &[f64], x: usize, a: usize) -> f64 {
        self.row(x, a)
            .iter()
            .map(|s| s.prob * (f64::from(s.reward) + self.gamma * v[s.next]))
            .sum()
    }

    fn greedy_action(&self, v: &[f64], x: usize) -> usize {
        let mut best = 0;
        let mut best_q = self.q_value(v, x, 0);
        for a in 1..self.num_actions {
            let q = self.q_value(v, x, a);
            if q > best_q {
                best = a;
                best_q = q;
            }
        }
        best
    }

    /// Value of each product state under a stationary deterministic policy,
    /// iterated to sup-norm change below `tolerance`.
    pub fn evaluate_policy(&self, policy: &[usize], tolerance: f64) -> Vec<f64> {
        let n = self.len();
        let mut v = vec![0.0; n];
        let mut next = vec![0.0; n];
        loop {
            let mut delta: f64 = 0.0;
            for x in 0..n {
                next[x] = if self.terminal[x] { 0.0 } else { self.q_value(&v, x, policy[x]) };
                delta = delta.max((next[x] - v[x]).abs());
            }
            std::mem::swap(&mut v, &mut next);
            if delta < tolerance {
                return v;
            }
        }
    }

    /// Probability of entering `A_⊤` within `horizon` steps from the
    /// initial distribution under `policy`.
    pub fn success_probability(&self, policy: &[usize], horizon: usize) -> f64 {
        let n = self.len();
        // p[x]: probability of success from x with k steps left.
        let mut p = vec![0.0; n];
        let mut next = vec![0.0; n];
        for _ in 0..horizon {
            for x in 0..n {
                next[x] = if self.terminal[x] {
                    0.0
                } else {
                    self.row(x, policy[x])
                        .iter()
                        .map(|s| s.prob * if s.reward > 0 { 1.0 } else { p[s.next] })
                        .sum()
                };
            }
            std::mem::swap(&mut p, &mut next);
        }
        self.initial.iter().map(|&(x, w)| w * p[x]).sum()
    }

    fn sample_successor(&self, x: usize, a: usize, rng: &mut Rng) -> Successor {
        let row = self.row(x, a);
        let mut u: f64 = rng.gen();
        for s in row {
            if u < s.prob {
                return *s;
            }
            u -= s.prob;
        }
        *row.last().expect("rows are nonempty")
    }

    fn sample_initial(&self, rng: &mut Rng) -> usize {
        let mut u: f64 = rng.gen();
        for &(x, p) in &self.initial {
            if u < p {
                return x;
            }
            u -= p;
        }
        self.initial.last().expect("initial distribution is nonempty").0
    }
}

/// Optimal values and greedy policy (lowest action on ties).
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSolution {
    pub values: Vec<f64>,
    pub policy: Vec<usize>,
    pub iterations: usize,
}

/// Synchronous value iteration until the sup-norm change drops below
/// `tolerance`. Terminal states keep value 0.
pub fn value_iteration(product: &ProductMdp, tolerance: f64) -> Result<ValueSolution> {
    if !(tolerance > 0.0) {
        return Err(invalid("tolerance must be positive"));
    }
    let n = product.len();
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut delta: f64 = 0.0;
        for x in 0..n {
            next[x] = if product.terminal[x] {
                0.0
            } else {
                (0..product.num_actions).map(|a| product.q_value(&v, x, a)).fold(f64::NEG_INFINITY, f64::max)
            };
            delta = delta.max((next[x] - v[x]).abs());
        }
        std::mem::swap(&mut v, &mut next);
        if delta < tolerance {
            break;
        }
    }
    let policy = (0..n).map(|x| product.greedy_action(&v, x)).collect();
    Ok(ValueSolution { values: v, policy, iterations })
}

/// What the learner's table is keyed on besides the base state.
#[derive(Debug, Clone, Copy)]
pub enum Conditioning<'a> {
    DfaId,
    /// Embedding of each space state, quantized to the key grid.
    EmbeddingKey(&'a EmbeddingModel),
}

impl Conditioning<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Conditioning::DfaId => "dfa-id",
            Conditioning::EmbeddingKey(_) => "embedding-key",
        }
    }

    /// Class index of every space state. Embedding keys are ranked
    /// lexicographically. Two space states sharing a key are an error:
    /// enumerated states are pairwise non-bisimilar.
    pub fn classes(&self, space: &InducedMdp) -> Result<Vec<usize>> {
        match self {
            Conditioning::DfaId => Ok((0..space.len()).collect()),
            Conditioning::EmbeddingKey(model) => {
                let keys = space.states().iter().map(|s| model.key(s.dfa())).collect::<Result<Vec<_>>>()?;
                let mut order: Vec<usize> = (0..keys.len()).collect();
                order.sort_by(|&a, &b| keys[a].cmp(&keys[b]).then(a.cmp(&b)));
                for w in order.windows(2) {
                    if keys[w[0]] == keys[w[1]] {
                        return Err(Error::EmbeddingCollision { a: w[0].min(w[1]), b: w[0].max(w[1]) });
                    }
                }
                let mut classes = vec![0; keys.len()];
                for (rank, &q) in order.iter().enumerate() {
                    classes[q] = rank;
                }
                Ok(classes)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QConfig {
    pub episodes: usize,
    /// Step cap per episode.
    pub max_steps: usize,
    pub learning_rate: f64,
    /// Initial exploration rate, decayed linearly to zero.
    pub epsilon: f64,
    /// Episodes between success-rate evaluations.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for QConfig {
    fn default() -> Self {
        QConfig { episodes: 50_000, max_steps: 100, learning_rate: 0.1, epsilon: 0.1, eval_every: 500, seed: 0 }
    }
}

impl QConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.max_steps == 0 || self.eval_every == 0 {
            return Err(invalid("episodes, step cap and evaluation interval must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(invalid("learning rate must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(invalid("epsilon must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Tabular action values over a relabeled product, optimistically
/// initialized at `1/(1-γ)`.
#[derive(Debug, Clone)]
pub struct QTable {
    pub values: Vec<f64>,
    num_actions: usize,
}

impl QTable {
    pub fn optimistic(states: usize, actions: usize, gamma: f64) -> Self {
        QTable { values: vec![1.0 / (1.0 - gamma); states * actions], num_actions: actions }
    }

    fn row(&self, x: usize) -> &[f64] {
        &self.values[x * self.num_actions..(x + 1) * self.num_actions]
    }

    /// Highest-valued action, lowest index on ties.
    pub fn greedy(&self, x: usize) -> usize {
        let row = self.row(x);
        let mut best = 0;
        for a in 1..row.len() {
            if row[a] > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn greedy_policy(&self) -> Vec<usize> {
        (0..self.values.len() / self.num_actions).map(|x| self.greedy(x)).collect()
    }

    fn max(&self, x: usize) -> f64 {
        self.row(x).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// One ε-greedy Q-learning agent acting on a product MDP.
struct Learner<'a> {
    product: &'a ProductMdp,
    q: QTable,
    learning_rate: f64,
    /// Step size for the n-th update of a pair is `learning_rate / (1+n)^ω`.
    rate_exponent: f64,
    visits: Vec<u32>,
    max_steps: usize,
    state: usize,
    steps_in_episode: usize,
}

impl<'a> Learner<'a> {
    fn new(product: &'a ProductMdp, learning_rate: f64, rate_exponent: f64, max_steps: usize, rng: &mut Rng) -> Self {
        let q = QTable::optimistic(product.len(), product.num_actions(), product.gamma());
        let visits = vec![0; q.values.len()];
        let state = product.sample_initial(rng);
        Learner { product, q, learning_rate, rate_exponent, visits, max_steps, state, steps_in_episode: 0 }
    }

    /// One environment step. Returns true when the episode ended.
    fn step(&mut self, epsilon: f64, rng: &mut Rng) -> bool {
        let x = self.state;
        let a = if rng.gen_bool(epsilon) { rng.gen_range(0..self.product.num_actions()) } else { self.q.greedy(x) };
        let s = self.product.sample_successor(x, a, rng);
        let done = self.product.is_terminal(s.next);
        let target = f64::from(s.reward) + if done { 0.0 } else { self.product.gamma() * self.q.max(s.next) };
        let i = x * self.product.num_actions() + a;
        let rate = if self.rate_exponent == 0.0 {
            self.learning_rate
        } else {
            self.learning_rate / (1.0 + f64::from(self.visits[i])).powf(self.rate_exponent)
        };
        self.visits[i] = self.visits[i].saturating_add(1);
        let cell = &mut self.q.values[i];
        *cell += rate * (target - *cell);
        self.steps_in_episode += 1;
        if done || self.steps_in_episode >= self.max_steps {
            self.state = self.product.sample_initial(rng);
            self.steps_in_episode = 0;
            true
        } else {
            self.state = s.next;
            false
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessPoint {
    pub episode: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone)]
pub struct QOutcome {
    /// Indexed by relabeled product state.
    pub q: QTable,
    pub classes: Vec<usize>,
    pub curve: Vec<SuccessPoint>,
}

impl QOutcome {
    pub fn final_success(&self) -> f64 {
        self.curve.last().map_or(0.0, |p| p.success_rate)
    }
}

/// ε-greedy tabular Q-learning on the product keyed by `conditioning`.
/// The success rate is the exact probability that the current greedy
/// policy enters `A_⊤` within the episode step cap.
pub fn q_learning(product: &ProductMdp, space: &InducedMdp, conditioning: Conditioning<'_>, config: &QConfig) -> Result<QOutcome> {
    config.validate()?;
    let classes = conditioning.classes(space)?;
    let keyed = product.relabel(&classes)?;
    let mut rng = SeedSplitter::new(config.seed).stream("agent");
    let mut learner = Learner::new(&keyed, config.learning_rate, 0.0, config.max_steps, &mut rng);
    let mut curve = Vec::new();
    let mut episode = 0;
    while episode < config.episodes {
        let epsilon = config.epsilon * (1.0 - episode as f64 / config.episodes as f64);
        while !learner.step(epsilon, &mut rng) {}
        episode += 1;
        if episode % config.eval_every == 0 || episode == config.episodes {
            let policy = learner.q.greedy_policy();
            curve.push(SuccessPoint { episode, success_rate: keyed.success_probability(&policy, config.max_steps) });
        }
    }
    Ok(QOutcome { q: learner.q, classes, curve })
}

/// Success-rate curves as CSV, one column per run.
pub fn success_csv(runs: &[(&str, &[SuccessPoint])]) -> String {
    let mut out = String::from("episode");
    for (name, _) in runs {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let len = runs.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
    for i in 0..len {
        let episode = runs.iter().find_map(|(_, c)| c.get(i)).map_or(0, |p| p.episode);
        out.push_str(&episode.to_string());
        for (_, c) in runs {
            out.push(',');
            if let Some(p) = c.get(i) {
                out.push_str(&crate::fmt::num(p.success_rate));
            }
        }
        out.push('\n');
    }
    out
}

/// Visited states and the greedy policy in force at each visit. Policies
/// are stored once per change.
#[derive(Debug, Clone, Default)]
pub struct LearnerTrace {
    pub snapshots: Vec<Vec<usize>>,
    /// `(product state, snapshot index)`.
    pub steps: Vec<(usize, usize)>,
}

/// Number of trace steps where the greedy policy's value falls more than
/// `epsilon` below optimal. Each distinct snapshot is evaluated once.
pub fn count_suboptimal_steps(product: &ProductMdp, trace: &LearnerTrace, optimal: &[f64], epsilon: f64) -> usize {
    let mut cache: HashMap<&[usize], Vec<f64>> = HashMap::new();
    for snap in &trace.snapshots {
        cache.entry(snap.as_slice()).or_insert_with(|| product.evaluate_policy(snap, 1e-10));
    }
    trace
        .steps
        .iter()
        .filter(|&&(x, k)| cache[trace.snapshots[k].as_slice()][x] < optimal[x] - epsilon)
        .count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PacConfig {
    pub epsilon: f64,
    /// Confidence level attached to the reported count (informational).
    pub confidence: f64,
    /// Step cap per episode.
    pub horizon_cap: usize,
    /// Steps counted after each pre-training budget.
    pub window: usize,
    /// Initial step size, decayed per state-action pair with
    /// `rate_exponent` (0 keeps it constant).
    pub learning_rate: f64,
    pub rate_exponent: f64,
    pub exploration: f64,
}

impl Default for PacConfig {
    fn default() -> Self {
        PacConfig { epsilon: 0.05, confidence: 0.95, horizon_cap: 100, window: 5_000, learning_rate: 1.0, rate_exponent: 0.6, exploration: 0.1 }
    }
}

impl PacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon must be positive"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(invalid("confidence must lie in (0, 1)"));
        }
        if self.horizon_cap == 0 || self.window == 0 {
            return Err(invalid("horizon cap and window must be positive"));
        }
        if !(self.rate_exponent >= 0.0) {
            return Err(invalid("rate exponent must be nonnegative"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) || !(0.0..=1.0).contains(&self.exploration) {
            return Err(invalid("learning rate must lie in (0, 1] and exploration in [0, 1]"));
        }
        Ok(())
    }
}

/// Runs optimistic Q-learning for `budget` steps, then records `window`
/// further learning steps and counts the ε-suboptimal ones.
pub fn pac_run(product: &ProductMdp, optimal: &[f64], config: &PacConfig, budget: usize, seed: u64) -> Result<usize> {
    config.validate()?;
    let mut rng = SeedSplitter::new(seed).stream("agent");
    let mut learner = Learner::new(product, config.learning_rate, config.rate_exponent, config.horizon_cap, &mut rng);
    for _ in 0..budget {
        learner.step(config.exploration, &mut rng);
    }
    let mut trace = LearnerTrace::default();
    let mut policy = learner.q.greedy_policy();
    trace.snapshots.push(policy.clone());
    for _ in 0..config.window {
        let x = learner.state;
        trace.steps.push((x, trace.snapshots.len() - 1));
        learner.step(config.exploration, &mut rng);
        let g = learner.q.greedy(x);
        if g != policy[x] {
            policy[x] = g;
            trace.snapshots.push(policy.clone());
        }
    }
    Ok(count_suboptimal_steps(product, &trace, optimal, config.epsilon))
}

/// Per-budget suboptimal-step counts across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacRow {
    pub budget: usize,
    pub counts: Vec<usize>,
    pub median: f64,
}

pub fn pac_schedule(product: &ProductMdp, config: &PacConfig, budgets: &[usize], seeds: &[u64]) -> Result<Vec<PacRow>> {
    if seeds.is_empty() {
        return Err(invalid("at least one seed is required"));
    }
    let optimal = value_iteration(product, 1e-12)?.values;
    budgets
        .iter()
        .map(|&budget| {
            let counts = seeds.iter().map(|&s| pac_run(product, &optimal, config, budget, s)).collect::<Result<Vec<_>>>()?;
            Ok(PacRow { budget, median: median(&counts), counts })
        })
        .collect()
}

fn median(xs: &[usize]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

pub fn pac_csv(rows: &[PacRow]) -> String {
    let mut out = String::from("budget,median,counts\n");
    for r in rows {
        let counts: Vec<String> = r.counts.iter().map(ToString::to_string).collect();
        out.push_str(&format!("{},{},{}\n", r.budget, crate::fmt::num(r.median), counts.join(";")));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dfa::build::reach_chain;
    use crate::space::DfaSpaceConfig;

    /// Deterministic corridor 0 - 1 - 2 labelled 0, 0, 1; action 0 moves
    /// right, action 1 stays.
    fn corridor() -> LabeledMdp {
        let mut transitions = Vec::new();
        for s in 0..3 {
            transitions.push(vec![((s + 1).min(2), 1.0)]);
            transitions.push(vec![(s, 1.0)]);
        }
        LabeledMdp {
            num_states: 3,
            num_actions: 2,
            transitions,
            labels: vec![0, 0, 1],
            initial: vec![(0, 1.0)],
            alphabet_size: 2,
            gamma: 0.9,
        }
    }

    fn reach_space(target: usize) -> (InducedMdp, usize) {
        let task = reach_chain(2, &[target]).unwrap();
        let space = InducedMdp::enumerate(&[task.clone()], &DfaSpaceConfig::new(2, 4, 0.9).unwrap()).unwrap();
        let id = space.id_of(&task).unwrap();
        (space, id)
    }

    #[test]
    fn corridor_reach_value() {
        let (space, id) = reach_space(1);
        let p = compose(&corridor(), &space, &[(id, 1.0)]).unwrap();
        let sol = value_iteration(&p, 1e-12).unwrap();
        let x0 = p.initial()[0].0;
        // two moves, reward on the second
        assert!((sol.values[x0] - 0.9).abs() < 1e-9, "{}", sol.values[x0]);
        assert_eq!(sol.policy[x0], 0);
        assert!((p.success_probability(&sol.policy, 10) - 1.0).abs() < 1e-12);
        assert_eq!(p.success_probability(&sol.policy, 1), 0.0);
    }

    #[test]
    fn rows_are_distributions() {
        let g = Gridworld::default().to_mdp().unwrap();
        let task = crate::dfa::build::reach_avoid_chain(5, &[(0, vec![1]), (3, vec![4])]).unwrap();
        let space = InducedMdp::enumerate(&[task.clone()], &DfaSpaceConfig::new(5, 4, 0.9).unwrap()).unwrap();
        let p = compose(&g, &space, &[(space.id_of(&task).unwrap(), 1.0)]).unwrap();
        for x in 0..p.len() {
            for a in 0..4 {
                let total: f64 = p.row(x, a).iter().map(|s| s.prob).sum();
                assert!((total - 1.0).abs() < 1e-9);
                for s in p.row(x, a) {
                    let (_, q) = p.split(x);
                    let (_, q2) = p.split(s.next);
                    if !space.is_terminal(q) {
                        let expect = if q2 == space.top_id() { 1 } else if q2 == space.bot_id() { -1 } else { 0 };
                        assert_eq!(s.reward, expect);
                    }
                }
            }
        }
    }

    #[test]
    fn terminal_tasks_rejected() {
        let (space, _) = reach_space(1);
        assert!(compose(&corridor(), &space, &[(space.top_id(), 1.0)]).is_err());
        assert!(compose(&corridor(), &space, &[(0, 0.5)]).is_err());
    }

    #[test]
    fn relabel_requires_bijection() {
        let (space, id) = reach_space(1);
        let p = compose(&corridor(), &space, &[(id, 1.0)]).unwrap();
        let n = space.len();
        assert!(p.relabel(&vec![0; n]).is_err());
        let rev: Vec<usize> = (0..n).rev().collect();
        let r = p.relabel(&rev).unwrap();
        let a = value_iteration(&p, 1e-12).unwrap();
        let b = value_iteration(&r, 1e-12).unwrap();
        for x in 0..p.len() {
            let (s, q) = p.split(x);
            assert_eq!(a.values[x].to_bits(), b.values[r.index(s, rev[q])].to_bits());
        }
    }

    #[test]
    fn optimal_trace_has_no_suboptimal_steps() {
        let (space, id) = reach_space(1);
        let p = compose(&corridor(), &space, &[(id, 1.0)]).unwrap();
        let sol = value_iteration(&p, 1e-12).unwrap();
        let trace = LearnerTrace { snapshots: vec![sol.policy.clone()], steps: (0..p.len()).map(|x| (x, 0)).collect() };
        assert_eq!(count_suboptimal_steps(&p, &trace, &sol.values, 0.05), 0);
        let stay = vec![1; p.len()];
        let bad = LearnerTrace { snapshots: vec![stay], steps: vec![(p.initial()[0].0, 0)] };
        assert_eq!(count_suboptimal_steps(&p, &bad, &sol.values, 0.05), 1);
    }

    #[test]
    fn q_learning_on_corridor() {
        let (space, id) = reach_space(1);
        let p = compose(&corridor(), &space, &[(id, 1.0)]).unwrap();
        let config = QConfig { episodes: 200, max_steps: 20, eval_every: 50, ..QConfig::default() };
        let out = q_learning(&p, &space, Conditioning::DfaId, &config).unwrap();
        assert_eq!(out.curve.len(), 4);
        assert!((out.final_success() - 1.0).abs() < 1e-12);
    }
}
