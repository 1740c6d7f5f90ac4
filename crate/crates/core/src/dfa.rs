//! Three-valued deterministic finite automata.
//!
//! A [`Dfa`] splits its final states into an accepting set and a rejecting
//! set, so every word classifies as accept, reject, or pending. States and
//! symbols are dense integer indices; a whole DFA space shares one alphabet
//! by position.

use std::collections::VecDeque;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};

pub type State = usize;
pub type Symbol = usize;

/// Three-valued classification of a word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    Accept,
    Reject,
    Pending,
}

/// A total, three-valued DFA.
///
/// Construction validates totality of the transition table and
/// disjointness of the final sets. The plan condition (final states are
/// sinks) is checked separately by [`Dfa::is_plan`] since minimization and
/// classification are well defined without it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "DfaRecord")]
pub struct Dfa {
    num_states: usize,
    alphabet_size: usize,
    delta: Vec<State>,
    q0: State,
    accepting: Vec<State>,
    rejecting: Vec<State>,
}

#[derive(Deserialize)]
struct DfaRecord {
    num_states: usize,
    alphabet_size: usize,
    delta: Vec<State>,
    q0: State,
    accepting: Vec<State>,
    rejecting: Vec<State>,
}

impl TryFrom<DfaRecord> for Dfa {
    type Error = Error;

    fn try_from(r: DfaRecord) -> Result<Self> {
        Dfa::new(r.num_states, r.alphabet_size, r.delta, r.q0, r.accepting, r.rejecting)
    }
}

impl Dfa {
    /// Builds a DFA from a row-major transition table
    /// (`delta[q * alphabet_size + a]`). Final-state lists are sorted and
    /// deduplicated.
    pub fn new(
        num_states: usize,
        alphabet_size: usize,
        delta: Vec<State>,
        q0: State,
        mut accepting: Vec<State>,
        mut rejecting: Vec<State>,
    ) -> Result<Self> {
        if num_states == 0 {
            return Err(invalid("dfa must have at least one state"));
        }
        if alphabet_size == 0 {
            return Err(invalid("alphabet must have at least one symbol"));
        }
        if delta.len() != num_states * alphabet_size {
            return Err(invalid(format!(
                "transition table has {} entries, expected {} x {}",
                delta.len(),
                num_states,
                alphabet_size
            )));
        }
        let check = |q: State| {
            if q < num_states {
                Ok(())
            } else {
                Err(Error::StateOutOfRange { state: q, num_states })
            }
        };
        check(q0)?;
        for &q in delta.iter().chain(&accepting).chain(&rejecting) {
            check(q)?;
        }
        accepting.sort_unstable();
        accepting.dedup();
        rejecting.sort_unstable();
        rejecting.dedup();
        if let Some(q) = accepting.iter().find(|q| rejecting.binary_search(q).is_ok()) {
            return Err(invalid(format!("state {q} is both accepting and rejecting")));
        }
        Ok(Dfa { num_states, alphabet_size, delta, q0, accepting, rejecting })
    }

    /// The single-state DFA accepting every word.
    pub fn top(alphabet_size: usize) -> Self {
        Dfa {
            num_states: 1,
            alphabet_size,
            delta: vec![0; alphabet_size],
            q0: 0,
            accepting: vec![0],
            rejecting: vec![],
        }
    }

    /// The single-state DFA rejecting every word.
    pub fn bottom(alphabet_size: usize) -> Self {
        Dfa {
            num_states: 1,
            alphabet_size,
            delta: vec![0; alphabet_size],
            q0: 0,
            accepting: vec![],
            rejecting: vec![0],
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn initial(&self) -> State {
        self.q0
    }

    pub fn accepting(&self) -> &[State] {
        &self.accepting
    }

    pub fn rejecting(&self) -> &[State] {
        &self.rejecting
    }

    pub fn delta(&self) -> &[State] {
        &self.delta
    }

    /// Single transition. Panics on out-of-range arguments; use
    /// [`Dfa::extended_transition`] for checked access.
    #[inline]
    pub fn next(&self, q: State, a: Symbol) -> State {
        self.delta[q * self.alphabet_size + a]
    }

    pub fn class_of(&self, q: State) -> Verdict {
        if self.accepting.binary_search(&q).is_ok() {
            Verdict::Accept
        } else if self.rejecting.binary_search(&q).is_ok() {
            Verdict::Reject
        } else {
            Verdict::Pending
        }
    }

    fn check_word(&self, word: &[Symbol]) -> Result<()> {
        match word.iter().find(|&&a| a >= self.alphabet_size) {
            Some(&symbol) => Err(Error::SymbolOutOfRange { symbol, alphabet_size: self.alphabet_size }),
            None => Ok(()),
        }
    }

    /// Lifted transition function: the state reached from `from` after
    /// reading `word`.
    pub fn extended_transition(&self, from: State, word: &[Symbol]) -> Result<State> {
        if from >= self.num_states {
            return Err(Error::StateOutOfRange { state: from, num_states: self.num_states });
        }
        self.check_word(word)?;
        Ok(word.iter().fold(from, |q, &a| self.next(q, a)))
    }

    pub fn classify(&self, word: &[Symbol]) -> Result<Verdict> {
        let q = self.extended_transition(self.q0, word)?;
        Ok(self.class_of(q))
    }

    /// Every final state is a sink.
    pub fn is_plan(&self) -> bool {
        self.accepting
            .iter()
            .chain(&self.rejecting)
            .all(|&q| (0..self.alphabet_size).all(|a| self.next(q, a) == q))
    }

    /// Same automaton with a different initial state.
    pub fn with_initial(&self, q0: State) -> Result<Self> {
        if q0 >= self.num_states {
            return Err(Error::StateOutOfRange { state: q0, num_states: self.num_states });
        }
        Ok(Dfa { q0, ..self.clone() })
    }

    /// States reachable from the initial state in breadth-first order,
    /// visiting symbols in ascending index order.
    pub fn bfs_order(&self) -> Vec<State> {
        let mut seen = vec![false; self.num_states];
        let mut order = Vec::with_capacity(self.num_states);
        let mut queue = VecDeque::from([self.q0]);
        seen[self.q0] = true;
        while let Some(q) = queue.pop_front() {
            order.push(q);
            for a in 0..self.alphabet_size {
                let r = self.next(q, a);
                if !seen[r] {
                    seen[r] = true;
                    queue.push_back(r);
                }
            }
        }
        order
    }

    /// Renumbers the given states (which must be closed under transitions
    /// and contain `q0`) in the order listed.
    fn renumber(&self, order: &[State]) -> Dfa {
        let mut map = vec![usize::MAX; self.num_states];
        for (i, &q) in order.iter().enumerate() {
            map[q] = i;
        }
        let mut delta = Vec::with_capacity(order.len() * self.alphabet_size);
        for &q in order {
            delta.extend((0..self.alphabet_size).map(|a| map[self.next(q, a)]));
        }
        let pick = |set: &[State]| {
            let mut v: Vec<State> =
                set.iter().filter(|&&q| map[q] != usize::MAX).map(|&q| map[q]).collect();
            v.sort_unstable();
            v
        };
        Dfa {
            num_states: order.len(),
            alphabet_size: self.alphabet_size,
            delta,
            q0: map[self.q0],
            accepting: pick(&self.accepting),
            rejecting: pick(&self.rejecting),
        }
    }

    /// Minimizes with Hopcroft's partition refinement.
    ///
    /// Unreachable states are pruned first, then the partition is seeded
    /// with the three blocks accepting / rejecting / pending. The result is
    /// numbered in canonical breadth-first order.
    pub fn minimize(&self) -> Dfa {
        let reachable = self.renumber(&self.bfs_order());
        let blocks = hopcroft(&reachable);
        let num_blocks = blocks.iter().max().map_or(0, |&b| b + 1);

        // One representative per block; all members agree on class and on
        // the blocks of their successors.
        let mut rep = vec![usize::MAX; num_blocks];
        for (q, &b) in blocks.iter().enumerate() {
            if rep[b] == usize::MAX {
                rep[b] = q;
            }
        }
        let k = reachable.alphabet_size;
        let mut delta = Vec::with_capacity(num_blocks * k);
        for &q in &rep {
            delta.extend((0..k).map(|a| blocks[reachable.next(q, a)]));
        }
        let class_blocks = |v: Verdict| -> Vec<State> {
            (0..num_blocks).filter(|&b| reachable.class_of(rep[b]) == v).collect()
        };
        let quotient = Dfa {
            num_states: num_blocks,
            alphabet_size: k,
            delta,
            q0: blocks[reachable.q0],
            accepting: class_blocks(Verdict::Accept),
            rejecting: class_blocks(Verdict::Reject),
        };
        quotient.renumber(&quotient.bfs_order())
    }

    /// Decides bisimilarity by synchronized exploration from the paired
    /// initial states, merging pairs with union-find. Fails as soon as a
    /// merged pair disagrees on its accepting/rejecting class.
    pub fn is_bisimilar(&self, other: &Dfa) -> Result<bool> {
        if self.alphabet_size != other.alphabet_size {
            return Err(Error::AlphabetMismatch {
                left: self.alphabet_size,
                right: other.alphabet_size,
            });
        }
        let offset = self.num_states;
        let mut uf = UnionFind::new(self.num_states + other.num_states);
        let mut stack = vec![(self.q0, other.q0)];
        uf.union(self.q0, offset + other.q0);
        while let Some((p, q)) = stack.pop() {
            if self.class_of(p) != other.class_of(q) {
                return Ok(false);
            }
            for a in 0..self.alphabet_size {
                let (p2, q2) = (self.next(p, a), other.next(q, a));
                if uf.union(p2, offset + q2) {
                    stack.push((p2, q2));
                }
            }
        }
        Ok(true)
    }

    /// Breadth-first renumbering from the initial state. Unreachable states
    /// are dropped. Expects a minimized input for the isomorphism ⟺
    /// bisimilarity correspondence to hold.
    pub fn canonicalize(&self) -> CanonicalDfa {
        CanonicalDfa::from_renumbered(self.renumber(&self.bfs_order()))
    }

    /// Graphviz rendering: accepting states double-circled, rejecting
    /// states filled, edges labeled by symbol index (parallel edges merged).
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph dfa {\n  rankdir=LR;\n  __start [shape=point];\n");
        for q in 0..self.num_states {
            let attrs = match self.class_of(q) {
                Verdict::Accept => "shape=doublecircle",
                Verdict::Reject => "shape=circle, style=filled, fillcolor=gray",
                Verdict::Pending => "shape=circle",
            };
            let _ = writeln!(out, "  {q} [{attrs}];");
        }
        let _ = writeln!(out, "  __start -> {};", self.q0);
        for q in 0..self.num_states {
            let mut targets: Vec<(State, Vec<Symbol>)> = Vec::new();
            for a in 0..self.alphabet_size {
                let r = self.next(q, a);
                match targets.iter_mut().find(|(t, _)| *t == r) {
                    Some((_, syms)) => syms.push(a),
                    None => targets.push((r, vec![a])),
                }
            }
            for (r, syms) in targets {
                let label = syms.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(",");
                let _ = writeln!(out, "  {q} -> {r} [label=\"{label}\"];");
            }
        }
        out.push_str("}\n");
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("dfa serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl fmt::Display for Dfa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Dfa({} states, {} symbols, q0={}, F+={:?}, F-={:?})",
            self.num_states, self.alphabet_size, self.q0, self.accepting, self.rejecting
        )
    }
}

/// Returns the block index of each state after three-valued Hopcroft
/// refinement. Block indices are dense but otherwise arbitrary.
fn hopcroft(dfa: &Dfa) -> Vec<usize> {
    let n = dfa.num_states;
    let k = dfa.alphabet_size;

    // Inverse transitions in CSR form, per symbol.
    let mut inv_start = vec![0usize; k * n + 1];
    for q in 0..n {
        for a in 0..k {
            inv_start[a * n + dfa.next(q, a) + 1] += 1;
        }
    }
    for i in 0..k * n {
        inv_start[i + 1] += inv_start[i];
    }
    let mut fill = inv_start.clone();
    let mut inv = vec![0usize; k * n];
    for q in 0..n {
        for a in 0..k {
            let slot = a * n + dfa.next(q, a);
            inv[fill[slot]] = q;
            fill[slot] += 1;
        }
    }

    let mut blocks: Vec<Vec<State>> = Vec::new();
    let mut block_of = vec![0usize; n];
    for v in [Verdict::Accept, Verdict::Reject, Verdict::Pending] {
        let members: Vec<State> = (0..n).filter(|&q| dfa.class_of(q) == v).collect();
        if !members.is_empty() {
            for &q in &members {
                block_of[q] = blocks.len();
            }
            blocks.push(members);
        }
    }

    let mut in_work = vec![true; blocks.len()];
    let mut work: Vec<usize> = (0..blocks.len()).collect();
    let mut marked = vec![false; n];
    let mut touched_count: Vec<usize> = vec![0; blocks.len()];

    while let Some(splitter) = work.pop() {
        in_work[splitter] = false;
        let members = blocks[splitter].clone();
        for a in 0..k {
            let mut touched: Vec<usize> = Vec::new();
            let mut preimage: Vec<State> = Vec::new();
            for &r in &members {
                let slot = a * n + r;
                for &p in &inv[inv_start[slot]..inv_start[slot + 1]] {
                    if !marked[p] {
                        marked[p] = true;
                        preimage.push(p);
                        let b = block_of[p];
                        if touched_count[b] == 0 {
                            touched.push(b);
                        }
                        touched_count[b] += 1;
                    }
                }
            }
            for b in touched {
                let count = std::mem::take(&mut touched_count[b]);
                if count == blocks[b].len() {
                    continue;
                }
                let (inside, outside): (Vec<State>, Vec<State>) =
                    blocks[b].iter().partition(|&&q| marked[q]);
                let new_id = blocks.len();
                for &q in &outside {
                    block_of[q] = new_id;
                }
                let outside_len = outside.len();
                let inside_len = inside.len();
                blocks[b] = inside;
                blocks.push(outside);
                in_work.push(false);
                touched_count.push(0);
                if in_work[b] {
                    in_work[new_id] = true;
                    work.push(new_id);
                } else if inside_len <= outside_len {
                    in_work[b] = true;
                    work.push(b);
                } else {
                    in_work[new_id] = true;
                    work.push(new_id);
                }
            }
            for p in preimage {
                marked[p] = false;
            }
        }
    }
    block_of
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns true if the two elements were in different sets.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

/// A DFA in canonical breadth-first numbering together with a content hash.
///
/// Equality and hashing go through the automaton itself; the hex digest is
/// a stable identifier for export.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CanonicalDfa {
    dfa: Dfa,
    hash: String,
}

impl CanonicalDfa {
    fn from_renumbered(dfa: Dfa) -> Self {
        let hash = hex::encode(Sha256::digest(dfa.to_json().as_bytes()));
        CanonicalDfa { dfa, hash }
    }

    pub fn dfa(&self) -> &Dfa {
        &self.dfa
    }

    pub fn into_dfa(self) -> Dfa {
        self.dfa
    }

    /// Full SHA-256 hex digest of the canonical JSON serialization.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// First 12 hex digits of [`CanonicalDfa::hash`].
    pub fn short_hash(&self) -> &str {
        &self.hash[..12]
    }

    pub fn canonicalize(&self) -> CanonicalDfa {
        self.dfa.canonicalize()
    }
}

impl fmt::Display for CanonicalDfa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]", self.dfa, self.short_hash())
    }
}

/// Convenience constructors for the task shapes used throughout the crate.
pub mod build {
    use super::*;

    /// Reach chain: pending state `i` advances on `targets[i]` and
    /// self-loops on every other symbol; the last advance enters the
    /// accepting sink.
    pub fn reach_chain(alphabet_size: usize, targets: &[Symbol]) -> Result<Dfa> {
        let steps: Vec<(Symbol, Vec<Symbol>)> = targets.iter().map(|&t| (t, vec![])).collect();
        reach_avoid_chain(alphabet_size, &steps)
    }

    /// Reach-avoid chain: like [`reach_chain`], but each pending state also
    /// sends its avoid symbols to a rejecting sink. The rejecting sink is
    /// only materialized when some avoid set is nonempty.
    pub fn reach_avoid_chain(alphabet_size: usize, steps: &[(Symbol, Vec<Symbol>)]) -> Result<Dfa> {
        let k = steps.len();
        let has_reject = steps.iter().any(|(_, avoid)| !avoid.is_empty());
        let accept = k;
        let reject = k + 1;
        let num_states = k + 1 + usize::from(has_reject);
        let mut delta = Vec::with_capacity(num_states * alphabet_size);
        for (i, (target, avoid)) in steps.iter().enumerate() {
            if *target >= alphabet_size {
                return Err(Error::SymbolOutOfRange { symbol: *target, alphabet_size });
            }
            for &a in avoid {
                if a >= alphabet_size {
                    return Err(Error::SymbolOutOfRange { symbol: a, alphabet_size });
                }
                if a == *target {
                    return Err(invalid(format!("symbol {a} is both target and avoid")));
                }
            }
            delta.extend((0..alphabet_size).map(|a| {
                if a == *target {
                    i + 1
                } else if avoid.contains(&a) {
                    reject
                } else {
                    i
                }
            }));
        }
        delta.extend(std::iter::repeat(accept).take(alphabet_size));
        if has_reject {
            delta.extend(std::iter::repeat(reject).take(alphabet_size));
        }
        let rejecting = if has_reject { vec![reject] } else { vec![] };
        Dfa::new(num_states, alphabet_size, delta, 0, vec![accept], rejecting)
    }
}
