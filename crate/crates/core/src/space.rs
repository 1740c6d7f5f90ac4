//! The deterministic MDP induced by a DFA space.
//!
//! States are canonical minimized DFAs, actions are alphabet symbols.
//! Reading a symbol advances the initial state and re-minimizes; the reward
//! is +1 on landing in the accepting sink, -1 on landing in the rejecting
//! sink, 0 otherwise. The two sinks self-loop with reward +1/-1 forever;
//! episode truncation belongs to the RL layers, not here.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::dfa::{CanonicalDfa, Dfa, Symbol};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DfaSpaceConfig {
    pub alphabet_size: usize,
    pub max_states: usize,
    pub gamma: f64,
}

impl DfaSpaceConfig {
    pub fn new(alphabet_size: usize, max_states: usize, gamma: f64) -> Result<Self> {
        let c = DfaSpaceConfig { alphabet_size, max_states, gamma };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphabet_size == 0 {
            return Err(invalid("alphabet_size must be >= 1"));
        }
        if self.max_states == 0 {
            return Err(invalid("max_states must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(invalid(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Advances the initial state by one symbol, minimizes and canonicalizes.
pub fn step(dfa: &CanonicalDfa, symbol: Symbol) -> Result<CanonicalDfa> {
    let d = dfa.dfa();
    if symbol >= d.alphabet_size() {
        return Err(Error::SymbolOutOfRange { symbol, alphabet_size: d.alphabet_size() });
    }
    Ok(d.with_initial(d.next(d.initial(), symbol))?.minimize().canonicalize())
}

/// Reward of reading `symbol`: +1 into the accepting sink, -1 into the
/// rejecting sink, 0 otherwise.
pub fn reward(dfa: &CanonicalDfa, symbol: Symbol) -> Result<i8> {
    let next = step(dfa, symbol)?;
    Ok(sink_reward(&next))
}

fn sink_reward(dfa: &CanonicalDfa) -> i8 {
    let d = dfa.dfa();
    if d.num_states() == 1 {
        if !d.accepting().is_empty() {
            return 1;
        }
        if !d.rejecting().is_empty() {
            return -1;
        }
    }
    0
}

/// Enumerated DFA-space MDP.
#[derive(Debug, Clone)]
pub struct InducedMdp {
    alphabet_size: usize,
    max_states: usize,
    states: Vec<CanonicalDfa>,
    index: HashMap<Dfa, usize>,
    transitions: Vec<usize>,
    rewards: Vec<i8>,
    top_id: usize,
    bot_id: usize,
}

impl InducedMdp {
    /// Breadth-first closure of `seeds` together with both sinks under
    /// [`step`] over every symbol. Ids are assigned in discovery order:
    /// the accepting sink is 0, the rejecting sink is 1, then seeds in
    /// order, then successors.
    pub fn enumerate(seeds: &[Dfa], config: &DfaSpaceConfig) -> Result<Self> {
        config.validate()?;
        let k = config.alphabet_size;
        for (i, s) in seeds.iter().enumerate() {
            if s.alphabet_size() != k {
                return Err(Error::AlphabetMismatch { left: s.alphabet_size(), right: k });
            }
            if s.num_states() > config.max_states {
                return Err(invalid(format!(
                    "seed {i} has {} states, max_states is {}",
                    s.num_states(),
                    config.max_states
                )));
            }
        }

        let mut states: Vec<CanonicalDfa> = Vec::new();
        let mut index: HashMap<Dfa, usize> = HashMap::new();
        let mut queue = VecDeque::new();
        let mut intern = |c: CanonicalDfa, states: &mut Vec<CanonicalDfa>, queue: &mut VecDeque<usize>| {
            if let Some(&id) = index.get(c.dfa()) {
                return id;
            }
            let id = states.len();
            index.insert(c.dfa().clone(), id);
            states.push(c);
            queue.push_back(id);
            id
        };

        let top_id = intern(Dfa::top(k).canonicalize(), &mut states, &mut queue);
        let bot_id = intern(Dfa::bottom(k).canonicalize(), &mut states, &mut queue);
        for s in seeds {
            intern(s.minimize().canonicalize(), &mut states, &mut queue);
        }

        let mut succ: Vec<Vec<usize>> = Vec::new();
        while let Some(id) = queue.pop_front() {
            let current = states[id].clone();
            let mut row = Vec::with_capacity(k);
            for a in 0..k {
                let next = step(&current, a)?;
                row.push(intern(next, &mut states, &mut queue));
            }
            if succ.len() <= id {
                succ.resize(id + 1, Vec::new());
            }
            succ[id] = row;
        }

        let transitions: Vec<usize> = succ.into_iter().flatten().collect();
        let rewards = transitions
            .iter()
            .map(|&t| if t == top_id { 1 } else if t == bot_id { -1 } else { 0 })
            .collect();
        drop(intern);
        Ok(InducedMdp {
            alphabet_size: k,
            max_states: config.max_states,
            states,
            index,
            transitions,
            rewards,
            top_id,
            bot_id,
        })
    }

    /// Assembles an MDP from raw tables without checking closure; see
    /// [`InducedMdp::check_closure`]. Shapes are validated.
    pub fn from_parts(
        alphabet_size: usize,
        max_states: usize,
        states: Vec<CanonicalDfa>,
        transitions: Vec<usize>,
        rewards: Vec<i8>,
        top_id: usize,
        bot_id: usize,
    ) -> Result<Self> {
        let n = states.len();
        if transitions.len() != n * alphabet_size || rewards.len() != n * alphabet_size {
            return Err(invalid("transition/reward tables do not match state count"));
        }
        if top_id >= n || bot_id >= n {
            return Err(invalid("sink ids out of range"));
        }
        let index = states.iter().enumerate().map(|(i, s)| (s.dfa().clone(), i)).collect();
        Ok(InducedMdp { alphabet_size, max_states, states, index, transitions, rewards, top_id, bot_id })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn max_states(&self) -> usize {
        self.max_states
    }

    pub fn top_id(&self) -> usize {
        self.top_id
    }

    pub fn bot_id(&self) -> usize {
        self.bot_id
    }

    pub fn is_terminal(&self, id: usize) -> bool {
        id == self.top_id || id == self.bot_id
    }

    pub fn states(&self) -> &[CanonicalDfa] {
        &self.states
    }

    pub fn state(&self, id: usize) -> &CanonicalDfa {
        &self.states[id]
    }

    #[inline]
    pub fn next(&self, id: usize, a: Symbol) -> usize {
        self.transitions[id * self.alphabet_size + a]
    }

    #[inline]
    pub fn reward(&self, id: usize, a: Symbol) -> i8 {
        self.rewards[id * self.alphabet_size + a]
    }

    pub fn transitions(&self) -> &[usize] {
        &self.transitions
    }

    pub fn rewards(&self) -> &[i8] {
        &self.rewards
    }

    /// Id of the state bisimilar to `dfa`, if it is in the space.
    pub fn id_of(&self, dfa: &Dfa) -> Option<usize> {
        if dfa.alphabet_size() != self.alphabet_size {
            return None;
        }
        self.index.get(dfa.minimize().canonicalize().dfa()).copied()
    }

    /// True iff every transition stays inside the state set, agrees with a
    /// fresh [`step`], carries the matching reward, and every state is a
    /// minimized DFA within the state bound.
    pub fn check_closure(&self) -> bool {
        let n = self.states.len();
        let k = self.alphabet_size;
        if self.transitions.len() != n * k || self.rewards.len() != n * k {
            return false;
        }
        if self.index.len() != n {
            return false;
        }
        for (id, s) in self.states.iter().enumerate() {
            let d = s.dfa();
            if d.alphabet_size() != k || d.num_states() > self.max_states {
                return false;
            }
            if self.index.get(d) != Some(&id) || d.minimize() != *d {
                return false;
            }
            for a in 0..k {
                let t = self.next(id, a);
                if t >= n {
                    return false;
                }
                match step(s, a) {
                    Ok(next) if next == self.states[t] => {}
                    _ => return false,
                }
                let expect = if t == self.top_id {
                    1
                } else if t == self.bot_id {
                    -1
                } else {
                    0
                };
                if self.reward(id, a) != expect {
                    return false;
                }
            }
        }
        sink_reward(&self.states[self.top_id]) == 1 && sink_reward(&self.states[self.bot_id]) == -1
    }

    pub fn export(&self) -> InducedMdpExport {
        InducedMdpExport {
            alphabet_size: self.alphabet_size,
            max_states: self.max_states,
            states: self
                .states
                .iter()
                .map(|s| StateRecord { hash: s.hash().to_string(), dfa: s.dfa().clone() })
                .collect(),
            transitions: self.transitions.clone(),
            rewards: self.rewards.clone(),
            top_id: self.top_id,
            bot_id: self.bot_id,
        }
    }

    pub fn import(e: InducedMdpExport) -> Result<Self> {
        let states = e.states.into_iter().map(|r| r.dfa.canonicalize()).collect();
        Self::from_parts(e.alphabet_size, e.max_states, states, e.transitions, e.rewards, e.top_id, e.bot_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub hash: String,
    pub dfa: Dfa,
}

/// JSON shape of an exported [`InducedMdp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InducedMdpExport {
    pub alphabet_size: usize,
    pub max_states: usize,
    pub states: Vec<StateRecord>,
    pub transitions: Vec<usize>,
    pub rewards: Vec<i8>,
    pub top_id: usize,
    pub bot_id: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dfa::build::{reach_avoid_chain, reach_chain};

    fn cfg(k: usize) -> DfaSpaceConfig {
        DfaSpaceConfig::new(k, 10, 0.9).unwrap()
    }

    #[test]
    fn sink_steps() {
        let top = Dfa::top(3).canonicalize();
        let bot = Dfa::bottom(3).canonicalize();
        for a in 0..3 {
            assert_eq!(step(&top, a).unwrap(), top);
            assert_eq!(reward(&top, a).unwrap(), 1);
            assert_eq!(step(&bot, a).unwrap(), bot);
            assert_eq!(reward(&bot, a).unwrap(), -1);
        }
        assert!(matches!(step(&top, 3), Err(Error::SymbolOutOfRange { .. })));
    }

    #[test]
    fn reach_steps() {
        let r = reach_chain(2, &[0]).unwrap().canonicalize();
        assert_eq!(step(&r, 0).unwrap(), Dfa::top(2).canonicalize());
        assert_eq!(step(&r, 1).unwrap(), r);
        let chain = reach_chain(2, &[0, 1]).unwrap().canonicalize();
        assert_eq!(reward(&chain, 0).unwrap(), 0);
        assert_eq!(step(&chain, 0).unwrap(), reach_chain(2, &[1]).unwrap().canonicalize());
    }

    #[test]
    fn enumerate_small_spaces() {
        let m = InducedMdp::enumerate(&[], &cfg(2)).unwrap();
        assert_eq!(m.len(), 2);
        assert!(m.check_closure());

        let m = InducedMdp::enumerate(&[reach_chain(2, &[0]).unwrap()], &cfg(2)).unwrap();
        assert_eq!(m.len(), 3);
        assert!(m.check_closure());
        assert_eq!(m.reward(2, 0), 1);
        assert_eq!(m.next(2, 1), 2);
    }

    #[test]
    fn enumerate_rejects_oversized_seed() {
        let d = reach_chain(2, &[0, 1, 0]).unwrap();
        let c = DfaSpaceConfig::new(2, 3, 0.9).unwrap();
        assert!(InducedMdp::enumerate(&[d], &c).is_err());
        assert!(InducedMdp::enumerate(&[Dfa::top(3)], &c).is_err());
    }

    #[test]
    fn redirected_transition_breaks_closure() {
        let seed = reach_avoid_chain(3, &[(0, vec![1]), (2, vec![1])]).unwrap();
        let mut m = InducedMdp::enumerate(&[seed], &cfg(3)).unwrap();
        assert!(m.check_closure());
        let n = m.len();
        m.transitions[2 * 3] = n;
        assert!(!m.check_closure());
    }

    #[test]
    fn export_round_trip() {
        let seed = reach_avoid_chain(3, &[(0, vec![1]), (2, vec![1])]).unwrap();
        let m = InducedMdp::enumerate(&[seed], &cfg(3)).unwrap();
        let json = serde_json::to_string(&m.export()).unwrap();
        let back = InducedMdp::import(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.export(), m.export());
        assert!(back.check_closure());
    }

    #[test]
    fn invalid_config() {
        assert!(DfaSpaceConfig::new(2, 3, 1.0).is_err());
        assert!(DfaSpaceConfig::new(0, 3, 0.5).is_err());
        assert!(DfaSpaceConfig::new(2, 0, 0.5).is_err());
    }
}
