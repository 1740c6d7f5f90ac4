//! DFA embeddings trained so that scaled normalized distances reproduce the
//! bisimulation metric.
//!
//! The distance between two DFAs is `c · ‖φ̂(A) - φ̂(A′)‖₂` where `φ̂` is the
//! unit-normalized embedding and `c ≥ 0` a learned scale. Unit vectors are
//! at most 2 apart while the metric reaches `2 / (1 - γ)`, so the scale is
//! what makes the regression target representable; it does not affect
//! which pairs sit at distance zero.

pub mod mpnn;
pub mod policy;
pub mod train;

use std::collections::HashMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dfa::Dfa;
use crate::error::{invalid, Error, Result};
use crate::rng::Rng;
use crate::space::InducedMdp;

pub use policy::{policy_loss, PairPolicyModel, PolicyLoss, PolicySample};
pub use train::{
    rollout_pair, train, value_loss, CurvePoint, TrainConfig, TrainOutcome, Transition,
};

/// Grid used to turn embeddings into discrete keys.
pub const KEY_QUANTUM: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderMode {
    Tabular,
    MessagePassing,
}

/// Tabular or message-passing DFA encoder plus the distance scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ModelRecord")]
pub struct EmbeddingModel {
    mode: EncoderMode,
    alphabet_size: usize,
    dim: usize,
    params: Vec<f64>,
    scale: f64,
    /// Row keys of a tabular model, in row order.
    states: Vec<Dfa>,
    #[serde(skip)]
    rows: HashMap<Dfa, usize>,
}

#[derive(Deserialize)]
struct ModelRecord {
    mode: EncoderMode,
    alphabet_size: usize,
    dim: usize,
    params: Vec<f64>,
    scale: f64,
    states: Vec<Dfa>,
}

impl TryFrom<ModelRecord> for EmbeddingModel {
    type Error = Error;

    fn try_from(r: ModelRecord) -> Result<Self> {
        let expected = match r.mode {
            EncoderMode::Tabular => r.states.len() * r.dim,
            EncoderMode::MessagePassing => mpnn::Layout { hidden: r.dim, alphabet_size: r.alphabet_size }.len(),
        };
        if r.params.len() != expected {
            return Err(invalid(format!("model has {} parameters, expected {expected}", r.params.len())));
        }
        if !(r.scale >= 0.0) {
            return Err(invalid("scale must be nonnegative"));
        }
        let rows = r.states.iter().enumerate().map(|(i, d)| (d.clone(), i)).collect();
        Ok(EmbeddingModel {
            mode: r.mode,
            alphabet_size: r.alphabet_size,
            dim: r.dim,
            params: r.params,
            scale: r.scale,
            states: r.states,
            rows,
        })
    }
}

/// Embeddings of every state of a space under one parameter setting.
pub struct SpaceEmbeddings {
    pub unit: Vec<Vec<f64>>,
    pub norms: Vec<f64>,
    pub scale: f64,
    traces: Vec<Option<mpnn::Trace>>,
    rows: Vec<usize>,
}

impl SpaceEmbeddings {
    #[inline]
    pub fn distance(&self, s: usize, t: usize) -> f64 {
        self.scale * unit_distance(&self.unit[s], &self.unit[t])
    }

    pub fn len(&self) -> usize {
        self.unit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unit.is_empty()
    }

    pub fn pair_input(&self, s: usize, t: usize) -> Vec<f64> {
        PairPolicyModel::concat(&self.unit[s], &self.unit[t])
    }
}

#[inline]
pub fn unit_distance(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn normalize(raw: &[f64], id: usize) -> Result<(Vec<f64>, f64)> {
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroEmbedding(id));
    }
    Ok((raw.iter().map(|x| x / norm).collect(), norm))
}

impl EmbeddingModel {
    /// One free vector per state of `space`, drawn uniformly from `[-1, 1]^dim`.
    pub fn tabular(space: &InducedMdp, dim: usize, scale: f64, rng: &mut Rng) -> Self {
        let states: Vec<Dfa> = space.states().iter().map(|s| s.dfa().clone()).collect();
        let params = (0..states.len() * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rows = states.iter().enumerate().map(|(i, d)| (d.clone(), i)).collect();
        EmbeddingModel {
            mode: EncoderMode::Tabular,
            alphabet_size: space.alphabet_size(),
            dim,
            params,
            scale,
            states,
            rows,
        }
    }

    pub fn message_passing(alphabet_size: usize, hidden: usize, scale: f64, rng: &mut Rng) -> Self {
        let layout = mpnn::Layout { hidden, alphabet_size };
        EmbeddingModel {
            mode: EncoderMode::MessagePassing,
            alphabet_size,
            dim: hidden,
            params: layout.init(rng),
            scale,
            states: vec![],
            rows: HashMap::new(),
        }
    }

    pub fn mode(&self) -> EncoderMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn set_scale(&mut self, scale: f64) {
        self.scale = scale.max(0.0);
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layout(&self) -> mpnn::Layout {
        mpnn::Layout { hidden: self.dim, alphabet_size: self.alphabet_size }
    }

    /// Replaces every embedding by the same vector; used to build a
    /// deliberately degenerate encoder.
    pub fn collapse(&mut self) {
        if self.mode == EncoderMode::Tabular {
            let first: Vec<f64> = self.params[..self.dim].to_vec();
            for row in self.params.chunks_mut(self.dim) {
                row.copy_from_slice(&first);
            }
        } else {
            // Zero every weight except the output bias: all readouts equal tanh(b).
            let b = self.layout().len() - self.dim;
            for (i, p) in self.params.iter_mut().enumerate() {
                if i < b {
                    *p = 0.0;
                } else if *p == 0.0 {
                    *p = 0.5;
                }
            }
        }
    }

    fn row_of(&self, dfa: &Dfa) -> Result<usize> {
        self.rows
            .get(dfa)
            .copied()
            .ok_or_else(|| invalid("dfa is not a state of the tabular model's space"))
    }

    /// Raw embedding of the canonical minimized form of `dfa`.
    pub fn embed(&self, dfa: &Dfa) -> Result<Vec<f64>> {
        if dfa.alphabet_size() != self.alphabet_size {
            return Err(Error::AlphabetMismatch { left: dfa.alphabet_size(), right: self.alphabet_size });
        }
        let canon = dfa.minimize();
        match self.mode {
            EncoderMode::Tabular => {
                let r = self.row_of(&canon)?;
                Ok(self.params[r * self.dim..(r + 1) * self.dim].to_vec())
            }
            EncoderMode::MessagePassing => Ok(mpnn::forward(&self.layout(), &self.params, &canon).0),
        }
    }

    pub fn normalized(&self, dfa: &Dfa) -> Result<Vec<f64>> {
        normalize(&self.embed(dfa)?, 0).map(|(u, _)| u)
    }

    /// Scaled normalized-ℓ2 distance.
    pub fn distance(&self, a: &Dfa, b: &Dfa) -> Result<f64> {
        Ok(self.scale * unit_distance(&self.normalized(a)?, &self.normalized(b)?))
    }

    /// Discrete key of `dfa`: the scaled unit embedding rounded to
    /// [`KEY_QUANTUM`].
    pub fn key(&self, dfa: &Dfa) -> Result<Vec<i64>> {
        Ok(self
            .normalized(dfa)?
            .iter()
            .map(|x| (self.scale * x / KEY_QUANTUM).round() as i64)
            .collect())
    }

    pub fn embed_space(&self, space: &InducedMdp) -> Result<SpaceEmbeddings> {
        if space.alphabet_size() != self.alphabet_size {
            return Err(Error::AlphabetMismatch { left: space.alphabet_size(), right: self.alphabet_size });
        }
        let n = space.len();
        let mut unit = Vec::with_capacity(n);
        let mut norms = Vec::with_capacity(n);
        let mut traces = Vec::with_capacity(n);
        let mut rows = Vec::with_capacity(n);
        for (id, s) in space.states().iter().enumerate() {
            let (raw, trace) = match self.mode {
                EncoderMode::Tabular => {
                    let r = self.row_of(s.dfa())?;
                    rows.push(r);
                    (self.params[r * self.dim..(r + 1) * self.dim].to_vec(), None)
                }
                EncoderMode::MessagePassing => {
                    rows.push(id);
                    let (phi, t) = mpnn::forward(&self.layout(), &self.params, s.dfa());
                    (phi, Some(t))
                }
            };
            let (u, norm) = normalize(&raw, id)?;
            unit.push(u);
            norms.push(norm);
            traces.push(trace);
        }
        Ok(SpaceEmbeddings { unit, norms, scale: self.scale, traces, rows })
    }

    /// Chain rule from gradients with respect to unit embeddings (indexed by
    /// state id) to gradients with respect to the model parameters.
    pub(crate) fn backprop_units(&self, space: &InducedMdp, emb: &SpaceEmbeddings, d_unit: &[Vec<f64>]) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        for (id, du) in d_unit.iter().enumerate() {
            if du.iter().all(|x| *x == 0.0) {
                continue;
            }
            let u = &emb.unit[id];
            let proj: f64 = u.iter().zip(du).map(|(a, b)| a * b).sum();
            let d_raw: Vec<f64> = du.iter().zip(u).map(|(g, ui)| (g - ui * proj) / emb.norms[id]).collect();
            match self.mode {
                EncoderMode::Tabular => {
                    let r = emb.rows[id];
                    for (g, d) in grad[r * self.dim..(r + 1) * self.dim].iter_mut().zip(&d_raw) {
                        *g += d;
                    }
                }
                EncoderMode::MessagePassing => {
                    let trace = emb.traces[id].as_ref().expect("message-passing trace");
                    mpnn::backward(&self.layout(), &self.params, space.state(id).dfa(), trace, &d_raw, &mut grad);
                }
            }
        }
        grad
    }
}

/// Pairwise embedding distances; the diagonal is exactly zero.
pub fn evaluate_heatmap(model: &EmbeddingModel, dfas: &[Dfa]) -> Result<Vec<Vec<f64>>> {
    let units: Vec<Vec<f64>> = dfas.iter().map(|d| model.normalized(d)).collect::<Result<_>>()?;
    let n = units.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..i {
            let d = model.scale * unit_distance(&units[i], &units[j]);
            m[i][j] = d;
            m[j][i] = d;
        }
    }
    Ok(m)
}

/// Separation statistics of a distance matrix over `dfas`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub non_bisimilar_pairs: usize,
    pub separated: usize,
    pub bisimilar_pairs: usize,
    pub merged: usize,
    pub diagonal_zero: bool,
}

impl Separation {
    /// Fraction of non-bisimilar pairs above the threshold (1 when there
    /// are none).
    pub fn rate(&self) -> f64 {
        if self.non_bisimilar_pairs == 0 {
            1.0
        } else {
            self.separated as f64 / self.non_bisimilar_pairs as f64
        }
    }
}

pub fn separation(matrix: &[Vec<f64>], dfas: &[Dfa], threshold: f64) -> Result<Separation> {
    let canon: Vec<Dfa> = dfas.iter().map(Dfa::minimize).collect();
    let mut s = Separation {
        non_bisimilar_pairs: 0,
        separated: 0,
        bisimilar_pairs: 0,
        merged: 0,
        diagonal_zero: (0..dfas.len()).all(|i| matrix[i][i] == 0.0),
    };
    for i in 0..dfas.len() {
        for j in 0..i {
            if canon[i] == canon[j] {
                s.bisimilar_pairs += 1;
                if matrix[i][j] <= threshold {
                    s.merged += 1;
                }
            } else {
                s.non_bisimilar_pairs += 1;
                if matrix[i][j] > threshold {
                    s.separated += 1;
                }
            }
        }
    }
    Ok(s)
}

/// Versioned training checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: EmbeddingModel,
    pub policy: PairPolicyModel,
    pub config: TrainConfig,
    /// Identifier of the run that produced the checkpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
}

impl Checkpoint {
    pub const VERSION: u32 = 1;

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.version != Self::VERSION {
            return Err(invalid(format!("unsupported checkpoint version {}", c.version)));
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dfa::build::reach_avoid_chain;
    use crate::rng::SeedSplitter;
    use crate::space::DfaSpaceConfig;

    fn space() -> InducedMdp {
        let seed = reach_avoid_chain(3, &[(0, vec![1]), (2, vec![1])]).unwrap();
        InducedMdp::enumerate(&[seed], &DfaSpaceConfig::new(3, 10, 0.9).unwrap()).unwrap()
    }

    #[test]
    fn distance_axioms() {
        let s = space();
        let mut rng = SeedSplitter::new(1).stream("m");
        for model in [
            EmbeddingModel::tabular(&s, 8, 10.0, &mut rng),
            EmbeddingModel::message_passing(3, 8, 10.0, &mut rng),
        ] {
            let dfas: Vec<Dfa> = s.states().iter().map(|c| c.dfa().clone()).collect();
            for a in &dfas {
                assert_eq!(model.distance(a, a).unwrap(), 0.0);
                for b in &dfas {
                    let ab = model.distance(a, b).unwrap();
                    assert_eq!(ab, model.distance(b, a).unwrap());
                    assert!(ab >= 0.0);
                    for c in &dfas {
                        assert!(model.distance(a, c).unwrap() <= ab + model.distance(b, c).unwrap() + 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn tabular_rejects_foreign_dfa() {
        let s = space();
        let model = EmbeddingModel::tabular(&s, 4, 1.0, &mut SeedSplitter::new(1).stream("m"));
        let other = reach_avoid_chain(3, &[(1, vec![0])]).unwrap();
        assert!(model.embed(&other).is_err());
        assert!(model.embed(&Dfa::top(2)).is_err());
    }

    #[test]
    fn zero_embedding_is_an_error() {
        let s = space();
        let mut model = EmbeddingModel::tabular(&s, 4, 1.0, &mut SeedSplitter::new(1).stream("m"));
        model.params_mut()[..4].iter_mut().for_each(|x| *x = 0.0);
        assert!(matches!(model.embed_space(&s), Err(Error::ZeroEmbedding(0))));
        assert!(model.normalized(&Dfa::top(3)).is_err());
    }

    #[test]
    fn heatmap_and_separation() {
        let s = space();
        let model = EmbeddingModel::message_passing(3, 8, 10.0, &mut SeedSplitter::new(4).stream("m"));
        let mut dfas: Vec<Dfa> = s.states().iter().map(|c| c.dfa().clone()).collect();
        // planted non-minimal copy of the seed: bisimilar to dfas[2]
        let seed = dfas[2].clone();
        let n = seed.num_states();
        let mut delta = seed.delta().to_vec();
        delta.extend_from_slice(&seed.delta()[..3]);
        let dup = Dfa::new(n + 1, 3, delta, n, seed.accepting().to_vec(), seed.rejecting().to_vec()).unwrap();
        dfas.push(dup);
        let m = evaluate_heatmap(&model, &dfas).unwrap();
        let sep = separation(&m, &dfas, 1e-8).unwrap();
        assert!(sep.diagonal_zero);
        assert_eq!(sep.bisimilar_pairs, 1);
        assert_eq!(sep.merged, 1);
        assert_eq!(sep.rate(), 1.0);
    }

    #[test]
    fn collapsed_models_share_keys() {
        let s = space();
        let mut rng = SeedSplitter::new(4).stream("m");
        for mut model in [EmbeddingModel::tabular(&s, 4, 10.0, &mut rng), EmbeddingModel::message_passing(3, 4, 10.0, &mut rng)] {
            model.collapse();
            let k0 = model.key(s.state(0).dfa()).unwrap();
            for st in s.states() {
                assert_eq!(model.key(st.dfa()).unwrap(), k0);
            }
        }
    }
}
