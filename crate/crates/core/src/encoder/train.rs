//! Joint training of the encoder (value regression to the one-step
//! lookahead target) and the pair policy (clipped-ratio surrogate).

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::policy::{entropy_bonus, policy_loss, PairPolicyModel, PolicySample};
use super::{EmbeddingModel, EncoderMode, SpaceEmbeddings};
use crate::error::{invalid, Error, Result};
use crate::rng::{Rng, SeedSplitter};
use crate::space::InducedMdp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: EncoderMode,
    pub gamma: f64,
    /// Encoder step size.
    pub learning_rate: f64,
    pub policy_learning_rate: f64,
    pub momentum: f64,
    pub clip_ratio: f64,
    pub rollout_horizon: usize,
    /// Rollouts collected per epoch.
    pub batch_size: usize,
    pub epochs: usize,
    /// Gradient steps on the surrogate per collected batch.
    pub policy_epochs: usize,
    pub seed: u64,
    /// Use `r - r′` instead of `|r - r′|` in the policy's advantage.
    pub signed_reward: bool,
    /// Latent width: table width in tabular mode, hidden width otherwise.
    pub embedding_dim: usize,
    pub policy_hidden: usize,
    /// Initial weight of the policy entropy bonus, decayed linearly to
    /// zero over the run.
    pub entropy_coef: f64,
    /// Standardize advantages within each batch before the surrogate.
    pub normalize_advantages: bool,
    /// Fraction of rollouts forced to start at the sink pair or at an
    /// identical pair.
    pub forced_start_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: EncoderMode::Tabular,
            gamma: 0.9,
            learning_rate: 1e-2,
            policy_learning_rate: 1e-2,
            momentum: 0.9,
            clip_ratio: 0.2,
            rollout_horizon: 25,
            batch_size: 32,
            epochs: 500,
            policy_epochs: 4,
            seed: 0,
            signed_reward: true,
            embedding_dim: 32,
            policy_hidden: 64,
            forced_start_fraction: 0.1,
            entropy_coef: 3.0,
            normalize_advantages: false,
        }
    }
}

impl TrainConfig {
    /// Defaults for the message-passing encoder.
    pub fn message_passing() -> Self {
        TrainConfig {
            mode: EncoderMode::MessagePassing,
            learning_rate: 1e-3,
            embedding_dim: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(invalid("gamma must lie in (0, 1)"));
        }
        if !(self.clip_ratio > 0.0) {
            return Err(invalid("clip ratio must be positive"));
        }
        if self.learning_rate <= 0.0 || self.policy_learning_rate <= 0.0 {
            return Err(invalid("learning rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid("momentum must lie in [0, 1)"));
        }
        if self.rollout_horizon == 0 || self.batch_size == 0 || self.embedding_dim == 0 {
            return Err(invalid("horizon, batch size and embedding dim must be positive"));
        }
        if !(self.entropy_coef >= 0.0) {
            return Err(invalid("entropy coefficient must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.forced_start_fraction) {
            return Err(invalid("forced start fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// One synchronized step of both DFAs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub pair: (usize, usize),
    pub symbol: usize,
    pub next: (usize, usize),
    pub rewards: (i8, i8),
    pub log_prob: f64,
}

impl Transition {
    pub fn reward_gap(&self) -> f64 {
        (f64::from(self.rewards.0) - f64::from(self.rewards.1)).abs()
    }

    fn signed_gap(&self) -> f64 {
        f64::from(self.rewards.0) - f64::from(self.rewards.1)
    }
}

/// Samples symbols from the policy on the current pair and advances both
/// DFAs. Stops at the horizon, or once both components sit in the same
/// sink (nothing further can differ).
pub fn rollout_pair(
    emb: &SpaceEmbeddings,
    policy: &PairPolicyModel,
    mdp: &InducedMdp,
    start: (usize, usize),
    horizon: usize,
    rng: &mut Rng,
) -> Vec<Transition> {
    let (mut s, mut t) = start;
    let mut out = Vec::new();
    for _ in 0..horizon {
        let (a, log_prob) = policy.sample(&emb.pair_input(s, t), rng);
        let next = (mdp.next(s, a), mdp.next(t, a));
        out.push(Transition { pair: (s, t), symbol: a, next, rewards: (mdp.reward(s, a), mdp.reward(t, a)), log_prob });
        (s, t) = next;
        if s == t && mdp.is_terminal(s) {
            break;
        }
    }
    out
}

/// Squared one-step error `(d(A,A′) - (|r - r′| + γ d̄(next)))²` and its
/// gradient with respect to the model parameters followed by the scale.
/// `d̄` is evaluated at the same parameters but treated as a constant.
pub fn value_loss(model: &EmbeddingModel, space: &InducedMdp, transition: &Transition, gamma: f64) -> Result<(f64, Vec<f64>)> {
    let emb = model.embed_space(space)?;
    let (loss, mut grad, d_scale) = value_batch(model, space, &emb, std::slice::from_ref(transition), gamma);
    grad.push(d_scale);
    Ok((loss, grad))
}

/// Mean value loss over a batch; returns (loss, ∂/∂params, ∂/∂scale).
fn value_batch(
    model: &EmbeddingModel,
    space: &InducedMdp,
    emb: &SpaceEmbeddings,
    batch: &[Transition],
    gamma: f64,
) -> (f64, Vec<f64>, f64) {
    let n = batch.len().max(1) as f64;
    let dim = emb.unit.first().map_or(0, Vec::len);
    let mut d_unit = vec![vec![0.0; dim]; emb.len()];
    let mut d_scale = 0.0;
    let mut loss = 0.0;
    for tr in batch {
        let (s, t) = tr.pair;
        let target = tr.reward_gap() + gamma * emb.distance(tr.next.0, tr.next.1);
        let raw = super::unit_distance(&emb.unit[s], &emb.unit[t]);
        let err = emb.scale * raw - target;
        loss += err * err / n;
        if raw == 0.0 {
            continue;
        }
        d_scale += 2.0 * err * raw / n;
        let coef = 2.0 * err * emb.scale / (raw * n);
        for i in 0..dim {
            let diff = coef * (emb.unit[s][i] - emb.unit[t][i]);
            d_unit[s][i] += diff;
            d_unit[t][i] -= diff;
        }
    }
    let grad = model.backprop_units(space, emb, &d_unit);
    (loss, grad, d_scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub value_loss: f64,
    pub policy_objective: f64,
    pub separation_rate: f64,
}

pub struct TrainOutcome {
    pub model: EmbeddingModel,
    pub policy: PairPolicyModel,
    pub curves: Vec<CurvePoint>,
}

impl TrainOutcome {
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("epoch,value_loss,policy_objective,separation_rate\n");
        for c in &self.curves {
            out.push_str(&format!(
                "{},{},{},{}\n",
                c.epoch,
                crate::fmt::num(c.value_loss),
                crate::fmt::num(c.policy_objective),
                crate::fmt::num(c.separation_rate)
            ));
        }
        out
    }
}

/// Fraction of distinct state pairs whose embedding distance exceeds
/// `threshold`. States of an enumerated space are pairwise non-bisimilar.
pub fn space_separation_rate(emb: &SpaceEmbeddings, threshold: f64) -> f64 {
    let n = emb.len();
    if n < 2 {
        return 1.0;
    }
    let mut separated = 0usize;
    for s in 0..n {
        for t in 0..s {
            if emb.distance(s, t) > threshold {
                separated += 1;
            }
        }
    }
    separated as f64 / (n * (n - 1) / 2) as f64
}

fn start_pairs(space: &InducedMdp) -> Vec<(usize, usize)> {
    let n = space.len();
    let mut out = Vec::new();
    for s in 0..n {
        for t in 0..n {
            if s != t && !(space.is_terminal(s) && space.is_terminal(t)) {
                out.push((s, t));
            }
        }
    }
    out
}

fn draw_start(space: &InducedMdp, pairs: &[(usize, usize)], forced: f64, rng: &mut Rng) -> (usize, usize) {
    if pairs.is_empty() || rng.gen_bool(forced) {
        if rng.gen_bool(0.5) {
            let (a, b) = (space.top_id(), space.bot_id());
            if rng.gen_bool(0.5) {
                (a, b)
            } else {
                (b, a)
            }
        } else {
            let s = rng.gen_range(0..space.len());
            (s, s)
        }
    } else {
        *pairs.choose(rng).expect("nonempty")
    }
}

struct Momentum {
    velocity: Vec<f64>,
}

impl Momentum {
    fn new(n: usize) -> Self {
        Momentum { velocity: vec![0.0; n] }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, mu: f64) {
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = mu * *v + g;
            *p -= lr * *v;
        }
    }
}

/// Alternates rollout collection with one encoder step on the value loss
/// and `policy_epochs` steps on the clipped surrogate. Seeded and
/// single-threaded: identical inputs give identical parameters.
pub fn train(space: &InducedMdp, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if !space.check_closure() {
        return Err(invalid("training space is not closed"));
    }
    let seeds = SeedSplitter::new(config.seed);
    let mut init_rng = seeds.stream("init");
    let mut rollout_rng = seeds.stream("rollout");
    let initial_scale = 1.0 / (1.0 - config.gamma);
    let mut model = match config.mode {
        EncoderMode::Tabular => EmbeddingModel::tabular(space, config.embedding_dim, initial_scale, &mut init_rng),
        EncoderMode::MessagePassing => {
            EmbeddingModel::message_passing(space.alphabet_size(), config.embedding_dim, initial_scale, &mut init_rng)
        }
    };
    let mut policy = PairPolicyModel::new(model.dim(), config.policy_hidden, space.alphabet_size(), &mut init_rng);
    let mut enc_opt = Momentum::new(model.params().len() + 1);
    let mut pol_opt = Momentum::new(policy.params.len());
    let pairs = start_pairs(space);

    let mut curves = Vec::with_capacity(config.epochs);
    let mut initial_loss: Option<f64> = None;
    let mut blowups = 0;
    for epoch in 0..config.epochs {
        let emb = model.embed_space(space)?;
        let mut batch = Vec::new();
        for _ in 0..config.batch_size {
            let start = draw_start(space, &pairs, config.forced_start_fraction, &mut rollout_rng);
            batch.extend(rollout_pair(&emb, &policy, space, start, config.rollout_horizon, &mut rollout_rng));
        }

        let mut samples: Vec<PolicySample> = batch
            .iter()
            .map(|tr| {
                let gap = if config.signed_reward { tr.signed_gap() } else { tr.reward_gap() };
                let advantage = gap + config.gamma * emb.distance(tr.next.0, tr.next.1) - emb.distance(tr.pair.0, tr.pair.1);
                PolicySample {
                    input: emb.pair_input(tr.pair.0, tr.pair.1),
                    action: tr.symbol,
                    advantage,
                    old_log_prob: tr.log_prob,
                }
            })
            .collect();
        if config.normalize_advantages && samples.len() > 1 {
            let n = samples.len() as f64;
            let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / n;
            let var = samples.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt().max(1e-8);
            for s in &mut samples {
                s.advantage = (s.advantage - mean) / std;
            }
        }

        let (loss, grad, d_scale) = value_batch(&model, space, &emb, &batch, config.gamma);
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss, initial: initial_loss.unwrap_or(f64::NAN) });
        }
        let initial = *initial_loss.get_or_insert(loss);
        if loss > 10.0 * initial {
            blowups += 1;
            if blowups >= 3 {
                return Err(Error::Diverged { epoch, loss, initial });
            }
        } else {
            blowups = 0;
        }

        let mut params: Vec<f64> = model.params().to_vec();
        params.push(model.scale());
        let mut full_grad = grad;
        full_grad.push(d_scale);
        enc_opt.step(&mut params, &full_grad, config.learning_rate, config.momentum);
        let scale = params.pop().expect("scale");
        model.params_mut().copy_from_slice(&params);
        model.set_scale(scale);

        let entropy_coef = config.entropy_coef * (1.0 - epoch as f64 / config.epochs as f64);
        let mut objective = 0.0;
        for k in 0..config.policy_epochs {
            let mut pl = policy_loss(&policy, &samples, config.clip_ratio);
            if k == 0 {
                objective = pl.objective;
            }
            if entropy_coef > 0.0 {
                let inputs: Vec<&[f64]> = samples.iter().map(|s| s.input.as_slice()).collect();
                entropy_bonus(&policy, &inputs, entropy_coef, &mut pl.grad);
            }
            pol_opt.step(&mut policy.params, &pl.grad, config.policy_learning_rate, config.momentum);
        }

        curves.push(CurvePoint {
            epoch,
            value_loss: loss,
            policy_objective: objective,
            separation_rate: space_separation_rate(&emb, 1e-8),
        });
    }
    Ok(TrainOutcome { model, policy, curves })
}
