//! Pair policy over symbols and its clipped-ratio surrogate.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

/// One-hidden-layer network from a concatenated embedding pair to a
/// categorical distribution over symbols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPolicyModel {
    pub embedding_dim: usize,
    pub hidden: usize,
    pub alphabet_size: usize,
    pub params: Vec<f64>,
}

/// One sample of the surrogate objective.
#[derive(Debug, Clone)]
pub struct PolicySample {
    /// Concatenation of the two normalized embeddings.
    pub input: Vec<f64>,
    pub action: usize,
    pub advantage: f64,
    pub old_log_prob: f64,
}

struct Activations {
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

impl PairPolicyModel {
    pub fn new(embedding_dim: usize, hidden: usize, alphabet_size: usize, rng: &mut Rng) -> Self {
        let input = 2 * embedding_dim;
        let len = hidden * input + hidden + alphabet_size * hidden + alphabet_size;
        let mut params = vec![0.0; len];
        let s1 = (1.0 / input as f64).sqrt();
        for w in &mut params[..hidden * input] {
            *w = rng.gen_range(-s1..s1);
        }
        // Small output layer so the initial policy is close to uniform.
        let out = hidden * input + hidden;
        for w in &mut params[out..out + alphabet_size * hidden] {
            *w = rng.gen_range(-0.01..0.01);
        }
        PairPolicyModel { embedding_dim, hidden, alphabet_size, params }
    }

    fn input_len(&self) -> usize {
        2 * self.embedding_dim
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let w1 = self.hidden * self.input_len();
        let b1 = w1 + self.hidden;
        let w2 = b1 + self.alphabet_size * self.hidden;
        (w1, b1, w2)
    }

    /// Unit embeddings have entries of order `1/√dim`; rescaling them to
    /// order one keeps the hidden layer sensitive to the input pair.
    fn input_scale(&self) -> f64 {
        (self.embedding_dim as f64).sqrt()
    }

    fn activations(&self, input: &[f64]) -> Activations {
        let (w1_end, b1_end, w2_end) = self.offsets();
        let n_in = self.input_len();
        let c = self.input_scale();
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|i| {
                let row = &self.params[i * n_in..(i + 1) * n_in];
                let z: f64 = c * row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + self.params[w1_end + i];
                z.tanh()
            })
            .collect();
        let logits: Vec<f64> = (0..self.alphabet_size)
            .map(|j| {
                let row = &self.params[b1_end + j * self.hidden..b1_end + (j + 1) * self.hidden];
                row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + self.params[w2_end + j]
            })
            .collect();
        Activations { hidden, probs: softmax(&logits) }
    }

    pub fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().chain(b).copied().collect()
    }

    pub fn probs(&self, input: &[f64]) -> Vec<f64> {
        self.activations(input).probs
    }

    pub fn sample(&self, input: &[f64], rng: &mut Rng) -> (usize, f64) {
        let p = self.probs(input);
        let mut u: f64 = rng.gen();
        for (a, pa) in p.iter().enumerate() {
            if u < *pa {
                return (a, pa.ln());
            }
            u -= pa;
        }
        let last = p.len() - 1;
        (last, p[last].ln())
    }

    /// Most probable symbol, lowest index on ties.
    pub fn greedy(&self, input: &[f64]) -> usize {
        let p = self.probs(input);
        let mut best = 0;
        for a in 1..p.len() {
            if p[a] > p[best] {
                best = a;
            }
        }
        best
    }

    /// Accumulates `scale · ∂ log π(action | input) / ∂params` into `grad`.
    fn add_log_prob_grad(&self, input: &[f64], act: &Activations, action: usize, scale: f64, grad: &mut [f64]) {
        let d_logits: Vec<f64> = act
            .probs
            .iter()
            .enumerate()
            .map(|(j, p)| scale * (f64::from(u8::from(j == action)) - p))
            .collect();
        self.add_logit_grad(input, act, &d_logits, grad);
    }

    /// Backpropagates a gradient on the logits into `grad`.
    fn add_logit_grad(&self, input: &[f64], act: &Activations, d_logits: &[f64], grad: &mut [f64]) {
        let (w1_end, b1_end, w2_end) = self.offsets();
        let n_in = self.input_len();
        let c = self.input_scale();
        let mut d_hidden = vec![0.0; self.hidden];
        for (j, dl) in d_logits.iter().enumerate() {
            grad[w2_end + j] += dl;
            let row = b1_end + j * self.hidden;
            for i in 0..self.hidden {
                grad[row + i] += dl * act.hidden[i];
                d_hidden[i] += dl * self.params[row + i];
            }
        }
        for i in 0..self.hidden {
            let dz = d_hidden[i] * (1.0 - act.hidden[i] * act.hidden[i]);
            grad[w1_end + i] += dz;
            for (g, x) in grad[i * n_in..(i + 1) * n_in].iter_mut().zip(input) {
                *g += dz * c * x;
            }
        }
    }
}

/// Mean policy entropy over `inputs`, accumulating
/// `-coef · ∂H/∂params / |inputs|` into `grad` (an entropy bonus in a
/// minimized loss).
pub fn entropy_bonus(policy: &PairPolicyModel, inputs: &[&[f64]], coef: f64, grad: &mut [f64]) -> f64 {
    if inputs.is_empty() {
        return 0.0;
    }
    let n = inputs.len() as f64;
    let mut total = 0.0;
    for x in inputs {
        let act = policy.activations(x);
        let h: f64 = -act.probs.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>();
        total += h;
        if coef == 0.0 {
            continue;
        }
        // ∂H/∂logit_j = -p_j (ln p_j + H)
        let d_logits: Vec<f64> = act
            .probs
            .iter()
            .map(|&p| if p > 0.0 { coef * p * (p.ln() + h) / n } else { 0.0 })
            .collect();
        policy.add_logit_grad(x, &act, &d_logits, grad);
    }
    total / n
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Clipped surrogate `mean min(ρ A, clip(ρ, 1-ε, 1+ε) A)` with
/// `ρ = π(a|x) / π_old(a|x)`.
#[derive(Debug, Clone)]
pub struct PolicyLoss {
    /// Surrogate objective (to be maximized).
    pub objective: f64,
    /// Gradient of `-objective` with respect to the policy parameters.
    pub grad: Vec<f64>,
    /// Fraction of samples whose ratio was clipped.
    pub clip_fraction: f64,
}

pub fn policy_loss(policy: &PairPolicyModel, batch: &[PolicySample], clip_ratio: f64) -> PolicyLoss {
    let mut grad = vec![0.0; policy.params.len()];
    if batch.is_empty() {
        return PolicyLoss { objective: 0.0, grad, clip_fraction: 0.0 };
    }
    let n = batch.len() as f64;
    let mut objective = 0.0;
    let mut clipped = 0usize;
    for s in batch {
        let act = policy.activations(&s.input);
        let ratio = (act.probs[s.action].ln() - s.old_log_prob).exp();
        let unclipped = ratio * s.advantage;
        let bounded = ratio.clamp(1.0 - clip_ratio, 1.0 + clip_ratio) * s.advantage;
        if bounded < unclipped {
            objective += bounded;
            clipped += 1;
        } else {
            objective += unclipped;
            // ∂(ρA)/∂θ = ρ A ∂ log π / ∂θ; descent direction is the negative.
            policy.add_log_prob_grad(&s.input, &act, s.action, -ratio * s.advantage / n, &mut grad);
        }
    }
    PolicyLoss { objective: objective / n, grad, clip_fraction: clipped as f64 / n }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedSplitter;

    fn model() -> PairPolicyModel {
        let mut rng = SeedSplitter::new(5).stream("pi");
        let mut m = PairPolicyModel::new(3, 6, 4, &mut rng);
        // larger output weights so gradients are not tiny
        for w in m.params.iter_mut() {
            *w *= 3.0;
        }
        m
    }

    fn batch(m: &PairPolicyModel, advantages: &[f64]) -> Vec<PolicySample> {
        let mut rng = SeedSplitter::new(9).stream("b");
        advantages
            .iter()
            .enumerate()
            .map(|(i, &adv)| {
                let input: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let action = i % 4;
                let old = m.probs(&input)[action].ln() + 0.05 * (i as f64 - 2.0);
                PolicySample { input, action, advantage: adv, old_log_prob: old }
            })
            .collect()
    }

    #[test]
    fn probabilities_are_distributions() {
        let m = model();
        let p = m.probs(&[0.1, -0.3, 0.5, 0.2, 0.0, -0.9]);
        assert!(p.iter().all(|x| *x >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_advantages_give_zero_gradient() {
        let m = model();
        let l = policy_loss(&m, &batch(&m, &[0.0; 5]), 0.2);
        assert!(l.grad.iter().all(|g| *g == 0.0));
        assert_eq!(l.objective, 0.0);
    }

    #[test]
    fn unit_ratio_matches_policy_gradient() {
        let m = model();
        let mut b = batch(&m, &[1.0, -2.0, 0.5]);
        for s in &mut b {
            s.old_log_prob = m.probs(&s.input)[s.action].ln();
        }
        let l = policy_loss(&m, &b, 0.2);
        assert_eq!(l.clip_fraction, 0.0);
        let mut expect = vec![0.0; m.params.len()];
        for s in &b {
            let act = m.activations(&s.input);
            m.add_log_prob_grad(&s.input, &act, s.action, -s.advantage / 3.0, &mut expect);
        }
        for (a, e) in l.grad.iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_gradient_matches_finite_differences() {
        let m = model();
        let b = batch(&m, &[0.0; 4]);
        let inputs: Vec<&[f64]> = b.iter().map(|s| s.input.as_slice()).collect();
        let mut grad = vec![0.0; m.params.len()];
        entropy_bonus(&m, &inputs, 1.0, &mut grad);
        for i in (0..m.params.len()).step_by(5) {
            let mut p = m.clone();
            let mut scratch = vec![0.0; p.params.len()];
            p.params[i] += 1e-6;
            let up = -entropy_bonus(&p, &inputs, 0.0, &mut scratch);
            p.params[i] -= 2e-6;
            let down = -entropy_bonus(&p, &inputs, 0.0, &mut scratch);
            let fd = (up - down) / 2e-6;
            assert!((fd - grad[i]).abs() <= 1e-7 + 1e-5 * fd.abs(), "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = model();
        let b = batch(&m, &[1.0, -0.7, 0.4, 2.0, -1.5]);
        let l = policy_loss(&m, &b, 0.2);
        for i in (0..m.params.len()).step_by(3) {
            let mut p = m.clone();
            p.params[i] += 1e-6;
            let up = -policy_loss(&p, &b, 0.2).objective;
            p.params[i] -= 2e-6;
            let down = -policy_loss(&p, &b, 0.2).objective;
            let fd = (up - down) / 2e-6;
            assert!((fd - l.grad[i]).abs() <= 1e-7 + 1e-5 * fd.abs(), "param {i}: {fd} vs {}", l.grad[i]);
        }
    }
}
