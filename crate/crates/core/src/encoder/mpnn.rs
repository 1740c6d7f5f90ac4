//! Message-passing DFA encoder with hand-written reverse mode.
//!
//! Node features are `[is_initial, is_accepting, is_rejecting]`. Each round
//! updates a node from its own state and, per symbol, the state of its
//! successor under that symbol:
//!
//! ```text
//! h⁰_q   = tanh(W_in x_q + b_in)
//! hʳ_q   = tanh(W_self hʳ⁻¹_q + Σ_a W_a hʳ⁻¹_{δ(q,a)} + b)
//! φ(A)   = hⁿ_{q0},  n = number of states
//! ```
//!
//! Every node has exactly one successor per symbol, so no unordered
//! aggregation is involved and the output is invariant under state
//! renumbering.

use rand::Rng as _;

use crate::dfa::{Dfa, Verdict};
use crate::rng::Rng;

pub const FEATURES: usize = 3;

/// Offsets of each weight block in the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub hidden: usize,
    pub alphabet_size: usize,
}

impl Layout {
    fn w_in(&self) -> usize {
        0
    }
    fn b_in(&self) -> usize {
        self.hidden * FEATURES
    }
    fn w_self(&self) -> usize {
        self.b_in() + self.hidden
    }
    fn w_sym(&self, a: usize) -> usize {
        self.w_self() + self.hidden * self.hidden * (1 + a)
    }
    fn b(&self) -> usize {
        self.w_sym(self.alphabet_size)
    }
    pub fn len(&self) -> usize {
        self.b() + self.hidden
    }

    pub fn init(&self, rng: &mut Rng) -> Vec<f64> {
        let h = self.hidden;
        let mut p = vec![0.0; self.len()];
        let in_scale = 1.0;
        for w in &mut p[self.w_in()..self.b_in()] {
            *w = rng.gen_range(-in_scale..in_scale);
        }
        for w in &mut p[self.b_in()..self.w_self()] {
            *w = rng.gen_range(-0.1..0.1);
        }
        let scale = (3.0 / ((self.alphabet_size + 1) * h) as f64).sqrt();
        for w in &mut p[self.w_self()..self.b()] {
            *w = rng.gen_range(-scale..scale);
        }
        for w in &mut p[self.b()..] {
            *w = rng.gen_range(-0.1..0.1);
        }
        p
    }
}

fn features(dfa: &Dfa, q: usize) -> [f64; FEATURES] {
    let class = dfa.class_of(q);
    [
        f64::from(u8::from(q == dfa.initial())),
        f64::from(u8::from(class == Verdict::Accept)),
        f64::from(u8::from(class == Verdict::Reject)),
    ]
}

/// `out += M v` for a row-major `h x cols` block.
#[inline]
fn matvec_add(m: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = v.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &m[i * cols..(i + 1) * cols];
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += Mᵀ v`.
#[inline]
fn matvec_t_add(m: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (i, vi) in v.iter().enumerate() {
        let row = &m[i * cols..(i + 1) * cols];
        for (o, w) in out.iter_mut().zip(row) {
            *o += w * vi;
        }
    }
}

/// `G += u vᵀ`.
#[inline]
fn outer_add(g: &mut [f64], u: &[f64], v: &[f64]) {
    let cols = v.len();
    for (i, ui) in u.iter().enumerate() {
        let row = &mut g[i * cols..(i + 1) * cols];
        for (gij, vj) in row.iter_mut().zip(v) {
            *gij += ui * vj;
        }
    }
}

/// Hidden states of every round, `rounds[r][q * hidden..]`.
pub struct Trace {
    rounds: Vec<Vec<f64>>,
}

pub fn forward(layout: &Layout, params: &[f64], dfa: &Dfa) -> (Vec<f64>, Trace) {
    let h = layout.hidden;
    let n = dfa.num_states();
    let mut h0 = vec![0.0; n * h];
    for q in 0..n {
        let out = &mut h0[q * h..(q + 1) * h];
        out.copy_from_slice(&params[layout.b_in()..layout.b_in() + h]);
        matvec_add(&params[layout.w_in()..layout.b_in()], &features(dfa, q), out);
        out.iter_mut().for_each(|x| *x = x.tanh());
    }
    let mut rounds = vec![h0];
    for _ in 0..n {
        let prev = rounds.last().expect("round 0 exists");
        let mut next = vec![0.0; n * h];
        for q in 0..n {
            let out = &mut next[q * h..(q + 1) * h];
            out.copy_from_slice(&params[layout.b()..layout.b() + h]);
            matvec_add(&params[layout.w_self()..layout.w_sym(0)], &prev[q * h..(q + 1) * h], out);
            for a in 0..layout.alphabet_size {
                let r = dfa.next(q, a);
                matvec_add(&params[layout.w_sym(a)..layout.w_sym(a + 1)], &prev[r * h..(r + 1) * h], out);
            }
            out.iter_mut().for_each(|x| *x = x.tanh());
        }
        rounds.push(next);
    }
    let q0 = dfa.initial();
    let readout = rounds.last().expect("final round")[q0 * h..(q0 + 1) * h].to_vec();
    (readout, Trace { rounds })
}

/// Accumulates `∂L/∂params` into `grad` given `∂L/∂φ`.
pub fn backward(layout: &Layout, params: &[f64], dfa: &Dfa, trace: &Trace, d_readout: &[f64], grad: &mut [f64]) {
    let h = layout.hidden;
    let n = dfa.num_states();
    let mut d_cur = vec![0.0; n * h];
    let q0 = dfa.initial();
    d_cur[q0 * h..(q0 + 1) * h].copy_from_slice(d_readout);
    let mut d_pre = vec![0.0; h];
    for r in (1..=n).rev() {
        let out = &trace.rounds[r];
        let prev = &trace.rounds[r - 1];
        let mut d_prev = vec![0.0; n * h];
        for q in 0..n {
            let dq = &d_cur[q * h..(q + 1) * h];
            if dq.iter().all(|&x| x == 0.0) {
                continue;
            }
            for i in 0..h {
                let y = out[q * h + i];
                d_pre[i] = dq[i] * (1.0 - y * y);
            }
            for (g, dp) in grad[layout.b()..layout.b() + h].iter_mut().zip(&d_pre) {
                *g += dp;
            }
            let hq = &prev[q * h..(q + 1) * h];
            outer_add(&mut grad[layout.w_self()..layout.w_sym(0)], &d_pre, hq);
            matvec_t_add(&params[layout.w_self()..layout.w_sym(0)], &d_pre, &mut d_prev[q * h..(q + 1) * h]);
            for a in 0..layout.alphabet_size {
                let s = dfa.next(q, a);
                let block = layout.w_sym(a)..layout.w_sym(a + 1);
                outer_add(&mut grad[block.clone()], &d_pre, &prev[s * h..(s + 1) * h]);
                matvec_t_add(&params[block], &d_pre, &mut d_prev[s * h..(s + 1) * h]);
            }
        }
        d_cur = d_prev;
    }
    let h0 = &trace.rounds[0];
    for q in 0..n {
        let dq = &d_cur[q * h..(q + 1) * h];
        for i in 0..h {
            let y = h0[q * h + i];
            d_pre[i] = dq[i] * (1.0 - y * y);
        }
        for (g, dp) in grad[layout.b_in()..layout.w_self()].iter_mut().zip(&d_pre) {
            *g += dp;
        }
        outer_add(&mut grad[layout.w_in()..layout.b_in()], &d_pre, &features(dfa, q));
    }
}
