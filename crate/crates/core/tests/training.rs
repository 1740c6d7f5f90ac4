use dfa_bisim::encoder::{train, Checkpoint, EmbeddingModel, TrainConfig};
use dfa_bisim::metric;
use dfa_bisim::sampler::{SamplerConfig, StateCountDist, TaskKind};
use dfa_bisim::{DfaSpaceConfig, InducedMdp};

fn one_task_space() -> InducedMdp {
    let dist = StateCountDist::Uniform { lo: 4, hi: 4 };
    let seeds = SamplerConfig { alphabet_size: 3, state_count_dist: dist, seed: 2, kind: TaskKind::ReachAvoid }
        .sample_many(1)
        .unwrap();
    InducedMdp::enumerate(&seeds, &DfaSpaceConfig::new(3, 4, 0.9).unwrap()).unwrap()
}

/// The learned symbol policy should pick a maximizer of the exact one-step
/// operator. Symbols with equal operator value count as agreeing.
#[test]
fn policy_recovers_the_argmax_symbol() {
    let m = one_task_space();
    let (d, _) = metric::solve_fixed_point(&m, 0.9, 1e-9).unwrap();
    let config = TrainConfig { epochs: 1500, signed_reward: false, batch_size: 16, ..TrainConfig::default() };
    let out = train(&m, &config).unwrap();
    let emb = out.model.embed_space(&m).unwrap();
    let (mut agree, mut total) = (0, 0);
    for s in 0..m.len() {
        for t in 0..m.len() {
            if s == t || (m.is_terminal(s) && m.is_terminal(t)) {
                continue;
            }
            let best = (0..m.alphabet_size()).map(|a| metric::operator_value(&m, &d, s, t, a)).fold(0.0, f64::max);
            let chosen = out.policy.greedy(&emb.pair_input(s, t));
            total += 1;
            agree += usize::from(metric::operator_value(&m, &d, s, t, chosen) >= best - 1e-9);
        }
    }
    assert!(total > 0);
    assert!(agree as f64 >= 0.95 * total as f64, "agreement {agree}/{total} on {} states", m.len());
}

#[test]
fn training_replays_bit_for_bit() {
    let m = one_task_space();
    for config in [
        TrainConfig { epochs: 40, seed: 9, ..TrainConfig::default() },
        TrainConfig { epochs: 15, seed: 9, ..TrainConfig::message_passing() },
    ] {
        let a = train(&m, &config).unwrap();
        let b = train(&m, &config).unwrap();
        assert_eq!(a.model.params(), b.model.params());
        assert_eq!(a.model.scale().to_bits(), b.model.scale().to_bits());
        assert_eq!(a.policy.params, b.policy.params);
        assert_eq!(a.curves_csv(), b.curves_csv());

        let other = train(&m, &TrainConfig { seed: 10, ..config.clone() }).unwrap();
        assert_ne!(a.model.params(), other.model.params());
    }
}

#[test]
fn checkpoint_round_trip_preserves_distances() {
    let m = one_task_space();
    let config = TrainConfig { epochs: 10, ..TrainConfig::message_passing() };
    let out = train(&m, &config).unwrap();
    let ck = Checkpoint { version: Checkpoint::VERSION, model: out.model, policy: out.policy, config, run_id: None };
    let back = Checkpoint::from_json(&ck.to_json()).unwrap();
    let model: &EmbeddingModel = &back.model;
    for s in m.states() {
        for t in m.states() {
            let x = ck.model.distance(s.dfa(), t.dfa()).unwrap();
            let y = model.distance(s.dfa(), t.dfa()).unwrap();
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
    let mut bad = serde_json::to_value(&ck).unwrap();
    bad["version"] = serde_json::json!(99);
    assert!(Checkpoint::from_json(&bad.to_string()).is_err());
}

#[test]
fn separation_reaches_every_pair_of_a_small_space() {
    let m = one_task_space();
    let config = TrainConfig { epochs: 300, signed_reward: false, ..TrainConfig::default() };
    let out = train(&m, &config).unwrap();
    let emb = out.model.embed_space(&m).unwrap();
    assert_eq!(dfa_bisim::encoder::train::space_separation_rate(&emb, 1e-8), 1.0);
    assert!(out.curves.len() == 300 && out.curves.iter().all(|c| c.value_loss.is_finite()));
}
