use dfa_bisim::metric::{self, max_axiom_violation, operator_value};
use dfa_bisim::sampler::{SamplerConfig, StateCountDist, TaskKind};
use dfa_bisim::{Dfa, DfaSpaceConfig, InducedMdp};
use proptest::prelude::*;

/// Random three-valued DFA: (states, symbols, table, initial, labels).
fn arb_dfa() -> impl Strategy<Value = Dfa> {
    (1usize..7, 1usize..4).prop_flat_map(|(n, k)| {
        (
            proptest::collection::vec(0..n, n * k),
            0..n,
            proptest::collection::vec(0u8..4, n),
        )
            .prop_map(move |(delta, q0, labels)| {
                let acc = (0..n).filter(|&q| labels[q] == 0).collect();
                let rej = (0..n).filter(|&q| labels[q] == 1).collect();
                Dfa::new(n, k, delta, q0, acc, rej).unwrap()
            })
    })
}

fn permute(dfa: &Dfa, perm: &[usize]) -> Dfa {
    let (n, k) = (dfa.num_states(), dfa.alphabet_size());
    let mut delta = vec![0; n * k];
    for q in 0..n {
        for a in 0..k {
            delta[perm[q] * k + a] = perm[dfa.next(q, a)];
        }
    }
    let map = |v: &[usize]| v.iter().map(|&q| perm[q]).collect();
    Dfa::new(n, k, delta, perm[dfa.initial()], map(dfa.accepting()), map(dfa.rejecting())).unwrap()
}

proptest! {
    #[test]
    fn minimize_is_idempotent_and_shrinks(dfa in arb_dfa()) {
        let m = dfa.minimize();
        prop_assert!(m.num_states() <= dfa.num_states());
        prop_assert_eq!(m.minimize(), m.clone());
        prop_assert!(m.is_bisimilar(&dfa).unwrap());
    }

    #[test]
    fn canonical_hash_ignores_state_numbering(dfa in arb_dfa(), seed in any::<u64>()) {
        let n = dfa.num_states();
        let mut perm: Vec<usize> = (0..n).collect();
        // Deterministic shuffle from the seed.
        let mut x = seed;
        for i in (1..n).rev() {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (x >> 33) as usize % (i + 1));
        }
        let p = permute(&dfa, &perm);
        let a = dfa.minimize().canonicalize();
        let b = p.minimize().canonicalize();
        prop_assert_eq!(a.hash(), b.hash());
        prop_assert!(dfa.is_bisimilar(&p).unwrap());
    }

    #[test]
    fn bisimilarity_is_symmetric(a in arb_dfa(), b in arb_dfa()) {
        if a.alphabet_size() == b.alphabet_size() {
            prop_assert_eq!(a.is_bisimilar(&b).unwrap(), b.is_bisimilar(&a).unwrap());
            let same = a.minimize().canonicalize().hash() == b.minimize().canonicalize().hash();
            prop_assert_eq!(a.is_bisimilar(&b).unwrap(), same);
        } else {
            prop_assert!(a.is_bisimilar(&b).is_err());
        }
    }

    #[test]
    fn json_round_trip(dfa in arb_dfa()) {
        prop_assert_eq!(Dfa::from_json(&dfa.to_json()).unwrap(), dfa);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn metric_is_a_fixed_point_pseudometric(seed in 0u64..1000, kind in 0usize..3, k in 2usize..5) {
        let kind = [TaskKind::Reach, TaskKind::ReachAvoid, TaskKind::Rad][kind];
        let dist = StateCountDist::TruncatedGeometric { p: 0.5, bound: 6 };
        let seeds = SamplerConfig { alphabet_size: k, state_count_dist: dist, seed, kind }.sample_many(4).unwrap();
        let m = InducedMdp::enumerate(&seeds, &DfaSpaceConfig::new(k, 6, 0.9).unwrap()).unwrap();
        prop_assert!(m.check_closure());
        let (d, policy) = metric::solve_fixed_point(&m, 0.9, 1e-8).unwrap();
        prop_assert!(max_axiom_violation(&d) <= 1e-9);
        for s in 0..m.len() {
            for t in 0..m.len() {
                let best = (0..k).map(|a| operator_value(&m, &d, s, t, a)).fold(0.0, f64::max);
                prop_assert!((best - d.get(s, t)).abs() <= 1e-8);
                prop_assert_eq!(operator_value(&m, &d, s, t, policy.get(s, t)), best);
                prop_assert!(d.get(s, t) <= 2.0 / (1.0 - 0.9) + 1e-9);
                if s != t {
                    prop_assert!(d.get(s, t) > 1e-6);
                }
            }
        }
    }
}
