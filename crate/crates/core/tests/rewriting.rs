use std::collections::BTreeSet;

use hostree::exec::Exec;
use hostree::op_dag::random_dag;
use hostree::rewriting::{default_trace_steps, shuffle_system, Gstrs, Rule};
use hostree::stack_tree::{random_tree, StackTree};
use hostree::stacks::enumerate_stacks;
use hostree::{Alphabet, Symbol};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ab() -> Vec<Symbol> {
    vec![Symbol('a'), Symbol('b')]
}

fn random_system(seed: u64) -> Gstrs {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let rules = (0..r.gen_range(1..=3))
        .map(|k| Rule {
            name: format!("r{k}"),
            dag: random_dag(2, &ab(), 5, &mut r),
            label: if r.gen_bool(0.5) { Some('x') } else { None },
        })
        .collect();
    Gstrs::new(2, Alphabet::new(['a', 'b']).unwrap(), rules).unwrap()
}

fn is_square_shuffle(w: &str) -> bool {
    fn go(w: &[char], u: &mut Vec<char>, i: usize, j: usize) -> bool {
        // u is the prefix of the first copy; the second copy lags behind at j
        if i == w.len() {
            return j == u.len();
        }
        let c = w[i];
        if j < u.len() && u[j] == c && go(w, u, i + 1, j + 1) {
            return true;
        }
        u.push(c);
        let ok = go(w, u, i + 1, j);
        u.pop();
        ok
    }
    go(&w.chars().collect::<Vec<_>>(), &mut Vec::new(), 0, 0)
}

#[test]
fn shuffle_traces_are_square_shuffles() {
    let g = shuffle_system(&['a', 'b']).unwrap();
    let t0 = g.initial.clone().unwrap();
    let traces = g.trace_language(&t0, &g.finals, 6, None);
    assert_eq!(traces.steps, default_trace_steps(6));
    for w in &traces.words {
        assert!(is_square_shuffle(w), "{w}");
    }
    let letters = ['a', 'b'];
    for len in 0..=4usize {
        for k in 0..(1usize << len) {
            let w: String = (0..len).map(|b| letters[(k >> b) & 1]).collect();
            assert_eq!(traces.words.contains(&w), is_square_shuffle(&w), "{w}");
            assert_eq!(g.accepts_word(&t0, &g.finals, &w), is_square_shuffle(&w), "{w}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn systems_round_trip_through_json(seed: u64) {
        let g = random_system(seed);
        let back = Gstrs::from_json(&g.to_json()).unwrap();
        let keys = |g: &Gstrs| g.dags().iter().map(|d| d.iso_key()).collect::<Vec<_>>();
        prop_assert_eq!(keys(&back), keys(&g));
        prop_assert_eq!(
            back.rules.iter().map(|r| r.label).collect::<Vec<_>>(),
            g.rules.iter().map(|r| r.label).collect::<Vec<_>>()
        );
    }

    #[test]
    fn successors_are_rule_applications(seed: u64) {
        let g = random_system(seed);
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let t = random_tree(&enumerate_stacks(1, &ab(), 3), r.gen_range(1..=4), &mut r);
        let mut expect: BTreeSet<(Option<char>, StackTree)> = BTreeSet::new();
        for rule in &g.rules {
            for u in rule.dag.apply_all(&t).unwrap() {
                expect.insert((rule.label, u));
            }
        }
        prop_assert_eq!(g.successors_with(&t, Exec::Sequential), expect.clone());
        prop_assert_eq!(g.successors_with(&t, Exec::Parallel), expect);
    }

    #[test]
    fn reachability_grows_with_depth(seed: u64) {
        let g = random_system(seed);
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let t = random_tree(&enumerate_stacks(1, &ab(), 2), r.gen_range(1..=3), &mut r);
        let mut prev = g.reachable(&t, 0);
        prop_assert_eq!(prev.iter().collect::<Vec<_>>(), vec![&t]);
        for depth in 1..=3 {
            let next = g.reachable(&t, depth);
            prop_assert!(prev.is_subset(&next));
            for u in &prev {
                for (_, v) in g.successors(u) {
                    prop_assert!(next.contains(&v));
                }
            }
            prev = next;
        }
    }
}
