use std::collections::BTreeSet;

use hostree::exec::Exec;
use hostree::op_automaton::{Budget, OperationAutomaton, Outcome};
use hostree::op_dag::{random_dag, DagKey, OpDag};
use hostree::rewriting::shuffle_system;
use hostree::stack_tree::{random_tree, StackTree};
use hostree::stacks::{enumerate_stacks, pop_word, push_word, random_stack};
use hostree::treegraph_encoding::{decode, encode_tree, psi_apply};
use hostree::{Stack, StackOp, Symbol};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ab() -> Vec<Symbol> {
    vec![Symbol('a'), Symbol('b')]
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn small_tree(r: &mut ChaCha8Rng, max_nodes: usize) -> StackTree {
    let labels = enumerate_stacks(1, &ab(), 3);
    random_tree(&labels, r.gen_range(1..=max_nodes), r)
}

fn keys(ds: &[OpDag]) -> BTreeSet<DagKey> {
    ds.iter().map(OpDag::iso_key).collect()
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Rew(char, char),
    Cop(u8),
    Ncop(u8),
}

fn op_strategy() -> impl Strategy<Value = Op> {
    let sym = prop_oneof![Just('a'), Just('b')];
    prop_oneof![
        (sym.clone(), sym).prop_map(|(a, b)| Op::Rew(a, b)),
        (1u8..=2).prop_map(Op::Cop),
        (1u8..=2).prop_map(Op::Ncop),
    ]
}

fn model_step(op: Op, mut c: Vec<Vec<char>>) -> Option<Vec<Vec<char>>> {
    match op {
        Op::Rew(a, b) => {
            let top = c.last_mut()?.last_mut()?;
            (*top == a).then(|| *top = b)?;
        }
        Op::Cop(1) => {
            let s = c.last_mut()?;
            let x = *s.last()?;
            s.push(x);
        }
        Op::Cop(_) => {
            let s = c.last()?.clone();
            c.push(s);
        }
        Op::Ncop(1) => {
            let s = c.last_mut()?;
            let n = s.len();
            (n >= 2 && s[n - 1] == s[n - 2]).then(|| s.pop())?;
        }
        Op::Ncop(_) => {
            let n = c.len();
            (n >= 2 && c[n - 1] == c[n - 2]).then(|| c.pop())?;
        }
    }
    Some(c)
}

fn to_model(s: &Stack) -> Vec<Vec<char>> {
    s.components().iter().map(|x| x.symbols().iter().map(|y| y.0).collect()).collect()
}

fn to_stack_op(op: Op) -> StackOp {
    match op {
        Op::Rew(a, b) => StackOp::rew(a, b),
        Op::Cop(k) => StackOp::Cop(k),
        Op::Ncop(k) => StackOp::Ncop(k),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stack_text_and_json_round_trip(seed: u64, level in 1u8..=3) {
        let s = random_stack(level, &ab(), 4, &mut rng(seed));
        prop_assert_eq!(Stack::parse(&s.serialize()).unwrap(), s.clone());
        prop_assert_eq!(Stack::from_json(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn level2_operations_match_vector_model(seed: u64, ops in prop::collection::vec(op_strategy(), 1..12)) {
        let mut s = random_stack(2, &ab(), 3, &mut rng(seed));
        let mut m = Some(to_model(&s));
        for op in ops {
            let got = to_stack_op(op).apply(&s).unwrap();
            m = m.and_then(|c| model_step(op, c));
            match (&got, &m) {
                (Some(t), Some(c)) => prop_assert_eq!(&to_model(t), c),
                (None, None) => break,
                _ => prop_assert!(false, "{:?}: stack gives {:?}, model gives {:?}", op, got, m),
            }
            s = got.unwrap();
        }
    }

    #[test]
    fn pop_word_inverts_push_word(seed: u64, w in "[ab]{0,4}") {
        let s = random_stack(2, &ab(), 4, &mut rng(seed));
        let w: Vec<Symbol> = w.chars().map(Symbol).collect();
        let pushed = push_word(&w, &s).unwrap();
        prop_assert_eq!(pop_word(&w, &pushed).unwrap(), Some(s));
    }

    #[test]
    fn tree_text_and_json_round_trip(seed: u64) {
        let t = small_tree(&mut rng(seed), 8);
        prop_assert_eq!(StackTree::parse_text(&t.to_text()).unwrap(), t.clone());
        prop_assert_eq!(StackTree::from_json(&t.to_json()).unwrap(), t);
    }

    #[test]
    fn encoding_round_trips(seed: u64) {
        let t = small_tree(&mut rng(seed), 9);
        let x = encode_tree(&t).unwrap();
        prop_assert_eq!(x.len(), t.leaf_count());
        prop_assert_eq!(decode(&x), Ok(t));
    }

    #[test]
    fn code_application_commutes_with_encoding(seed: u64) {
        let mut r = rng(seed);
        let d = random_dag(2, &ab(), r.gen_range(2..=8), &mut r);
        let t = small_tree(&mut r, 5);
        let x = encode_tree(&t).unwrap();
        for i in 1..=t.leaf_count() {
            let direct = d.apply_at(i, &t).unwrap().map(|u| encode_tree(&u).unwrap());
            prop_assert_eq!(psi_apply(&d, i, &x).unwrap(), direct, "{} at {}", d.to_text(), i);
        }
    }

    #[test]
    fn decompositions_agree(seed: u64) {
        let mut r = rng(seed);
        let d = random_dag(2, &ab(), r.gen_range(3..=9), &mut r);
        let ds = d.all_decompositions(16);
        prop_assert!(!ds.is_empty());
        let t = small_tree(&mut r, 5);
        for i in 1..=t.leaf_count() {
            let first = d.apply_with(&ds[0], i, &t).unwrap();
            for x in &ds[1..] {
                prop_assert_eq!(&d.apply_with(x, i, &t).unwrap(), &first);
            }
        }
    }

    #[test]
    fn canonical_form_is_stable(seed: u64) {
        let mut r = rng(seed);
        let d = random_dag(2, &ab(), r.gen_range(1..=9), &mut r);
        let c = d.canonical().unwrap();
        prop_assert_eq!(c.iso_key(), d.iso_key());
        prop_assert_eq!(c.canonical().unwrap(), c.clone());
        prop_assert_eq!(OpDag::parse_text(&c.to_text()).unwrap().iso_key(), d.iso_key());
    }

    #[test]
    fn boolean_constructions_match_acceptance(seed: u64) {
        let mut r = rng(seed);
        let a = OperationAutomaton::random(2, 2, 5, &ab(), &mut r);
        let b = OperationAutomaton::random(2, 3, 7, &ab(), &mut r);
        let u = a.union(&b).unwrap();
        let i = a.intersect(&b).unwrap();
        for _ in 0..8 {
            let d = random_dag(2, &ab(), 5, &mut r);
            let (x, y) = (a.accepts(&d).unwrap().is_some(), b.accepts(&d).unwrap().is_some());
            prop_assert_eq!(u.accepts(&d).unwrap().is_some(), x || y);
            prop_assert_eq!(i.accepts(&d).unwrap().is_some(), x && y);
        }
    }

    #[test]
    fn accepted_labellings_are_consistent(seed: u64) {
        let mut r = rng(seed);
        let a = OperationAutomaton::random(2, 3, 7, &ab(), &mut r);
        for d in a.enumerate_accepted(5).unwrap() {
            let labels = a.accepts(&d).unwrap().expect("enumerated DAG accepted");
            prop_assert_eq!(labels.len(), d.vertex_count());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn star_is_idempotent(seed: u64) {
        let a = OperationAutomaton::random(2, 2, 4, &ab(), &mut rng(seed));
        let s = a.star();
        let once = keys(&s.enumerate_accepted(5).unwrap());
        let twice = keys(&s.star().enumerate_accepted(5).unwrap());
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn singleton_relation_is_application(seed: u64) {
        let mut r = rng(seed);
        let d = random_dag(2, &ab(), r.gen_range(2..=6), &mut r);
        let a = OperationAutomaton::singleton(&d, 2).unwrap();
        let s = small_tree(&mut r, 4);
        let expect = d.apply_all(&s).unwrap();
        let budget = Budget { max_steps: None, max_tuple: 1, ..Budget::default() };
        let mut got = a.related(&s, &budget).targets;
        got.remove(&s);
        let mut expect_wo = expect.clone();
        expect_wo.remove(&s);
        prop_assert_eq!(got, expect_wo);
        for t in &expect {
            prop_assert!(matches!(a.relates(&s, t, &budget), Outcome::Found(_)));
        }
    }

    #[test]
    fn witnesses_replay(seed: u64) {
        let mut r = rng(seed);
        let a = OperationAutomaton::random(2, 3, 6, &ab(), &mut r).star();
        let s = small_tree(&mut r, 3);
        let budget = Budget { max_steps: Some(6), max_tree_nodes: Some(5), max_label_atoms: Some(4), ..Budget::default() };
        for t in a.related(&s, &budget).targets.iter().take(10) {
            match a.relates(&s, t, &budget) {
                Outcome::Found(w) => {
                    prop_assert_eq!(w.dags.len(), w.indices.len());
                    for (d, l) in w.dags.iter().zip(&w.labellings) {
                        prop_assert_eq!(a.accepts(d).unwrap().is_some(), true);
                        prop_assert_eq!(l.len(), d.vertex_count());
                    }
                    prop_assert_eq!(OpDag::apply_parallel(&w.dags, &w.indices, &s), Ok(Some(t.clone())));
                }
                other => prop_assert!(false, "target {} not found again: {:?}", t.to_text(), other),
            }
        }
    }

    #[test]
    fn relation_is_monotone_in_budget(seed: u64) {
        let mut r = rng(seed);
        let a = OperationAutomaton::random(2, 3, 6, &ab(), &mut r).star();
        let s = small_tree(&mut r, 3);
        let small = Budget { max_steps: Some(4), max_tree_nodes: Some(4), max_label_atoms: Some(3), ..Budget::default() };
        let large = Budget { max_steps: Some(7), max_tree_nodes: Some(5), max_label_atoms: Some(4), ..small.clone() };
        let lo = a.related(&s, &small).targets;
        let hi = a.related(&s, &large).targets;
        prop_assert!(lo.is_subset(&hi));
    }

    #[test]
    fn exec_modes_agree(seed: u64) {
        let mut r = rng(seed);
        let a = OperationAutomaton::random(2, 3, 6, &ab(), &mut r).star();
        let sources: Vec<StackTree> = (0..4).map(|_| small_tree(&mut r, 2)).collect();
        let budget = Budget { max_steps: Some(5), max_tree_nodes: Some(4), max_label_atoms: Some(3), ..Budget::default() };
        let seq: Vec<_> = a.related_many(&sources, &budget, Exec::Sequential).into_iter().map(|x| x.targets).collect();
        let par: Vec<_> = a.related_many(&sources, &budget, Exec::Parallel).into_iter().map(|x| x.targets).collect();
        prop_assert_eq!(seq, par);
        let d = random_dag(2, &ab(), 6, &mut r);
        let t = small_tree(&mut r, 4);
        prop_assert_eq!(d.apply_all_with(&t, Exec::Sequential).unwrap(), d.apply_all_with(&t, Exec::Parallel).unwrap());
    }
}

#[test]
fn shuffle_reachability_is_mode_independent() {
    let g = shuffle_system(&['a', 'b']).unwrap();
    let t0 = g.initial.clone().unwrap();
    assert_eq!(g.reachable_with(&t0, 6, Exec::Sequential), g.reachable_with(&t0, 6, Exec::Parallel));
}
