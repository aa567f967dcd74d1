use hostree::normalization::{
    is_distinguished, normalize, pipeline, step3_split_dc, step1_split, NormConfig, NormError, Stage,
};
use hostree::op_automaton::{Budget, OperationAutomaton};
use hostree::op_dag::OpDag;
use hostree::stack_tree::{enumerate_trees, StackTree};
use hostree::stacks::enumerate_stacks;
use hostree::{StackOp, Symbol};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ab() -> Vec<Symbol> {
    vec![Symbol('a'), Symbol('b')]
}

fn random_automaton(seed: u64, n: usize) -> OperationAutomaton {
    OperationAutomaton::random(2, n, 2 * n, &ab(), &mut ChaCha8Rng::seed_from_u64(seed))
}

fn bounded(nodes: usize, atoms: usize) -> Budget {
    Budget { max_steps: None, max_tree_nodes: Some(nodes), max_label_atoms: Some(atoms), ..Budget::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_stage_respects_its_partition(seed: u64, n in 2usize..=4) {
        let a = random_automaton(seed, n);
        let stages = pipeline(&a, &NormConfig::new(&ab())).unwrap();
        let names: Vec<Stage> = stages.iter().map(|p| p.stage).collect();
        prop_assert_eq!(names, vec![
            Stage::Split,
            Stage::Bubbles,
            Stage::DestructiveSplit,
            Stage::StackNormal,
            Stage::NoId,
            Stage::TestSplit,
            Stage::Distinguished,
        ]);
        for p in &stages {
            prop_assert_eq!(p.check_partition(), Ok(()), "stage {:?}", p.stage);
            prop_assert_eq!(p.part.len(), p.automaton.n_states());
            prop_assert!(p.automaton.validate().is_ok());
        }
        let last = &stages.last().unwrap().automaton;
        prop_assert!(is_distinguished(last));
        prop_assert!(last.useful_states().iter().all(|&u| u));
    }

    #[test]
    fn walk_certificate_implies_reduced_members(seed: u64, n in 2usize..=3) {
        let last = normalize(&random_automaton(seed, n), &NormConfig::new(&ab())).unwrap().automaton;
        if last.reduced_walks(6).is_ok() {
            for d in last.enumerate_accepted(6).unwrap() {
                prop_assert!(d.is_reduced(2), "{}", d.to_text());
            }
        }
    }

    #[test]
    fn normalization_is_deterministic(seed: u64) {
        let a = random_automaton(seed, 3);
        let cfg = NormConfig::new(&ab());
        let again = OperationAutomaton::from_json(&a.to_json()).unwrap();
        prop_assert_eq!(normalize(&a, &cfg).unwrap(), normalize(&again, &cfg).unwrap());
    }

    #[test]
    fn relation_is_preserved_on_small_trees(seed: u64) {
        let a = random_automaton(seed, 2);
        let b = normalize(&a, &NormConfig::new(&ab())).unwrap().automaton;
        let sources = enumerate_trees(&enumerate_stacks(1, &ab(), 2), 2);
        for s in sources.iter().step_by(3) {
            let (small_a, large_a) = (a.related(s, &bounded(3, 3)), a.related(s, &bounded(5, 4)));
            let (small_b, large_b) = (b.related(s, &bounded(3, 3)), b.related(s, &bounded(5, 4)));
            prop_assert!(small_a.complete && large_a.complete && small_b.complete && large_b.complete);
            prop_assert!(small_a.targets.is_subset(&large_b.targets), "lost from {}", s.to_text());
            prop_assert!(small_b.targets.is_subset(&large_a.targets), "gained from {}", s.to_text());
        }
    }
}

#[test]
fn steps_must_run_in_order() {
    let a = OperationAutomaton::singleton(&OpDag::stack_op(StackOp::rew('a', 'b')), 2).unwrap();
    let split = step1_split(&a, &NormConfig::new(&ab())).unwrap();
    assert!(matches!(step3_split_dc(&split), Err(NormError::OutOfOrder { .. })));
}

#[test]
fn single_rewrite_keeps_its_relation() {
    let a = OperationAutomaton::singleton(&OpDag::stack_op(StackOp::rew('a', 'b')), 2).unwrap();
    let b = normalize(&a, &NormConfig::new(&ab())).unwrap().automaton;
    let s = StackTree::parse_text("node([ab], node([ba]), node([aa]))").unwrap();
    let budget = bounded(3, 2);
    assert_eq!(a.related(&s, &budget).targets, b.related(&s, &budget).targets);
    let expect = [
        "node([ab], node([ba]), node([ab]))",
        "node([ab], node([bb]), node([aa]))",
        "node([ab], node([bb]), node([ab]))",
    ];
    let got: Vec<String> = b.related(&s, &budget).targets.iter().filter(|t| **t != s).map(|t| t.to_text()).collect();
    assert_eq!(got, expect);
}
