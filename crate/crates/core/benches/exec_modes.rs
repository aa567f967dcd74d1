use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use hostree::exec::Exec;
use hostree::op_automaton::{Budget, OperationAutomaton};
use hostree::rewriting::shuffle_system;
use hostree::stack_tree::enumerate_trees;
use hostree::stacks::enumerate_stacks;
use hostree::Symbol;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn traces(c: &mut Criterion) {
    let g = shuffle_system(&['a', 'b']).unwrap();
    let t0 = g.initial.clone().unwrap();
    let mut group = c.benchmark_group("shuffle_traces_maxlen6");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(g.trace_language_with(&t0, &g.finals, 6, None, exec)))
        });
    }
    group.finish();
}

fn related(c: &mut Criterion) {
    let ab = [Symbol('a'), Symbol('b')];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = OperationAutomaton::random(2, 4, 9, &ab, &mut rng).star();
    let sources = enumerate_trees(&enumerate_stacks(1, &ab, 2), 2);
    let budget = Budget {
        max_steps: None,
        max_tree_nodes: Some(4),
        max_label_atoms: Some(3),
        ..Budget::default()
    };
    let mut group = c.benchmark_group("related_many");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(a.related_many(&sources, &budget, exec)))
        });
    }
    group.finish();
}

fn reachable(c: &mut Criterion) {
    let g = shuffle_system(&['a', 'b']).unwrap();
    let t0 = g.initial.clone().unwrap();
    let mut group = c.benchmark_group("shuffle_reachable_depth8");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(g.reachable_with(&t0, 8, exec)))
        });
    }
    group.finish();
}

criterion_group!(benches, traces, related, reachable);
criterion_main!(benches);
