//! `hostree`: command-line front end.
//!
//! Every command prints one JSON report on stdout (or to `--out`) and a short
//! summary on stderr. Exit status: 0 answered, 2 answered negatively, 3
//! budget exhausted, 64 usage error, 65 parse error.

mod doc;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hostree::normalization::{normalize, pipeline, NormConfig};
use hostree::op_automaton::{Budget, OperationAutomaton, Outcome};
use hostree::op_dag::{random_dag, OpDag};
use hostree::rewriting::{default_trace_steps, shuffle_system};
use hostree::stack_tree::random_tree;
use hostree::stacks::enumerate_stacks;
use hostree::treegraph_encoding::{decode, encode_tree};
use hostree::{Stack, StackOp, StackTree, Symbol};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use doc::{envelope, parse_err, Failure};

#[derive(Parser)]
#[command(name = "hostree", version, about = "Higher-order stack trees and operation automata")]
struct Cli {
    /// Write the report to this file instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write a DOT rendering to this file, where the command has one.
    #[arg(long, global = true)]
    dot: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Decide compound-ness and reducedness of a DAG.
    CheckDag {
        dag: PathBuf,
        /// Order for the reducedness check; inferred from the labels by default.
        #[arg(long)]
        order: Option<u8>,
    },
    /// Apply a compound operation to a tree.
    Apply {
        dag: PathBuf,
        tree: PathBuf,
        /// Leaf index (1-based); all leaves by default.
        #[arg(long)]
        leaf: Option<usize>,
    },
    /// Trees reachable in a system within `--depth` steps.
    Reach {
        system: PathBuf,
        /// Start tree; the system's initial tree by default.
        #[arg(long)]
        tree: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        depth: usize,
    },
    /// Trace language of a system up to `--maxlen` letters.
    Traces {
        system: PathBuf,
        #[arg(long)]
        maxlen: usize,
        /// Step budget; 2·maxlen + 2 by default.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Whether a system accepts a word.
    Accepts {
        system: PathBuf,
        #[arg(long)]
        word: String,
        /// Step budget; 2·|word| + 2 by default.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Automaton constructions (also spelled `auto-union`, `auto-star`, ...).
    Auto {
        #[command(subcommand)]
        op: AutoCmd,
    },
    /// Search a tuple of accepted operations mapping one tree to another.
    Relates {
        automaton: PathBuf,
        source: PathBuf,
        target: PathBuf,
        /// Maximal number of transitions fired.
        #[arg(long, default_value_t = 12)]
        budget: usize,
        /// Maximal number of operations in the tuple.
        #[arg(long, default_value_t = 2)]
        tuple: usize,
        #[arg(long)]
        max_vertices: Option<usize>,
    },
    /// Leaf-code encoding of a tree of order at least 2.
    Encode { tree: PathBuf },
    /// Rebuild a tree from its leaf codes.
    Decode { leafset: PathBuf },
    /// DOT rendering of a tree, DAG, automaton or system neighbourhood.
    ExportDot {
        file: PathBuf,
        /// Neighbourhood depth for systems.
        #[arg(long, default_value_t = 2)]
        depth: usize,
    },
    /// Built-in example documents.
    Example { name: Example },
    /// Random documents; the seed is taken from HOSTREE_SEED.
    Corpus {
        kind: CorpusKind,
        #[arg(long, default_value_t = 5)]
        count: usize,
        /// Size of each item: vertices, states or nodes.
        #[arg(long, default_value_t = 4)]
        size: usize,
    },
}

#[derive(Subcommand)]
enum AutoCmd {
    Union { a: PathBuf, b: PathBuf },
    Intersect { a: PathBuf, b: PathBuf },
    Star { a: PathBuf },
    /// Whether the automaton accepts a DAG, with the labelling found.
    Accepts { automaton: PathBuf, dag: PathBuf },
    /// Accepted DAGs up to `--max-vertices` vertices.
    Enumerate {
        automaton: PathBuf,
        #[arg(long, default_value_t = 4)]
        max_vertices: usize,
    },
    /// Normalization pipeline; the result records the state partition.
    Normalize {
        automaton: PathBuf,
        /// Tree label symbols, added to the automaton's own.
        #[arg(long, default_value = "")]
        alphabet: String,
        /// Stack bound used for orders above 2.
        #[arg(long, default_value_t = 3)]
        max_atoms: usize,
        /// Include every intermediate stage.
        #[arg(long)]
        stages: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Example {
    Fig2Dag,
    Fig2Tree,
    Fig1Tree,
    Fig1Codes,
    Shuffle,
}

#[derive(Clone, Copy, ValueEnum)]
enum CorpusKind {
    Dags,
    Automata,
    Trees,
}

struct Report {
    body: Value,
    summary: String,
    code: u8,
    dot: Option<String>,
}

impl Report {
    fn new(command: &str, fields: Value, summary: impl Into<String>) -> Report {
        let mut body = envelope("report", fields);
        body["command"] = json!(command);
        Report { body, summary: summary.into(), code: 0, dot: None }
    }

    fn doc(body: Value, summary: impl Into<String>) -> Report {
        Report { body, summary: summary.into(), code: 0, dot: None }
    }

    fn negative(mut self, no: bool) -> Report {
        if no {
            self.code = 2;
        }
        self
    }
}

fn inferred_order(d: &OpDag) -> u8 {
    d.edges()
        .iter()
        .filter_map(|e| match &e.label {
            hostree::op_dag::EdgeLabel::Op(op) => Some(op.level() + 1),
            _ => None,
        })
        .max()
        .unwrap_or(1)
        .max(1)
}

fn symbols(s: &str) -> Vec<Symbol> {
    s.chars().filter(|c| !c.is_whitespace() && *c != ',').map(Symbol).collect()
}

fn check(cond: bool, msg: &str) -> Result<(), Failure> {
    if cond {
        Ok(())
    } else {
        Err(Failure::Usage(msg.into()))
    }
}

fn trees(ts: impl IntoIterator<Item = StackTree>) -> Vec<String> {
    ts.into_iter().map(|t| t.to_text()).collect()
}

fn run(cmd: Cmd) -> Result<Report, Failure> {
    match cmd {
        Cmd::CheckDag { dag, order } => {
            let d = doc::read_dag(&dag)?;
            let order = order.unwrap_or_else(|| inferred_order(&d));
            let compound = d.is_compound();
            let reduced = compound && d.is_reduced(order);
            let decompositions = if compound { d.all_decompositions(64).len() } else { 0 };
            let mut r = Report::new(
                "check-dag",
                json!({
                    "compound": compound,
                    "reduced": reduced,
                    "order": order,
                    "vertices": d.vertex_count(),
                    "inputs": d.inputs().len(),
                    "outputs": d.outputs().len(),
                    "decompositions": decompositions,
                }),
                format!("compound: {compound}, reduced: {reduced}"),
            )
            .negative(!compound);
            r.dot = Some(d.to_dot("dag"));
            Ok(r)
        }
        Cmd::Apply { dag, tree, leaf } => {
            let d = doc::read_dag(&dag)?;
            let t = doc::read_tree(&tree)?;
            let results: Vec<StackTree> = match leaf {
                Some(i) => {
                    check(i >= 1 && i <= t.leaf_count(), "leaf index out of range")?;
                    d.apply_at(i, &t).map_err(|e| parse_err(&dag, e))?.into_iter().collect()
                }
                None => d.apply_all(&t).map_err(|e| parse_err(&dag, e))?.into_iter().collect(),
            };
            let n = results.len();
            Ok(Report::new("apply", json!({ "leaf": leaf, "results": trees(results) }), format!("{n} result(s)"))
                .negative(n == 0))
        }
        Cmd::Reach { system, tree, depth } => {
            let g = doc::read_system(&system)?;
            let t0 = match tree {
                Some(p) => doc::read_tree(&p)?,
                None => g.initial.clone().ok_or_else(|| parse_err(&system, "no initial tree; pass --tree"))?,
            };
            let reach = g.reachable(&t0, depth);
            let n = reach.len();
            let mut r = Report::new(
                "reach",
                json!({ "start": t0.to_text(), "depth": depth, "trees": trees(reach) }),
                format!("{n} tree(s) within {depth} step(s)"),
            );
            r.dot = Some(g.neighborhood_dot(&t0, depth));
            Ok(r)
        }
        Cmd::Traces { system, maxlen, budget } => {
            let g = doc::read_system(&system)?;
            let t0 = g.initial.clone().ok_or_else(|| parse_err(&system, "system has no initial tree"))?;
            let tr = g.trace_language(&t0, &g.finals, maxlen, budget);
            let n = tr.words.len();
            Ok(Report::new(
                "traces",
                json!({ "maxlen": maxlen, "steps": tr.steps, "words": tr.words }),
                format!("{n} word(s) of length at most {maxlen}"),
            ))
        }
        Cmd::Accepts { system, word, budget } => {
            let g = doc::read_system(&system)?;
            let t0 = g.initial.clone().ok_or_else(|| parse_err(&system, "system has no initial tree"))?;
            let steps = budget.unwrap_or_else(|| default_trace_steps(word.chars().count()));
            let yes = g.accepts_word_within(&t0, &g.finals, &word, steps);
            Ok(Report::new(
                "accepts",
                json!({ "word": word, "steps": steps, "accepted": yes }),
                format!("accepted: {yes}"),
            )
            .negative(!yes))
        }
        Cmd::Auto { op } => run_auto(op),
        Cmd::Relates { automaton, source, target, budget, tuple, max_vertices } => {
            let a = doc::read_automaton(&automaton)?;
            let s = doc::read_tree(&source)?;
            let t = doc::read_tree(&target)?;
            let b = Budget { max_steps: Some(budget), max_tuple: tuple, max_vertices, ..Budget::default() };
            let (answer, witness) = match a.relates(&s, &t, &b) {
                Outcome::Found(w) => (
                    "yes",
                    json!({
                        "indices": w.indices,
                        "dags": w.dags.iter().map(OpDag::to_text).collect::<Vec<_>>(),
                        "labellings": w.labellings,
                    }),
                ),
                Outcome::No => ("no", Value::Null),
                Outcome::Unknown => ("unknown", Value::Null),
            };
            let mut r = Report::new(
                "relates",
                json!({ "answer": answer, "witness": witness }),
                format!("related: {answer}"),
            );
            r.code = match answer {
                "yes" => 0,
                "no" => 2,
                _ => 3,
            };
            Ok(r)
        }
        Cmd::Encode { tree } => {
            let t = doc::read_tree(&tree)?;
            let x = encode_tree(&t).map_err(|e| parse_err(&tree, e))?;
            let codes: Vec<String> = x.iter().map(Stack::compact).collect();
            Ok(Report::doc(envelope("leafset", json!({ "codes": codes })), format!("{} code(s)", x.len())))
        }
        Cmd::Decode { leafset } => {
            let x = doc::read_leaf_set(&leafset)?;
            Ok(match decode(&x) {
                Ok(t) => Report::new("decode", json!({ "tree": t.to_text() }), "decoded"),
                Err(v) => {
                    Report::new("decode", json!({ "violation": v.to_string() }), format!("rejected: {v}")).negative(true)
                }
            })
        }
        Cmd::ExportDot { file, depth } => {
            let (kind, v) = doc::read_doc(&file, &["tree", "dag", "automaton", "normalized", "system"])?;
            let dot = match kind.as_str() {
                "tree" => doc::tree_from(&file, &v)?.to_dot("tree"),
                "dag" => OpDag::from_json(&v).map_err(|e| parse_err(&file, e))?.to_dot("dag"),
                "system" => {
                    let g = doc::read_system(&file)?;
                    let t0 = g.initial.clone().ok_or_else(|| parse_err(&file, "system has no initial tree"))?;
                    g.neighborhood_dot(&t0, depth)
                }
                _ => doc::read_automaton(&file)?.to_dot("automaton"),
            };
            Ok(Report::doc(Value::String(dot), format!("DOT for a {kind}")))
        }
        Cmd::Example { name } => Ok(Report::doc(example(name), "example document")),
        Cmd::Corpus { kind, count, size } => corpus(kind, count, size),
    }
}

fn run_auto(op: AutoCmd) -> Result<Report, Failure> {
    match op {
        AutoCmd::Union { a, b } => {
            let x = doc::read_automaton(&a)?;
            let y = doc::read_automaton(&b)?;
            let u = x.union(&y).map_err(|e| parse_err(&b, e))?;
            Ok(automaton_report(u, "union"))
        }
        AutoCmd::Intersect { a, b } => {
            let x = doc::read_automaton(&a)?;
            let y = doc::read_automaton(&b)?;
            let p = x.intersect(&y).map_err(|e| parse_err(&b, e))?;
            Ok(automaton_report(p, "intersection"))
        }
        AutoCmd::Star { a } => Ok(automaton_report(doc::read_automaton(&a)?.star(), "star")),
        AutoCmd::Accepts { automaton, dag } => {
            let a = doc::read_automaton(&automaton)?;
            let d = doc::read_dag(&dag)?;
            let labelling = a.accepts(&d).map_err(|e| parse_err(&dag, e))?;
            let yes = labelling.is_some();
            Ok(Report::new(
                "auto-accepts",
                json!({ "accepted": yes, "labelling": labelling }),
                format!("accepted: {yes}"),
            )
            .negative(!yes))
        }
        AutoCmd::Enumerate { automaton, max_vertices } => {
            let a = doc::read_automaton(&automaton)?;
            let ds = a.enumerate_accepted(max_vertices).map_err(|e| Failure::Usage(e.to_string()))?;
            let n = ds.len();
            Ok(Report::new(
                "auto-enumerate",
                json!({ "max_vertices": max_vertices, "dags": ds.iter().map(OpDag::to_text).collect::<Vec<_>>() }),
                format!("{n} accepted DAG(s)"),
            ))
        }
        AutoCmd::Normalize { automaton, alphabet, max_atoms, stages } => {
            let a = doc::read_automaton(&automaton)?;
            let mut cfg = NormConfig::new(&symbols(&alphabet));
            cfg.max_atoms = max_atoms;
            let err = |e: hostree::normalization::NormError| parse_err(&automaton, e);
            let (last, all) = if stages {
                let all = pipeline(&a, &cfg).map_err(err)?;
                (all.last().cloned().expect("seven stages"), Some(all))
            } else {
                (normalize(&a, &cfg).map_err(err)?, None)
            };
            let mut body = normalized_json(&last);
            if let Some(all) = all {
                body["stages"] = json!(all.iter().map(normalized_json).collect::<Vec<_>>());
            }
            let summary = format!("normalized automaton with {} state(s)", last.automaton.n_states());
            let mut r = Report::doc(envelope("normalized", body), summary);
            r.dot = Some(last.automaton.to_dot("normalized"));
            Ok(r)
        }
    }
}

fn normalized_json(p: &hostree::normalization::PartitionedAutomaton) -> Value {
    let mut v = p.to_json();
    v["automaton"] = doc::automaton_doc(&p.automaton);
    v
}

fn automaton_report(a: OperationAutomaton, what: &str) -> Report {
    let summary = format!("{what}: {} state(s), {} transition(s)", a.n_states(), a.transition_count());
    let mut r = Report::doc(doc::automaton_doc(&a), summary);
    r.dot = Some(a.to_dot(what));
    r
}

fn example(name: Example) -> Value {
    let parse = |s: &str| StackTree::parse_text(s).expect("example tree");
    match name {
        Example::Fig2Dag => {
            let top = OpDag::chain([StackOp::Ncop(1), StackOp::rew('b', 'c')]);
            let d = hostree::op_dag::build::branch(
                &top,
                &OpDag::stack_op(StackOp::rew('c', 'a')),
                &OpDag::stack_op(StackOp::Cop(1)),
            )
            .expect("shape");
            doc::dag_doc(&d)
        }
        Example::Fig2Tree => doc::tree_doc(&parse("node([bbb], node([bbb]), node([aabb]))")),
        Example::Fig1Tree => doc::tree_doc(&parse(
            "node([[aa][bab]], node([[aa][aaa]], node([[ab]])), \
             node([[aa][a][b]], node([[ba][ba][b]]), node([[abb][ab]])))",
        )),
        Example::Fig1Codes => {
            let t = parse(
                "node([[aa][bab]], node([[aa][aaa]], node([[ab]])), \
                 node([[aa][a][b]], node([[ba][ba][b]]), node([[abb][ab]])))",
            );
            let codes: Vec<String> = encode_tree(&t).expect("order 3").iter().map(Stack::compact).collect();
            envelope("leafset", json!({ "codes": codes }))
        }
        Example::Shuffle => doc::system_doc(&shuffle_system(&['a', 'b']).expect("valid system")),
    }
}

fn corpus(kind: CorpusKind, count: usize, size: usize) -> Result<Report, Failure> {
    let seed = match std::env::var("HOSTREE_SEED") {
        Ok(s) => s.trim().parse().map_err(|_| Failure::Usage(format!("HOSTREE_SEED must be an integer, got {s:?}")))?,
        Err(_) => 0,
    };
    check(size >= 1, "--size must be positive")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ab = [Symbol('a'), Symbol('b')];
    let items: Vec<Value> = match kind {
        CorpusKind::Dags => (0..count).map(|_| doc::dag_doc(&random_dag(2, &ab, size, &mut rng))).collect(),
        CorpusKind::Automata => (0..count)
            .map(|_| doc::automaton_doc(&OperationAutomaton::random(2, size, 2 * size, &ab, &mut rng)))
            .collect(),
        CorpusKind::Trees => {
            let labels = enumerate_stacks(1, &ab, 3);
            (0..count).map(|_| doc::tree_doc(&random_tree(&labels, size, &mut rng))).collect()
        }
    };
    let n = items.len();
    Ok(Report::new("corpus", json!({ "seed": seed, "items": items }), format!("{n} item(s) from seed {seed}")))
}

/// `auto-union a b` is accepted as `auto union a b`.
fn split_auto(args: Vec<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len() + 1);
    let mut done = false;
    for (k, a) in args.into_iter().enumerate() {
        if !done && k > 0 && !a.starts_with('-') {
            done = true;
            if let Some(rest) = a.strip_prefix("auto-") {
                out.push("auto".to_string());
                out.push(rest.to_string());
                continue;
            }
        }
        out.push(a);
    }
    out
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse_from(split_auto(std::env::args().collect())) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 64 } else { 0 });
        }
    };
    let result = run(cli.cmd).and_then(|r| {
        let text = match &r.body {
            Value::String(s) => s.clone(),
            v => serde_json::to_string_pretty(v).expect("json") + "\n",
        };
        match &cli.out {
            Some(p) => write(p, &text)?,
            None => print!("{text}"),
        }
        if let (Some(p), Some(d)) = (&cli.dot, &r.dot) {
            write(p, d)?;
        }
        Ok(r)
    });
    match result {
        Ok(r) => {
            eprintln!("{}", r.summary);
            ExitCode::from(r.code)
        }
        Err(f) => {
            eprintln!("hostree: {f}");
            ExitCode::from(f.code())
        }
    }
}
