//! Ground stack-tree rewriting systems: labelled compound operations, bounded
//! exploration of the rewriting graph, word acceptance and trace languages.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use serde_json::{json, Value};
use thiserror::Error;

use crate::exec::Exec;
use crate::op_dag::{build, DagError, EdgeLabel, OpDag};
use crate::stack_tree::{PlainTree, StackTree, TreeError};
use crate::stacks::{Alphabet, Stack, StackError, StackOp, Symbol, TestLanguage};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RewriteError {
    #[error("rule {0} is not a compound operation")]
    NotCompound(String),
    #[error("rule {rule} uses an operation of level {level} in a system of order {order}")]
    Level { rule: String, level: u8, order: u8 },
    #[error("rule {rule} uses symbol {sym} outside the alphabet")]
    Symbol { rule: String, sym: Symbol },
    #[error("system format error: {0}")]
    Format(String),
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Stack(#[from] StackError),
}

/// A labelled rule; `label == None` is the erasing label ε.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rule {
    pub name: String,
    pub dag: OpDag,
    pub label: Option<char>,
}

/// Node constraint of a [`TreePattern`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodePattern {
    Exact(Stack),
    Test(Arc<TestLanguage>),
    Any,
}

/// Tree-shaped pattern; a tree matches when it has the same shape and every
/// node label satisfies the node constraint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreePattern {
    pub node: NodePattern,
    pub children: Vec<TreePattern>,
}

impl TreePattern {
    pub fn new(node: NodePattern, children: Vec<TreePattern>) -> Result<TreePattern, TreeError> {
        if children.len() > crate::stack_tree::MAX_ARITY {
            return Err(TreeError::Arity(children.len()));
        }
        Ok(TreePattern { node, children })
    }

    pub fn exact(t: &StackTree) -> TreePattern {
        TreePattern {
            node: NodePattern::Exact(t.label().clone()),
            children: t.children().iter().map(TreePattern::exact).collect(),
        }
    }

    pub fn matches(&self, t: &StackTree) -> bool {
        let here = match &self.node {
            NodePattern::Exact(s) => s == t.label(),
            NodePattern::Test(l) => l.contains_stack(t.label()).unwrap_or(false),
            NodePattern::Any => true,
        };
        here && self.children.len() == t.children().len()
            && self.children.iter().zip(t.children()).all(|(p, c)| p.matches(c))
    }

    pub fn to_json(&self) -> Value {
        let label = match &self.node {
            NodePattern::Exact(s) => json!(s.compact()),
            NodePattern::Test(l) => json!({ "test": l.describe() }),
            NodePattern::Any => json!("*"),
        };
        json!({ "label": label, "children": self.children.iter().map(TreePattern::to_json).collect::<Vec<_>>() })
    }

    pub fn from_json(v: &Value) -> Result<TreePattern, RewriteError> {
        let bad = |m: &str| RewriteError::Format(m.into());
        let node = match v.get("label") {
            Some(Value::String(s)) if s == "*" => NodePattern::Any,
            Some(Value::String(s)) => NodePattern::Exact(Stack::parse(s)?),
            Some(o @ Value::Object(_)) => {
                let d = o.get("test").and_then(Value::as_str).ok_or_else(|| bad("pattern test must be a string"))?;
                NodePattern::Test(Arc::new(TestLanguage::parse_described(d)?))
            }
            _ => return Err(bad("pattern node needs a label")),
        };
        let children = match v.get("children") {
            None => Vec::new(),
            Some(Value::Array(cs)) => cs.iter().map(TreePattern::from_json).collect::<Result<_, _>>()?,
            _ => return Err(bad("children must be an array")),
        };
        Ok(TreePattern::new(node, children)?)
    }
}

/// Result of a bounded trace-language computation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Traces {
    pub words: BTreeSet<String>,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gstrs {
    pub order: u8,
    pub alphabet: Alphabet,
    pub rules: Vec<Rule>,
    pub initial: Option<StackTree>,
    pub finals: Vec<TreePattern>,
}

impl Gstrs {
    pub fn new(order: u8, alphabet: Alphabet, rules: Vec<Rule>) -> Result<Gstrs, RewriteError> {
        let g = Gstrs { order, alphabet, rules, initial: None, finals: Vec::new() };
        g.validate()?;
        Ok(g)
    }

    pub fn with_query(mut self, initial: StackTree, finals: Vec<TreePattern>) -> Gstrs {
        self.initial = Some(initial);
        self.finals = finals;
        self
    }

    pub fn validate(&self) -> Result<(), RewriteError> {
        for r in &self.rules {
            if !r.dag.is_compound() {
                return Err(RewriteError::NotCompound(r.name.clone()));
            }
            for e in r.dag.edges() {
                let EdgeLabel::Op(op) = &e.label else { continue };
                if op.level() >= self.order {
                    return Err(RewriteError::Level { rule: r.name.clone(), level: op.level(), order: self.order });
                }
                if let StackOp::Rew(a, b) = op {
                    for s in [a, b] {
                        if !self.alphabet.contains(*s) {
                            return Err(RewriteError::Symbol { rule: r.name.clone(), sym: *s });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dags(&self) -> Vec<OpDag> {
        self.rules.iter().map(|r| r.dag.clone()).collect()
    }

    /// Labelled edges leaving `t`.
    pub fn successors(&self, t: &StackTree) -> BTreeSet<(Option<char>, StackTree)> {
        self.successors_with(t, Exec::Sequential)
    }

    pub fn successors_with(&self, t: &StackTree, exec: Exec) -> BTreeSet<(Option<char>, StackTree)> {
        exec.flat_map(&self.rules, |r| {
            r.dag
                .apply_all(t)
                .map(|s| s.into_iter().map(|u| (r.label, u)).collect::<Vec<_>>())
                .unwrap_or_default()
        })
        .into_iter()
        .collect()
    }

    /// Trees reachable from `t0` in at most `depth` steps.
    pub fn reachable(&self, t0: &StackTree, depth: usize) -> BTreeSet<StackTree> {
        self.reachable_with(t0, depth, Exec::Sequential)
    }

    pub fn reachable_with(&self, t0: &StackTree, depth: usize, exec: Exec) -> BTreeSet<StackTree> {
        let mut seen: BTreeSet<StackTree> = BTreeSet::from([t0.clone()]);
        let mut frontier = vec![t0.clone()];
        for _ in 0..depth {
            let next = exec.flat_map(&frontier, |t| {
                self.successors(t).into_iter().map(|(_, u)| u).collect::<Vec<_>>()
            });
            frontier = next.into_iter().filter(|u| seen.insert(u.clone())).collect();
            frontier.sort();
            frontier.dedup();
            if frontier.is_empty() {
                break;
            }
        }
        seen
    }

    /// Whether some path of at most `max_steps` edges labelled `w` leads from
    /// `t0` to a tree matching one of `finals`.
    pub fn accepts_word_within(
        &self,
        t0: &StackTree,
        finals: &[TreePattern],
        w: &str,
        max_steps: usize,
    ) -> bool {
        let w: Vec<char> = w.chars().collect();
        let mut seen: HashSet<(StackTree, usize)> = HashSet::from([(t0.clone(), 0)]);
        let mut frontier = vec![(t0.clone(), 0usize)];
        for step in 0..=max_steps {
            if frontier.iter().any(|(t, k)| *k == w.len() && finals.iter().any(|p| p.matches(t))) {
                return true;
            }
            if step == max_steps {
                break;
            }
            let mut next = Vec::new();
            for (t, k) in &frontier {
                for (l, u) in self.successors(t) {
                    let k2 = match l {
                        None => *k,
                        Some(c) if w.get(*k) == Some(&c) => k + 1,
                        Some(_) => continue,
                    };
                    if seen.insert((u.clone(), k2)) {
                        next.push((u, k2));
                    }
                }
            }
            frontier = next;
        }
        false
    }

    /// [`accepts_word_within`](Self::accepts_word_within) with the default
    /// step budget `2|w| + 2`.
    pub fn accepts_word(&self, t0: &StackTree, finals: &[TreePattern], w: &str) -> bool {
        let n = w.chars().count();
        self.accepts_word_within(t0, finals, w, default_trace_steps(n))
    }

    /// Accepted words of length at most `maxlen` along paths of at most
    /// `max_steps` edges (default `2·maxlen + 2`).
    pub fn trace_language(
        &self,
        t0: &StackTree,
        finals: &[TreePattern],
        maxlen: usize,
        max_steps: Option<usize>,
    ) -> Traces {
        self.trace_language_with(t0, finals, maxlen, max_steps, Exec::Sequential)
    }

    pub fn trace_language_with(
        &self,
        t0: &StackTree,
        finals: &[TreePattern],
        maxlen: usize,
        max_steps: Option<usize>,
        exec: Exec,
    ) -> Traces {
        let steps = max_steps.unwrap_or_else(|| default_trace_steps(maxlen));
        let mut words = BTreeSet::new();
        let mut seen: HashSet<(StackTree, String)> = HashSet::from([(t0.clone(), String::new())]);
        let mut frontier = vec![(t0.clone(), String::new())];
        for step in 0..=steps {
            for (t, w) in &frontier {
                if finals.iter().any(|p| p.matches(t)) {
                    words.insert(w.clone());
                }
            }
            if step == steps || frontier.is_empty() {
                break;
            }
            let expanded = exec.flat_map(&frontier, |(t, w)| {
                self.successors(t)
                    .into_iter()
                    .filter_map(|(l, u)| {
                        let mut w2 = w.clone();
                        if let Some(c) = l {
                            if w.chars().count() >= maxlen {
                                return None;
                            }
                            w2.push(c);
                        }
                        Some((u, w2))
                    })
                    .collect::<Vec<_>>()
            });
            frontier = expanded.into_iter().filter(|x| seen.insert(x.clone())).collect();
        }
        Traces { words, steps }
    }

    /// DOT rendering of the rewriting graph within `depth` steps of `t0`;
    /// node ids follow the canonical tree order.
    pub fn neighborhood_dot(&self, t0: &StackTree, depth: usize) -> String {
        let nodes: Vec<StackTree> = self.reachable(t0, depth).into_iter().collect();
        let id: BTreeMap<&StackTree, usize> = nodes.iter().enumerate().map(|(k, t)| (t, k)).collect();
        let mut s = String::from("digraph rewriting {\n  node [shape=box];\n");
        for (k, t) in nodes.iter().enumerate() {
            let extra = if t == t0 { ", style=bold" } else { "" };
            s.push_str(&format!("  n{k} [label=\"{}\"{extra}];\n", escape(&t.to_text())));
        }
        for (k, t) in nodes.iter().enumerate() {
            for (l, u) in self.successors(t) {
                if let Some(j) = id.get(&u) {
                    let l = l.map(String::from).unwrap_or_else(|| "ε".into());
                    s.push_str(&format!("  n{k} -> n{j} [label=\"{l}\"];\n"));
                }
            }
        }
        s.push_str("}\n");
        s
    }

    pub fn to_json(&self) -> Value {
        let mut v = json!({
            "order": self.order,
            "alphabet": self.alphabet.symbols().iter().map(|s| s.0).collect::<String>(),
            "rules": self.rules.iter().map(|r| json!({
                "name": r.name,
                "label": r.label.map(String::from),
                "dag": r.dag.to_json(),
            })).collect::<Vec<_>>(),
            "finals": self.finals.iter().map(TreePattern::to_json).collect::<Vec<_>>(),
        });
        if let Some(t) = &self.initial {
            v["initial"] = t.to_json();
        }
        v
    }

    pub fn from_json(v: &Value) -> Result<Gstrs, RewriteError> {
        let bad = |m: &str| RewriteError::Format(m.into());
        let order = v.get("order").and_then(Value::as_u64).ok_or_else(|| bad("missing order"))? as u8;
        let alphabet = Alphabet::new(
            v.get("alphabet").and_then(Value::as_str).ok_or_else(|| bad("missing alphabet"))?.chars(),
        )?;
        let mut rules = Vec::new();
        for (k, r) in v.get("rules").and_then(Value::as_array).ok_or_else(|| bad("missing rules"))?.iter().enumerate() {
            let name = r.get("name").and_then(Value::as_str).map(String::from).unwrap_or_else(|| format!("r{}", k + 1));
            let label = match r.get("label") {
                None | Some(Value::Null) => None,
                Some(Value::String(s)) if s.is_empty() => None,
                Some(Value::String(s)) if s.chars().count() == 1 => s.chars().next(),
                _ => return Err(bad("rule label must be one character, empty or null")),
            };
            let dag = OpDag::from_json(r.get("dag").ok_or_else(|| bad("rule without dag"))?)?;
            rules.push(Rule { name, dag, label });
        }
        let mut g = Gstrs::new(order, alphabet, rules)?;
        if let Some(t) = v.get("initial") {
            g.initial = Some(StackTree::from_json(t)?);
        }
        if let Some(Value::Array(fs)) = v.get("finals") {
            g.finals = fs.iter().map(TreePattern::from_json).collect::<Result<_, _>>()?;
        }
        Ok(g)
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

pub fn default_trace_steps(maxlen: usize) -> usize {
    2 * maxlen + 2
}

pub const UP: char = '↑';
pub const DOWN: char = '↓';

/// The shuffle-square acceptor over `sigma`: rules `P_a`, `Dupl`, `D_a`, the
/// initial tree `[↓]` and final trees with two leaves `[↑]`.
pub fn shuffle_system(sigma: &[char]) -> Result<Gstrs, RewriteError> {
    let alphabet = Alphabet::new(sigma.iter().copied().chain([UP, DOWN]))?;
    let mut rules = Vec::new();
    for &a in sigma {
        rules.push(Rule {
            name: format!("P_{a}"),
            dag: OpDag::chain([StackOp::rew(DOWN, a), StackOp::Cop(1), StackOp::rew(a, DOWN)]),
            label: None,
        });
    }
    let e = OpDag::emptydag();
    let up = build::lin(&e, EdgeLabel::Op(StackOp::rew(DOWN, UP)), &e).expect("shape");
    rules.push(Rule { name: "Dupl".into(), dag: build::branch(&e, &up, &up).expect("shape"), label: None });
    for &a in sigma {
        rules.push(Rule {
            name: format!("D_{a}"),
            dag: OpDag::chain([StackOp::rew(UP, a), StackOp::Ncop(1), StackOp::rew(a, UP)]),
            label: Some(a),
        });
    }
    let leaf_up = TreePattern { node: NodePattern::Exact(Stack::word(&UP.to_string())), children: vec![] };
    let fin = TreePattern { node: NodePattern::Any, children: vec![leaf_up.clone(), leaf_up] };
    Ok(Gstrs::new(2, alphabet, rules)?.with_query(StackTree::leaf(Stack::word(&DOWN.to_string())), vec![fin]))
}

/// A ground tree rewriting rule over symbol-labelled trees.
pub type GtrsRule = (PlainTree<Symbol>, PlainTree<Symbol>);

/// Order-1 compound operation replacing a subtree equal to `lhs` by `rhs`:
/// `lhs` is destructed bottom-up, its root relabelled, then `rhs` built
/// top-down.
pub fn compile_gtrs_rule(lhs: &PlainTree<Symbol>, rhs: &PlainTree<Symbol>) -> OpDag {
    fn op(a: Symbol, b: Symbol) -> EdgeLabel {
        EdgeLabel::Op(StackOp::Rew(a, b))
    }
    fn destruct(t: &PlainTree<Symbol>) -> OpDag {
        let e = OpDag::emptydag();
        let up = |c: &PlainTree<Symbol>| build::lin(&destruct(c), op(c.label, t.label), &e).expect("shape");
        match t.children.as_slice() {
            [] => e,
            [c] => build::lin(&up(c), EdgeLabel::Codir(1), &e).expect("shape"),
            [c1, c2] => build::merge(&up(c1), &up(c2), &e).expect("shape"),
            _ => panic!("arity above two"),
        }
    }
    fn construct(t: &PlainTree<Symbol>) -> OpDag {
        let e = OpDag::emptydag();
        let down = |c: &PlainTree<Symbol>| build::lin(&e, op(t.label, c.label), &construct(c)).expect("shape");
        match t.children.as_slice() {
            [] => e,
            [c] => build::lin(&e, EdgeLabel::Dir(1), &down(c)).expect("shape"),
            [c1, c2] => build::branch(&e, &down(c1), &down(c2)).expect("shape"),
            _ => panic!("arity above two"),
        }
    }
    build::lin(&destruct(lhs), op(lhs.label, rhs.label), &construct(rhs)).expect("shape")
}

/// Order-1 Gstrs with one unlabelled-by-default rule per GTRS rule.
pub fn compile_gtrs(alphabet: Alphabet, rules: &[GtrsRule]) -> Result<Gstrs, RewriteError> {
    let rules = rules
        .iter()
        .enumerate()
        .map(|(k, (l, r))| Rule { name: format!("g{}", k + 1), dag: compile_gtrs_rule(l, r), label: None })
        .collect();
    Gstrs::new(1, alphabet, rules)
}
