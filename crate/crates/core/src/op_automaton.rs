//! Operation automata: acceptance by consistent labelling, bounded
//! enumeration of accepted operations, closure constructions and the induced
//! relation on stack trees.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use rand::Rng;
use serde_json::{json, Value};
use thiserror::Error;

use crate::exec::Exec;
use crate::op_dag::{build, DagError, DagKey, EdgeLabel, OpDag, RedChecker};
use crate::stack_tree::StackTree;
use crate::stacks::{StackOp, Symbol, TestLanguage};

pub type State = u32;

/// Largest vertex bound accepted by [`OperationAutomaton::enumerate_accepted`].
pub const MAX_ENUM_VERTICES: usize = 12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AutError {
    #[error("automata of different orders ({0} and {1})")]
    OrderMismatch(u8, u8),
    #[error("state {0} is not declared")]
    BadState(State),
    #[error("enumeration bound {0} exceeds {MAX_ENUM_VERTICES}")]
    Bound(usize),
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error("automaton format error: {0}")]
    Format(String),
}

/// Label of a linear transition.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LinLabel {
    Op(StackOp),
    Copy1,
    Barcopy1,
}

impl LinLabel {
    pub fn edge_label(&self) -> EdgeLabel {
        match self {
            LinLabel::Op(op) => EdgeLabel::Op(op.clone()),
            LinLabel::Copy1 => EdgeLabel::Dir(1),
            LinLabel::Barcopy1 => EdgeLabel::Codir(1),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            LinLabel::Op(op) => op.describe(),
            LinLabel::Copy1 => "copy1".into(),
            LinLabel::Barcopy1 => "barcopy1".into(),
        }
    }

    pub fn parse(s: &str) -> Result<LinLabel, AutError> {
        match s.trim() {
            "copy1" | "1" => Ok(LinLabel::Copy1),
            "barcopy1" | "~1" => Ok(LinLabel::Barcopy1),
            other => StackOp::parse(other)
                .map(LinLabel::Op)
                .map_err(|e| AutError::Format(e.to_string())),
        }
    }

    pub fn is_test(&self) -> bool {
        matches!(self, LinLabel::Op(StackOp::Test(_)))
    }
}

impl fmt::Debug for LinLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinLabel::Op(op) => write!(f, "{op:?}"),
            other => f.write_str(&other.describe()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OperationAutomaton {
    pub order: u8,
    pub names: Vec<String>,
    pub initial: BTreeSet<State>,
    pub finals: BTreeSet<State>,
    pub lin: BTreeSet<(State, LinLabel, State)>,
    pub branch: BTreeSet<(State, State, State)>,
    pub merge: BTreeSet<(State, State, State)>,
}

/// Vertex constraint derived from a DAG: one transition must match it.
#[derive(Clone, Debug)]
enum Constraint {
    Lin(u32, LinLabel, u32),
    Branch(u32, u32, u32),
    Merge(u32, u32, u32),
}

fn dag_constraints(d: &OpDag) -> Vec<Constraint> {
    let mut out = Vec::new();
    for v in 0..d.vertex_count() as u32 {
        let outs: Vec<_> = d.out_edges(v).collect();
        let d1 = outs.iter().find(|e| e.label == EdgeLabel::Dir(1));
        let d2 = outs.iter().find(|e| e.label == EdgeLabel::Dir(2));
        if let (Some(a), Some(b)) = (d1, d2) {
            out.push(Constraint::Branch(v, a.to, b.to));
        }
        let ins: Vec<_> = d.in_edges(v).collect();
        let c1 = ins.iter().find(|e| e.label == EdgeLabel::Codir(1));
        let c2 = ins.iter().find(|e| e.label == EdgeLabel::Codir(2));
        if let (Some(a), Some(b)) = (c1, c2) {
            out.push(Constraint::Merge(a.from, b.from, v));
        }
    }
    for e in d.edges() {
        match &e.label {
            EdgeLabel::Op(op) => out.push(Constraint::Lin(e.from, LinLabel::Op(op.clone()), e.to)),
            EdgeLabel::Dir(1) if d.out_edges(e.from).count() == 1 => {
                out.push(Constraint::Lin(e.from, LinLabel::Copy1, e.to))
            }
            EdgeLabel::Codir(1) if d.in_edges(e.to).count() == 1 => {
                out.push(Constraint::Lin(e.from, LinLabel::Barcopy1, e.to))
            }
            _ => {}
        }
    }
    out
}

/// Dense bitset over states.
#[derive(Clone, PartialEq, Eq)]
struct Bits(Vec<u64>);

impl Bits {
    fn empty(n: usize) -> Bits {
        Bits(vec![0; n.div_ceil(64).max(1)])
    }
    fn full(n: usize) -> Bits {
        let mut b = Bits::empty(n);
        for i in 0..n {
            b.set(i as u32);
        }
        b
    }
    fn set(&mut self, i: State) {
        self.0[i as usize / 64] |= 1 << (i % 64);
    }
    fn has(&self, i: State) -> bool {
        self.0[i as usize / 64] >> (i % 64) & 1 == 1
    }
    fn and(&mut self, o: &Bits) {
        self.0.iter_mut().zip(&o.0).for_each(|(a, b)| *a &= b);
    }
    fn count(&self) -> u32 {
        self.0.iter().map(|w| w.count_ones()).sum()
    }
    fn iter(&self) -> impl Iterator<Item = State> + '_ {
        self.0.iter().enumerate().flat_map(|(k, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    None
                } else {
                    let b = w.trailing_zeros();
                    w &= w - 1;
                    Some(k as u32 * 64 + b)
                }
            })
        })
    }
}

/// Shape class of a partial DAG during enumeration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Kind {
    /// inputs initial, outputs final
    Whole,
    /// inputs initial, one open output
    Top,
    /// one open input, outputs final
    Bottom,
    /// one open input, one open output
    Mid,
}

impl Kind {
    fn open_in(self) -> bool {
        matches!(self, Kind::Bottom | Kind::Mid)
    }
    fn open_out(self) -> bool {
        matches!(self, Kind::Top | Kind::Mid)
    }
    fn from_open(open_in: bool, open_out: bool) -> Kind {
        match (open_in, open_out) {
            (false, false) => Kind::Whole,
            (false, true) => Kind::Top,
            (true, false) => Kind::Bottom,
            (true, true) => Kind::Mid,
        }
    }
}

#[derive(Clone)]
struct Part {
    dag: OpDag,
    labels: Vec<State>,
    open_in: State,
    open_out: State,
}

const NONE: State = State::MAX;

impl OperationAutomaton {
    pub fn new(order: u8, n_states: usize) -> OperationAutomaton {
        OperationAutomaton {
            order,
            names: (0..n_states).map(|q| format!("q{q}")).collect(),
            initial: BTreeSet::new(),
            finals: BTreeSet::new(),
            lin: BTreeSet::new(),
            branch: BTreeSet::new(),
            merge: BTreeSet::new(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.names.len()
    }

    pub fn add_state(&mut self, name: impl Into<String>) -> State {
        self.names.push(name.into());
        (self.names.len() - 1) as State
    }

    pub fn transition_count(&self) -> usize {
        self.lin.len() + self.branch.len() + self.merge.len()
    }

    pub fn validate(&self) -> Result<(), AutError> {
        let n = self.n_states() as State;
        let states = self
            .initial
            .iter()
            .chain(&self.finals)
            .copied()
            .chain(self.lin.iter().flat_map(|(p, _, q)| [*p, *q]))
            .chain(self.branch.iter().flat_map(|&(a, b, c)| [a, b, c]))
            .chain(self.merge.iter().flat_map(|&(a, b, c)| [a, b, c]));
        for q in states {
            if q >= n {
                return Err(AutError::BadState(q));
            }
        }
        Ok(())
    }

    /// Symbols mentioned by rewrite transitions and test languages.
    pub fn symbols(&self) -> Vec<Symbol> {
        let mut s = BTreeSet::new();
        for (_, l, _) in &self.lin {
            match l {
                LinLabel::Op(StackOp::Rew(a, b)) => {
                    s.insert(*a);
                    s.insert(*b);
                }
                LinLabel::Op(StackOp::Test(t)) => s.extend(t.symbols().iter().copied()),
                _ => {}
            }
        }
        s.into_iter().collect()
    }

    /// A consistent labelling of `d`, if any.
    pub fn accepts(&self, d: &OpDag) -> Result<Option<Vec<State>>, AutError> {
        if !d.is_compound() {
            return Err(DagError::NotCompound.into());
        }
        Ok(self.label_dag(d))
    }

    fn label_dag(&self, d: &OpDag) -> Option<Vec<State>> {
        let n = self.n_states();
        if n == 0 {
            return None;
        }
        let mut doms: Vec<Bits> = vec![Bits::full(n); d.vertex_count()];
        let mut init = Bits::empty(n);
        self.initial.iter().for_each(|&q| init.set(q));
        let mut fin = Bits::empty(n);
        self.finals.iter().for_each(|&q| fin.set(q));
        for v in d.inputs() {
            doms[v as usize].and(&init);
        }
        for v in d.outputs() {
            doms[v as usize].and(&fin);
        }
        let cons = dag_constraints(d);
        let mut by_label: HashMap<&LinLabel, Vec<(State, State)>> = HashMap::new();
        for (p, l, q) in &self.lin {
            by_label.entry(l).or_default().push((*p, *q));
        }
        let search = LabelSearch { aut: self, cons: &cons, by_label: &by_label, n };
        search.solve(doms)
    }

    /// All compound DAGs with at most `max_vertices` vertices accepted by the
    /// automaton, one per isomorphism class, ordered by key.
    pub fn enumerate_accepted(&self, max_vertices: usize) -> Result<Vec<OpDag>, AutError> {
        if max_vertices > MAX_ENUM_VERTICES {
            return Err(AutError::Bound(max_vertices));
        }
        Ok(self.enumerate_labelled(max_vertices).into_values().collect())
    }

    fn enumerate_labelled(&self, k: usize) -> BTreeMap<DagKey, OpDag> {
        let kinds = [Kind::Whole, Kind::Top, Kind::Bottom, Kind::Mid];
        // parts[n][kind]
        let mut parts: Vec<HashMap<Kind, Vec<Part>>> = vec![HashMap::new(); k + 1];
        let mut by_out: Vec<HashMap<(Kind, State), Vec<usize>>> = vec![HashMap::new(); k + 1];
        let mut by_in: Vec<HashMap<(Kind, State), Vec<usize>>> = vec![HashMap::new(); k + 1];
        let useful = self.useful_states();
        for n in 1..=k {
            let mut fresh: HashMap<Kind, Vec<Part>> = HashMap::new();
            let mut seen: HashMap<Kind, HashSet<(DagKey, Vec<State>)>> = HashMap::new();
            let mut push = |kind: Kind, p: Part| {
                let key = p.dag.labelled_key(&p.labels);
                if seen.entry(kind).or_default().insert(key) {
                    fresh.entry(kind).or_default().push(p);
                }
            };
            if n == 1 {
                for q in 0..self.n_states() as State {
                    if !useful[q as usize] {
                        continue;
                    }
                    let one = |oi, oo| Part {
                        dag: OpDag::emptydag(),
                        labels: vec![q],
                        open_in: oi,
                        open_out: oo,
                    };
                    let i = self.initial.contains(&q);
                    let f = self.finals.contains(&q);
                    if i && f {
                        push(Kind::Whole, one(NONE, NONE));
                    }
                    if i {
                        push(Kind::Top, one(NONE, q));
                    }
                    if f {
                        push(Kind::Bottom, one(q, NONE));
                    }
                    push(Kind::Mid, one(q, q));
                }
            }
            let get = |parts: &Vec<HashMap<Kind, Vec<Part>>>, m: usize, kind: Kind, idx: usize| {
                parts[m][&kind][idx].clone()
            };
            let lookup = |index: &Vec<HashMap<(Kind, State), Vec<usize>>>, m: usize, kind: Kind, s: State| {
                index[m].get(&(kind, s)).cloned().unwrap_or_default()
            };
            for &x in &kinds {
                let top_kind = Kind::from_open(x.open_in(), true);
                let bottom_kind = Kind::from_open(true, x.open_out());
                // linear edge
                for n1 in 1..n {
                    let n2 = n - n1;
                    for (p, l, q) in &self.lin {
                        for &a in &lookup(&by_out, n1, top_kind, *p) {
                            let top = get(&parts, n1, top_kind, a);
                            for &b in &lookup(&by_in, n2, bottom_kind, *q) {
                                let bottom = get(&parts, n2, bottom_kind, b);
                                let dag = build::lin(&top.dag, l.edge_label(), &bottom.dag).expect("shape");
                                let mut labels = top.labels.clone();
                                labels.extend(&bottom.labels);
                                push(x, Part { dag, labels, open_in: top.open_in, open_out: bottom.open_out });
                            }
                        }
                    }
                }
                // branch: two or more outputs
                if !x.open_out() {
                    for n1 in 1..n {
                        for n2 in 1..n - n1 {
                            let n3 = n - n1 - n2;
                            for &(p, q, r) in &self.branch {
                                for &a in &lookup(&by_out, n1, top_kind, p) {
                                    let top = get(&parts, n1, top_kind, a);
                                    for &b in &lookup(&by_in, n2, Kind::Bottom, q) {
                                        let left = get(&parts, n2, Kind::Bottom, b);
                                        for &c in &lookup(&by_in, n3, Kind::Bottom, r) {
                                            let right = get(&parts, n3, Kind::Bottom, c);
                                            let dag = build::branch(&top.dag, &left.dag, &right.dag)
                                                .expect("shape");
                                            let mut labels = top.labels.clone();
                                            labels.extend(&left.labels);
                                            labels.extend(&right.labels);
                                            push(x, Part { dag, labels, open_in: top.open_in, open_out: NONE });
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                // merge: two or more inputs
                if !x.open_in() {
                    for n1 in 1..n {
                        for n2 in 1..n - n1 {
                            let n3 = n - n1 - n2;
                            for &(p, q, r) in &self.merge {
                                for &a in &lookup(&by_out, n1, Kind::Top, p) {
                                    let left = get(&parts, n1, Kind::Top, a);
                                    for &b in &lookup(&by_out, n2, Kind::Top, q) {
                                        let right = get(&parts, n2, Kind::Top, b);
                                        for &c in &lookup(&by_in, n3, bottom_kind, r) {
                                            let bottom = get(&parts, n3, bottom_kind, c);
                                            let dag = build::merge(&left.dag, &right.dag, &bottom.dag)
                                                .expect("shape");
                                            let mut labels = left.labels.clone();
                                            labels.extend(&right.labels);
                                            labels.extend(&bottom.labels);
                                            push(x, Part { dag, labels, open_in: NONE, open_out: bottom.open_out });
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                // diamond
                if n >= 4 {
                    for &(p, q1, q2) in &self.branch {
                        for &(r1, r2, w) in &self.merge {
                            for n1 in 1..n {
                                for n2 in 1..n - n1 {
                                    for n3 in 1..n - n1 - n2 {
                                        let n4 = n - n1 - n2 - n3;
                                        if n4 == 0 {
                                            continue;
                                        }
                                        for &a in &lookup(&by_out, n1, top_kind, p) {
                                            let top = get(&parts, n1, top_kind, a);
                                            for &b in &lookup(&by_in, n2, Kind::Mid, q1) {
                                                let left = get(&parts, n2, Kind::Mid, b);
                                                if left.open_out != r1 {
                                                    continue;
                                                }
                                                for &c in &lookup(&by_in, n3, Kind::Mid, q2) {
                                                    let right = get(&parts, n3, Kind::Mid, c);
                                                    if right.open_out != r2 {
                                                        continue;
                                                    }
                                                    for &e in &lookup(&by_in, n4, bottom_kind, w) {
                                                        let bottom = get(&parts, n4, bottom_kind, e);
                                                        let dag = build::diamond(
                                                            &top.dag,
                                                            &left.dag,
                                                            &right.dag,
                                                            &bottom.dag,
                                                        )
                                                        .expect("shape");
                                                        let mut labels = top.labels.clone();
                                                        labels.extend(&left.labels);
                                                        labels.extend(&right.labels);
                                                        labels.extend(&bottom.labels);
                                                        push(
                                                            x,
                                                            Part {
                                                                dag,
                                                                labels,
                                                                open_in: top.open_in,
                                                                open_out: bottom.open_out,
                                                            },
                                                        );
                                                    }
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            for (kind, list) in &fresh {
                for (idx, p) in list.iter().enumerate() {
                    if kind.open_out() {
                        by_out[n].entry((*kind, p.open_out)).or_default().push(idx);
                    }
                    if kind.open_in() {
                        by_in[n].entry((*kind, p.open_in)).or_default().push(idx);
                    }
                }
            }
            parts[n] = fresh;
        }
        let mut out = BTreeMap::new();
        for level in parts.iter() {
            if let Some(ws) = level.get(&Kind::Whole) {
                for p in ws {
                    out.entry(p.dag.iso_key()).or_insert_with(|| p.dag.clone());
                }
            }
        }
        out
    }

    /// Checks that every labelled walk of at most `max_len` edges through
    /// useful states spells a word of `Red_order`. Every path of an accepted
    /// DAG is such a walk, so success certifies that all accepted DAGs with at
    /// most `max_len + 1` vertices are reduced. On failure returns a walk
    /// outside `Red_order`, which need not occur in an accepted DAG.
    pub fn reduced_walks(&self, max_len: usize) -> Result<(), Vec<EdgeLabel>> {
        let red = RedChecker::new(self.order);
        let useful = self.useful_states();
        let mut out: HashMap<State, Vec<(EdgeLabel, State)>> = HashMap::new();
        for (p, l, q) in &self.lin {
            out.entry(*p).or_default().push((l.edge_label(), *q));
        }
        for &(p, q, r) in &self.branch {
            out.entry(p).or_default().push((EdgeLabel::Dir(1), q));
            out.entry(p).or_default().push((EdgeLabel::Dir(2), r));
        }
        for &(p, q, r) in &self.merge {
            out.entry(p).or_default().push((EdgeLabel::Codir(1), r));
            out.entry(q).or_default().push((EdgeLabel::Codir(2), r));
        }
        // (state, dfa state) -> parent index and label
        let mut nodes: Vec<(State, u32, usize, Option<EdgeLabel>, usize)> = Vec::new();
        let mut seen: HashSet<(State, u32)> = HashSet::new();
        for q in 0..self.n_states() as State {
            if useful[q as usize] && seen.insert((q, red.start())) {
                nodes.push((q, red.start(), usize::MAX, None, 0));
            }
        }
        let walk = |nodes: &Vec<(State, u32, usize, Option<EdgeLabel>, usize)>, mut k: usize| {
            let mut w = Vec::new();
            while k != usize::MAX {
                if let Some(l) = &nodes[k].3 {
                    w.push(l.clone());
                }
                k = nodes[k].2;
            }
            w.reverse();
            w
        };
        let mut head = 0;
        while head < nodes.len() {
            let (p, d, _, _, len) = nodes[head].clone();
            let idx = head;
            head += 1;
            if len == max_len {
                continue;
            }
            for (l, q) in out.get(&p).map(Vec::as_slice).unwrap_or(&[]) {
                if !useful[*q as usize] {
                    continue;
                }
                let next = red.step(d, l);
                match next {
                    Some(e) if red.accepting(e) => {
                        if seen.insert((*q, e)) {
                            nodes.push((*q, e, idx, Some(l.clone()), len + 1));
                        }
                    }
                    _ => {
                        let mut w = walk(&nodes, idx);
                        w.push(l.clone());
                        return Err(w);
                    }
                }
            }
        }
        Ok(())
    }

    /// Over-approximation of states occurring in some accepted operation.
    pub fn useful_states(&self) -> Vec<bool> {
        let n = self.n_states();
        let mut acc = vec![false; n];
        self.initial.iter().for_each(|&q| acc[q as usize] = true);
        loop {
            let mut changed = false;
            let mut mark = |q: State, acc: &mut Vec<bool>| {
                if !acc[q as usize] {
                    acc[q as usize] = true;
                    changed = true;
                }
            };
            for (p, _, q) in &self.lin {
                if acc[*p as usize] {
                    mark(*q, &mut acc);
                }
            }
            for &(p, q, r) in &self.branch {
                if acc[p as usize] {
                    mark(q, &mut acc);
                    mark(r, &mut acc);
                }
            }
            for &(p, q, r) in &self.merge {
                if acc[p as usize] && acc[q as usize] {
                    mark(r, &mut acc);
                }
            }
            if !changed {
                break;
            }
        }
        let mut co = vec![false; n];
        self.finals.iter().for_each(|&q| co[q as usize] = true);
        loop {
            let mut changed = false;
            let mut mark = |q: State, co: &mut Vec<bool>| {
                if !co[q as usize] {
                    co[q as usize] = true;
                    changed = true;
                }
            };
            for (p, _, q) in &self.lin {
                if co[*q as usize] {
                    mark(*p, &mut co);
                }
            }
            for &(p, q, r) in &self.branch {
                if co[q as usize] && co[r as usize] {
                    mark(p, &mut co);
                }
            }
            for &(p, q, r) in &self.merge {
                if co[r as usize] && acc[p as usize] && acc[q as usize] {
                    mark(p, &mut co);
                    mark(q, &mut co);
                }
            }
            if !changed {
                break;
            }
        }
        (0..n).map(|q| acc[q] && co[q]).collect()
    }

    /// Restriction to useful states, renumbered in order.
    pub fn trim(&self) -> OperationAutomaton {
        let useful = self.useful_states();
        let mut map = vec![NONE; self.n_states()];
        let mut out = OperationAutomaton::new(self.order, 0);
        for q in 0..self.n_states() {
            if useful[q] {
                map[q] = out.add_state(self.names[q].clone());
            }
        }
        let m = |q: &State| map[*q as usize];
        let ok = |qs: &[State]| qs.iter().all(|q| map[*q as usize] != NONE);
        out.initial = self.initial.iter().filter(|q| ok(&[**q])).map(m).collect();
        out.finals = self.finals.iter().filter(|q| ok(&[**q])).map(m).collect();
        out.lin = self
            .lin
            .iter()
            .filter(|(p, _, q)| ok(&[*p, *q]))
            .map(|(p, l, q)| (m(p), l.clone(), m(q)))
            .collect();
        out.branch = self
            .branch
            .iter()
            .filter(|(a, b, c)| ok(&[*a, *b, *c]))
            .map(|(a, b, c)| (m(a), m(b), m(c)))
            .collect();
        out.merge = self
            .merge
            .iter()
            .filter(|(a, b, c)| ok(&[*a, *b, *c]))
            .map(|(a, b, c)| (m(a), m(b), m(c)))
            .collect();
        out
    }

    fn shifted(&self, by: State) -> OperationAutomaton {
        let s = |q: &State| q + by;
        OperationAutomaton {
            order: self.order,
            names: self.names.clone(),
            initial: self.initial.iter().map(s).collect(),
            finals: self.finals.iter().map(s).collect(),
            lin: self.lin.iter().map(|(p, l, q)| (p + by, l.clone(), q + by)).collect(),
            branch: self.branch.iter().map(|(a, b, c)| (a + by, b + by, c + by)).collect(),
            merge: self.merge.iter().map(|(a, b, c)| (a + by, b + by, c + by)).collect(),
        }
    }

    /// Disjoint union.
    pub fn union(&self, other: &OperationAutomaton) -> Result<OperationAutomaton, AutError> {
        if self.order != other.order {
            return Err(AutError::OrderMismatch(self.order, other.order));
        }
        let mut out = self.clone();
        out.names = self.names.iter().map(|n| format!("L.{n}")).collect();
        let o = other.shifted(self.n_states() as State);
        out.names.extend(other.names.iter().map(|n| format!("R.{n}")));
        out.initial.extend(o.initial);
        out.finals.extend(o.finals);
        out.lin.extend(o.lin);
        out.branch.extend(o.branch);
        out.merge.extend(o.merge);
        Ok(out)
    }

    /// Adds a sink state when some transition is missing for the given labels.
    pub fn complete(&self, labels: &BTreeSet<LinLabel>) -> OperationAutomaton {
        let n = self.n_states() as State;
        let mut out = self.clone();
        let sink = n;
        let mut needed = false;
        let has_lin: HashSet<(State, &LinLabel)> = self.lin.iter().map(|(p, l, _)| (*p, l)).collect();
        let has_branch: HashSet<State> = self.branch.iter().map(|t| t.0).collect();
        let has_merge: HashSet<(State, State)> = self.merge.iter().map(|t| (t.0, t.1)).collect();
        for p in 0..n {
            for l in labels {
                if !has_lin.contains(&(p, l)) {
                    out.lin.insert((p, l.clone(), sink));
                    needed = true;
                }
            }
            if !has_branch.contains(&p) {
                out.branch.insert((p, sink, sink));
                needed = true;
            }
            for q in 0..n {
                if !has_merge.contains(&(p, q)) {
                    out.merge.insert((p, q, sink));
                    needed = true;
                }
            }
        }
        if !needed && n > 0 {
            return self.clone();
        }
        out.names.push("sink".into());
        for l in labels {
            out.lin.insert((sink, l.clone(), sink));
        }
        out.branch.insert((sink, sink, sink));
        for q in 0..=n {
            out.merge.insert((sink, q, sink));
            out.merge.insert((q, sink, sink));
        }
        out
    }

    /// Product construction after completing both operands.
    pub fn intersect(&self, other: &OperationAutomaton) -> Result<OperationAutomaton, AutError> {
        if self.order != other.order {
            return Err(AutError::OrderMismatch(self.order, other.order));
        }
        let labels: BTreeSet<LinLabel> =
            self.lin.iter().chain(&other.lin).map(|(_, l, _)| l.clone()).collect();
        let a = self.complete(&labels);
        let b = other.complete(&labels);
        let nb = b.n_states() as State;
        let pair = |p: State, q: State| p * nb + q;
        let mut out = OperationAutomaton::new(self.order, 0);
        for p in &a.names {
            for q in &b.names {
                out.names.push(format!("({p},{q})"));
            }
        }
        for &p in &a.initial {
            for &q in &b.initial {
                out.initial.insert(pair(p, q));
            }
        }
        for &p in &a.finals {
            for &q in &b.finals {
                out.finals.insert(pair(p, q));
            }
        }
        let mut b_lin: HashMap<&LinLabel, Vec<(State, State)>> = HashMap::new();
        for (p, l, q) in &b.lin {
            b_lin.entry(l).or_default().push((*p, *q));
        }
        for (p1, l, q1) in &a.lin {
            for (p2, q2) in b_lin.get(l).into_iter().flatten() {
                out.lin.insert((pair(*p1, *p2), l.clone(), pair(*q1, *q2)));
            }
        }
        for &(p1, q1, r1) in &a.branch {
            for &(p2, q2, r2) in &b.branch {
                out.branch.insert((pair(p1, p2), pair(q1, q2), pair(r1, r2)));
            }
        }
        for &(p1, q1, r1) in &a.merge {
            for &(p2, q2, r2) in &b.merge {
                out.merge.insert((pair(p1, p2), pair(q1, q2), pair(r1, r2)));
            }
        }
        Ok(out)
    }

    /// Iteration: a fresh initial and final state, and copies of every
    /// transition ending in a final state redirected to each initial state.
    pub fn star(&self) -> OperationAutomaton {
        let mut out = self.clone();
        let q = out.add_state("star");
        let fa = &self.finals;
        let ia = &self.initial;
        for (p, l, f) in &self.lin {
            if fa.contains(f) {
                for &i in ia {
                    out.lin.insert((*p, l.clone(), i));
                }
            }
        }
        for &(p1, p2, f) in &self.merge {
            if fa.contains(&f) {
                for &i in ia {
                    out.merge.insert((p1, p2, i));
                }
            }
        }
        for &(p, l, r) in &self.branch {
            if fa.contains(&r) {
                for &i in ia {
                    out.branch.insert((p, l, i));
                }
            }
            if fa.contains(&l) {
                for &i in ia {
                    out.branch.insert((p, i, r));
                }
            }
            if fa.contains(&l) && fa.contains(&r) {
                for &i in ia {
                    for &j in ia {
                        out.branch.insert((p, i, j));
                    }
                }
            }
        }
        out.initial.insert(q);
        out.finals.insert(q);
        out
    }

    /// Automaton accepting exactly `d`: states are its vertices.
    pub fn singleton(d: &OpDag, order: u8) -> Result<OperationAutomaton, AutError> {
        if !d.is_compound() {
            return Err(DagError::NotCompound.into());
        }
        let mut a = OperationAutomaton::new(order, d.vertex_count());
        a.names = (1..=d.vertex_count()).map(|v| format!("v{v}")).collect();
        a.initial = d.inputs().into_iter().collect();
        a.finals = d.outputs().into_iter().collect();
        for c in dag_constraints(d) {
            match c {
                Constraint::Lin(p, l, q) => {
                    a.lin.insert((p, l, q));
                }
                Constraint::Branch(p, q, r) => {
                    a.branch.insert((p, q, r));
                }
                Constraint::Merge(p, q, r) => {
                    a.merge.insert((p, q, r));
                }
            }
        }
        Ok(a)
    }

    /// Union of singletons.
    pub fn from_dags(dags: &[OpDag], order: u8) -> Result<OperationAutomaton, AutError> {
        let mut acc = OperationAutomaton::new(order, 0);
        for d in dags {
            let s = OperationAutomaton::singleton(d, order)?;
            acc = if acc.n_states() == 0 { s } else { acc.union(&s)? };
        }
        Ok(acc)
    }

    /// Derivation automaton of a system: the union of its rule DAGs, labels erased.
    pub fn from_system(g: &crate::rewriting::Gstrs) -> Result<OperationAutomaton, AutError> {
        OperationAutomaton::from_dags(&g.dags(), g.order)
    }

    /// Random automaton with `n_states` states and about `n_transitions`
    /// transitions drawn over rewrites of `symbols`, `cop(1)`/`ncop(1)` when
    /// `order ≥ 2`, top-symbol tests, copy1, barcopy1, branches and merges.
    pub fn random<R: Rng>(
        order: u8,
        n_states: usize,
        n_transitions: usize,
        symbols: &[Symbol],
        rng: &mut R,
    ) -> OperationAutomaton {
        let mut a = OperationAutomaton::new(order, n_states.max(1));
        let n = a.n_states() as State;
        let q = |rng: &mut R| rng.gen_range(0..n);
        a.initial.insert(0);
        a.finals.insert(q(rng));
        if rng.gen_bool(0.3) {
            a.initial.insert(q(rng));
        }
        let level = order.saturating_sub(1);
        for _ in 0..n_transitions {
            let (p, r) = (q(rng), q(rng));
            let sym = |rng: &mut R| symbols[rng.gen_range(0..symbols.len())];
            match rng.gen_range(0..10) {
                0..=2 => {
                    let (x, y) = (sym(rng), sym(rng));
                    a.lin.insert((p, LinLabel::Op(StackOp::Rew(x, y)), r));
                }
                3 if order >= 2 => {
                    a.lin.insert((p, LinLabel::Op(StackOp::Cop(1)), r));
                }
                4 if order >= 2 => {
                    a.lin.insert((p, LinLabel::Op(StackOp::Ncop(1)), r));
                }
                5 => {
                    let t = TestLanguage::top_symbol_in(level, symbols, &[sym(rng)]);
                    a.lin.insert((p, LinLabel::Op(StackOp::test(t)), r));
                }
                6 => {
                    a.lin.insert((p, LinLabel::Copy1, r));
                }
                7 => {
                    a.lin.insert((p, LinLabel::Barcopy1, r));
                }
                8 => {
                    a.branch.insert((p, r, q(rng)));
                }
                _ => {
                    a.merge.insert((p, r, q(rng)));
                }
            }
        }
        a
    }

    pub fn to_json(&self) -> Value {
        json!({
            "order": self.order,
            "states": self.names,
            "initial": self.initial.iter().collect::<Vec<_>>(),
            "final": self.finals.iter().collect::<Vec<_>>(),
            "transitions": self.lin.iter().map(|(p, l, q)| json!({"lin": [p, l.describe(), q]}))
                .chain(self.branch.iter().map(|(p, q, r)| json!({"branch": [p, [q, r]]})))
                .chain(self.merge.iter().map(|(p, q, r)| json!({"merge": [[p, q], r]})))
                .collect::<Vec<_>>(),
        })
    }

    /// DOT rendering; branch and merge transitions go through point nodes.
    pub fn to_dot(&self, name: &str) -> String {
        let mut s = format!("digraph \"{name}\" {{\n  node [shape=circle];\n");
        for q in 0..self.n_states() {
            let shape = if self.finals.contains(&(q as State)) { ", shape=doublecircle" } else { "" };
            s.push_str(&format!("  q{q} [label=\"{}\"{shape}];\n", self.names[q]));
            if self.initial.contains(&(q as State)) {
                s.push_str(&format!("  i{q} [shape=point];\n  i{q} -> q{q};\n"));
            }
        }
        for (p, l, q) in &self.lin {
            s.push_str(&format!("  q{p} -> q{q} [label=\"{}\"];\n", l.describe().replace('"', "'")));
        }
        for (k, (p, q, r)) in self.branch.iter().enumerate() {
            s.push_str(&format!(
                "  b{k} [shape=point];\n  q{p} -> b{k} [arrowhead=none];\n  b{k} -> q{q} [label=\"1\", style=dashed];\n  b{k} -> q{r} [label=\"2\", style=dashed];\n"
            ));
        }
        for (k, (p, q, r)) in self.merge.iter().enumerate() {
            s.push_str(&format!(
                "  m{k} [shape=point];\n  q{p} -> m{k} [label=\"1\", style=dotted];\n  q{q} -> m{k} [label=\"2\", style=dotted];\n  m{k} -> q{r};\n"
            ));
        }
        s.push_str("}\n");
        s
    }

    pub fn from_json(v: &Value) -> Result<OperationAutomaton, AutError> {
        let bad = |m: &str| AutError::Format(m.into());
        let order = v.get("order").and_then(Value::as_u64).ok_or_else(|| bad("missing order"))? as u8;
        let names: Vec<String> = match v.get("states") {
            Some(Value::Array(a)) => a.iter().map(|x| x.as_str().map(String::from).ok_or_else(|| bad("state names must be strings"))).collect::<Result<_, _>>()?,
            Some(Value::Number(n)) => (0..n.as_u64().unwrap_or(0)).map(|q| format!("q{q}")).collect(),
            _ => return Err(bad("missing states")),
        };
        let mut a = OperationAutomaton::new(order, 0);
        a.names = names;
        let st = |x: &Value| x.as_u64().map(|q| q as State).ok_or_else(|| bad("state must be a number"));
        let set = |key: &str| -> Result<BTreeSet<State>, AutError> {
            v.get(key).and_then(Value::as_array).ok_or_else(|| bad(&format!("missing {key}")))?.iter().map(st).collect()
        };
        a.initial = set("initial")?;
        a.finals = set("final")?;
        for t in v.get("transitions").and_then(Value::as_array).ok_or_else(|| bad("missing transitions"))? {
            if let Some(l) = t.get("lin").and_then(Value::as_array).filter(|l| l.len() == 3) {
                let label = LinLabel::parse(l[1].as_str().ok_or_else(|| bad("lin label must be a string"))?)?;
                a.lin.insert((st(&l[0])?, label, st(&l[2])?));
            } else if let Some(b) = t.get("branch").and_then(Value::as_array).filter(|b| b.len() == 2) {
                let pair = b[1].as_array().filter(|x| x.len() == 2).ok_or_else(|| bad("branch targets"))?;
                a.branch.insert((st(&b[0])?, st(&pair[0])?, st(&pair[1])?));
            } else if let Some(m) = t.get("merge").and_then(Value::as_array).filter(|m| m.len() == 2) {
                let pair = m[0].as_array().filter(|x| x.len() == 2).ok_or_else(|| bad("merge sources"))?;
                a.merge.insert((st(&pair[0])?, st(&pair[1])?, st(&m[1])?));
            } else {
                return Err(bad("transition must be lin, branch or merge"));
            }
        }
        a.validate()?;
        Ok(a)
    }
}

struct LabelSearch<'a> {
    aut: &'a OperationAutomaton,
    cons: &'a [Constraint],
    by_label: &'a HashMap<&'a LinLabel, Vec<(State, State)>>,
    n: usize,
}

impl LabelSearch<'_> {
    /// Arc consistency to a fixpoint; false on a wipe-out.
    fn propagate(&self, doms: &mut [Bits]) -> bool {
        loop {
            let mut changed = false;
            for c in self.cons {
                match c {
                    Constraint::Lin(x, l, y) => {
                        let mut nx = Bits::empty(self.n);
                        let mut ny = Bits::empty(self.n);
                        for &(p, q) in self.by_label.get(l).map(Vec::as_slice).unwrap_or(&[]) {
                            if doms[*x as usize].has(p) && doms[*y as usize].has(q) {
                                nx.set(p);
                                ny.set(q);
                            }
                        }
                        changed |= Self::narrow(&mut doms[*x as usize], nx);
                        changed |= Self::narrow(&mut doms[*y as usize], ny);
                    }
                    Constraint::Branch(x, y, z) | Constraint::Merge(x, y, z) => {
                        let ts = if matches!(c, Constraint::Branch(..)) {
                            &self.aut.branch
                        } else {
                            &self.aut.merge
                        };
                        let mut nx = Bits::empty(self.n);
                        let mut ny = Bits::empty(self.n);
                        let mut nz = Bits::empty(self.n);
                        for &(a, b, d) in ts {
                            if doms[*x as usize].has(a) && doms[*y as usize].has(b) && doms[*z as usize].has(d) {
                                nx.set(a);
                                ny.set(b);
                                nz.set(d);
                            }
                        }
                        changed |= Self::narrow(&mut doms[*x as usize], nx);
                        changed |= Self::narrow(&mut doms[*y as usize], ny);
                        changed |= Self::narrow(&mut doms[*z as usize], nz);
                    }
                }
            }
            if doms.iter().any(|d| d.count() == 0) {
                return false;
            }
            if !changed {
                return true;
            }
        }
    }

    fn narrow(d: &mut Bits, n: Bits) -> bool {
        let mut m = d.clone();
        m.and(&n);
        let changed = m != *d;
        *d = m;
        changed
    }

    fn solve(&self, mut doms: Vec<Bits>) -> Option<Vec<State>> {
        if !self.propagate(&mut doms) {
            return None;
        }
        let pick = (0..doms.len()).filter(|&v| doms[v].count() > 1).min_by_key(|&v| doms[v].count());
        match pick {
            None => Some(doms.iter().map(|d| d.iter().next().unwrap()).collect()),
            Some(v) => {
                for q in doms[v].iter().collect::<Vec<_>>() {
                    let mut next = doms.clone();
                    next[v] = Bits::empty(self.n);
                    next[v].set(q);
                    if let Some(sol) = self.solve(next) {
                        return Some(sol);
                    }
                }
                None
            }
        }
    }
}

/// Bounds for the relation search.
#[derive(Clone, Debug)]
pub struct Budget {
    /// Total number of transitions fired.
    pub max_steps: Option<usize>,
    /// Number of operations in the tuple.
    pub max_tuple: usize,
    /// Total vertices over all operations.
    pub max_vertices: Option<usize>,
    /// Nodes of every intermediate tree.
    pub max_tree_nodes: Option<usize>,
    /// Symbols in every intermediate label.
    pub max_label_atoms: Option<usize>,
    /// Explored configurations before giving up with "unknown".
    pub max_configs: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_steps: Some(12),
            max_tuple: 2,
            max_vertices: None,
            max_tree_nodes: None,
            max_label_atoms: None,
            max_configs: 1_000_000,
        }
    }
}

/// A tuple of accepted operations and leaf indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Witness {
    pub dags: Vec<OpDag>,
    pub indices: Vec<usize>,
    pub labellings: Vec<Vec<State>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome<T> {
    Found(T),
    No,
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Token {
    state: State,
    piece: u8,
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct Config {
    tree: StackTree,
    tokens: Vec<Option<Token>>,
}

#[derive(Clone, Debug)]
enum Move {
    Init(Vec<Option<State>>),
    Lin { leaf: usize, label: LinLabel, to: State },
    Branch { leaf: usize, left: State, right: State },
    Merge { leaf: usize, to: State },
}

struct Node {
    config: Config,
    parent: usize,
    mv: Move,
    steps: usize,
    vertices: usize,
}

fn canon_pieces(tokens: &mut [Option<Token>]) {
    let mut map: Vec<(u8, u8)> = Vec::new();
    for t in tokens.iter_mut().flatten() {
        let id = match map.iter().find(|(o, _)| *o == t.piece) {
            Some((_, n)) => *n,
            None => {
                let n = map.len() as u8;
                map.push((t.piece, n));
                n
            }
        };
        t.piece = id;
    }
}

fn piece_count(tokens: &[Option<Token>]) -> usize {
    tokens.iter().flatten().map(|t| t.piece).collect::<BTreeSet<_>>().len()
}

/// Result of a forward relation exploration.
#[derive(Clone, Debug)]
pub struct Related {
    pub targets: BTreeSet<StackTree>,
    /// False when a budget other than the tree and label bounds cut the search.
    pub complete: bool,
}

impl OperationAutomaton {
    fn lin_from(&self) -> HashMap<State, Vec<(LinLabel, State)>> {
        let mut m: HashMap<State, Vec<(LinLabel, State)>> = HashMap::new();
        for (p, l, q) in &self.lin {
            m.entry(*p).or_default().push((l.clone(), *q));
        }
        m
    }

    fn within(&self, t: &StackTree, b: &Budget) -> bool {
        if b.max_tree_nodes.is_some_and(|m| t.node_count() > m) {
            return false;
        }
        if let Some(m) = b.max_label_atoms {
            let mut ok = true;
            fn walk(t: &StackTree, m: usize, ok: &mut bool) {
                if t.label().atom_count() > m {
                    *ok = false;
                }
                t.children().iter().for_each(|c| walk(c, m, ok));
            }
            walk(t, m, &mut ok);
            return ok;
        }
        true
    }

    /// Breadth-first exploration of runs from `s`. `goal` is called on every
    /// accepting configuration; returning true stops the search. Returns
    /// false when the configuration cap, the step bound or the vertex bound
    /// cut the search short; tree and label bounds only restrict the universe.
    fn explore(
        &self,
        s: &StackTree,
        budget: &Budget,
        mut goal: impl FnMut(&StackTree, &[Node], usize) -> bool,
    ) -> bool {
        let leaves = s.leaf_count();
        let inits: Vec<State> = self.initial.iter().copied().collect();
        let lin_from = self.lin_from();
        let mut arena: Vec<Node> = Vec::new();
        let mut seen: HashSet<(Config, usize)> = HashSet::new();
        // initial markings: each leaf unmarked or an initial state, at least one marked
        let mut assignments: Vec<Vec<Option<State>>> = vec![vec![]];
        for _ in 0..leaves {
            let mut next = Vec::new();
            for a in &assignments {
                let mut x = a.clone();
                x.push(None);
                next.push(x);
                for &q in &inits {
                    let mut y = a.clone();
                    y.push(Some(q));
                    next.push(y);
                }
            }
            assignments = next;
        }
        for a in assignments {
            let marked = a.iter().flatten().count();
            if marked == 0 {
                continue;
            }
            let mut tokens: Vec<Option<Token>> = Vec::new();
            for (k, q) in a.iter().enumerate() {
                tokens.push(q.map(|state| Token { state, piece: k as u8 }));
            }
            canon_pieces(&mut tokens);
            let config = Config { tree: s.clone(), tokens };
            let vkey = if budget.max_vertices.is_some() { marked } else { 0 };
            if seen.insert((config.clone(), vkey)) {
                arena.push(Node { config, parent: usize::MAX, mv: Move::Init(a), steps: 0, vertices: marked });
            }
        }
        let mut truncated = false;
        let mut head = 0;
        while head < arena.len() {
            if arena.len() > budget.max_configs {
                return false;
            }
            let idx = head;
            head += 1;
            let (config, steps, vertices) = {
                let n = &arena[idx];
                (n.config.clone(), n.steps, n.vertices)
            };
            let accepting = config.tokens.iter().flatten().all(|t| self.finals.contains(&t.state));
            if accepting && piece_count(&config.tokens) <= budget.max_tuple && goal(&config.tree, &arena, idx) {
                return true;
            }
            let at_limit = budget.max_steps.is_some_and(|m| steps >= m);
            let mut succ: Vec<(Config, Move, usize)> = Vec::new();
            for (i, tok) in config.tokens.iter().enumerate() {
                let Some(tok) = *tok else { continue };
                let leaf = i + 1;
                for (label, to) in lin_from.get(&tok.state).map(Vec::as_slice).unwrap_or(&[]) {
                    let tree = match label {
                        LinLabel::Op(op) => config.tree.apply_basic_at(op, leaf).ok().flatten(),
                        LinLabel::Copy1 => config.tree.duplicate_leaf(1, leaf).ok(),
                        LinLabel::Barcopy1 => config.tree.merge_leaves(1, leaf).ok().flatten(),
                    };
                    if let Some(tree) = tree {
                        let mut tokens = config.tokens.clone();
                        tokens[i] = Some(Token { state: *to, piece: tok.piece });
                        succ.push((Config { tree, tokens }, Move::Lin { leaf, label: label.clone(), to: *to }, 1));
                    }
                }
                for &(p, l, r) in self.branch.range((tok.state, 0, 0)..=(tok.state, NONE, NONE)) {
                    debug_assert_eq!(p, tok.state);
                    if let Ok(tree) = config.tree.duplicate_leaf(2, leaf) {
                        let mut tokens = config.tokens.clone();
                        tokens[i] = Some(Token { state: l, piece: tok.piece });
                        tokens.insert(i + 1, Some(Token { state: r, piece: tok.piece }));
                        succ.push((Config { tree, tokens }, Move::Branch { leaf, left: l, right: r }, 2));
                    }
                }
                if let Some(Some(next)) = config.tokens.get(i + 1) {
                    for &(_, _, r) in
                        self.merge.range((tok.state, next.state, 0)..=(tok.state, next.state, NONE))
                    {
                        if let Ok(Some(tree)) = config.tree.merge_leaves(2, leaf) {
                            let mut tokens = config.tokens.clone();
                            let (keep, gone) = (tok.piece, next.piece);
                            tokens.remove(i + 1);
                            tokens[i] = Some(Token { state: r, piece: keep });
                            for t in tokens.iter_mut().flatten() {
                                if t.piece == gone {
                                    t.piece = keep;
                                }
                            }
                            succ.push((Config { tree, tokens }, Move::Merge { leaf, to: r }, 1));
                        }
                    }
                }
            }
            if at_limit {
                truncated |= !succ.is_empty();
                continue;
            }
            for (mut c, mv, dv) in succ {
                let v = vertices + dv;
                if budget.max_vertices.is_some_and(|m| v > m) {
                    truncated = true;
                    continue;
                }
                if !self.within(&c.tree, budget) {
                    continue;
                }
                canon_pieces(&mut c.tokens);
                let vkey = if budget.max_vertices.is_some() { v } else { 0 };
                if seen.insert((c.clone(), vkey)) {
                    arena.push(Node { config: c, parent: idx, mv, steps: steps + 1, vertices: v });
                }
            }
        }
        !truncated
    }

    /// Searches a tuple of accepted operations applied in parallel mapping `s`
    /// to `t`. The witness is replayed through parallel application.
    pub fn relates(&self, s: &StackTree, t: &StackTree, budget: &Budget) -> Outcome<Witness> {
        let mut found = None;
        let finished = self.explore(s, budget, |tree, arena, idx| {
            if tree == t {
                found = Some(self.extract(s, arena, idx));
                true
            } else {
                false
            }
        });
        match found {
            Some(w) => {
                let replay = OpDag::apply_parallel(&w.dags, &w.indices, s);
                assert_eq!(replay, Ok(Some(t.clone())), "witness does not replay");
                Outcome::Found(w)
            }
            None if finished => Outcome::No,
            None => Outcome::Unknown,
        }
    }

    /// All trees related to `s` within the budget.
    pub fn related(&self, s: &StackTree, budget: &Budget) -> Related {
        let mut targets = BTreeSet::new();
        let complete = self.explore(s, budget, |tree, _, _| {
            targets.insert(tree.clone());
            false
        });
        Related { targets, complete }
    }

    /// `related` over many sources.
    pub fn related_many(&self, sources: &[StackTree], budget: &Budget, exec: Exec) -> Vec<Related> {
        exec.map(sources, |s| self.related(s, budget))
    }

    fn extract(&self, s: &StackTree, arena: &[Node], idx: usize) -> Witness {
        let mut path = vec![idx];
        while arena[*path.last().unwrap()].parent != usize::MAX {
            path.push(arena[*path.last().unwrap()].parent);
        }
        path.reverse();
        // replay moves, tracking the DAG vertex and state under each marked leaf
        let mut labels: Vec<State> = Vec::new();
        let mut edges: Vec<(u32, EdgeLabel, u32)> = Vec::new();
        let mut under: Vec<Option<u32>> = Vec::new();
        let mut input_leaf: Vec<Option<usize>> = Vec::new();
        for &k in &path {
            match &arena[k].mv {
                Move::Init(a) => {
                    for (leaf, q) in a.iter().enumerate() {
                        under.push(q.map(|q| {
                            labels.push(q);
                            input_leaf.push(Some(leaf + 1));
                            (labels.len() - 1) as u32
                        }));
                    }
                }
                Move::Lin { leaf, label, to } => {
                    let x = under[leaf - 1].expect("token");
                    labels.push(*to);
                    input_leaf.push(None);
                    let y = (labels.len() - 1) as u32;
                    edges.push((x, label.edge_label(), y));
                    under[leaf - 1] = Some(y);
                }
                Move::Branch { leaf, left, right } => {
                    let x = under[leaf - 1].expect("token");
                    labels.push(*left);
                    labels.push(*right);
                    input_leaf.push(None);
                    input_leaf.push(None);
                    let y = (labels.len() - 2) as u32;
                    edges.push((x, EdgeLabel::Dir(1), y));
                    edges.push((x, EdgeLabel::Dir(2), y + 1));
                    under[leaf - 1] = Some(y);
                    under.insert(*leaf, Some(y + 1));
                }
                Move::Merge { leaf, to } => {
                    let x = under[leaf - 1].expect("token");
                    let y = under[*leaf].expect("token");
                    labels.push(*to);
                    input_leaf.push(None);
                    let z = (labels.len() - 1) as u32;
                    edges.push((x, EdgeLabel::Codir(1), z));
                    edges.push((y, EdgeLabel::Codir(2), z));
                    under.remove(*leaf);
                    under[leaf - 1] = Some(z);
                }
            }
        }
        // connected components
        let n = labels.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            let mut y = x;
            while p[y] != r {
                let nx = p[y];
                p[y] = r;
                y = nx;
            }
            r
        }
        for (a, _, b) in &edges {
            let (ra, rb) = (find(&mut parent, *a as usize), find(&mut parent, *b as usize));
            parent[ra] = rb;
        }
        let mut comps: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for v in 0..n {
            let r = find(&mut parent, v);
            comps.entry(r).or_default().push(v);
        }
        let mut pieces: Vec<(usize, OpDag, Vec<State>)> = Vec::new();
        for vs in comps.values() {
            let first_leaf = vs.iter().filter_map(|&v| input_leaf[v]).min().expect("piece has an input");
            let local: HashMap<usize, u32> = vs.iter().enumerate().map(|(k, &v)| (v, k as u32)).collect();
            let es = edges
                .iter()
                .filter(|(a, _, _)| local.contains_key(&(*a as usize)))
                .map(|(a, l, b)| crate::op_dag::Edge {
                    from: local[&(*a as usize)],
                    label: l.clone(),
                    to: local[&(*b as usize)],
                })
                .collect();
            let dag = OpDag::new(vs.len(), es).expect("valid");
            let order = dag.decompose().expect("runs build compound operations").vertex_order();
            let canon = dag.canonical().expect("compound");
            let lab: Vec<State> = order.iter().map(|&v| labels[vs[v as usize]]).collect();
            pieces.push((first_leaf, canon, lab));
        }
        pieces.sort_by_key(|p| p.0);
        let _ = s;
        Witness {
            indices: pieces.iter().map(|p| p.0).collect(),
            dags: pieces.iter().map(|p| p.1.clone()).collect(),
            labellings: pieces.into_iter().map(|p| p.2).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::op_dag::TreeOp;

    fn rew(a: char, b: char) -> OpDag {
        OpDag::stack_op(StackOp::rew(a, b))
    }

    #[test]
    fn singleton_accepts_itself_only() {
        let d = rew('a', 'b');
        let a = OperationAutomaton::singleton(&d, 1).unwrap();
        assert_eq!(a.accepts(&d).unwrap(), Some(vec![0, 1]));
        assert_eq!(a.accepts(&rew('a', 'c')).unwrap(), None);
        let all = a.enumerate_accepted(3).unwrap();
        assert_eq!(all, vec![d]);
    }

    #[test]
    fn emptydag_acceptance() {
        let mut a = OperationAutomaton::new(1, 2);
        a.initial.insert(0);
        a.finals.insert(1);
        assert_eq!(a.accepts(&OpDag::emptydag()).unwrap(), None);
        a.finals.insert(0);
        assert!(a.accepts(&OpDag::emptydag()).unwrap().is_some());
    }

    #[test]
    fn star_contains_emptydag_and_chains() {
        let a = OperationAutomaton::singleton(&rew('a', 'a'), 1).unwrap().star();
        assert!(a.accepts(&OpDag::emptydag()).unwrap().is_some());
        let chain = OpDag::chain([StackOp::rew('a', 'a'), StackOp::rew('a', 'a')]);
        assert!(a.accepts(&chain).unwrap().is_some());
    }

    #[test]
    fn intersection_product_size() {
        let a = OperationAutomaton::singleton(&rew('a', 'b'), 1).unwrap();
        let b = OperationAutomaton::singleton(&OpDag::basic(TreeOp::Copy(2)), 1).unwrap();
        let p = a.intersect(&b).unwrap();
        assert_eq!(p.n_states(), (2 + 1) * (3 + 1));
        assert!(p.enumerate_accepted(4).unwrap().is_empty());
    }

    #[test]
    fn relates_fig2() {
        let top = OpDag::chain([StackOp::Ncop(1), StackOp::rew('b', 'c')]);
        let d = build::branch(&top, &rew('c', 'a'), &OpDag::stack_op(StackOp::Cop(1))).unwrap();
        let a = OperationAutomaton::singleton(&d, 2).unwrap();
        let t = StackTree::parse_text("node([bbb], node([bbb]), node([aabb]))").unwrap();
        let u = StackTree::parse_text("node([bbb], node([bc], node([ba]), node([bcc])), node([aabb]))").unwrap();
        match a.relates(&t, &u, &Budget::default()) {
            Outcome::Found(w) => {
                assert_eq!(w.indices, vec![1]);
                assert_eq!(w.dags, vec![d.canonical().unwrap()]);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(a.relates(&t, &t, &Budget::default()), Outcome::No);
    }

    #[test]
    fn step_bound_gives_unknown() {
        let a = OperationAutomaton::singleton(&OpDag::stack_op(StackOp::Cop(1)), 2).unwrap().star();
        let s = StackTree::parse_text("node([a])").unwrap();
        let t = StackTree::parse_text("node([b])").unwrap();
        let steps = Budget { max_steps: Some(4), ..Budget::default() };
        assert_eq!(a.relates(&s, &t, &steps), Outcome::Unknown);
        let universe = Budget { max_steps: None, max_label_atoms: Some(4), ..Budget::default() };
        assert_eq!(a.relates(&s, &t, &universe), Outcome::No);
        let r = a.related(&s, &universe);
        assert!(r.complete);
        assert_eq!(r.targets.len(), 4);
    }

    #[test]
    fn reduced_walks_detects_cancelling_pairs() {
        let bad = OperationAutomaton::singleton(&OpDag::chain([StackOp::Cop(1), StackOp::Ncop(1)]), 2).unwrap();
        assert_eq!(bad.reduced_walks(4).unwrap_err().len(), 2);
        let good = OperationAutomaton::singleton(&OpDag::chain([StackOp::Ncop(1), StackOp::Cop(1)]), 2).unwrap();
        assert!(good.reduced_walks(4).is_ok());
        assert!(good.star().reduced_walks(1).is_ok());
        assert!(good.star().reduced_walks(4).is_err());
    }

    #[test]
    fn json_round_trip() {
        let a = OperationAutomaton::singleton(&OpDag::basic(TreeOp::Barcopy(2)), 2).unwrap().star();
        assert_eq!(OperationAutomaton::from_json(&a.to_json()).unwrap(), a);
    }
}
