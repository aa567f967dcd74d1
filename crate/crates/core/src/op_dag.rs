//! Compound operations as ordered DAGs.
//!
//! Vertices are ids `0..n`; inputs and outputs are listed in id order.
//! Decomposition into the five inductive cases (single vertex, linear edge,
//! branch, merge, diamond) drives localized application. [`OpDag::canonical`]
//! renumbers a compound DAG so that id order is the left-to-right order of
//! its decomposition, which is what input and output indices refer to.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde_json::{json, Value};
use thiserror::Error;

use crate::exec::Exec;
use crate::stack_tree::{StackTree, TreeError};
use crate::stacks::{StackError, StackOp, Symbol, TestLanguage};

/// Largest DAG the decomposition search accepts.
pub const MAX_DAG_VERTICES: usize = 128;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DagError {
    #[error("index {index} out of range 1..={count}")]
    Index { index: usize, count: usize },
    #[error("the DAG is not a compound operation")]
    NotCompound,
    #[error("DAG has {0} vertices, more than the supported {MAX_DAG_VERTICES}")]
    TooLarge(usize),
    #[error("edge endpoint {0} is not a vertex")]
    BadVertex(u32),
    #[error("parallel application indices violate spacing")]
    Spacing,
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("DAG parse error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
}

impl From<StackError> for DagError {
    fn from(e: StackError) -> Self {
        DagError::Tree(TreeError::Stack(e))
    }
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeLabel {
    Op(StackOp),
    Dir(u8),
    Codir(u8),
}

impl EdgeLabel {
    pub fn describe(&self) -> String {
        match self {
            EdgeLabel::Op(op) => op.describe(),
            EdgeLabel::Dir(d) => d.to_string(),
            EdgeLabel::Codir(d) => format!("~{d}"),
        }
    }

    pub fn parse(s: &str) -> Result<EdgeLabel, StackError> {
        Ok(match s.trim() {
            "1" => EdgeLabel::Dir(1),
            "2" => EdgeLabel::Dir(2),
            "~1" | "1̄" => EdgeLabel::Codir(1),
            "~2" | "2̄" => EdgeLabel::Codir(2),
            other => EdgeLabel::Op(StackOp::parse(other)?),
        })
    }
}

impl fmt::Debug for EdgeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdgeLabel::Op(op) => write!(f, "{op:?}"),
            other => f.write_str(&other.describe()),
        }
    }
}

/// A basic tree operation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum TreeOp {
    Stack(StackOp),
    Copy(u8),
    Barcopy(u8),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub from: u32,
    pub label: EdgeLabel,
    pub to: u32,
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct OpDag {
    n: usize,
    edges: Vec<Edge>,
}

/// One level of an inductive decomposition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Decomp {
    Vertex(u32),
    Lin { top: Arc<Decomp>, edge: Edge, bottom: Arc<Decomp> },
    Branch { top: Arc<Decomp>, at: u32, left: Arc<Decomp>, right: Arc<Decomp> },
    Merge { left: Arc<Decomp>, right: Arc<Decomp>, at: u32, bottom: Arc<Decomp> },
    Diamond { top: Arc<Decomp>, left: Arc<Decomp>, right: Arc<Decomp>, bottom: Arc<Decomp> },
}

impl Decomp {
    pub fn vertex_order(&self) -> Vec<u32> {
        let mut out = Vec::new();
        self.push_order(&mut out);
        out
    }

    fn push_order(&self, out: &mut Vec<u32>) {
        match self {
            Decomp::Vertex(v) => out.push(*v),
            Decomp::Lin { top, bottom, .. } => {
                top.push_order(out);
                bottom.push_order(out);
            }
            Decomp::Branch { top, left, right, .. } => {
                top.push_order(out);
                left.push_order(out);
                right.push_order(out);
            }
            Decomp::Merge { left, right, bottom, .. } => {
                left.push_order(out);
                right.push_order(out);
                bottom.push_order(out);
            }
            Decomp::Diamond { top, left, right, bottom } => {
                for d in [top, left, right, bottom] {
                    d.push_order(out);
                }
            }
        }
    }

    pub fn inputs(&self) -> Vec<u32> {
        match self {
            Decomp::Vertex(v) => vec![*v],
            Decomp::Lin { top, .. } | Decomp::Branch { top, .. } | Decomp::Diamond { top, .. } => {
                top.inputs()
            }
            Decomp::Merge { left, right, .. } => {
                let mut v = left.inputs();
                v.extend(right.inputs());
                v
            }
        }
    }

    pub fn outputs(&self) -> Vec<u32> {
        match self {
            Decomp::Vertex(v) => vec![*v],
            Decomp::Lin { bottom, .. } | Decomp::Merge { bottom, .. } | Decomp::Diamond { bottom, .. } => {
                bottom.outputs()
            }
            Decomp::Branch { left, right, .. } => {
                let mut v = left.outputs();
                v.extend(right.outputs());
                v
            }
        }
    }

    /// Case number (1 to 5) of the top-level split.
    pub fn case(&self) -> u8 {
        match self {
            Decomp::Vertex(_) => 1,
            Decomp::Lin { .. } => 2,
            Decomp::Branch { .. } => 3,
            Decomp::Merge { .. } => 4,
            Decomp::Diamond { .. } => 5,
        }
    }
}

type Mask = u128;

fn bit(v: u32) -> Mask {
    1u128 << v
}

fn bits(m: Mask) -> impl Iterator<Item = u32> {
    let mut m = m;
    std::iter::from_fn(move || {
        if m == 0 {
            None
        } else {
            let v = m.trailing_zeros();
            m &= m - 1;
            Some(v)
        }
    })
}

/// Decomposition search over vertex subsets with memoization.
struct Search<'a> {
    dag: &'a OpDag,
    memo: HashMap<Mask, Option<Arc<Decomp>>>,
}

/// A top-level split of a vertex set: removed edge indices and parts.
enum Split {
    Lin { edge: usize, top: Mask, bottom: Mask },
    Branch { at: u32, top: Mask, left: Mask, right: Mask },
    Merge { at: u32, left: Mask, right: Mask, bottom: Mask },
    Diamond { top: Mask, left: Mask, right: Mask, bottom: Mask },
}

impl<'a> Search<'a> {
    fn new(dag: &'a OpDag) -> Self {
        Search { dag, memo: HashMap::new() }
    }

    fn inside(&self, set: Mask, e: &Edge) -> bool {
        set & bit(e.from) != 0 && set & bit(e.to) != 0
    }

    /// Component of `v` within `set` ignoring edges in `removed`.
    fn component(&self, set: Mask, removed: &[usize], v: u32) -> Mask {
        let mut comp = bit(v);
        loop {
            let before = comp;
            for (k, e) in self.dag.edges.iter().enumerate() {
                if removed.contains(&k) || !self.inside(set, e) {
                    continue;
                }
                if comp & bit(e.from) != 0 || comp & bit(e.to) != 0 {
                    comp |= bit(e.from) | bit(e.to);
                }
            }
            if comp == before {
                return comp;
            }
        }
    }

    fn sources(&self, set: Mask) -> Mask {
        let mut m = set;
        for e in &self.dag.edges {
            if self.inside(set, e) {
                m &= !bit(e.to);
            }
        }
        m
    }

    fn sinks(&self, set: Mask) -> Mask {
        let mut m = set;
        for e in &self.dag.edges {
            if self.inside(set, e) {
                m &= !bit(e.from);
            }
        }
        m
    }

    fn out_edge(&self, set: Mask, v: u32, label: &EdgeLabel) -> Option<usize> {
        self.dag.edges.iter().position(|e| e.from == v && &e.label == label && self.inside(set, e))
    }

    fn in_edge(&self, set: Mask, v: u32, label: &EdgeLabel) -> Option<usize> {
        self.dag.edges.iter().position(|e| e.to == v && &e.label == label && self.inside(set, e))
    }

    /// All valid top-level splits of `set`, in a fixed order.
    fn splits(&self, set: Mask) -> Vec<Split> {
        let mut out = Vec::new();
        let edges = &self.dag.edges;
        // case 2
        for (k, e) in edges.iter().enumerate() {
            if !self.inside(set, e) || matches!(e.label, EdgeLabel::Dir(2) | EdgeLabel::Codir(2)) {
                continue;
            }
            let top = self.component(set, &[k], e.from);
            if top & bit(e.to) != 0 {
                continue;
            }
            let bottom = self.component(set, &[k], e.to);
            if top | bottom != set {
                continue;
            }
            if self.sinks(top) == bit(e.from) && self.sources(bottom) == bit(e.to) {
                out.push(Split::Lin { edge: k, top, bottom });
            }
        }
        // case 3
        for x in bits(set) {
            let (Some(e1), Some(e2)) =
                (self.out_edge(set, x, &EdgeLabel::Dir(1)), self.out_edge(set, x, &EdgeLabel::Dir(2)))
            else {
                continue;
            };
            let (y, z) = (edges[e1].to, edges[e2].to);
            let rm = [e1, e2];
            let top = self.component(set, &rm, x);
            let left = self.component(set, &rm, y);
            let right = self.component(set, &rm, z);
            if top & (left | right) != 0 || left & right != 0 || top | left | right != set {
                continue;
            }
            if self.sinks(top) == bit(x) && self.sources(left) == bit(y) && self.sources(right) == bit(z)
            {
                out.push(Split::Branch { at: x, top, left, right });
            }
        }
        // case 4
        for z in bits(set) {
            let (Some(e1), Some(e2)) =
                (self.in_edge(set, z, &EdgeLabel::Codir(1)), self.in_edge(set, z, &EdgeLabel::Codir(2)))
            else {
                continue;
            };
            let (x, y) = (edges[e1].from, edges[e2].from);
            let rm = [e1, e2];
            let left = self.component(set, &rm, x);
            let right = self.component(set, &rm, y);
            let bottom = self.component(set, &rm, z);
            if bottom & (left | right) != 0 || left & right != 0 || left | right | bottom != set {
                continue;
            }
            if self.sinks(left) == bit(x) && self.sinks(right) == bit(y) && self.sources(bottom) == bit(z)
            {
                out.push(Split::Merge { at: z, left, right, bottom });
            }
        }
        // case 5
        for x in bits(set) {
            let (Some(e1), Some(e2)) =
                (self.out_edge(set, x, &EdgeLabel::Dir(1)), self.out_edge(set, x, &EdgeLabel::Dir(2)))
            else {
                continue;
            };
            for w in bits(set) {
                let (Some(e3), Some(e4)) = (
                    self.in_edge(set, w, &EdgeLabel::Codir(1)),
                    self.in_edge(set, w, &EdgeLabel::Codir(2)),
                ) else {
                    continue;
                };
                let rm = [e1, e2, e3, e4];
                let (y1, z1, y2, z2) = (edges[e1].to, edges[e2].to, edges[e3].from, edges[e4].from);
                let top = self.component(set, &rm, x);
                let left = self.component(set, &rm, y1);
                let right = self.component(set, &rm, z1);
                let bottom = self.component(set, &rm, w);
                let parts = [top, left, right, bottom];
                let disjoint = (0..4).all(|i| (i + 1..4).all(|j| parts[i] & parts[j] == 0));
                if !disjoint || top | left | right | bottom != set {
                    continue;
                }
                if self.sinks(top) == bit(x)
                    && self.sources(left) == bit(y1)
                    && self.sinks(left) == bit(y2)
                    && self.sources(right) == bit(z1)
                    && self.sinks(right) == bit(z2)
                    && self.sources(bottom) == bit(w)
                {
                    out.push(Split::Diamond { top, left, right, bottom });
                }
            }
        }
        out
    }

    fn decompose(&mut self, set: Mask) -> Option<Arc<Decomp>> {
        if let Some(r) = self.memo.get(&set) {
            return r.clone();
        }
        let result = if set.count_ones() == 1 {
            let v = set.trailing_zeros();
            let has_loop = self.dag.edges.iter().any(|e| e.from == v && e.to == v);
            (!has_loop).then(|| Arc::new(Decomp::Vertex(v)))
        } else {
            let mut found = None;
            for s in self.splits(set) {
                if let Some(d) = self.build(s) {
                    found = Some(Arc::new(d));
                    break;
                }
            }
            found
        };
        self.memo.insert(set, result.clone());
        result
    }

    fn build(&mut self, s: Split) -> Option<Decomp> {
        Some(match s {
            Split::Lin { edge, top, bottom } => Decomp::Lin {
                top: self.decompose(top)?,
                edge: self.dag.edges[edge].clone(),
                bottom: self.decompose(bottom)?,
            },
            Split::Branch { at, top, left, right } => Decomp::Branch {
                top: self.decompose(top)?,
                at,
                left: self.decompose(left)?,
                right: self.decompose(right)?,
            },
            Split::Merge { at, left, right, bottom } => Decomp::Merge {
                left: self.decompose(left)?,
                right: self.decompose(right)?,
                at,
                bottom: self.decompose(bottom)?,
            },
            Split::Diamond { top, left, right, bottom } => Decomp::Diamond {
                top: self.decompose(top)?,
                left: self.decompose(left)?,
                right: self.decompose(right)?,
                bottom: self.decompose(bottom)?,
            },
        })
    }

    /// Every decomposition tree of `set`, up to `limit` of them.
    fn all(&mut self, set: Mask, limit: usize) -> Vec<Arc<Decomp>> {
        if set.count_ones() == 1 {
            return self.decompose(set).into_iter().collect();
        }
        let mut out = Vec::new();
        for s in self.splits(set) {
            let parts: Vec<Vec<Arc<Decomp>>> = match &s {
                Split::Lin { top, bottom, .. } => vec![self.all(*top, limit), self.all(*bottom, limit)],
                Split::Branch { top, left, right, .. } => {
                    vec![self.all(*top, limit), self.all(*left, limit), self.all(*right, limit)]
                }
                Split::Merge { left, right, bottom, .. } => {
                    vec![self.all(*left, limit), self.all(*right, limit), self.all(*bottom, limit)]
                }
                Split::Diamond { top, left, right, bottom } => vec![
                    self.all(*top, limit),
                    self.all(*left, limit),
                    self.all(*right, limit),
                    self.all(*bottom, limit),
                ],
            };
            // cartesian product
            let mut combos: Vec<Vec<Arc<Decomp>>> = vec![vec![]];
            for p in &parts {
                let mut next = Vec::new();
                for c in &combos {
                    for d in p {
                        if next.len() >= limit {
                            break;
                        }
                        let mut c2 = c.clone();
                        c2.push(d.clone());
                        next.push(c2);
                    }
                }
                combos = next;
            }
            for c in combos {
                if out.len() >= limit {
                    return out;
                }
                let d = match &s {
                    Split::Lin { edge, .. } => Decomp::Lin {
                        top: c[0].clone(),
                        edge: self.dag.edges[*edge].clone(),
                        bottom: c[1].clone(),
                    },
                    Split::Branch { at, .. } => Decomp::Branch {
                        top: c[0].clone(),
                        at: *at,
                        left: c[1].clone(),
                        right: c[2].clone(),
                    },
                    Split::Merge { at, .. } => Decomp::Merge {
                        left: c[0].clone(),
                        right: c[1].clone(),
                        at: *at,
                        bottom: c[2].clone(),
                    },
                    Split::Diamond { .. } => Decomp::Diamond {
                        top: c[0].clone(),
                        left: c[1].clone(),
                        right: c[2].clone(),
                        bottom: c[3].clone(),
                    },
                };
                out.push(Arc::new(d));
            }
        }
        out
    }
}

/// Isomorphism-invariant key of a compound DAG (respecting input order).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DagKey(pub usize, pub Vec<(u32, EdgeLabel, u32)>);

impl OpDag {
    pub fn new(n: usize, edges: Vec<Edge>) -> Result<OpDag, DagError> {
        if let Some(e) = edges.iter().find(|e| e.from as usize >= n || e.to as usize >= n) {
            return Err(DagError::BadVertex(e.from.max(e.to)));
        }
        let mut edges = edges;
        edges.sort();
        edges.dedup();
        Ok(OpDag { n, edges })
    }

    fn raw(n: usize, mut edges: Vec<Edge>) -> OpDag {
        edges.sort();
        OpDag { n, edges }
    }

    pub fn emptydag() -> OpDag {
        OpDag { n: 1, edges: vec![] }
    }

    pub fn basic(op: TreeOp) -> OpDag {
        let e = |from, label, to| Edge { from, label, to };
        match op {
            TreeOp::Stack(op) => OpDag::raw(2, vec![e(0, EdgeLabel::Op(op), 1)]),
            TreeOp::Copy(1) => OpDag::raw(2, vec![e(0, EdgeLabel::Dir(1), 1)]),
            TreeOp::Barcopy(1) => OpDag::raw(2, vec![e(0, EdgeLabel::Codir(1), 1)]),
            TreeOp::Copy(_) => {
                OpDag::raw(3, vec![e(0, EdgeLabel::Dir(1), 1), e(0, EdgeLabel::Dir(2), 2)])
            }
            TreeOp::Barcopy(_) => {
                OpDag::raw(3, vec![e(0, EdgeLabel::Codir(1), 2), e(1, EdgeLabel::Codir(2), 2)])
            }
        }
    }

    pub fn stack_op(op: StackOp) -> OpDag {
        OpDag::basic(TreeOp::Stack(op))
    }

    /// A chain of stack operations.
    pub fn chain(ops: impl IntoIterator<Item = StackOp>) -> OpDag {
        let edges: Vec<Edge> = ops
            .into_iter()
            .enumerate()
            .map(|(k, op)| Edge { from: k as u32, label: EdgeLabel::Op(op), to: k as u32 + 1 })
            .collect();
        OpDag::raw(edges.len() + 1, edges)
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn inputs(&self) -> Vec<u32> {
        let mut has_in = vec![false; self.n];
        self.edges.iter().for_each(|e| has_in[e.to as usize] = true);
        (0..self.n as u32).filter(|&v| !has_in[v as usize]).collect()
    }

    pub fn outputs(&self) -> Vec<u32> {
        let mut has_out = vec![false; self.n];
        self.edges.iter().for_each(|e| has_out[e.from as usize] = true);
        (0..self.n as u32).filter(|&v| !has_out[v as usize]).collect()
    }

    pub fn out_edges(&self, v: u32) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.from == v)
    }

    pub fn in_edges(&self, v: u32) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.to == v)
    }

    /// `(i,j)`-concatenation: outputs `i+m` of `self` are merged with inputs
    /// `j+m` of `other`. Vertices of `self` keep their ids; the remaining
    /// vertices of `other` follow in their order.
    pub fn concat(&self, i: usize, other: &OpDag, j: usize) -> Result<OpDag, DagError> {
        let outs = self.outputs();
        let ins = other.inputs();
        if i == 0 || i > outs.len() {
            return Err(DagError::Index { index: i, count: outs.len() });
        }
        if j == 0 || j > ins.len() {
            return Err(DagError::Index { index: j, count: ins.len() });
        }
        let d = (outs.len() - i).min(ins.len() - j) + 1;
        let mut map: Vec<u32> = vec![u32::MAX; other.n];
        for m in 0..d {
            map[ins[j - 1 + m] as usize] = outs[i - 1 + m];
        }
        let mut next = self.n as u32;
        for slot in map.iter_mut() {
            if *slot == u32::MAX {
                *slot = next;
                next += 1;
            }
        }
        let mut edges = self.edges.clone();
        edges.extend(other.edges.iter().map(|e| Edge {
            from: map[e.from as usize],
            label: e.label.clone(),
            to: map[e.to as usize],
        }));
        Ok(OpDag::raw(next as usize, edges))
    }

    fn full_mask(&self) -> Result<Mask, DagError> {
        if self.n > MAX_DAG_VERTICES {
            return Err(DagError::TooLarge(self.n));
        }
        Ok(if self.n == 128 { u128::MAX } else { (1u128 << self.n) - 1 })
    }

    /// A decomposition witnessing compound-ness.
    pub fn decompose(&self) -> Option<Arc<Decomp>> {
        let mask = self.full_mask().ok()?;
        if self.n == 0 {
            return None;
        }
        Search::new(self).decompose(mask)
    }

    pub fn is_compound(&self) -> bool {
        self.decompose().is_some()
    }

    /// Up to `limit` distinct decomposition trees.
    pub fn all_decompositions(&self, limit: usize) -> Vec<Arc<Decomp>> {
        match self.full_mask() {
            Ok(mask) if self.n > 0 => Search::new(self).all(mask, limit),
            _ => vec![],
        }
    }

    /// Renumbering into decomposition order; id order then equals the
    /// structural order of inputs and outputs.
    pub fn canonical(&self) -> Result<OpDag, DagError> {
        let d = self.decompose().ok_or(DagError::NotCompound)?;
        Ok(self.renumber(&d.vertex_order()))
    }

    fn renumber(&self, order: &[u32]) -> OpDag {
        let mut pos = vec![0u32; self.n];
        for (k, &v) in order.iter().enumerate() {
            pos[v as usize] = k as u32;
        }
        let edges = self
            .edges
            .iter()
            .map(|e| Edge { from: pos[e.from as usize], label: e.label.clone(), to: pos[e.to as usize] })
            .collect();
        OpDag::raw(self.n, edges)
    }

    /// DFS numbering from `start`: out-edges before in-edges, each by label.
    fn dfs_numbering(&self, start: u32) -> Vec<u32> {
        let mut num = vec![u32::MAX; self.n];
        let mut order = Vec::with_capacity(self.n);
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            if num[v as usize] != u32::MAX {
                continue;
            }
            num[v as usize] = order.len() as u32;
            order.push(v);
            let mut nbrs: Vec<(u8, &EdgeLabel, u32)> = self
                .out_edges(v)
                .map(|e| (0u8, &e.label, e.to))
                .chain(self.in_edges(v).map(|e| (1u8, &e.label, e.from)))
                .collect();
            nbrs.sort();
            for (_, _, w) in nbrs.into_iter().rev() {
                if num[w as usize] == u32::MAX {
                    stack.push(w);
                }
            }
        }
        // unreachable vertices (disconnected input) keep their relative order
        for v in 0..self.n as u32 {
            if num[v as usize] == u32::MAX {
                num[v as usize] = order.len() as u32;
                order.push(v);
            }
        }
        num
    }

    fn key_from(&self, start: u32, vlabels: Option<&[u32]>) -> (DagKey, Vec<u32>) {
        let num = self.dfs_numbering(start);
        let mut edges: Vec<(u32, EdgeLabel, u32)> = self
            .edges
            .iter()
            .map(|e| (num[e.from as usize], e.label.clone(), num[e.to as usize]))
            .collect();
        edges.sort();
        let mut labels = Vec::new();
        if let Some(vl) = vlabels {
            labels = vec![0u32; self.n];
            for v in 0..self.n {
                labels[num[v] as usize] = vl[v];
            }
        }
        (DagKey(self.n, edges), labels)
    }

    /// The structurally first input; the lowest id when there is only one
    /// input or the DAG is not compound.
    fn key_start(&self) -> u32 {
        let inputs = self.inputs();
        if inputs.len() > 1 {
            if let Some(d) = self.decompose() {
                let order = d.vertex_order();
                if let Some(&v) = order.iter().find(|v| inputs.contains(v)) {
                    return v;
                }
            }
        }
        inputs.first().copied().unwrap_or(0)
    }

    /// Key for isomorphism classes of compound DAGs.
    pub fn iso_key(&self) -> DagKey {
        self.key_from(self.key_start(), None).0
    }

    /// Key of a vertex-labelled DAG.
    pub fn labelled_key(&self, labels: &[u32]) -> (DagKey, Vec<u32>) {
        self.key_from(self.key_start(), Some(labels))
    }

    /// `D_(i)(t)`; `Ok(None)` when some basic step is undefined.
    pub fn apply_at(&self, i: usize, t: &StackTree) -> Result<Option<StackTree>, DagError> {
        let d = self.decompose().ok_or(DagError::NotCompound)?;
        self.apply_with(&d, i, t)
    }

    /// Application following a given decomposition.
    pub fn apply_with(&self, d: &Decomp, i: usize, t: &StackTree) -> Result<Option<StackTree>, DagError> {
        let count = t.leaf_count();
        if i == 0 || i > count {
            return Err(DagError::Index { index: i, count });
        }
        Ok(eval(d, i, t.clone()))
    }

    /// All `D_(i)(t)` over leaf indices, canonically ordered.
    pub fn apply_all(&self, t: &StackTree) -> Result<BTreeSet<StackTree>, DagError> {
        self.apply_all_with(t, Exec::Sequential)
    }

    pub fn apply_all_with(&self, t: &StackTree, exec: Exec) -> Result<BTreeSet<StackTree>, DagError> {
        let d = self.decompose().ok_or(DagError::NotCompound)?;
        let idx: Vec<usize> = (1..=t.leaf_count()).collect();
        Ok(exec.map(&idx, |&i| eval(&d, i, t.clone())).into_iter().flatten().collect())
    }

    /// `D1_(i1)(… Dk_(ik)(t) …)`, innermost (rightmost) first.
    pub fn apply_parallel(
        ds: &[OpDag],
        is: &[usize],
        t: &StackTree,
    ) -> Result<Option<StackTree>, DagError> {
        if ds.len() != is.len() || ds.is_empty() {
            return Err(DagError::Spacing);
        }
        let mut decs = Vec::with_capacity(ds.len());
        for d in ds {
            decs.push(d.decompose().ok_or(DagError::NotCompound)?);
        }
        for j in 0..ds.len().saturating_sub(1) {
            if is[j + 1] < is[j] + decs[j].inputs().len() {
                return Err(DagError::Spacing);
            }
        }
        let count = t.leaf_count();
        if let Some(&bad) = is.iter().find(|&&i| i == 0 || i > count) {
            return Err(DagError::Index { index: bad, count });
        }
        let mut cur = t.clone();
        for k in (0..ds.len()).rev() {
            match eval(&decs[k], is[k], cur) {
                Some(n) => cur = n,
                None => return Ok(None),
            }
        }
        Ok(Some(cur))
    }

    /// Label words of all directed paths (including the empty path).
    pub fn path_words(&self) -> BTreeSet<Vec<EdgeLabel>> {
        let mut out = BTreeSet::new();
        out.insert(Vec::new());
        fn go(d: &OpDag, v: u32, word: &mut Vec<EdgeLabel>, out: &mut BTreeSet<Vec<EdgeLabel>>) {
            for e in d.out_edges(v) {
                word.push(e.label.clone());
                out.insert(word.clone());
                go(d, e.to, word, out);
                word.pop();
            }
        }
        for v in 0..self.n as u32 {
            go(self, v, &mut Vec::new(), &mut out);
        }
        out
    }

    /// Every path word lies in `Red_order`.
    pub fn is_reduced(&self, order: u8) -> bool {
        let red = RedChecker::new(order);
        self.path_words().iter().all(|w| red.contains(w))
    }

    /// Textual form `dag { v: 1..m; e: (u, label, v); inputs: [...]; outputs: [...] }`,
    /// vertices numbered from 1.
    pub fn to_text(&self) -> String {
        let mut s = format!("dag {{ v: 1..{};", self.n);
        for e in &self.edges {
            s.push_str(&format!(" e: ({}, {}, {});", e.from + 1, e.label.describe(), e.to + 1));
        }
        let list = |v: Vec<u32>| v.iter().map(|x| (x + 1).to_string()).collect::<Vec<_>>().join(", ");
        s.push_str(&format!(" inputs: [{}]; outputs: [{}] }}", list(self.inputs()), list(self.outputs())));
        s
    }

    pub fn parse_text(text: &str) -> Result<OpDag, DagError> {
        let err = |pos: usize, msg: &str| {
            let line = text[..pos].matches('\n').count() + 1;
            let col = pos - text[..pos].rfind('\n').map_or(0, |p| p + 1) + 1;
            DagError::Parse { line, col, msg: msg.into() }
        };
        let body_start = text.find('{').ok_or_else(|| err(0, "expected 'dag {'"))?;
        if text[..body_start].trim() != "dag" {
            return Err(err(0, "expected 'dag {'"));
        }
        let body_end = text.rfind('}').ok_or_else(|| err(text.len(), "missing '}'"))?;
        let body = &text[body_start + 1..body_end];
        let mut n = None;
        let mut edges = Vec::new();
        let mut declared_inputs = None;
        let mut declared_outputs = None;
        // split on ';' outside parentheses
        let mut depth = 0i32;
        let mut start = 0;
        let mut items = Vec::new();
        for (k, c) in body.char_indices() {
            match c {
                '(' | '[' => depth += 1,
                ')' | ']' => depth -= 1,
                ';' if depth == 0 => {
                    items.push((start, &body[start..k]));
                    start = k + 1;
                }
                _ => {}
            }
        }
        items.push((start, &body[start..]));
        for (off, item) in items {
            let pos = body_start + 1 + off;
            let item_t = item.trim();
            if item_t.is_empty() {
                continue;
            }
            let (key, val) = item_t.split_once(':').ok_or_else(|| err(pos, "expected key: value"))?;
            let val = val.trim();
            let num = |s: &str| -> Result<u32, DagError> {
                s.trim()
                    .parse::<u32>()
                    .ok()
                    .filter(|&x| x >= 1)
                    .map(|x| x - 1)
                    .ok_or_else(|| err(pos, "expected vertex number ≥ 1"))
            };
            match key.trim() {
                "v" => {
                    let (a, b) = val.split_once("..").ok_or_else(|| err(pos, "expected 1..m"))?;
                    if a.trim() != "1" {
                        return Err(err(pos, "vertices must start at 1"));
                    }
                    n = Some(num(b)? as usize + 1);
                }
                "e" => {
                    let inner = val
                        .strip_prefix('(')
                        .and_then(|s| s.strip_suffix(')'))
                        .ok_or_else(|| err(pos, "expected (u, label, v)"))?;
                    let first = inner.find(',').ok_or_else(|| err(pos, "expected (u, label, v)"))?;
                    let last = inner.rfind(',').ok_or_else(|| err(pos, "expected (u, label, v)"))?;
                    if first == last {
                        return Err(err(pos, "expected (u, label, v)"));
                    }
                    let label =
                        EdgeLabel::parse(&inner[first + 1..last]).map_err(|e| err(pos, &e.to_string()))?;
                    edges.push(Edge { from: num(&inner[..first])?, label, to: num(&inner[last + 1..])? });
                }
                "inputs" | "outputs" => {
                    let inner = val
                        .strip_prefix('[')
                        .and_then(|s| s.strip_suffix(']'))
                        .ok_or_else(|| err(pos, "expected [..]"))?;
                    let v: Vec<u32> = if inner.trim().is_empty() {
                        vec![]
                    } else {
                        inner.split(',').map(num).collect::<Result<_, _>>()?
                    };
                    if key.trim() == "inputs" {
                        declared_inputs = Some(v);
                    } else {
                        declared_outputs = Some(v);
                    }
                }
                _ => return Err(err(pos, "unknown key")),
            }
        }
        let n = n.ok_or_else(|| err(body_start, "missing vertex declaration"))?;
        let dag = OpDag::new(n, edges)?;
        if declared_inputs.is_some_and(|v| v != dag.inputs())
            || declared_outputs.is_some_and(|v| v != dag.outputs())
        {
            return Err(err(body_start, "declared inputs/outputs do not match edges"));
        }
        Ok(dag)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "vertices": self.n,
            "edges": self.edges.iter().map(|e| json!([e.from + 1, e.label.describe(), e.to + 1])).collect::<Vec<_>>(),
        })
    }

    pub fn from_json(v: &Value) -> Result<OpDag, DagError> {
        let bad = |m: &str| DagError::Parse { line: 0, col: 0, msg: m.into() };
        if let Some(Value::String(text)) = v.get("text") {
            return OpDag::parse_text(text);
        }
        let n = v.get("vertices").and_then(Value::as_u64).ok_or_else(|| bad("missing vertices"))?;
        let mut edges = Vec::new();
        for e in v.get("edges").and_then(Value::as_array).ok_or_else(|| bad("missing edges"))? {
            let a = e.as_array().filter(|a| a.len() == 3).ok_or_else(|| bad("edge must be [u, label, v]"))?;
            let vert = |x: &Value| {
                x.as_u64().filter(|&x| x >= 1).map(|x| x as u32 - 1).ok_or_else(|| bad("vertex number"))
            };
            let label = EdgeLabel::parse(a[1].as_str().ok_or_else(|| bad("label must be a string"))?)
                .map_err(|e| bad(&e.to_string()))?;
            edges.push(Edge { from: vert(&a[0])?, label, to: vert(&a[2])? });
        }
        OpDag::new(n as usize, edges)
    }

    pub fn to_dot(&self, name: &str) -> String {
        let mut s = format!("digraph \"{name}\" {{\n  node [shape=circle];\n");
        for v in 0..self.n {
            s.push_str(&format!("  v{} [label=\"{}\"];\n", v + 1, v + 1));
        }
        for e in &self.edges {
            let style = match e.label {
                EdgeLabel::Op(_) => "solid",
                EdgeLabel::Dir(_) => "dashed",
                EdgeLabel::Codir(_) => "dotted",
            };
            let label = match &e.label {
                EdgeLabel::Op(StackOp::Test(_)) => "T".to_string(),
                l => l.describe(),
            };
            s.push_str(&format!(
                "  v{} -> v{} [label=\"{}\", style={style}];\n",
                e.from + 1,
                e.to + 1,
                label
            ));
        }
        s.push_str("}\n");
        s
    }
}

impl fmt::Debug for OpDag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "dag[{}](", self.n)?;
        for (k, e) in self.edges.iter().enumerate() {
            if k > 0 {
                write!(f, " ")?;
            }
            write!(f, "{}-{:?}->{}", e.from, e.label, e.to)?;
        }
        write!(f, ")")
    }
}

/// Anything with ordered leaves on which the basic tree operations act.
pub trait LeafModel: Sized {
    /// One basic operation at the `i`-th leaf; `None` when undefined.
    fn step(&self, label: &EdgeLabel, i: usize) -> Option<Self>;
}

impl LeafModel for StackTree {
    fn step(&self, label: &EdgeLabel, i: usize) -> Option<StackTree> {
        let r = match label {
            EdgeLabel::Op(op) => self.apply_basic_at(op, i),
            EdgeLabel::Dir(k) => self.duplicate_leaf(*k as usize, i).map(Some),
            EdgeLabel::Codir(k) => self.merge_leaves(*k as usize, i),
        };
        r.ok().flatten()
    }
}

/// Evaluates a decomposition at leaf `i` of any leaf model.
pub fn eval<M: LeafModel>(d: &Decomp, i: usize, t: M) -> Option<M> {
    match d {
        Decomp::Vertex(_) => Some(t),
        Decomp::Lin { top, edge, bottom } => {
            let t = eval(top, i, t)?;
            let t = t.step(&edge.label, i)?;
            eval(bottom, i, t)
        }
        Decomp::Branch { top, left, right, .. } => {
            let t = eval(top, i, t)?;
            let t = t.step(&EdgeLabel::Dir(2), i)?;
            let t = eval(right, i + 1, t)?;
            eval(left, i, t)
        }
        Decomp::Merge { left, right, bottom, .. } => {
            let t = eval(left, i, t)?;
            let t = eval(right, i + 1, t)?;
            let t = t.step(&EdgeLabel::Codir(2), i)?;
            eval(bottom, i, t)
        }
        Decomp::Diamond { top, left, right, bottom } => {
            let t = eval(top, i, t)?;
            let t = t.step(&EdgeLabel::Dir(2), i)?;
            let t = eval(right, i + 1, t)?;
            let t = eval(left, i, t)?;
            let t = t.step(&EdgeLabel::Codir(2), i)?;
            eval(bottom, i, t)
        }
    }
}

/// Def. 1 constructors on DAGs already in decomposition order.
pub mod build {
    use super::*;

    fn shift(d: &OpDag, by: u32) -> Vec<Edge> {
        d.edges
            .iter()
            .map(|e| Edge { from: e.from + by, label: e.label.clone(), to: e.to + by })
            .collect()
    }

    fn sole(v: Vec<u32>) -> Option<u32> {
        (v.len() == 1).then(|| v[0])
    }

    /// `top` (one output) then `label` then `bottom` (one input).
    pub fn lin(top: &OpDag, label: EdgeLabel, bottom: &OpDag) -> Option<OpDag> {
        let x = sole(top.outputs())?;
        let off = top.n as u32;
        let y = sole(bottom.inputs())? + off;
        let mut edges = top.edges.clone();
        edges.extend(shift(bottom, off));
        edges.push(Edge { from: x, label, to: y });
        Some(OpDag::raw(top.n + bottom.n, edges))
    }

    pub fn branch(top: &OpDag, left: &OpDag, right: &OpDag) -> Option<OpDag> {
        let x = sole(top.outputs())?;
        let o1 = top.n as u32;
        let o2 = o1 + left.n as u32;
        let y = sole(left.inputs())? + o1;
        let z = sole(right.inputs())? + o2;
        let mut edges = top.edges.clone();
        edges.extend(shift(left, o1));
        edges.extend(shift(right, o2));
        edges.push(Edge { from: x, label: EdgeLabel::Dir(1), to: y });
        edges.push(Edge { from: x, label: EdgeLabel::Dir(2), to: z });
        Some(OpDag::raw(top.n + left.n + right.n, edges))
    }

    pub fn merge(left: &OpDag, right: &OpDag, bottom: &OpDag) -> Option<OpDag> {
        let x = sole(left.outputs())?;
        let o1 = left.n as u32;
        let o2 = o1 + right.n as u32;
        let y = sole(right.outputs())? + o1;
        let z = sole(bottom.inputs())? + o2;
        let mut edges = left.edges.clone();
        edges.extend(shift(right, o1));
        edges.extend(shift(bottom, o2));
        edges.push(Edge { from: x, label: EdgeLabel::Codir(1), to: z });
        edges.push(Edge { from: y, label: EdgeLabel::Codir(2), to: z });
        Some(OpDag::raw(left.n + right.n + bottom.n, edges))
    }

    pub fn diamond(top: &OpDag, left: &OpDag, right: &OpDag, bottom: &OpDag) -> Option<OpDag> {
        let x = sole(top.outputs())?;
        let o1 = top.n as u32;
        let o2 = o1 + left.n as u32;
        let o3 = o2 + right.n as u32;
        let (y1, y2) = (sole(left.inputs())? + o1, sole(left.outputs())? + o1);
        let (z1, z2) = (sole(right.inputs())? + o2, sole(right.outputs())? + o2);
        let w = sole(bottom.inputs())? + o3;
        let mut edges = top.edges.clone();
        edges.extend(shift(left, o1));
        edges.extend(shift(right, o2));
        edges.extend(shift(bottom, o3));
        edges.push(Edge { from: x, label: EdgeLabel::Dir(1), to: y1 });
        edges.push(Edge { from: x, label: EdgeLabel::Dir(2), to: z1 });
        edges.push(Edge { from: y2, label: EdgeLabel::Codir(1), to: w });
        edges.push(Edge { from: z2, label: EdgeLabel::Codir(2), to: w });
        Some(OpDag::raw(top.n + left.n + right.n + bottom.n, edges))
    }
}

/// Random compound operation with at most `max_vertices` vertices over rewrites
/// of `symbols`, `cop(1)`/`ncop(1)` and top-symbol tests of the given order,
/// built from the inductive cases and occasional concatenations with copy2 and
/// barcopy2.
pub fn random_dag<R: Rng>(order: u8, symbols: &[Symbol], max_vertices: usize, rng: &mut R) -> OpDag {
    fn label<R: Rng>(order: u8, symbols: &[Symbol], rng: &mut R) -> EdgeLabel {
        let sym = |rng: &mut R| symbols[rng.gen_range(0..symbols.len())];
        match rng.gen_range(0..9) {
            0..=3 => EdgeLabel::Op(StackOp::Rew(sym(rng), sym(rng))),
            4 if order >= 2 => EdgeLabel::Op(StackOp::Cop(1)),
            5 if order >= 2 => EdgeLabel::Op(StackOp::Ncop(1)),
            6 => {
                let t = TestLanguage::top_symbol_in(order - 1, symbols, &[sym(rng)]);
                EdgeLabel::Op(StackOp::test(t))
            }
            7 => EdgeLabel::Dir(1),
            8 => EdgeLabel::Codir(1),
            _ => EdgeLabel::Op(StackOp::Rew(sym(rng), sym(rng))),
        }
    }
    // single input and single output
    fn unit<R: Rng>(order: u8, symbols: &[Symbol], budget: usize, rng: &mut R) -> OpDag {
        let e = OpDag::emptydag();
        if budget < 2 || rng.gen_bool(0.15) {
            return e;
        }
        if budget >= 4 && rng.gen_bool(0.25) {
            let inner = (budget - 2) / 2;
            let l = unit(order, symbols, inner.max(1), rng);
            let r = unit(order, symbols, inner.max(1), rng);
            return build::diamond(&e, &l, &r, &e).expect("shape");
        }
        let top_budget = rng.gen_range(1..budget);
        let top = unit(order, symbols, top_budget, rng);
        let bottom = unit(order, symbols, budget - top.n, rng);
        build::lin(&top, label(order, symbols, rng), &bottom).expect("shape")
    }
    loop {
        let e = OpDag::emptydag();
        let budget = max_vertices.max(1);
        let d = match rng.gen_range(0..6) {
            0 if budget >= 3 => {
                let l = unit(order, symbols, (budget - 1) / 2, rng);
                let r = unit(order, symbols, (budget - 1) / 2, rng);
                build::branch(&e, &l, &r).expect("shape")
            }
            1 if budget >= 3 => {
                let l = unit(order, symbols, (budget - 1) / 2, rng);
                let r = unit(order, symbols, (budget - 1) / 2, rng);
                build::merge(&l, &r, &e).expect("shape")
            }
            2 if budget >= 4 => {
                let d = unit(order, symbols, budget - 2, rng);
                let c = OpDag::basic(if rng.gen_bool(0.5) { TreeOp::Copy(2) } else { TreeOp::Barcopy(2) });
                let outs = d.outputs().len();
                let ins = c.inputs().len();
                let (i, j) = (rng.gen_range(1..=outs), rng.gen_range(1..=ins));
                match d.concat(i, &c, j) {
                    Ok(x) => x,
                    Err(_) => continue,
                }
            }
            _ => unit(order, symbols, budget, rng),
        };
        if d.n <= max_vertices.max(1) && d.is_compound() {
            return d;
        }
    }
}

/// `D · D′` as a set of compound results over all licit `(i,j)`, canonically ordered.
pub fn concat_set(a: &[OpDag], b: &[OpDag]) -> Vec<OpDag> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for d in a {
        for e in b {
            for i in 1..=d.outputs().len() {
                for j in 1..=e.inputs().len() {
                    let Ok(c) = d.concat(i, e, j) else { continue };
                    if let Ok(c) = c.canonical() {
                        if seen.insert(c.iso_key()) {
                            out.push(c);
                        }
                    }
                }
            }
        }
    }
    out
}

/// `Dⁿ = ⋃_{0<i<n} Dⁱ · Dⁿ⁻ⁱ` for a set of operations, canonically ordered.
pub fn power_set(d: &[OpDag], n: usize) -> Vec<OpDag> {
    let canon: Vec<OpDag> = d.iter().filter_map(|x| x.canonical().ok()).collect();
    let mut pows: Vec<Vec<OpDag>> = vec![vec![OpDag::emptydag()], canon];
    for k in 2..=n {
        let mut seen = BTreeSet::new();
        let mut acc = Vec::new();
        for i in 1..k {
            for c in concat_set(&pows[i], &pows[k - i]) {
                if seen.insert(c.iso_key()) {
                    acc.push(c);
                }
            }
        }
        pows.push(acc);
    }
    pows.swap_remove(n.min(pows.len() - 1))
}

/// Letter classes of the `Red_i` expressions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum RedLetter {
    Rew,
    Test,
    Cop(u8),
    Ncop(u8),
    Dir,
    Codir,
}

#[derive(Clone, Debug)]
enum Re {
    Eps,
    Letter(RedLetter),
    Cat(Vec<Re>),
    Alt(Vec<Re>),
    Star(Box<Re>),
}

/// Recognizer for `Red_n`, compiled from the inductive expressions.
pub struct RedChecker {
    order: u8,
    dfa: crate::dfa::Dfa,
}

impl RedChecker {
    pub fn new(order: u8) -> RedChecker {
        let red0 = {
            let r = || Re::Letter(RedLetter::Rew);
            let t = || Re::Letter(RedLetter::Test);
            Re::Alt(vec![
                Re::Eps,
                t(),
                r(),
                Re::Cat(vec![r(), t()]),
                Re::Cat(vec![t(), r()]),
                Re::Cat(vec![r(), t(), r()]),
            ])
        };
        let layer = |prev: Re, down: RedLetter, up: RedLetter| {
            Re::Cat(vec![
                Re::Star(Box::new(Re::Cat(vec![prev.clone(), Re::Letter(down)]))),
                prev.clone(),
                Re::Star(Box::new(Re::Cat(vec![Re::Letter(up), prev]))),
            ])
        };
        let mut re = red0;
        for i in 1..order {
            re = layer(re, RedLetter::Ncop(i), RedLetter::Cop(i));
        }
        if order >= 1 {
            re = layer(re, RedLetter::Codir, RedLetter::Dir);
        }
        let n_tokens = Self::n_letters(order);
        let mut nfa = EpsNfa { trans: vec![], eps: vec![], n_tokens };
        let (s, f) = nfa.compile(&re);
        RedChecker { order, dfa: nfa.determinize(s, f) }
    }

    fn n_letters(order: u8) -> usize {
        4 + 2 * order as usize
    }

    fn token(l: RedLetter) -> usize {
        match l {
            RedLetter::Rew => 0,
            RedLetter::Test => 1,
            RedLetter::Dir => 2,
            RedLetter::Codir => 3,
            RedLetter::Cop(k) => 4 + 2 * (k as usize - 1),
            RedLetter::Ncop(k) => 5 + 2 * (k as usize - 1),
        }
    }

    pub fn start(&self) -> u32 {
        self.dfa.start
    }

    /// DFA successor; `None` for labels outside the alphabet of `Red_order`.
    pub fn step(&self, q: u32, l: &EdgeLabel) -> Option<u32> {
        let letter = match l {
            EdgeLabel::Op(StackOp::Rew(..)) => RedLetter::Rew,
            EdgeLabel::Op(StackOp::Test(_)) => RedLetter::Test,
            EdgeLabel::Op(StackOp::Cop(k)) if *k < self.order => RedLetter::Cop(*k),
            EdgeLabel::Op(StackOp::Ncop(k)) if *k < self.order => RedLetter::Ncop(*k),
            EdgeLabel::Dir(_) => RedLetter::Dir,
            EdgeLabel::Codir(_) => RedLetter::Codir,
            _ => return None,
        };
        Some(self.dfa.step(q, Self::token(letter)))
    }

    pub fn accepting(&self, q: u32) -> bool {
        self.dfa.accept[q as usize]
    }

    pub fn contains(&self, word: &[EdgeLabel]) -> bool {
        let mut q = self.start();
        for l in word {
            match self.step(q, l) {
                Some(r) => q = r,
                None => return false,
            }
        }
        self.accepting(q)
    }
}

struct EpsNfa {
    trans: Vec<Vec<(usize, u32)>>,
    eps: Vec<Vec<u32>>,
    n_tokens: usize,
}

impl EpsNfa {
    fn state(&mut self) -> u32 {
        self.trans.push(vec![]);
        self.eps.push(vec![]);
        (self.trans.len() - 1) as u32
    }

    fn compile(&mut self, re: &Re) -> (u32, u32) {
        let s = self.state();
        let f = self.state();
        match re {
            Re::Eps => self.eps[s as usize].push(f),
            Re::Letter(l) => self.trans[s as usize].push((RedChecker::token(*l), f)),
            Re::Cat(parts) => {
                let mut cur = s;
                for p in parts {
                    let (a, b) = self.compile(p);
                    self.eps[cur as usize].push(a);
                    cur = b;
                }
                self.eps[cur as usize].push(f);
            }
            Re::Alt(parts) => {
                for p in parts {
                    let (a, b) = self.compile(p);
                    self.eps[s as usize].push(a);
                    self.eps[b as usize].push(f);
                }
            }
            Re::Star(inner) => {
                let (a, b) = self.compile(inner);
                self.eps[s as usize].push(a);
                self.eps[s as usize].push(f);
                self.eps[b as usize].push(a);
                self.eps[b as usize].push(f);
            }
        }
        (s, f)
    }

    fn closure(&self, q: u32) -> Vec<u32> {
        let mut seen = vec![false; self.trans.len()];
        let mut out = vec![q];
        seen[q as usize] = true;
        let mut i = 0;
        while i < out.len() {
            for &r in &self.eps[out[i] as usize] {
                if !seen[r as usize] {
                    seen[r as usize] = true;
                    out.push(r);
                }
            }
            i += 1;
        }
        out
    }

    fn determinize(&self, s: u32, f: u32) -> crate::dfa::Dfa {
        let mut nfa = crate::dfa::Nfa::new(self.n_tokens);
        for q in 0..self.trans.len() as u32 {
            let cl = self.closure(q);
            nfa.add_state(cl.contains(&f));
        }
        for q in 0..self.trans.len() as u32 {
            for p in self.closure(q) {
                for &(t, r) in &self.trans[p as usize] {
                    nfa.add(q, t, r);
                }
            }
        }
        nfa.starts.push(s);
        nfa.determinize()
    }
}
