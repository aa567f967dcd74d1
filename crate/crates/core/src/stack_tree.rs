//! Ordered trees of arity at most 2 labelled by stacks, and the localized
//! basic tree operations. Leaves are indexed from 1 in lexicographic order.

use std::fmt;

use rand::Rng;
use serde_json::{json, Value};
use thiserror::Error;

use crate::stacks::{Stack, StackError, StackOp};

pub const MAX_ARITY: usize = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("leaf index {index} out of range 1..={count}")]
    LeafIndex { index: usize, count: usize },
    #[error("position {0} is not in the domain")]
    Position(Position),
    #[error("arity {0} exceeds the bound 2")]
    Arity(usize),
    #[error("labels of different levels")]
    LabelLevel,
    #[error(transparent)]
    Stack(#[from] StackError),
    #[error("tree parse error at column {col}: {msg}")]
    Parse { col: usize, msg: String },
}

/// Word over {1,2}.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Position(pub Vec<u8>);

impl Position {
    pub fn root() -> Position {
        Position(Vec::new())
    }

    pub fn child(&self, d: u8) -> Position {
        let mut v = self.0.clone();
        v.push(d);
        Position(v)
    }

    pub fn is_prefix_of(&self, other: &Position) -> bool {
        other.0.starts_with(&self.0)
    }

    pub fn parse(s: &str) -> Option<Position> {
        if s == "ε" || s.is_empty() {
            return Some(Position::root());
        }
        s.chars()
            .map(|c| match c {
                '1' => Some(1),
                '2' => Some(2),
                _ => None,
            })
            .collect::<Option<Vec<u8>>>()
            .map(Position)
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            write!(f, "ε")
        } else {
            self.0.iter().try_for_each(|d| write!(f, "{d}"))
        }
    }
}

impl fmt::Debug for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// A stack tree; the derived order is the canonical total order used for sets.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StackTree {
    label: Stack,
    children: Vec<StackTree>,
}

impl StackTree {
    pub fn leaf(label: Stack) -> StackTree {
        StackTree { label, children: Vec::new() }
    }

    pub fn node(label: Stack, children: Vec<StackTree>) -> Result<StackTree, TreeError> {
        if children.len() > MAX_ARITY {
            return Err(TreeError::Arity(children.len()));
        }
        if children.iter().any(|c| c.label.level() != label.level()) {
            return Err(TreeError::LabelLevel);
        }
        Ok(StackTree { label, children })
    }

    pub fn label(&self) -> &Stack {
        &self.label
    }

    pub fn children(&self) -> &[StackTree] {
        &self.children
    }

    /// Order `n` of the tree: labels are `(n-1)`-stacks.
    pub fn order(&self) -> u8 {
        self.label.level() + 1
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(StackTree::node_count).sum::<usize>()
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn get(&self, u: &Position) -> Option<&StackTree> {
        u.0.iter().try_fold(self, |t, &d| t.children.get(d as usize - 1))
    }

    fn get_mut(&mut self, u: &Position) -> Option<&mut StackTree> {
        u.0.iter().try_fold(self, |t, &d| t.children.get_mut(d as usize - 1))
    }

    /// Prefix-closed domain in lexicographic order.
    pub fn domain(&self) -> Vec<Position> {
        let mut out = Vec::new();
        self.walk(&mut Position::root(), &mut |u, _| out.push(u.clone()));
        out
    }

    fn walk(&self, u: &mut Position, f: &mut impl FnMut(&Position, &StackTree)) {
        f(u, self);
        for (i, c) in self.children.iter().enumerate() {
            u.0.push(i as u8 + 1);
            c.walk(u, f);
            u.0.pop();
        }
    }

    /// Frontier in lexicographic order.
    pub fn leaves(&self) -> Vec<Position> {
        let mut out = Vec::new();
        self.walk(&mut Position::root(), &mut |u, t| {
            if t.is_leaf() {
                out.push(u.clone())
            }
        });
        out
    }

    pub fn leaf_count(&self) -> usize {
        if self.is_leaf() {
            1
        } else {
            self.children.iter().map(StackTree::leaf_count).sum()
        }
    }

    pub fn leaf_labels(&self) -> Vec<&Stack> {
        let mut out = Vec::new();
        fn go<'a>(t: &'a StackTree, out: &mut Vec<&'a Stack>) {
            if t.is_leaf() {
                out.push(&t.label);
            }
            t.children.iter().for_each(|c| go(c, out));
        }
        go(self, &mut out);
        out
    }

    /// Position of the `i`-th leaf (1-based).
    pub fn leaf_position(&self, i: usize) -> Result<Position, TreeError> {
        fn go(t: &StackTree, i: &mut usize, u: &mut Position) -> bool {
            if t.is_leaf() {
                *i -= 1;
                return *i == 0;
            }
            for (k, c) in t.children.iter().enumerate() {
                u.0.push(k as u8 + 1);
                if go(c, i, u) {
                    return true;
                }
                u.0.pop();
            }
            false
        }
        let count = self.leaf_count();
        if i == 0 || i > count {
            return Err(TreeError::LeafIndex { index: i, count });
        }
        let mut u = Position::root();
        let mut k = i;
        go(self, &mut k, &mut u);
        Ok(u)
    }

    pub fn subtree(&self, u: &Position) -> Result<&StackTree, TreeError> {
        self.get(u).ok_or_else(|| TreeError::Position(u.clone()))
    }

    /// `θ_(i)(t)`; `Ok(None)` when θ is undefined on the leaf label.
    pub fn apply_basic_at(&self, op: &StackOp, i: usize) -> Result<Option<StackTree>, TreeError> {
        let u = self.leaf_position(i)?;
        let Some(new) = op.apply(&self.get(&u).expect("leaf").label)? else {
            return Ok(None);
        };
        let mut out = self.clone();
        out.get_mut(&u).expect("leaf").label = new;
        Ok(Some(out))
    }

    /// The `i`-th leaf gains `k` children carrying its label.
    pub fn duplicate_leaf(&self, k: usize, i: usize) -> Result<StackTree, TreeError> {
        if k == 0 || k > MAX_ARITY {
            return Err(TreeError::Arity(k));
        }
        let u = self.leaf_position(i)?;
        let mut out = self.clone();
        let leaf = out.get_mut(&u).expect("leaf");
        leaf.children = vec![StackTree::leaf(leaf.label.clone()); k];
        Ok(out)
    }

    /// Inverse of [`duplicate_leaf`](Self::duplicate_leaf): defined iff leaves
    /// `i..i+k-1` are all the children of one node and carry its label.
    pub fn merge_leaves(&self, k: usize, i: usize) -> Result<Option<StackTree>, TreeError> {
        if k == 0 || k > MAX_ARITY {
            return Err(TreeError::Arity(k));
        }
        let u = self.leaf_position(i)?;
        if u.0.is_empty() || *u.0.last().unwrap() != 1 {
            return Ok(None);
        }
        let parent = Position(u.0[..u.0.len() - 1].to_vec());
        let p = self.get(&parent).expect("parent");
        if p.children.len() != k || p.children.iter().any(|c| !c.is_leaf() || c.label != p.label) {
            return Ok(None);
        }
        let mut out = self.clone();
        out.get_mut(&parent).expect("parent").children.clear();
        Ok(Some(out))
    }

    /// `t[s]_u`.
    pub fn replace_subtree(&self, u: &Position, s: &StackTree) -> Result<StackTree, TreeError> {
        let mut out = self.clone();
        *out.get_mut(u).ok_or_else(|| TreeError::Position(u.clone()))? = s.clone();
        Ok(out)
    }

    /// Unary trees correspond to `n`-stacks: root label at the bottom.
    pub fn to_stack(&self) -> Option<Stack> {
        let mut items = vec![self.label.clone()];
        let mut t = self;
        while let Some(c) = t.children.first() {
            if t.children.len() > 1 {
                return None;
            }
            items.push(c.label.clone());
            t = c;
        }
        Stack::from_components(items).ok()
    }

    pub fn from_stack(s: &Stack) -> Option<StackTree> {
        let comps = s.components();
        let (first, rest) = comps.split_first()?;
        let mut t: Option<StackTree> = None;
        for c in rest.iter().rev() {
            t = Some(StackTree { label: c.clone(), children: t.into_iter().collect() });
        }
        Some(StackTree { label: first.clone(), children: t.into_iter().collect() })
    }

    /// Textual form `node(<stack>, child1, child2?)`.
    pub fn to_text(&self) -> String {
        let mut s = format!("node({}", self.label.compact());
        for c in &self.children {
            s.push_str(", ");
            s.push_str(&c.to_text());
        }
        s.push(')');
        s
    }

    pub fn parse_text(text: &str) -> Result<StackTree, TreeError> {
        let chars: Vec<char> = text.chars().collect();
        let mut pos = 0;
        let t = parse_node(&chars, &mut pos)?;
        skip_ws(&chars, &mut pos);
        if pos != chars.len() {
            return Err(TreeError::Parse { col: pos + 1, msg: "trailing input".into() });
        }
        Ok(t)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "label": self.label.compact(),
            "children": self.children.iter().map(StackTree::to_json).collect::<Vec<_>>(),
        })
    }

    pub fn from_json(v: &Value) -> Result<StackTree, TreeError> {
        let label = match v.get("label") {
            Some(Value::String(s)) => Stack::parse(s)?,
            Some(obj @ Value::Object(_)) => Stack::from_json(obj)?,
            _ => return Err(StackError::Malformed("tree node without label".into()).into()),
        };
        let children = match v.get("children") {
            None => vec![],
            Some(Value::Array(cs)) => cs.iter().map(StackTree::from_json).collect::<Result<_, _>>()?,
            Some(_) => return Err(StackError::Malformed("children must be an array".into()).into()),
        };
        StackTree::node(label, children)
    }

    /// DOT rendering; node ids are positions in lexicographic order.
    pub fn to_dot(&self, name: &str) -> String {
        let mut s = format!("digraph \"{name}\" {{\n  node [shape=box];\n");
        let dom = self.domain();
        for (k, u) in dom.iter().enumerate() {
            let t = self.get(u).unwrap();
            s.push_str(&format!("  n{k} [label=\"{}\"];\n", t.label.compact()));
        }
        for (k, u) in dom.iter().enumerate() {
            for d in 1..=2u8 {
                let c = u.child(d);
                if let Some(j) = dom.iter().position(|v| *v == c) {
                    s.push_str(&format!("  n{k} -> n{j} [label=\"{d}\"];\n"));
                }
            }
        }
        s.push_str("}\n");
        s
    }
}

impl fmt::Display for StackTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl fmt::Debug for StackTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

fn skip_ws(c: &[char], pos: &mut usize) {
    while *pos < c.len() && c[*pos].is_whitespace() {
        *pos += 1;
    }
}

fn parse_node(c: &[char], pos: &mut usize) -> Result<StackTree, TreeError> {
    let err = |p: usize, m: &str| TreeError::Parse { col: p + 1, msg: m.into() };
    skip_ws(c, pos);
    let kw: String = c[*pos..].iter().take(5).collect();
    if kw != "node(" {
        return Err(err(*pos, "expected node("));
    }
    *pos += 5;
    // the label runs until the first ',' or ')' at bracket depth 0
    let start = *pos;
    let mut depth = 0i32;
    while *pos < c.len() {
        match c[*pos] {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' | ')' if depth == 0 => break,
            _ => {}
        }
        *pos += 1;
    }
    let label_text: String = c[start..*pos].iter().collect();
    let label = Stack::parse(&label_text).map_err(|e| match e {
        StackError::Parse { col, msg } => err(start + col - 1, &msg),
        e => e.into(),
    })?;
    let mut children = Vec::new();
    loop {
        skip_ws(c, pos);
        match c.get(*pos) {
            Some(',') => {
                *pos += 1;
                children.push(parse_node(c, pos)?);
            }
            Some(')') => {
                *pos += 1;
                break;
            }
            _ => return Err(err(*pos, "expected ',' or ')'")),
        }
    }
    StackTree::node(label, children)
}

/// All trees with at most `max_nodes` nodes whose labels are drawn from `labels`.
pub fn enumerate_trees(labels: &[Stack], max_nodes: usize) -> Vec<StackTree> {
    // by_size[n] = trees with exactly n nodes
    let mut by_size: Vec<Vec<StackTree>> = vec![Vec::new(); max_nodes + 1];
    for n in 1..=max_nodes {
        let mut out = Vec::new();
        for l in labels {
            if n == 1 {
                out.push(StackTree::leaf(l.clone()));
                continue;
            }
            for c in &by_size[n - 1] {
                out.push(StackTree { label: l.clone(), children: vec![c.clone()] });
            }
            for a in 1..n - 1 {
                let b = n - 1 - a;
                for x in &by_size[a] {
                    for y in &by_size[b] {
                        out.push(StackTree { label: l.clone(), children: vec![x.clone(), y.clone()] });
                    }
                }
            }
        }
        by_size[n] = out;
    }
    by_size.into_iter().flatten().collect()
}

/// Random tree with exactly `nodes` nodes.
pub fn random_tree<R: Rng>(labels: &[Stack], nodes: usize, rng: &mut R) -> StackTree {
    let label = labels[rng.gen_range(0..labels.len())].clone();
    let rest = nodes.saturating_sub(1);
    let children = match rest {
        0 => vec![],
        1 => vec![random_tree(labels, 1, rng)],
        _ if rng.gen_bool(0.3) => vec![random_tree(labels, rest, rng)],
        _ => {
            let a = rng.gen_range(1..rest);
            vec![random_tree(labels, a, rng), random_tree(labels, rest - a, rng)]
        }
    };
    StackTree { label, children }
}

/// Plain labelled tree, used for the order-1 correspondence with symbol trees.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PlainTree<T> {
    pub label: T,
    pub children: Vec<PlainTree<T>>,
}

impl StackTree {
    /// Order-1 trees as symbol-labelled trees.
    pub fn to_plain(&self) -> Option<PlainTree<crate::stacks::Symbol>> {
        let Stack::Atom(a) = self.label else { return None };
        let children = self.children.iter().map(StackTree::to_plain).collect::<Option<Vec<_>>>()?;
        Some(PlainTree { label: a, children })
    }

    pub fn from_plain(t: &PlainTree<crate::stacks::Symbol>) -> Result<StackTree, TreeError> {
        let children = t.children.iter().map(StackTree::from_plain).collect::<Result<Vec<_>, _>>()?;
        StackTree::node(Stack::Atom(t.label), children)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    fn s(x: &str) -> Stack {
        Stack::parse(x).unwrap()
    }

    pub(crate) fn fig1() -> StackTree {
        StackTree::parse_text(
            "node([[aa][bab]], node([[aa][aaa]], node([[ab]])), \
             node([[aa][a][b]], node([[ba][ba][b]]), node([[abb][ab]])))",
        )
        .unwrap()
    }

    #[test]
    fn fig1_leaves() {
        let t = fig1();
        assert_eq!(t.order(), 3);
        let ls: Vec<String> = t.leaves().iter().map(|u| u.to_string()).collect();
        assert_eq!(ls, ["11", "21", "22"]);
        assert_eq!(t.leaf_labels(), [&s("[[ab]]"), &s("[[ba][ba][b]]"), &s("[[abb][ab]]")]);
    }

    #[test]
    fn ncop_at_first_leaf() {
        let t = StackTree::parse_text("node([bbb], node([bbb]), node([aabb]))").unwrap();
        let r = t.apply_basic_at(&StackOp::Ncop(1), 1).unwrap().unwrap();
        assert_eq!(r.get(&Position(vec![1])).unwrap().label(), &s("[bb]"));
        assert!(t.apply_basic_at(&StackOp::Id, 3).is_err());
    }

    #[test]
    fn duplicate_and_merge() {
        let t = StackTree::leaf(s("[ab]"));
        let d = t.duplicate_leaf(2, 1).unwrap();
        assert_eq!(d.leaf_count(), 2);
        assert_eq!(d.merge_leaves(2, 1).unwrap(), Some(t.clone()));
        let bad = StackTree::node(s("[ab]"), vec![StackTree::leaf(s("[ab]")), StackTree::leaf(s("[b]"))])
            .unwrap();
        assert_eq!(bad.merge_leaves(2, 1).unwrap(), None);
        assert_eq!(d.merge_leaves(1, 1).unwrap(), None);
        assert_eq!(d.merge_leaves(2, 2).unwrap(), None);
    }

    #[test]
    fn text_json_round_trip() {
        let t = fig1();
        assert_eq!(StackTree::parse_text(&t.to_text()).unwrap(), t);
        assert_eq!(StackTree::from_json(&t.to_json()).unwrap(), t);
        assert!(matches!(StackTree::parse_text("node([a], x)"), Err(TreeError::Parse { .. })));
    }

    #[test]
    fn unary_stack_correspondence() {
        let st = s("[[a][ab][b]]");
        let t = StackTree::from_stack(&st).unwrap();
        assert_eq!(t.node_count(), 3);
        assert_eq!(t.to_stack().unwrap(), st);
    }

    #[test]
    fn enumeration_counts() {
        let labels = [s("a"), s("b")];
        // unary-binary tree shapes: 1, 1, 2, 4
        assert_eq!(enumerate_trees(&labels, 4).len(), 2 + 4 + 2 * 8 + 4 * 16);
    }
}
