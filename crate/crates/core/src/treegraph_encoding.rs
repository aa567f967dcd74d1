//! Encoding of stack trees as finite sets of `n`-stacks over `Σ ∪ {1,2}`:
//! each leaf becomes the stack of labels on its root path, every non-final
//! label carrying the arity of its node and the direction taken.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::op_dag::{eval, DagError, EdgeLabel, LeafModel, OpDag};
use crate::stack_tree::{Position, StackTree, TreeError};
use crate::stacks::{pop_word, push_word, Stack, Symbol};

/// A finite set of encoded leaves.
pub type LeafSet = BTreeSet<Stack>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("trees of order {0} have no stack encoding (order at least 2 is required)")]
    Order(u8),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("label {0} uses a reserved direction symbol")]
    Reserved(String),
}

/// The δ-conjunct violated by a rejected leaf set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Violation {
    OnlyLeaves,
    TreeDom,
    UniqueLabel,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Violation::OnlyLeaves => "OnlyLeaves",
            Violation::TreeDom => "TreeDom",
            Violation::UniqueLabel => "UniqueLabel",
        })
    }
}

fn digit(k: u8) -> Symbol {
    Symbol(char::from(b'0' + k))
}

fn has_reserved(s: &Stack) -> bool {
    s.symbols().iter().any(|c| c.is_reserved())
}

/// `Code(t, u)`.
pub fn encode_node(t: &StackTree, u: &Position) -> Result<Stack, EncodeError> {
    if t.order() < 2 {
        return Err(EncodeError::Order(t.order()));
    }
    t.subtree(u)?;
    let mut items = Vec::with_capacity(u.0.len() + 1);
    let mut node = t;
    for &d in &u.0 {
        if has_reserved(node.label()) {
            return Err(EncodeError::Reserved(node.label().compact()));
        }
        let arity = node.children().len() as u8;
        items.push(push_word(&[digit(arity), digit(d)], node.label()).expect("level at least 1"));
        node = &node.children()[d as usize - 1];
    }
    if has_reserved(node.label()) {
        return Err(EncodeError::Reserved(node.label().compact()));
    }
    items.push(node.label().clone());
    Ok(Stack::from_components(items).expect("uniform levels"))
}

/// `X_t`, one code per leaf.
pub fn encode_tree(t: &StackTree) -> Result<LeafSet, EncodeError> {
    t.leaves().iter().map(|u| encode_node(t, u)).collect()
}

/// Codes in leaf order.
pub fn encode_leaves(t: &StackTree) -> Result<Vec<Stack>, EncodeError> {
    t.leaves().iter().map(|u| encode_node(t, u)).collect()
}

/// A parsed root-to-leaf chain.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Chain {
    labels: Vec<Stack>,
    arities: Vec<u8>,
    dirs: Vec<u8>,
}

fn parse_chain(x: &Stack) -> Option<Chain> {
    if x.level() < 2 {
        return None;
    }
    let comps = x.components();
    let (last, inner) = comps.split_last()?;
    let mut c = Chain { labels: Vec::new(), arities: Vec::new(), dirs: Vec::new() };
    for s in inner {
        let top = s.top_at(1).components();
        if top.len() < 3 {
            return None;
        }
        let (Stack::Atom(i), Stack::Atom(d)) = (&top[top.len() - 2], &top[top.len() - 1]) else {
            return None;
        };
        let (i, d) = (reserved_value(*i)?, reserved_value(*d)?);
        if d > i {
            return None;
        }
        let label = pop_word(&[digit(i), digit(d)], s).ok()??;
        if has_reserved(&label) {
            return None;
        }
        c.labels.push(label);
        c.arities.push(i);
        c.dirs.push(d);
    }
    if has_reserved(last) {
        return None;
    }
    c.labels.push(last.clone());
    Some(c)
}

fn reserved_value(s: Symbol) -> Option<u8> {
    match s.0 {
        '1' => Some(1),
        '2' => Some(2),
        _ => None,
    }
}

/// Node information gathered from all chains.
#[derive(Clone, PartialEq, Eq)]
enum Slot {
    Inner(Stack, u8),
    Leaf(Stack),
}

/// Checks, in order, OnlyLeaves, UniqueLabel and TreeDom, and rebuilds the
/// unique tree `t` with `X = X_t`.
pub fn decode(x: &LeafSet) -> Result<StackTree, Violation> {
    let mut chains = Vec::with_capacity(x.len());
    let mut level = None;
    for s in x {
        if *level.get_or_insert(s.level()) != s.level() {
            return Err(Violation::OnlyLeaves);
        }
        chains.push(parse_chain(s).ok_or(Violation::OnlyLeaves)?);
    }
    let mut slots: BTreeMap<Vec<u8>, Slot> = BTreeMap::new();
    for c in &chains {
        for j in 0..c.labels.len() {
            let pos = c.dirs[..j].to_vec();
            let slot = if j < c.dirs.len() {
                Slot::Inner(c.labels[j].clone(), c.arities[j])
            } else {
                Slot::Leaf(c.labels[j].clone())
            };
            match slots.get(&pos) {
                None => {
                    slots.insert(pos, slot);
                }
                Some(old) if *old == slot && matches!(slot, Slot::Inner(..)) => {}
                Some(_) => return Err(Violation::UniqueLabel),
            }
        }
    }
    if slots.is_empty() {
        return Err(Violation::TreeDom);
    }
    for (pos, slot) in &slots {
        if let Slot::Inner(_, k) = slot {
            for d in 1..=*k {
                let mut child = pos.clone();
                child.push(d);
                if !slots.contains_key(&child) {
                    return Err(Violation::TreeDom);
                }
            }
        }
    }
    fn build(pos: &mut Vec<u8>, slots: &BTreeMap<Vec<u8>, Slot>) -> StackTree {
        match &slots[pos] {
            Slot::Leaf(l) => StackTree::leaf(l.clone()),
            Slot::Inner(l, k) => {
                let mut children = Vec::new();
                for d in 1..=*k {
                    pos.push(d);
                    children.push(build(pos, slots));
                    pos.pop();
                }
                StackTree::node(l.clone(), children).expect("arity at most two")
            }
        }
    }
    Ok(build(&mut Vec::new(), &slots))
}

/// Leaf codes in leaf order, acted on directly by the basic operations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Codes(pub Vec<Stack>);

impl Codes {
    /// Orders a valid leaf set by the direction words of its elements.
    pub fn from_set(x: &LeafSet) -> Option<Codes> {
        let mut v: Vec<(Vec<u8>, Stack)> =
            x.iter().map(|s| parse_chain(s).map(|c| (c.dirs, s.clone()))).collect::<Option<_>>()?;
        v.sort();
        Some(Codes(v.into_iter().map(|p| p.1).collect()))
    }

    pub fn into_set(self) -> LeafSet {
        self.0.into_iter().collect()
    }
}

impl LeafModel for Codes {
    fn step(&self, label: &EdgeLabel, i: usize) -> Option<Codes> {
        let x = self.0.get(i.checked_sub(1)?)?;
        let comps = x.components();
        let (last, prefix) = comps.split_last()?;
        match label {
            EdgeLabel::Op(op) => {
                let y = op.apply(x).ok()??;
                let mut v = self.0.clone();
                v[i - 1] = y;
                Some(Codes(v))
            }
            EdgeLabel::Dir(k) => {
                let mut new = Vec::new();
                for d in 1..=*k {
                    let mut items = prefix.to_vec();
                    items.push(push_word(&[digit(*k), digit(d)], last).ok()?);
                    items.push(last.clone());
                    new.push(Stack::from_components(items).ok()?);
                }
                let mut v = self.0.clone();
                v.splice(i - 1..i, new);
                Some(Codes(v))
            }
            EdgeLabel::Codir(k) => {
                let k = *k as usize;
                let group = self.0.get(i - 1..i - 1 + k)?;
                let parent = {
                    let (_, p) = comps.split_last()?;
                    let (marked, rest) = p.split_last()?;
                    let label = pop_word(&[digit(k as u8), digit(1)], marked).ok()??;
                    if label != *last {
                        return None;
                    }
                    let mut items = rest.to_vec();
                    items.push(label);
                    items
                };
                for (d, y) in group.iter().enumerate() {
                    let mut items = parent[..parent.len() - 1].to_vec();
                    items.push(push_word(&[digit(k as u8), digit(d as u8 + 1)], last).ok()?);
                    items.push(last.clone());
                    if *y != Stack::from_components(items).ok()? {
                        return None;
                    }
                }
                let mut v = self.0.clone();
                v.splice(i - 1..i - 1 + k, [Stack::from_components(parent).ok()?]);
                Some(Codes(v))
            }
        }
    }
}

/// Image of `D` at leaf `i`, computed on codes without rebuilding trees.
pub fn psi_apply(d: &OpDag, i: usize, x: &LeafSet) -> Result<Option<LeafSet>, DagError> {
    let dec = d.decompose().ok_or(DagError::NotCompound)?;
    let Some(codes) = Codes::from_set(x) else { return Ok(None) };
    if i == 0 || i > codes.0.len() {
        return Err(DagError::Index { index: i, count: codes.0.len() });
    }
    Ok(eval(&dec, i, codes).map(Codes::into_set))
}

/// All images of `D` over leaf indices.
pub fn psi_apply_all(d: &OpDag, x: &LeafSet) -> Result<BTreeSet<LeafSet>, DagError> {
    let mut out = BTreeSet::new();
    for i in 1..=x.len() {
        if let Some(y) = psi_apply(d, i, x)? {
            out.insert(y);
        }
    }
    Ok(out)
}

/// Parses one stack per non-empty line.
pub fn parse_leaf_set(text: &str) -> Result<LeafSet, (usize, crate::stacks::StackError)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(k, l)| Stack::parse(l.trim()).map_err(|e| (k + 1, e)))
        .collect()
}

pub fn format_leaf_set(x: &LeafSet) -> String {
    x.iter().map(|s| s.compact() + "\n").collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stack_tree::tests::fig1;

    fn s(x: &str) -> Stack {
        Stack::parse(x).unwrap()
    }

    #[test]
    fn fig1_codes() {
        let t = fig1();
        let x = encode_tree(&t).unwrap();
        let expect: LeafSet = [
            s("[[[aa][bab21]][[aa][aaa11]][[ab]]]"),
            s("[[[aa][bab22]][[aa][a][b21]][[ba][ba][b]]]"),
            s("[[[aa][bab22]][[aa][a][b22]][[abb][ab]]]"),
        ]
        .into();
        assert_eq!(x, expect);
        assert_eq!(decode(&x), Ok(t));
    }

    #[test]
    fn violations() {
        let mut x = encode_tree(&fig1()).unwrap();
        x.remove(&s("[[[aa][bab22]][[aa][a][b22]][[abb][ab]]]"));
        assert_eq!(decode(&x), Err(Violation::TreeDom));
        x.insert(s("[[[aa][bab22]][[ab][a][b22]][[abb][ab]]]"));
        assert_eq!(decode(&x), Err(Violation::UniqueLabel));
        x.insert(s("[[[aa][bab12]][[ab]]]"));
        assert_eq!(decode(&x), Err(Violation::OnlyLeaves));
        assert_eq!(decode(&LeafSet::new()), Err(Violation::TreeDom));
    }

    #[test]
    fn single_node() {
        let t = StackTree::leaf(s("[ab]"));
        assert_eq!(encode_tree(&t).unwrap(), LeafSet::from([s("[[ab]]")]));
        assert!(matches!(encode_tree(&StackTree::leaf(Stack::atom('a'))), Err(EncodeError::Order(1))));
    }

    #[test]
    fn psi_matches_tree_application() {
        let t = StackTree::parse_text("node([ab], node([ab]), node([b]))").unwrap();
        let d = OpDag::basic(crate::op_dag::TreeOp::Copy(2));
        let x = encode_tree(&t).unwrap();
        let via_codes = psi_apply_all(&d, &x).unwrap();
        let via_trees: BTreeSet<LeafSet> =
            d.apply_all(&t).unwrap().iter().map(|u| encode_tree(u).unwrap()).collect();
        assert_eq!(via_codes, via_trees);
        let back = OpDag::basic(crate::op_dag::TreeOp::Barcopy(2));
        let u = StackTree::parse_text("node([ab], node([ab], node([ab]), node([ab])), node([b]))").unwrap();
        let got = psi_apply_all(&back, &encode_tree(&u).unwrap()).unwrap();
        assert_eq!(got, BTreeSet::from([x]));
    }
}
