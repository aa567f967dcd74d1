//! Input documents: JSON objects tagged with `kind` and `format: 1`.

use std::fmt;
use std::path::Path;

use hostree::op_automaton::OperationAutomaton;
use hostree::op_dag::OpDag;
use hostree::rewriting::Gstrs;
use hostree::treegraph_encoding::{parse_leaf_set, LeafSet};
use hostree::StackTree;
use serde_json::{json, Value};

pub const FORMAT: u64 = 1;

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Parse(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 64,
            Failure::Parse(_) => 65,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Parse(m) => write!(f, "parse error: {m}"),
        }
    }
}

pub fn parse_err(path: &Path, msg: impl fmt::Display) -> Failure {
    Failure::Parse(format!("{}: {msg}", path.display()))
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))
}

/// Wraps a payload object into a document of the given kind.
pub fn envelope(kind: &str, mut payload: Value) -> Value {
    if let Value::Object(m) = &mut payload {
        m.insert("kind".into(), json!(kind));
        m.insert("format".into(), json!(FORMAT));
        payload
    } else {
        json!({ "kind": kind, "format": FORMAT, "value": payload })
    }
}

pub fn read_doc(path: &Path, kinds: &[&str]) -> Result<(String, Value), Failure> {
    let text = read(path)?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| parse_err(path, e))?;
    match v.get("format").and_then(Value::as_u64) {
        Some(FORMAT) => {}
        Some(f) => return Err(parse_err(path, format!("unsupported format {f}"))),
        None => return Err(parse_err(path, "missing \"format\": 1")),
    }
    let kind = v.get("kind").and_then(Value::as_str).ok_or_else(|| parse_err(path, "missing \"kind\""))?;
    if !kinds.contains(&kind) {
        return Err(parse_err(path, format!("expected a {} document, found {kind}", kinds.join(" or "))));
    }
    Ok((kind.to_string(), v))
}

pub fn tree_from(path: &Path, v: &Value) -> Result<StackTree, Failure> {
    match v.get("text").and_then(Value::as_str) {
        Some(t) => StackTree::parse_text(t),
        None => StackTree::from_json(v),
    }
    .map_err(|e| parse_err(path, e))
}

pub fn read_tree(path: &Path) -> Result<StackTree, Failure> {
    let (_, v) = read_doc(path, &["tree"])?;
    tree_from(path, &v)
}

pub fn read_dag(path: &Path) -> Result<OpDag, Failure> {
    let (_, v) = read_doc(path, &["dag"])?;
    OpDag::from_json(&v).map_err(|e| parse_err(path, e))
}

pub fn read_system(path: &Path) -> Result<Gstrs, Failure> {
    let (_, v) = read_doc(path, &["system"])?;
    Gstrs::from_json(&v).map_err(|e| parse_err(path, e))
}

/// Automaton documents, or the automaton inside a normalization result.
pub fn read_automaton(path: &Path) -> Result<OperationAutomaton, Failure> {
    let (kind, v) = read_doc(path, &["automaton", "normalized"])?;
    let body = if kind == "normalized" { v.get("automaton").cloned().unwrap_or(Value::Null) } else { v };
    OperationAutomaton::from_json(&body).map_err(|e| parse_err(path, e))
}

/// Leaf sets: one stack per line, or a `leafset` document with a `codes` array.
pub fn read_leaf_set(path: &Path) -> Result<LeafSet, Failure> {
    let text = read(path)?;
    if text.trim_start().starts_with('{') {
        let (_, v) = read_doc(path, &["leafset"])?;
        let codes = v.get("codes").and_then(Value::as_array).ok_or_else(|| parse_err(path, "missing codes"))?;
        let lines: Vec<String> = codes
            .iter()
            .map(|c| c.as_str().map(String::from).ok_or_else(|| parse_err(path, "codes must be strings")))
            .collect::<Result<_, _>>()?;
        return parse_leaf_set(&lines.join("\n")).map_err(|(l, e)| parse_err(path, format!("code {l}: {e}")));
    }
    parse_leaf_set(&text).map_err(|(l, e)| parse_err(path, format!("line {l}: {e}")))
}

pub fn tree_doc(t: &StackTree) -> Value {
    envelope("tree", t.to_json())
}

pub fn dag_doc(d: &OpDag) -> Value {
    envelope("dag", d.to_json())
}

pub fn automaton_doc(a: &OperationAutomaton) -> Value {
    envelope("automaton", a.to_json())
}

pub fn system_doc(g: &Gstrs) -> Value {
    envelope("system", g.to_json())
}
