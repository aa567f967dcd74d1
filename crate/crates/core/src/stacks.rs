//! Higher-order stacks, basic stack operations and regular test languages.
//!
//! A stack of level 0 is a single symbol; a stack of level `k ≥ 1` is a
//! non-empty sequence of level `k-1` stacks whose last element is the top.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde_json::{json, Value};
use thiserror::Error;

use crate::dfa::{Dfa, Nfa};

/// Direction symbols used by the tree encoding; never valid in user alphabets.
pub const RESERVED: [char; 2] = ['1', '2'];

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Symbol(pub char);

impl fmt::Debug for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Symbol {
    pub fn is_reserved(self) -> bool {
        RESERVED.contains(&self.0)
    }

    fn valid_char(c: char) -> bool {
        !c.is_whitespace() && !matches!(c, '[' | ']' | '_' | '(' | ')' | ',' | ';')
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StackError {
    #[error("operation of level {op} applied to a stack of level {stack}")]
    LevelMismatch { op: u8, stack: u8 },
    #[error("malformed stack: {0}")]
    Malformed(String),
    #[error("parse error at column {col}: {msg}")]
    Parse { col: usize, msg: String },
    #[error("invalid alphabet: {0}")]
    Alphabet(String),
}

/// Finite ordered alphabet of user symbols.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Alphabet(Vec<Symbol>);

impl Alphabet {
    pub fn new(symbols: impl IntoIterator<Item = char>) -> Result<Alphabet, StackError> {
        let mut v: Vec<Symbol> = symbols.into_iter().map(Symbol).collect();
        v.sort();
        v.dedup();
        if v.is_empty() {
            return Err(StackError::Alphabet("empty".into()));
        }
        if let Some(s) = v.iter().find(|s| s.is_reserved() || !Symbol::valid_char(s.0)) {
            return Err(StackError::Alphabet(format!("symbol '{s}' is reserved")));
        }
        Ok(Alphabet(v))
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.0
    }

    pub fn contains(&self, s: Symbol) -> bool {
        self.0.binary_search(&s).is_ok()
    }

    /// Alphabet extended by the two direction symbols.
    pub fn with_directions(&self) -> Vec<Symbol> {
        let mut v = self.0.clone();
        v.extend(RESERVED.iter().map(|&c| Symbol(c)));
        v.sort();
        v
    }
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stack {
    Atom(Symbol),
    Seq(u8, Vec<Stack>),
}

/// Token of the bracketed serialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Token {
    Sym(Symbol),
    Open(u8),
    Close(u8),
}

impl Stack {
    pub fn atom(c: char) -> Stack {
        Stack::Atom(Symbol(c))
    }

    /// Level-1 stack from a word, bottom first.
    pub fn word(w: &str) -> Stack {
        assert!(!w.is_empty(), "1-stacks are non-empty");
        Stack::Seq(1, w.chars().map(Stack::atom).collect())
    }

    pub fn from_components(items: Vec<Stack>) -> Result<Stack, StackError> {
        let Some(first) = items.first() else {
            return Err(StackError::Malformed("empty sequence".into()));
        };
        let l = first.level();
        if items.iter().any(|s| s.level() != l) {
            return Err(StackError::Malformed("components of different levels".into()));
        }
        Ok(Stack::Seq(l + 1, items))
    }

    pub fn level(&self) -> u8 {
        match self {
            Stack::Atom(_) => 0,
            Stack::Seq(l, _) => *l,
        }
    }

    pub fn components(&self) -> &[Stack] {
        match self {
            Stack::Atom(_) => &[],
            Stack::Seq(_, v) => v,
        }
    }

    /// Number of components (`|s|`); 1 for a symbol.
    pub fn size(&self) -> usize {
        match self {
            Stack::Atom(_) => 1,
            Stack::Seq(_, v) => v.len(),
        }
    }

    pub fn atom_count(&self) -> usize {
        match self {
            Stack::Atom(_) => 1,
            Stack::Seq(_, v) => v.iter().map(Stack::atom_count).sum(),
        }
    }

    pub fn top(&self) -> Option<&Stack> {
        self.components().last()
    }

    pub fn top_symbol(&self) -> Symbol {
        match self {
            Stack::Atom(a) => *a,
            Stack::Seq(_, v) => v.last().expect("non-empty").top_symbol(),
        }
    }

    /// Topmost component at the given level (`level ≤ self.level()`).
    pub fn top_at(&self, level: u8) -> &Stack {
        if self.level() == level {
            self
        } else {
            self.components().last().expect("non-empty").top_at(level)
        }
    }

    fn top_at_mut(&mut self, level: u8) -> &mut Stack {
        if self.level() == level {
            self
        } else {
            match self {
                Stack::Seq(_, v) => v.last_mut().expect("non-empty").top_at_mut(level),
                Stack::Atom(_) => unreachable!(),
            }
        }
    }

    pub fn symbols(&self) -> Vec<Symbol> {
        let mut out = Vec::new();
        self.for_each_symbol(&mut |s| out.push(s));
        out
    }

    fn for_each_symbol(&self, f: &mut impl FnMut(Symbol)) {
        match self {
            Stack::Atom(a) => f(*a),
            Stack::Seq(_, v) => v.iter().for_each(|s| s.for_each_symbol(f)),
        }
    }

    pub fn tokens(&self) -> Vec<Token> {
        let mut out = Vec::new();
        self.push_tokens(&mut out);
        out
    }

    fn push_tokens(&self, out: &mut Vec<Token>) {
        match self {
            Stack::Atom(a) => out.push(Token::Sym(*a)),
            Stack::Seq(l, v) => {
                out.push(Token::Open(*l));
                v.iter().for_each(|s| s.push_tokens(out));
                out.push(Token::Close(*l));
            }
        }
    }

    /// Canonical serialization `[_k x1 … xm ]_k`.
    pub fn serialize(&self) -> String {
        self.tokens()
            .iter()
            .map(|t| match t {
                Token::Sym(s) => s.0.to_string(),
                Token::Open(l) => format!("[_{l}"),
                Token::Close(l) => format!("]_{l}"),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Compact human form, e.g. `[[aa][bab]]`.
    pub fn compact(&self) -> String {
        match self {
            Stack::Atom(a) => a.0.to_string(),
            Stack::Seq(_, v) => format!("[{}]", v.iter().map(Stack::compact).collect::<String>()),
        }
    }

    /// Parses the canonical form or the compact form (levels inferred from nesting).
    pub fn parse(text: &str) -> Result<Stack, StackError> {
        let chars: Vec<char> = text.chars().collect();
        let mut p = Parser { chars: &chars, pos: 0 };
        let s = p.stack()?;
        p.skip_ws();
        if p.pos != chars.len() {
            return Err(p.err("trailing input"));
        }
        Ok(s)
    }

    pub fn to_json(&self) -> Value {
        fn body(s: &Stack) -> Value {
            match s {
                Stack::Atom(a) => Value::String(a.0.to_string()),
                Stack::Seq(_, v) => Value::Array(v.iter().map(body).collect()),
            }
        }
        json!({ "level": self.level(), "stack": body(self) })
    }

    pub fn from_json(v: &Value) -> Result<Stack, StackError> {
        fn body(v: &Value, level: u64) -> Result<Stack, StackError> {
            match (v, level) {
                (Value::String(s), 0) => {
                    let mut it = s.chars();
                    match (it.next(), it.next()) {
                        (Some(c), None) if Symbol::valid_char(c) => Ok(Stack::atom(c)),
                        _ => Err(StackError::Malformed(format!("bad symbol {s:?}"))),
                    }
                }
                (Value::Array(items), l) if l > 0 => {
                    let items =
                        items.iter().map(|x| body(x, l - 1)).collect::<Result<Vec<_>, _>>()?;
                    Stack::from_components(items)
                }
                // level-1 shorthand: a plain string word
                (Value::String(s), 1) if !s.is_empty() => Ok(Stack::word(s)),
                _ => Err(StackError::Malformed(format!("expected level-{level} stack"))),
            }
        }
        let level = v
            .get("level")
            .and_then(Value::as_u64)
            .ok_or_else(|| StackError::Malformed("missing level".into()))?;
        let b = v.get("stack").ok_or_else(|| StackError::Malformed("missing stack".into()))?;
        body(b, level)
    }
}

impl fmt::Display for Stack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

impl fmt::Debug for Stack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.compact())
    }
}

struct Parser<'a> {
    chars: &'a [char],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> StackError {
        StackError::Parse { col: self.pos + 1, msg: msg.into() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn level_suffix(&mut self) -> Result<Option<u8>, StackError> {
        if self.chars.get(self.pos) != Some(&'_') {
            return Ok(None);
        }
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.chars.len() && self.chars[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let digits: String = self.chars[start..self.pos].iter().collect();
        digits.parse::<u8>().map(Some).map_err(|_| self.err("expected level digits"))
    }

    fn stack(&mut self) -> Result<Stack, StackError> {
        self.skip_ws();
        match self.chars.get(self.pos) {
            None => Err(self.err("unexpected end of input")),
            Some('[') => {
                self.pos += 1;
                let declared = self.level_suffix()?;
                let mut items = Vec::new();
                loop {
                    self.skip_ws();
                    match self.chars.get(self.pos) {
                        None => return Err(self.err("unclosed bracket")),
                        Some(']') => {
                            self.pos += 1;
                            let close = self.level_suffix()?;
                            let s = Stack::from_components(items).map_err(|e| match e {
                                StackError::Malformed(m) => self.err(&m),
                                e => e,
                            })?;
                            for l in [declared, close].into_iter().flatten() {
                                if l != s.level() {
                                    return Err(self.err(&format!(
                                        "bracket level {l} but content has level {}",
                                        s.level()
                                    )));
                                }
                            }
                            return Ok(s);
                        }
                        Some(_) => items.push(self.stack()?),
                    }
                }
            }
            Some(&c) if Symbol::valid_char(c) => {
                self.pos += 1;
                Ok(Stack::atom(c))
            }
            Some(_) => Err(self.err("unexpected character")),
        }
    }
}

/// Regular set of stacks of a fixed level, given by a DFA over the serialization.
///
/// Tokens are numbered: symbols in `symbols` order, then `Open(l)`, `Close(l)`
/// for `l = 1..=level`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TestLanguage {
    level: u8,
    symbols: Vec<Symbol>,
    dfa: Dfa,
}

impl TestLanguage {
    fn n_tokens(level: u8, symbols: &[Symbol]) -> usize {
        symbols.len() + 2 * level as usize
    }

    fn norm_symbols(symbols: &[Symbol]) -> Vec<Symbol> {
        let mut v = symbols.to_vec();
        v.sort();
        v.dedup();
        v
    }

    pub fn from_dfa(level: u8, symbols: &[Symbol], dfa: Dfa) -> Result<TestLanguage, StackError> {
        let symbols = Self::norm_symbols(symbols);
        let k = Self::n_tokens(level, &symbols);
        let n = dfa.accept.len();
        if dfa.n_tokens != k || dfa.delta.len() != n * k || dfa.start as usize >= n.max(1) {
            return Err(StackError::Malformed("DFA shape does not match token alphabet".into()));
        }
        if dfa.delta.iter().any(|&q| q as usize >= n) {
            return Err(StackError::Malformed("DFA transition out of range".into()));
        }
        Ok(TestLanguage { level, symbols, dfa: dfa.minimize() })
    }

    pub fn full(level: u8, symbols: &[Symbol]) -> TestLanguage {
        let symbols = Self::norm_symbols(symbols);
        let dfa = Dfa::constant(Self::n_tokens(level, &symbols), true);
        TestLanguage { level, symbols, dfa }
    }

    pub fn empty(level: u8, symbols: &[Symbol]) -> TestLanguage {
        let symbols = Self::norm_symbols(symbols);
        let dfa = Dfa::constant(Self::n_tokens(level, &symbols), false);
        TestLanguage { level, symbols, dfa }
    }

    /// Two-state machine: the flag is set/reset by symbol tokens and `Open(1)`.
    fn flag_machine(
        level: u8,
        symbols: &[Symbol],
        on_sym: impl Fn(Symbol, bool) -> bool,
        reset_on_open1: bool,
    ) -> TestLanguage {
        let symbols = Self::norm_symbols(symbols);
        let k = Self::n_tokens(level, &symbols);
        let mut delta = Vec::with_capacity(2 * k);
        for q in [false, true] {
            for t in 0..k {
                let next = if t < symbols.len() {
                    on_sym(symbols[t], q)
                } else if reset_on_open1 && t == symbols.len() {
                    false
                } else {
                    q
                };
                delta.push(next as u32);
            }
        }
        let dfa = Dfa { n_tokens: k, start: 0, accept: vec![false, true], delta }.minimize();
        TestLanguage { level, symbols, dfa }
    }

    /// Stacks whose topmost symbol is in `set`.
    pub fn top_symbol_in(level: u8, symbols: &[Symbol], set: &[Symbol]) -> TestLanguage {
        Self::flag_machine(level, symbols, |s, _| set.contains(&s), false)
    }

    /// Stacks whose topmost 1-stack contains `sym` (level ≥ 1).
    pub fn top_one_stack_contains(level: u8, symbols: &[Symbol], sym: Symbol) -> TestLanguage {
        assert!(level >= 1);
        Self::flag_machine(level, symbols, move |s, q| q || s == sym, true)
    }

    /// Stacks containing `sym` anywhere.
    pub fn contains(level: u8, symbols: &[Symbol], sym: Symbol) -> TestLanguage {
        Self::flag_machine(level, symbols, move |s, q| q || s == sym, false)
    }

    /// Finite set of stacks.
    pub fn from_stacks<'a>(
        level: u8,
        symbols: &[Symbol],
        stacks: impl IntoIterator<Item = &'a Stack>,
    ) -> TestLanguage {
        let symbols = Self::norm_symbols(symbols);
        let base = TestLanguage::empty(level, &symbols);
        let mut nfa = Nfa::new(base.dfa.n_tokens);
        let root = nfa.add_state(false);
        nfa.starts.push(root);
        for s in stacks {
            let Some(toks) = base.token_indices(s) else { continue };
            let mut q = root;
            for t in toks {
                let r = nfa.add_state(false);
                nfa.add(q, t, r);
                q = r;
            }
            nfa.accept[q as usize] = true;
        }
        TestLanguage { level, symbols, dfa: nfa.determinize() }
    }

    /// Random complete DFA with `n` states.
    pub fn random<R: Rng>(level: u8, symbols: &[Symbol], n: usize, rng: &mut R) -> TestLanguage {
        let symbols = Self::norm_symbols(symbols);
        let k = Self::n_tokens(level, &symbols);
        let delta = (0..n * k).map(|_| rng.gen_range(0..n as u32)).collect();
        let accept = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let dfa = Dfa { n_tokens: k, start: 0, accept, delta }.minimize();
        TestLanguage { level, symbols, dfa }
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    pub fn dfa(&self) -> &Dfa {
        &self.dfa
    }

    pub fn token_index(&self, t: Token) -> Option<usize> {
        let ns = self.symbols.len();
        match t {
            Token::Sym(s) => self.symbols.binary_search(&s).ok(),
            Token::Open(l) if (1..=self.level).contains(&l) => Some(ns + 2 * (l as usize - 1)),
            Token::Close(l) if (1..=self.level).contains(&l) => Some(ns + 2 * (l as usize - 1) + 1),
            _ => None,
        }
    }

    fn token_indices(&self, s: &Stack) -> Option<Vec<usize>> {
        s.tokens().into_iter().map(|t| self.token_index(t)).collect()
    }

    pub fn contains_stack(&self, s: &Stack) -> Result<bool, StackError> {
        if s.level() != self.level {
            return Err(StackError::LevelMismatch { op: self.level, stack: s.level() });
        }
        Ok(match self.token_indices(s) {
            Some(toks) => self.dfa.accepts(toks),
            None => false,
        })
    }

    /// Serializations of all stacks of `level` over `symbols`.
    pub fn well_formed(level: u8, symbols: &[Symbol]) -> TestLanguage {
        let symbols = Self::norm_symbols(symbols);
        let ns = symbols.len();
        let k = Self::n_tokens(level, &symbols);
        // state: open levels so far, each flagged once it has a component
        let mut index: HashMap<Vec<bool>, u32> = HashMap::new();
        let mut nfa = Nfa::new(k);
        let done = nfa.add_state(level > 0);
        let start = nfa.add_state(false);
        nfa.starts.push(start);
        let mut queue = vec![(start, vec![])];
        while let Some((q, open)) = queue.pop() {
            let depth = open.len();
            let mut go = |nfa: &mut Nfa, tok: usize, next: Option<Vec<bool>>, queue: &mut Vec<(u32, Vec<bool>)>| {
                let to = match next {
                    None => done,
                    Some(v) => *index.entry(v.clone()).or_insert_with(|| {
                        let r = nfa.add_state(false);
                        queue.push((r, v));
                        r
                    }),
                };
                nfa.add(q, tok, to);
            };
            if level == 0 {
                for t in 0..ns {
                    nfa.add(q, t, done);
                }
                break;
            }
            // a symbol is a component of an open 1-stack
            if depth == level as usize {
                let mut v = open.clone();
                *v.last_mut().unwrap() = true;
                for t in 0..ns {
                    go(&mut nfa, t, Some(v.clone()), &mut queue);
                }
            }
            // opening level l = level - depth
            if depth < level as usize {
                let l = level as usize - depth;
                let mut v = open.clone();
                v.push(false);
                go(&mut nfa, ns + 2 * (l - 1), Some(v), &mut queue);
            }
            // closing the innermost open level needs a component
            if depth > 0 && open[depth - 1] {
                let l = level as usize - depth + 1;
                if depth == 1 {
                    go(&mut nfa, ns + 2 * (l - 1) + 1, None, &mut queue);
                } else {
                    let mut v = open[..depth - 1].to_vec();
                    *v.last_mut().unwrap() = true;
                    go(&mut nfa, ns + 2 * (l - 1) + 1, Some(v), &mut queue);
                }
            }
        }
        if level == 0 {
            nfa.accept[done as usize] = true;
        }
        TestLanguage { level, symbols, dfa: nfa.determinize() }
    }

    /// No stack belongs to the language.
    pub fn is_empty(&self) -> bool {
        self.dfa.is_empty()
            || self.intersect(&Self::well_formed(self.level, &self.symbols)).is_ok_and(|l| l.dfa.is_empty())
    }

    /// Every stack over the symbols belongs to the language.
    pub fn is_universal(&self) -> bool {
        self.is_full_dfa() || self.complement().is_empty()
    }

    pub fn is_full_dfa(&self) -> bool {
        self.dfa.n_states() == 1 && self.dfa.accept[0]
    }

    /// Same language over a larger symbol set (new symbols lead to rejection).
    pub fn with_symbols(&self, symbols: &[Symbol]) -> TestLanguage {
        let symbols = Self::norm_symbols(symbols);
        if symbols == self.symbols {
            return self.clone();
        }
        let ns = symbols.len();
        let mut map: Vec<Option<usize>> =
            symbols.iter().map(|s| self.symbols.binary_search(s).ok()).collect();
        for t in 0..2 * self.level as usize {
            map.push(Some(self.symbols.len() + t));
        }
        debug_assert_eq!(map.len(), ns + 2 * self.level as usize);
        TestLanguage { level: self.level, symbols, dfa: self.dfa.remap_tokens(&map) }
    }

    fn align(&self, other: &TestLanguage) -> Result<(TestLanguage, TestLanguage), StackError> {
        if self.level != other.level {
            return Err(StackError::LevelMismatch { op: other.level, stack: self.level });
        }
        let mut syms = self.symbols.clone();
        syms.extend_from_slice(&other.symbols);
        let syms = Self::norm_symbols(&syms);
        Ok((self.with_symbols(&syms), other.with_symbols(&syms)))
    }

    pub fn intersect(&self, other: &TestLanguage) -> Result<TestLanguage, StackError> {
        let (a, b) = self.align(other)?;
        let dfa = a.dfa.product(&b.dfa, |x, y| x && y);
        Ok(TestLanguage { level: a.level, symbols: a.symbols, dfa })
    }

    pub fn union(&self, other: &TestLanguage) -> Result<TestLanguage, StackError> {
        let (a, b) = self.align(other)?;
        let dfa = a.dfa.product(&b.dfa, |x, y| x || y);
        Ok(TestLanguage { level: a.level, symbols: a.symbols, dfa })
    }

    pub fn complement(&self) -> TestLanguage {
        TestLanguage { level: self.level, symbols: self.symbols.clone(), dfa: self.dfa.complement() }
    }

    /// Compact single-line description used by the textual formats.
    pub fn describe(&self) -> String {
        let syms: String = self.symbols.iter().map(|s| s.0).collect();
        let acc: Vec<String> = self
            .dfa
            .accept
            .iter()
            .enumerate()
            .filter(|(_, a)| **a)
            .map(|(i, _)| i.to_string())
            .collect();
        let delta: Vec<String> = self.dfa.delta.iter().map(u32::to_string).collect();
        format!(
            "l={};s={};n={};f={};d={}",
            self.level,
            syms,
            self.dfa.n_states(),
            acc.join(","),
            delta.join(",")
        )
    }

    pub fn parse_described(text: &str) -> Result<TestLanguage, StackError> {
        let bad = |m: &str| StackError::Malformed(format!("test description: {m}"));
        let mut level = None;
        let mut syms = None;
        let mut n = None;
        let mut acc = None;
        let mut delta = None;
        for part in text.split(';') {
            let (k, v) = part.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            let nums = |v: &str| -> Result<Vec<u32>, StackError> {
                if v.is_empty() {
                    return Ok(vec![]);
                }
                v.split(',').map(|x| x.trim().parse::<u32>().map_err(|_| bad("number"))).collect()
            };
            match k.trim() {
                "l" => level = Some(v.trim().parse::<u8>().map_err(|_| bad("level"))?),
                "s" => syms = Some(v.trim().chars().map(Symbol).collect::<Vec<_>>()),
                "n" => n = Some(v.trim().parse::<usize>().map_err(|_| bad("state count"))?),
                "f" => acc = Some(nums(v)?),
                "d" => delta = Some(nums(v)?),
                _ => return Err(bad("unknown key")),
            }
        }
        let (Some(level), Some(syms), Some(n), Some(acc), Some(delta)) = (level, syms, n, acc, delta)
        else {
            return Err(bad("missing field"));
        };
        let mut accept = vec![false; n];
        for a in acc {
            *accept.get_mut(a as usize).ok_or_else(|| bad("accepting state out of range"))? = true;
        }
        let k = Self::n_tokens(level, &Self::norm_symbols(&syms));
        TestLanguage::from_dfa(level, &syms, Dfa { n_tokens: k, start: 0, accept, delta })
    }
}

/// Basic stack operation of some level.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StackOp {
    Rew(Symbol, Symbol),
    Id,
    Cop(u8),
    Ncop(u8),
    Test(Arc<TestLanguage>),
}

impl StackOp {
    pub fn rew(a: char, b: char) -> StackOp {
        StackOp::Rew(Symbol(a), Symbol(b))
    }

    pub fn test(l: TestLanguage) -> StackOp {
        StackOp::Test(Arc::new(l))
    }

    pub fn level(&self) -> u8 {
        match self {
            StackOp::Rew(..) | StackOp::Id => 0,
            StackOp::Cop(k) | StackOp::Ncop(k) => *k,
            StackOp::Test(l) => l.level(),
        }
    }

    pub fn is_test(&self) -> bool {
        matches!(self, StackOp::Test(_))
    }

    /// Applies the operation to the topmost component of matching level.
    /// `Ok(None)` means the partial function is undefined on `s`.
    pub fn apply(&self, s: &Stack) -> Result<Option<Stack>, StackError> {
        let l = self.level();
        if l > s.level() || matches!(self, StackOp::Cop(0) | StackOp::Ncop(0)) {
            return Err(StackError::LevelMismatch { op: l, stack: s.level() });
        }
        if let StackOp::Test(lang) = self {
            return Ok(lang.contains_stack(s.top_at(l))?.then(|| s.clone()));
        }
        let mut out = s.clone();
        let target = out.top_at_mut(l);
        let ok = match (self, target) {
            (StackOp::Id, _) => true,
            (StackOp::Rew(a, b), Stack::Atom(c)) => {
                if c == a {
                    *c = *b;
                    true
                } else {
                    false
                }
            }
            (StackOp::Cop(_), Stack::Seq(_, v)) => {
                let top = v.last().expect("non-empty").clone();
                v.push(top);
                true
            }
            (StackOp::Ncop(_), Stack::Seq(_, v)) => {
                let n = v.len();
                if n >= 2 && v[n - 1] == v[n - 2] {
                    v.pop();
                    true
                } else {
                    false
                }
            }
            _ => unreachable!("level checked above"),
        };
        Ok(ok.then_some(out))
    }

    pub fn describe(&self) -> String {
        match self {
            StackOp::Rew(a, b) => format!("rew({a},{b})"),
            StackOp::Id => "id".into(),
            StackOp::Cop(k) => format!("cop({k})"),
            StackOp::Ncop(k) => format!("ncop({k})"),
            StackOp::Test(l) => format!("test({})", l.describe()),
        }
    }

    pub fn parse(text: &str) -> Result<StackOp, StackError> {
        let t = text.trim();
        let bad = || StackError::Malformed(format!("unknown stack operation {t:?}"));
        if t == "id" {
            return Ok(StackOp::Id);
        }
        let (name, rest) = t.split_once('(').ok_or_else(bad)?;
        let args = rest.strip_suffix(')').ok_or_else(bad)?;
        match name {
            "rew" => {
                let (a, b) = args.split_once(',').ok_or_else(bad)?;
                let one = |x: &str| {
                    let mut it = x.trim().chars();
                    match (it.next(), it.next()) {
                        (Some(c), None) if Symbol::valid_char(c) => Ok(Symbol(c)),
                        _ => Err(bad()),
                    }
                };
                Ok(StackOp::Rew(one(a)?, one(b)?))
            }
            "cop" | "ncop" => {
                let k: u8 = args.trim().parse().map_err(|_| bad())?;
                if k == 0 {
                    return Err(bad());
                }
                Ok(if name == "cop" { StackOp::Cop(k) } else { StackOp::Ncop(k) })
            }
            "test" => Ok(StackOp::test(TestLanguage::parse_described(args)?)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Debug for StackOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StackOp::Test(_) => write!(f, "T"),
            other => f.write_str(&other.describe()),
        }
    }
}

/// Appends `w` to the topmost 1-stack.
pub fn push_word(w: &[Symbol], s: &Stack) -> Result<Stack, StackError> {
    if s.level() == 0 {
        return Err(StackError::LevelMismatch { op: 1, stack: 0 });
    }
    let mut out = s.clone();
    if let Stack::Seq(_, v) = out.top_at_mut(1) {
        v.extend(w.iter().map(|&c| Stack::Atom(c)));
    }
    Ok(out)
}

/// Inverse of [`push_word`]; `Ok(None)` when the topmost 1-stack does not end
/// with `w` or would become empty.
pub fn pop_word(w: &[Symbol], s: &Stack) -> Result<Option<Stack>, StackError> {
    if s.level() == 0 {
        return Err(StackError::LevelMismatch { op: 1, stack: 0 });
    }
    let top = s.top_at(1).components();
    if top.len() <= w.len() || !top[top.len() - w.len()..].iter().zip(w).all(|(x, c)| *x == Stack::Atom(*c))
    {
        return Ok(None);
    }
    let mut out = s.clone();
    if let Stack::Seq(_, v) = out.top_at_mut(1) {
        v.truncate(v.len() - w.len());
    }
    Ok(Some(out))
}

/// All stacks of `level` over `symbols` with at most `max_atoms` symbols in total.
pub fn enumerate_stacks(level: u8, symbols: &[Symbol], max_atoms: usize) -> Vec<Stack> {
    fn go(level: u8, symbols: &[Symbol], budget: usize) -> Vec<(Stack, usize)> {
        if budget == 0 {
            return vec![];
        }
        if level == 0 {
            return symbols.iter().map(|&s| (Stack::Atom(s), 1)).collect();
        }
        let parts = go(level - 1, symbols, budget);
        // sequences of parts whose cost sum ≤ budget
        let mut out = Vec::new();
        let mut frontier: Vec<(Vec<Stack>, usize)> = vec![(vec![], 0)];
        while let Some((seq, cost)) = frontier.pop() {
            for (p, c) in &parts {
                if cost + c <= budget {
                    let mut s = seq.clone();
                    s.push(p.clone());
                    out.push((Stack::Seq(level, s.clone()), cost + c));
                    frontier.push((s, cost + c));
                }
            }
        }
        out
    }
    let mut v: Vec<Stack> = go(level, symbols, max_atoms).into_iter().map(|(s, _)| s).collect();
    v.sort();
    v.dedup();
    v
}

/// Random stack with `1..=max_len` components at every level.
pub fn random_stack<R: Rng>(level: u8, symbols: &[Symbol], max_len: usize, rng: &mut R) -> Stack {
    if level == 0 {
        return Stack::Atom(symbols[rng.gen_range(0..symbols.len())]);
    }
    let n = rng.gen_range(1..=max_len);
    Stack::Seq(level, (0..n).map(|_| random_stack(level - 1, symbols, max_len, rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn syms(s: &str) -> Vec<Symbol> {
        s.chars().map(Symbol).collect()
    }

    #[test]
    fn cop2_on_three_stack() {
        let s = Stack::parse("[[[aba]] [[aba][b][aa]]]").unwrap();
        assert_eq!(s.level(), 3);
        let r = StackOp::Cop(2).apply(&s).unwrap().unwrap();
        assert_eq!(r, Stack::parse("[[[aba]] [[aba][b][aa][aa]]]").unwrap());
    }

    #[test]
    fn rew_and_ncop_partiality() {
        assert_eq!(StackOp::rew('a', 'b').apply(&Stack::atom('a')).unwrap(), Some(Stack::atom('b')));
        assert_eq!(StackOp::rew('a', 'b').apply(&Stack::atom('c')).unwrap(), None);
        assert_eq!(StackOp::Ncop(1).apply(&Stack::word("ab")).unwrap(), None);
        assert!(matches!(
            StackOp::Cop(2).apply(&Stack::word("ab")),
            Err(StackError::LevelMismatch { .. })
        ));
    }

    #[test]
    fn serialization_forms() {
        let s = Stack::parse("[[aa][bab]]").unwrap();
        assert_eq!(s.serialize(), "[_2 [_1 a a ]_1 [_1 b a b ]_1 ]_2");
        assert_eq!(Stack::parse(&s.serialize()).unwrap(), s);
        assert_eq!(Stack::parse(" [_1 a\n b ]_1 ").unwrap(), Stack::word("ab"));
        assert!(Stack::parse("[_2 a ]_2").is_err());
        assert!(Stack::parse("[]").is_err());
        assert_eq!(Stack::from_json(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn push_pop_word() {
        let s = Stack::parse("[[aa][bab]]").unwrap();
        let p = push_word(&syms("21"), &s).unwrap();
        assert_eq!(p.compact(), "[[aa][bab21]]");
        assert_eq!(pop_word(&syms("21"), &p).unwrap(), Some(s.clone()));
        assert_eq!(push_word(&[], &s).unwrap(), s);
        assert_eq!(pop_word(&syms("a"), &Stack::word("a")).unwrap(), None);
    }

    #[test]
    fn membership_examples() {
        let sy = syms("ab↑");
        let l = TestLanguage::top_one_stack_contains(2, &sy, Symbol('↑'));
        assert!(l.contains_stack(&Stack::parse("[[ba↑]]").unwrap()).unwrap());
        assert!(!l.contains_stack(&Stack::parse("[[ba]]").unwrap()).unwrap());
        assert!(!l.contains_stack(&Stack::parse("[[↑][ba]]").unwrap()).unwrap());
        assert!(l.contains_stack(&Stack::word("a")).is_err());
    }

    #[test]
    fn described_round_trip() {
        let l = TestLanguage::top_symbol_in(1, &syms("ab"), &syms("a"));
        let back = TestLanguage::parse_described(&l.describe()).unwrap();
        assert_eq!(back, l);
        let op = StackOp::test(l);
        assert_eq!(StackOp::parse(&op.describe()).unwrap(), op);
    }

    #[test]
    fn well_formed_matches_parsing() {
        let sy = syms("ab");
        for level in 0..=2u8 {
            let wf = TestLanguage::well_formed(level, &sy);
            for s in enumerate_stacks(level, &sy, 3) {
                assert!(wf.contains_stack(&s).unwrap(), "{}", s.compact());
            }
            assert!(TestLanguage::full(level, &sy).is_universal());
            assert!(!TestLanguage::top_symbol_in(level, &sy, &syms("a")).is_universal());
            assert!(TestLanguage::top_symbol_in(level, &sy, &syms("ab")).is_universal());
        }
        let wf = TestLanguage::well_formed(1, &sy);
        let toks = |v: &[usize]| wf.dfa.accepts(v.iter().copied());
        assert!(!toks(&[2, 3]));
        assert!(!toks(&[0]));
        assert!(toks(&[2, 0, 1, 3]));
    }

    #[test]
    fn enumerate_counts() {
        assert_eq!(enumerate_stacks(1, &syms("ab"), 3).len(), 14);
        assert_eq!(enumerate_stacks(0, &syms("ab"), 3).len(), 2);
    }
}
