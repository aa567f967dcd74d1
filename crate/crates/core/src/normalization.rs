//! Normalisation of operation automata into distinguished automata with tests
//! whose accepted operations are all reduced.
//!
//! The pipeline is: [`step1_split`], [`step2_bubble_tests`], [`step3_split_dc`],
//! [`step4_normalize_stack_parts`], [`step5_remove_id`], [`step6_split_tests`]
//! and [`distinguish`]. Each step checks the stage of its input.
//!
//! Stack parts are analysed through segment summaries: `Seg(c, p, a, q, b)`
//! holds when some run of the stack-only sub-automaton goes from `p` to `q`,
//! turning a topmost symbol `a` into `b` without ever popping below it, on a
//! stack whose cells below the top drive the joint test automaton to `c`.
//! Exact for labels of level ≤ 1 (automata of order ≤ 2); higher orders fall
//! back to enumeration of bounded stacks and are flagged as such.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::sync::Arc;

use serde_json::{json, Value};
use thiserror::Error;

use crate::dfa::Nfa;
use crate::exec::Exec;
use crate::op_automaton::{AutError, LinLabel, OperationAutomaton, State};
use crate::stacks::{enumerate_stacks, Stack, StackOp, Symbol, TestLanguage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Split,
    Bubbles,
    DestructiveSplit,
    StackNormal,
    NoId,
    TestSplit,
    Distinguished,
}

/// Step 1 copies of a state: before the stack part, the stack part, after it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Part {
    T1,
    S,
    T2,
}

/// Destructive or constructive half (Step 3).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dc {
    D,
    C,
}

/// Test target or other (Step 6).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tc {
    T,
    C,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Certification {
    Exact,
    /// Loop languages and stack parts were only checked on stacks with at
    /// most this many symbols.
    Bounded { max_atoms: usize },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NormError {
    #[error("step expects an automaton at stage {expected:?}, got {found:?}")]
    OutOfOrder { expected: Option<Stage>, found: Option<Stage> },
    #[error("operation {op} does not fit an automaton of order {order}")]
    Level { op: String, order: u8 },
    #[error("loop languages of order {0} automata need a stack bound")]
    NeedBound(u8),
    #[error("saturation did not stabilise within {0} rounds")]
    Cap(usize),
    #[error(transparent)]
    Aut(#[from] AutError),
}

/// Parameters shared by all steps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NormConfig {
    /// Symbols tree labels may use; merged with the symbols of the automaton.
    pub alphabet: Vec<Symbol>,
    /// Stack size bound for orders above 2.
    pub max_atoms: usize,
}

impl NormConfig {
    pub fn new(alphabet: &[Symbol]) -> NormConfig {
        NormConfig { alphabet: alphabet.to_vec(), max_atoms: 3 }
    }
}

/// An automaton together with the state classification built by the pipeline.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionedAutomaton {
    pub automaton: OperationAutomaton,
    pub stage: Stage,
    pub alphabet: Vec<Symbol>,
    pub max_atoms: usize,
    pub part: Vec<Option<Part>>,
    pub dc: Vec<Option<Dc>>,
    pub tc: Vec<Option<Tc>>,
    pub certification: Certification,
}

impl PartitionedAutomaton {
    fn expect(&self, stage: Stage) -> Result<(), NormError> {
        if self.stage == stage {
            Ok(())
        } else {
            Err(NormError::OutOfOrder { expected: Some(stage), found: Some(self.stage) })
        }
    }

    fn label_level(&self) -> u8 {
        self.automaton.order.saturating_sub(1)
    }

    fn full_test(&self) -> StackOp {
        StackOp::test(TestLanguage::full(self.label_level(), &self.alphabet))
    }

    fn with(&self, automaton: OperationAutomaton, stage: Stage) -> PartitionedAutomaton {
        PartitionedAutomaton { automaton, stage, ..self.clone() }
    }

    /// Keeps useful states only, carrying the classification along.
    fn trimmed(mut self) -> PartitionedAutomaton {
        let useful = self.automaton.useful_states();
        fn keep<T: Copy>(v: &[T], useful: &[bool]) -> Vec<T> {
            v.iter().zip(useful).filter(|(_, u)| **u).map(|(x, _)| *x).collect()
        }
        self.part = keep(&self.part, &useful);
        self.dc = keep(&self.dc, &useful);
        self.tc = keep(&self.tc, &useful);
        self.automaton = self.automaton.trim();
        self
    }

    /// Checks the structural exclusions of the classification on the transitions.
    pub fn check_partition(&self) -> Result<(), String> {
        let a = &self.automaton;
        if self.stage >= Stage::DestructiveSplit {
            let is = |q: &State, r: Dc| self.dc[*q as usize] == Some(r);
            for (p, q, r) in &a.branch {
                if !is(q, Dc::C) || !is(r, Dc::C) {
                    return Err(format!("branch ({p},({q},{r})) into a destructive state"));
                }
            }
            for (p, q, r) in &a.merge {
                if !is(p, Dc::D) || !is(q, Dc::D) {
                    return Err(format!("merge (({p},{q}),{r}) out of a constructive state"));
                }
            }
            for (p, l, q) in &a.lin {
                match l {
                    LinLabel::Copy1 if !is(q, Dc::C) => {
                        return Err(format!("copy1 from {p} into destructive state {q}"))
                    }
                    LinLabel::Barcopy1 if !is(p, Dc::D) => {
                        return Err(format!("barcopy1 from constructive state {p}"))
                    }
                    _ => {}
                }
            }
        }
        if self.stage >= Stage::TestSplit {
            let is_t = |q: &State| self.tc[*q as usize] == Some(Tc::T);
            for (p, l, q) in &a.lin {
                if l.is_test() && (!is_t(q) || is_t(p)) {
                    return Err(format!("test transition {p} -> {q} breaks the test split"));
                }
                if !l.is_test() && is_t(q) {
                    return Err(format!("non-test transition into test state {q}"));
                }
            }
            for (_, q, r) in &a.branch {
                if is_t(q) || is_t(r) {
                    return Err("branch into a test state".into());
                }
            }
            for (_, _, r) in &a.merge {
                if is_t(r) {
                    return Err("merge into a test state".into());
                }
            }
        }
        if self.stage >= Stage::NoId && a.lin.iter().any(|(_, l, _)| *l == LinLabel::Op(StackOp::Id)) {
            return Err("Id transition after Step 5".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        let cls: Vec<Value> = (0..self.automaton.n_states())
            .map(|q| {
                json!({
                    "tc": self.tc[q].map(|x| format!("{x:?}")),
                    "dc": self.dc[q].map(|x| format!("{x:?}").to_lowercase()),
                })
            })
            .collect();
        let cert = match self.certification {
            Certification::Exact => json!({"kind": "exact"}),
            Certification::Bounded { max_atoms } => {
                json!({"kind": "bounded", "max_atoms": max_atoms})
            }
        };
        json!({
            "automaton": self.automaton.to_json(),
            "stage": format!("{:?}", self.stage),
            "partition": cls,
            "certification": cert,
        })
    }
}

/// True when initial states have no incoming and final states no outgoing
/// transitions.
pub fn is_distinguished(a: &OperationAutomaton) -> bool {
    let into_initial = a.lin.iter().any(|(_, _, q)| a.initial.contains(q))
        || a.branch.iter().any(|(_, q, r)| a.initial.contains(q) || a.initial.contains(r))
        || a.merge.iter().any(|(_, _, r)| a.initial.contains(r));
    let out_of_final = a.lin.iter().any(|(p, _, _)| a.finals.contains(p))
        || a.branch.iter().any(|(p, _, _)| a.finals.contains(p))
        || a.merge.iter().any(|(p, q, _)| a.finals.contains(p) || a.finals.contains(q));
    !into_initial && !out_of_final
}

fn check_ops(a: &OperationAutomaton) -> Result<(), NormError> {
    let n = a.order;
    for (_, l, _) in &a.lin {
        if let LinLabel::Op(op) = l {
            let ok = match op {
                StackOp::Rew(..) | StackOp::Id => n >= 1,
                StackOp::Cop(k) | StackOp::Ncop(k) => *k >= 1 && *k < n,
                StackOp::Test(t) => t.level() < n,
            };
            if !ok {
                return Err(NormError::Level { op: op.describe(), order: n });
            }
        }
    }
    Ok(())
}

fn merged_alphabet(a: &OperationAutomaton, alphabet: &[Symbol]) -> Vec<Symbol> {
    let mut s: BTreeSet<Symbol> = alphabet.iter().copied().collect();
    s.extend(a.symbols());
    s.into_iter().collect()
}

/// Step 1: every state is split into `q_t1 -Id-> q_s -Id-> q_t2`; stack
/// operations run between `s` copies, tree operations from `t2` to `t1`
/// copies. User `Id` transitions become full tests.
pub fn step1_split(a: &OperationAutomaton, cfg: &NormConfig) -> Result<PartitionedAutomaton, NormError> {
    a.validate()?;
    check_ops(a)?;
    let alphabet = merged_alphabet(a, &cfg.alphabet);
    let level = a.order.saturating_sub(1);
    let full = StackOp::test(TestLanguage::full(level, &alphabet));
    let t1 = |q: State| 3 * q;
    let s = |q: State| 3 * q + 1;
    let t2 = |q: State| 3 * q + 2;
    let mut out = OperationAutomaton::new(a.order, 0);
    let mut part = Vec::new();
    for name in &a.names {
        for (suffix, p) in [("t1", Part::T1), ("s", Part::S), ("t2", Part::T2)] {
            out.add_state(format!("{name}.{suffix}"));
            part.push(Some(p));
        }
    }
    for q in 0..a.n_states() as State {
        out.lin.insert((t1(q), LinLabel::Op(StackOp::Id), s(q)));
        out.lin.insert((s(q), LinLabel::Op(StackOp::Id), t2(q)));
    }
    for (p, l, q) in &a.lin {
        match l {
            LinLabel::Op(StackOp::Id) => {
                out.lin.insert((s(*p), LinLabel::Op(full.clone()), s(*q)));
            }
            LinLabel::Op(_) => {
                out.lin.insert((s(*p), l.clone(), s(*q)));
            }
            LinLabel::Copy1 | LinLabel::Barcopy1 => {
                out.lin.insert((t2(*p), l.clone(), t1(*q)));
            }
        }
    }
    out.branch = a.branch.iter().map(|&(p, q, r)| (t2(p), t1(q), t1(r))).collect();
    out.merge = a.merge.iter().map(|&(p, q, r)| (t2(p), t2(q), t1(r))).collect();
    out.initial = a.initial.iter().map(|&q| s(q)).collect();
    out.finals = a.finals.iter().map(|&q| s(q)).collect();
    let n = out.n_states();
    Ok(PartitionedAutomaton {
        automaton: out,
        stage: Stage::Split,
        alphabet,
        max_atoms: cfg.max_atoms,
        part,
        dc: vec![None; n],
        tc: vec![None; n],
        certification: Certification::Exact,
    })
}

// ---------------------------------------------------------------------------
// Stack parts and segment summaries

/// Lin transitions labelled by stack operations between selected states.
struct StackPart {
    states: Vec<State>,
    index: HashMap<State, usize>,
    rew: Vec<(usize, usize, usize, usize)>,
    tests: Vec<(usize, Arc<TestLanguage>, usize)>,
    ids: Vec<(usize, usize)>,
    cop_from: Vec<Vec<usize>>,
    cop_into: Vec<Vec<usize>>,
    ncop_from: Vec<Vec<usize>>,
}

impl StackPart {
    fn new(a: &OperationAutomaton, sigma: &[Symbol], keep: impl Fn(State) -> bool) -> StackPart {
        let states: Vec<State> = (0..a.n_states() as State).filter(|q| keep(*q)).collect();
        let index: HashMap<State, usize> = states.iter().enumerate().map(|(i, q)| (*q, i)).collect();
        let n = states.len();
        let mut sp = StackPart {
            states,
            index,
            rew: vec![],
            tests: vec![],
            ids: vec![],
            cop_from: vec![vec![]; n],
            cop_into: vec![vec![]; n],
            ncop_from: vec![vec![]; n],
        };
        let sym = |s: &Symbol| sigma.binary_search(s).expect("alphabet covers the automaton");
        for (p, l, q) in &a.lin {
            let (Some(&i), Some(&j)) = (sp.index.get(p), sp.index.get(q)) else { continue };
            let LinLabel::Op(op) = l else { continue };
            match op {
                StackOp::Rew(x, y) => sp.rew.push((i, sym(x), sym(y), j)),
                StackOp::Test(t) => sp.tests.push((i, t.clone(), j)),
                StackOp::Id => sp.ids.push((i, j)),
                StackOp::Cop(_) => {
                    sp.cop_from[i].push(j);
                    sp.cop_into[j].push(i);
                }
                StackOp::Ncop(_) => sp.ncop_from[i].push(j),
            }
        }
        sp
    }

    fn len(&self) -> usize {
        self.states.len()
    }

    fn reachable_from(&self, i: usize) -> Vec<bool> {
        let n = self.len();
        let mut succ = vec![vec![]; n];
        for &(p, _, _, q) in &self.rew {
            succ[p].push(q);
        }
        for (p, _, q) in &self.tests {
            succ[*p].push(*q);
        }
        for &(p, q) in &self.ids {
            succ[p].push(q);
        }
        for p in 0..n {
            succ[p].extend(&self.cop_from[p]);
            succ[p].extend(&self.ncop_from[p]);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![i];
        seen[i] = true;
        while let Some(p) = stack.pop() {
            for &q in &succ[p] {
                if !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
        seen
    }
}

/// Joint run of all level-1 tests over the cells below the top of a 1-stack.
struct Ctx {
    level: u8,
    sigma: Vec<Symbol>,
    comps: Vec<TestLanguage>,
    comp_of: HashMap<TestLanguage, usize>,
    states: Vec<Vec<u32>>,
    delta: Vec<usize>,
    start: usize,
}

impl Ctx {
    fn new(level: u8, sigma: &[Symbol], part: &StackPart) -> Ctx {
        let ns = sigma.len();
        let mut ctx = Ctx {
            level,
            sigma: sigma.to_vec(),
            comps: vec![],
            comp_of: HashMap::new(),
            states: vec![],
            delta: vec![],
            start: 0,
        };
        if level == 0 {
            ctx.states.push(vec![]);
            ctx.delta = vec![0; ns];
            return ctx;
        }
        for (_, t, _) in &part.tests {
            if t.level() == 1 && !ctx.comp_of.contains_key(t.as_ref()) {
                ctx.comp_of.insert((**t).clone(), ctx.comps.len());
                ctx.comps.push(t.with_symbols(sigma));
            }
        }
        let open = ns;
        let first: Vec<u32> = ctx.comps.iter().map(|t| t.dfa().step(t.dfa().start, open)).collect();
        let mut index: HashMap<Vec<u32>, usize> = HashMap::new();
        index.insert(first.clone(), 0);
        ctx.states.push(first);
        let mut k = 0;
        while k < ctx.states.len() {
            for a in 0..ns {
                let next: Vec<u32> =
                    ctx.comps.iter().zip(&ctx.states[k]).map(|(t, &q)| t.dfa().step(q, a)).collect();
                let id = match index.get(&next) {
                    Some(&id) => id,
                    None => {
                        let id = ctx.states.len();
                        index.insert(next.clone(), id);
                        ctx.states.push(next);
                        id
                    }
                };
                ctx.delta.push(id);
            }
            k += 1;
        }
        ctx
    }

    fn n(&self) -> usize {
        self.states.len()
    }

    fn ns(&self) -> usize {
        self.sigma.len()
    }

    fn step(&self, c: usize, a: usize) -> usize {
        self.delta[c * self.ns() + a]
    }

    /// Whether `t` holds on stacks whose context is `c` and top is `a`.
    fn holds(&self, t: &TestLanguage, c: usize, a: usize) -> bool {
        if t.level() == 0 {
            return t.contains_stack(&Stack::Atom(self.sigma[a])).unwrap_or(false);
        }
        let k = self.comp_of[t];
        let dfa = self.comps[k].dfa();
        let q = dfa.step(self.states[c][k], a);
        dfa.accept[dfa.step(q, self.ns() + 1) as usize]
    }

    /// Test language of the stacks whose (context, top) pair is marked.
    fn language(&self, set: &[bool]) -> TestLanguage {
        let ns = self.ns();
        if set.iter().all(|x| *x) {
            return TestLanguage::full(self.level, &self.sigma);
        }
        if self.level == 0 {
            let tops: Vec<Symbol> = (0..ns).filter(|&a| set[a]).map(|a| self.sigma[a]).collect();
            return TestLanguage::top_symbol_in(0, &self.sigma, &tops);
        }
        let nc = self.n();
        let mut nfa = Nfa::new(ns + 2);
        let start = nfa.add_state(false);
        nfa.starts.push(start);
        let base = nfa.accept.len() as u32;
        for _ in 0..nc {
            nfa.add_state(false);
        }
        let last = nfa.add_state(false);
        let acc = nfa.add_state(true);
        nfa.add(start, ns, base + self.start as u32);
        for c in 0..nc {
            for a in 0..ns {
                nfa.add(base + c as u32, a, base + self.step(c, a) as u32);
                if set[c * ns + a] {
                    nfa.add(base + c as u32, a, last);
                }
            }
        }
        nfa.add(last, ns + 1, acc);
        TestLanguage::from_dfa(1, &self.sigma, nfa.determinize()).expect("token layout")
    }
}

struct Seg {
    nq: usize,
    ns: usize,
    bits: Vec<bool>,
}

impl Seg {
    fn idx(&self, c: usize, p: usize, a: usize, q: usize, b: usize) -> usize {
        (((c * self.nq + p) * self.ns + a) * self.nq + q) * self.ns + b
    }

    fn get(&self, c: usize, p: usize, a: usize, q: usize, b: usize) -> bool {
        self.bits[self.idx(c, p, a, q, b)]
    }

    /// Least fixpoint of the segment rules.
    fn compute(part: &StackPart, ctx: &Ctx) -> Seg {
        let (nc, nq, ns) = (ctx.n(), part.len(), ctx.ns());
        let mut seg = Seg { nq, ns, bits: vec![false; nc * nq * ns * nq * ns] };
        let mut inv: Vec<Vec<(usize, usize)>> = vec![vec![]; nc];
        for c in 0..nc {
            for a in 0..ns {
                inv[ctx.step(c, a)].push((c, a));
            }
        }
        let mut work: Vec<(usize, usize, usize, usize, usize)> = Vec::new();
        fn add(seg: &mut Seg, work: &mut Vec<(usize, usize, usize, usize, usize)>, f: (usize, usize, usize, usize, usize)) {
            let i = seg.idx(f.0, f.1, f.2, f.3, f.4);
            if !seg.bits[i] {
                seg.bits[i] = true;
                work.push(f);
            }
        }
        for c in 0..nc {
            for a in 0..ns {
                for p in 0..nq {
                    add(&mut seg, &mut work, (c, p, a, p, a));
                }
                for &(p, x, y, q) in &part.rew {
                    if x == a {
                        add(&mut seg, &mut work, (c, p, a, q, y));
                    }
                }
                for (p, t, q) in &part.tests {
                    if ctx.holds(t, c, a) {
                        add(&mut seg, &mut work, (c, *p, a, *q, a));
                    }
                }
                for &(p, q) in &part.ids {
                    add(&mut seg, &mut work, (c, p, a, q, a));
                }
            }
        }
        while let Some((c, p, a, q, b)) = work.pop() {
            let mut new = Vec::new();
            for r in 0..nq {
                for d in 0..ns {
                    if seg.get(c, q, b, r, d) {
                        new.push((c, p, a, r, d));
                    }
                    if seg.get(c, r, d, p, a) {
                        new.push((c, r, d, q, b));
                    }
                }
            }
            if a == b {
                for &(c0, a0) in &inv[c] {
                    if a0 != a {
                        continue;
                    }
                    for &p0 in &part.cop_into[p] {
                        for &q0 in &part.ncop_from[q] {
                            new.push((c0, p0, a, q0, a));
                        }
                    }
                }
            }
            for f in new {
                add(&mut seg, &mut work, f);
            }
        }
        seg
    }
}

/// Exact analysis of a stack part for labels of level ≤ 1.
struct Analysis {
    part: StackPart,
    ctx: Ctx,
    seg: Seg,
}

impl Analysis {
    fn new(a: &OperationAutomaton, sigma: &[Symbol], keep: impl Fn(State) -> bool) -> Analysis {
        let part = StackPart::new(a, sigma, keep);
        let ctx = Ctx::new(a.order.saturating_sub(1), sigma, &part);
        let seg = Seg::compute(&part, &ctx);
        Analysis { part, ctx, seg }
    }

    /// Stacks left unchanged by some run from `q1` to `q2`.
    fn loop_language(&self, q1: usize, q2: usize) -> TestLanguage {
        let (nc, ns) = (self.ctx.n(), self.ctx.ns());
        let seg = &self.seg;
        if self.ctx.level == 0 {
            let set: Vec<bool> = (0..ns).map(|a| seg.get(0, q1, a, q2, a)).collect();
            return self.ctx.language(&set);
        }
        let nq = self.part.len();
        #[derive(Clone, Copy, PartialEq, Eq, Hash)]
        enum K {
            Start,
            Below(usize),
            Mid(usize, usize, usize, usize),
            Top,
            Acc,
        }
        let mut nfa = Nfa::new(ns + 2);
        let mut ids: HashMap<K, u32> = HashMap::new();
        let mut queue = VecDeque::new();
        let mut intern = |nfa: &mut Nfa, k: K, queue: &mut VecDeque<K>| -> u32 {
            *ids.entry(k).or_insert_with(|| {
                queue.push_back(k);
                nfa.add_state(k == K::Acc)
            })
        };
        let s0 = intern(&mut nfa, K::Start, &mut queue);
        nfa.starts.push(s0);
        let mut done = HashSet::new();
        while let Some(k) = queue.pop_front() {
            if !done.insert(k) {
                continue;
            }
            let from = intern(&mut nfa, k, &mut queue);
            match k {
                K::Start => {
                    let t = intern(&mut nfa, K::Below(self.ctx.start), &mut queue);
                    nfa.add(from, ns, t);
                }
                K::Top => {
                    let t = intern(&mut nfa, K::Acc, &mut queue);
                    nfa.add(from, ns + 1, t);
                }
                K::Acc => {}
                K::Below(c) => {
                    for x in 0..ns {
                        let t = intern(&mut nfa, K::Below(self.ctx.step(c, x)), &mut queue);
                        nfa.add(from, x, t);
                        let c1 = self.ctx.step(c, x);
                        for d in 0..nq {
                            for f in 0..nq {
                                if !seg.get(c, d, x, f, x) {
                                    continue;
                                }
                                if d == q1 && f == q2 {
                                    let t = intern(&mut nfa, K::Top, &mut queue);
                                    nfa.add(from, x, t);
                                }
                                for &g in &self.part.cop_from[f] {
                                    let t = intern(&mut nfa, K::Mid(c1, x, d, g), &mut queue);
                                    nfa.add(from, x, t);
                                }
                            }
                        }
                    }
                }
                K::Mid(c, x, d, g) => {
                    for y in 0..ns {
                        let c1 = self.ctx.step(c, y);
                        // descending segments at this height ending in a pop to `d`
                        let downs: Vec<usize> = (0..nq)
                            .filter(|&d1| {
                                (0..nq).any(|e| seg.get(c, d1, y, e, x) && self.part.ncop_from[e].contains(&d))
                            })
                            .collect();
                        if downs.is_empty() {
                            continue;
                        }
                        for f in 0..nq {
                            if !seg.get(c, g, x, f, y) {
                                continue;
                            }
                            for &d1 in &downs {
                                if d1 == q1 && f == q2 {
                                    let t = intern(&mut nfa, K::Top, &mut queue);
                                    nfa.add(from, y, t);
                                }
                                for &g1 in &self.part.cop_from[f] {
                                    let t = intern(&mut nfa, K::Mid(c1, y, d1, g1), &mut queue);
                                    nfa.add(from, y, t);
                                }
                            }
                        }
                    }
                }
            }
        }
        let _ = nc;
        TestLanguage::from_dfa(1, &self.ctx.sigma, nfa.determinize()).expect("token layout")
    }
}

/// Result of [`loop_language`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoopLanguage {
    pub language: TestLanguage,
    pub exact: bool,
}

/// Stacks fixed by some sequence of stack operations labelling a path from
/// `q1` to `q2`. Exact for order ≤ 2; otherwise `max_atoms` bounds the stacks
/// examined (and twice that bounds intermediate stacks).
pub fn loop_language(
    a: &OperationAutomaton,
    q1: State,
    q2: State,
    alphabet: &[Symbol],
    max_atoms: Option<usize>,
) -> Result<LoopLanguage, NormError> {
    a.validate()?;
    check_ops(a)?;
    for q in [q1, q2] {
        if q as usize >= a.n_states() {
            return Err(AutError::BadState(q).into());
        }
    }
    let sigma = merged_alphabet(a, alphabet);
    if a.order <= 2 {
        let an = Analysis::new(a, &sigma, |_| true);
        let language = tidy(an.loop_language(an.part.index[&q1], an.part.index[&q2]));
        return Ok(LoopLanguage { language, exact: true });
    }
    let bound = max_atoms.ok_or(NormError::NeedBound(a.order))?;
    let level = a.order - 1;
    let fixed = bounded_fixed_points(a, &|_| true, q1, q2, level, &sigma, bound);
    Ok(LoopLanguage { language: TestLanguage::from_stacks(level, &sigma, &fixed), exact: false })
}

fn bounded_fixed_points(
    a: &OperationAutomaton,
    keep: &dyn Fn(State) -> bool,
    q1: State,
    q2: State,
    level: u8,
    sigma: &[Symbol],
    bound: usize,
) -> Vec<Stack> {
    let mut succ: HashMap<State, Vec<(&StackOp, State)>> = HashMap::new();
    for (p, l, q) in &a.lin {
        if let LinLabel::Op(op) = l {
            if keep(*p) && keep(*q) {
                succ.entry(*p).or_default().push((op, *q));
            }
        }
    }
    let mut out = Vec::new();
    for s in enumerate_stacks(level, sigma, bound) {
        let mut seen: HashSet<(State, Stack)> = HashSet::new();
        let mut queue = VecDeque::from([(q1, s.clone())]);
        seen.insert((q1, s.clone()));
        let mut hit = false;
        while let Some((q, t)) = queue.pop_front() {
            if q == q2 && t == s {
                hit = true;
                break;
            }
            for (op, r) in succ.get(&q).map(Vec::as_slice).unwrap_or(&[]) {
                if let Ok(Some(u)) = op.apply(&t) {
                    if u.atom_count() <= 2 * bound && seen.insert((*r, u.clone())) {
                        queue.push_back((*r, u));
                    }
                }
            }
        }
        if hit {
            out.push(s);
        }
    }
    out
}

/// Replaces a universal language by the one-state full language.
fn tidy(l: TestLanguage) -> TestLanguage {
    if !l.is_full_dfa() && l.is_universal() {
        TestLanguage::full(l.level(), l.symbols())
    } else {
        l
    }
}

fn same_language(x: &TestLanguage, y: &TestLanguage) -> bool {
    match (x.intersect(&y.complement()), y.intersect(&x.complement())) {
        (Ok(a), Ok(b)) => a.is_empty() && b.is_empty(),
        _ => false,
    }
}

fn id_targets(a: &OperationAutomaton) -> (HashMap<State, Vec<State>>, HashMap<State, Vec<State>>) {
    let mut fwd: HashMap<State, Vec<State>> = HashMap::new();
    let mut bwd: HashMap<State, Vec<State>> = HashMap::new();
    for (p, l, q) in &a.lin {
        if *l == LinLabel::Op(StackOp::Id) {
            fwd.entry(*p).or_default().push(*q);
            bwd.entry(*q).or_default().push(*p);
        }
    }
    (fwd, bwd)
}

/// Step 2: every bubble (a branch whose two children are merged back, or a
/// copy1 undone by barcopy1, with only stack operations in between) gains a
/// shortcut test between the surrounding stack states. Iterated until the
/// shortcut languages are stable, so nested bubbles are covered.
pub fn step2_bubble_tests(p: &PartitionedAutomaton) -> Result<PartitionedAutomaton, NormError> {
    p.expect(Stage::Split)?;
    let base = &p.automaton;
    let is_s = |q: State| p.part[q as usize] == Some(Part::S);
    let (id_fwd, id_bwd) = id_targets(base);
    let s_after = |t1: State| id_fwd.get(&t1).cloned().unwrap_or_default();
    let s_before = |t2: State| id_bwd.get(&t2).cloned().unwrap_or_default();
    let level = p.label_level();
    let exact = base.order <= 2;
    let n = base.n_states();
    let cap = n * n * 3 + 1;
    let mut shortcuts: BTreeMap<(State, State), TestLanguage> = BTreeMap::new();
    let mut cur = base.clone();
    for _round in 0..cap {
        let memo_an = if exact { Some(Analysis::new(&cur, &p.alphabet, is_s)) } else { None };
        let mut memo: HashMap<(State, State), TestLanguage> = HashMap::new();
        let mut lang = |x: State, y: State| -> TestLanguage {
            memo.entry((x, y))
                .or_insert_with(|| match &memo_an {
                    Some(an) => an.loop_language(an.part.index[&x], an.part.index[&y]),
                    None => {
                        let fixed = bounded_fixed_points(&cur, &is_s, x, y, level, &p.alphabet, p.max_atoms);
                        TestLanguage::from_stacks(level, &p.alphabet, &fixed)
                    }
                })
                .clone()
        };
        let mut next: BTreeMap<(State, State), TestLanguage> = BTreeMap::new();
        let mut put = |from: State, to: State, l: TestLanguage| {
            if l.is_empty() {
                return;
            }
            let e = next.entry((from, to)).or_insert_with(|| TestLanguage::empty(level, &p.alphabet));
            *e = e.union(&l).expect("same level");
        };
        for &(q2, r1, s1) in &base.branch {
            for &(r2, s2, q1) in &base.merge {
                for rs in s_after(r1) {
                    for ss in s_after(s1) {
                        for r2s in s_before(r2) {
                            for s2s in s_before(s2) {
                                let l = lang(rs, r2s).intersect(&lang(ss, s2s)).expect("same level");
                                for qs in s_before(q2) {
                                    for q1s in s_after(q1) {
                                        put(qs, q1s, l.clone());
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let copies: Vec<(State, State)> =
            base.lin.iter().filter(|(_, l, _)| *l == LinLabel::Copy1).map(|(a, _, b)| (*a, *b)).collect();
        let bars: Vec<(State, State)> =
            base.lin.iter().filter(|(_, l, _)| *l == LinLabel::Barcopy1).map(|(a, _, b)| (*a, *b)).collect();
        for &(q2, r1) in &copies {
            for &(r2, q1) in &bars {
                for rs in s_after(r1) {
                    for r2s in s_before(r2) {
                        let l = lang(rs, r2s);
                        for qs in s_before(q2) {
                            for q1s in s_after(q1) {
                                put(qs, q1s, l.clone());
                            }
                        }
                    }
                }
            }
        }
        let stable = next.len() == shortcuts.len()
            && next.iter().zip(&shortcuts).all(|((k1, l1), (k2, l2))| k1 == k2 && same_language(l1, l2));
        if stable {
            let mut out = p.with(cur, Stage::Bubbles);
            if !exact {
                out.certification = Certification::Bounded { max_atoms: p.max_atoms };
            }
            return Ok(out);
        }
        shortcuts = next;
        cur = base.clone();
        for ((x, y), l) in &shortcuts {
            cur.lin.insert((*x, LinLabel::Op(StackOp::test(tidy(l.clone()))), *y));
        }
    }
    Err(NormError::Cap(cap))
}

/// Step 3: destructive (`d`) and constructive (`c`) copies; merges and
/// barcopies stay in the destructive half, branches and copies lead into the
/// constructive half.
pub fn step3_split_dc(p: &PartitionedAutomaton) -> Result<PartitionedAutomaton, NormError> {
    p.expect(Stage::Bubbles)?;
    let a = &p.automaton;
    let d = |q: State| 2 * q;
    let c = |q: State| 2 * q + 1;
    let mut out = OperationAutomaton::new(a.order, 0);
    let mut part = Vec::new();
    let mut dc = Vec::new();
    for (q, name) in a.names.iter().enumerate() {
        out.add_state(format!("{name}.d"));
        out.add_state(format!("{name}.c"));
        part.extend([p.part[q], p.part[q]]);
        dc.extend([Some(Dc::D), Some(Dc::C)]);
    }
    for (x, l, y) in &a.lin {
        match l {
            LinLabel::Op(_) => {
                out.lin.insert((d(*x), l.clone(), d(*y)));
                out.lin.insert((c(*x), l.clone(), c(*y)));
            }
            LinLabel::Barcopy1 => {
                out.lin.insert((d(*x), l.clone(), d(*y)));
            }
            LinLabel::Copy1 => {
                out.lin.insert((c(*x), l.clone(), c(*y)));
                out.lin.insert((d(*x), l.clone(), c(*y)));
            }
        }
    }
    for &(x, y, z) in &a.merge {
        out.merge.insert((d(x), d(y), d(z)));
    }
    for &(x, y, z) in &a.branch {
        out.branch.insert((c(x), c(y), c(z)));
        out.branch.insert((d(x), c(y), c(z)));
    }
    out.initial = a.initial.iter().flat_map(|&q| [d(q), c(q)]).collect();
    out.finals = a.finals.iter().flat_map(|&q| [d(q), c(q)]).collect();
    let n = out.n_states();
    Ok(PartitionedAutomaton {
        automaton: out,
        stage: Stage::DestructiveSplit,
        part,
        dc,
        tc: vec![None; n],
        ..p.clone()
    })
}

/// Normalised sub-automaton for one pair of stack states, in local ids.
struct SubAut {
    names: Vec<String>,
    lin: Vec<(usize, StackOp, usize)>,
    init: usize,
    fin: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Loc {
    Init,
    Fin,
    Down(usize),
    Settled(usize),
    Up(usize),
    Back(usize),
    Mid(usize, usize, usize, usize, usize),
}

impl Analysis {
    /// Accepts sequences `(seg ncop)* seg (cop seg)*`, every segment being
    /// empty, one test, one rew, or a test followed by a rew; same relation as
    /// the runs from `p` to `p2`.
    fn normalized_pair(&self, p: usize, p2: usize, full: &StackOp) -> Option<SubAut> {
        let (nc, nq, ns) = (self.ctx.n(), self.part.len(), self.ctx.ns());
        let mut ids: HashMap<Loc, usize> = HashMap::new();
        let mut locs: Vec<Loc> = Vec::new();
        let mut eps: Vec<Vec<usize>> = Vec::new();
        let mut edges: Vec<(usize, StackOp, usize)> = Vec::new();
        let mut queue: VecDeque<usize> = VecDeque::new();
        let mut lang_cache: HashMap<Vec<bool>, Arc<TestLanguage>> = HashMap::new();
        fn intern(
            l: Loc,
            ids: &mut HashMap<Loc, usize>,
            locs: &mut Vec<Loc>,
            eps: &mut Vec<Vec<usize>>,
            queue: &mut VecDeque<usize>,
        ) -> usize {
            *ids.entry(l).or_insert_with(|| {
                locs.push(l);
                eps.push(vec![]);
                queue.push_back(locs.len() - 1);
                locs.len() - 1
            })
        }
        macro_rules! id {
            ($l:expr) => {
                intern($l, &mut ids, &mut locs, &mut eps, &mut queue)
            };
        }
        let init = id!(Loc::Init);
        let fin = id!(Loc::Fin);
        while let Some(x) = queue.pop_front() {
            match locs[x] {
                Loc::Init => {
                    let y = id!(Loc::Down(p));
                    eps[x].push(y);
                }
                Loc::Fin | Loc::Mid(..) => {}
                Loc::Down(d) | Loc::Up(d) => {
                    let settled = matches!(locs[x], Loc::Down(_));
                    for e in 0..nq {
                        let mut ident = vec![false; nc * ns];
                        let mut change: BTreeMap<(usize, usize), Vec<bool>> = BTreeMap::new();
                        let mut any = false;
                        for c in 0..nc {
                            for a in 0..ns {
                                for b in 0..ns {
                                    if !self.seg.get(c, d, a, e, b) || (d == e && a == b) {
                                        continue;
                                    }
                                    any = true;
                                    if a == b {
                                        ident[c * ns + a] = true;
                                    } else {
                                        change.entry((a, b)).or_insert_with(|| vec![false; nc])[c] = true;
                                    }
                                }
                            }
                        }
                        if d != e && !any {
                            continue;
                        }
                        let y = if settled { id!(Loc::Settled(e)) } else { id!(Loc::Back(e)) };
                        if d == e {
                            eps[x].push(y);
                        }
                        let mut lang = |set: Vec<bool>| -> StackOp {
                            StackOp::Test(
                                lang_cache.entry(set.clone()).or_insert_with(|| Arc::new(self.ctx.language(&set))).clone(),
                            )
                        };
                        if ident.iter().any(|b| *b) {
                            edges.push((x, lang(ident), y));
                        }
                        for ((a, b), cs) in change {
                            let rew = StackOp::Rew(self.ctx.sigma[a], self.ctx.sigma[b]);
                            if cs.iter().all(|v| *v) {
                                edges.push((x, rew, y));
                            } else {
                                let mut set = vec![false; nc * ns];
                                for c in 0..nc {
                                    set[c * ns + a] = cs[c];
                                }
                                let m = id!(Loc::Mid(x, e, a, b, settled as usize));
                                edges.push((x, lang(set), m));
                                edges.push((m, rew, y));
                            }
                        }
                    }
                }
                Loc::Settled(e) => {
                    for &d in &self.part.ncop_from[e] {
                        let y = id!(Loc::Down(d));
                        edges.push((x, StackOp::Ncop(1), y));
                    }
                    for &g in &self.part.cop_from[e] {
                        let y = id!(Loc::Up(g));
                        edges.push((x, StackOp::Cop(1), y));
                    }
                    if e == p2 {
                        eps[x].push(fin);
                    }
                }
                Loc::Back(f) => {
                    for &g in &self.part.cop_from[f] {
                        let y = id!(Loc::Up(g));
                        edges.push((x, StackOp::Cop(1), y));
                    }
                    if f == p2 {
                        eps[x].push(fin);
                    }
                }
            }
        }
        // epsilon elimination into a distinguished automaton
        let n = locs.len();
        let closure: Vec<Vec<usize>> = (0..n)
            .map(|x| {
                let mut seen = vec![false; n];
                let mut st = vec![x];
                seen[x] = true;
                let mut out = vec![];
                while let Some(y) = st.pop() {
                    out.push(y);
                    for &z in &eps[y] {
                        if !seen[z] {
                            seen[z] = true;
                            st.push(z);
                        }
                    }
                }
                out
            })
            .collect();
        let reaches_fin: Vec<bool> = closure.iter().map(|c| c.contains(&fin)).collect();
        let mut by_src: Vec<Vec<(StackOp, usize)>> = vec![vec![]; n];
        for (x, op, y) in edges {
            by_src[x].push((op, y));
        }
        let mut lin: BTreeSet<(usize, StackOp, usize)> = BTreeSet::new();
        for x in 0..n {
            if x == fin {
                continue;
            }
            for &y in &closure[x] {
                for (op, z) in &by_src[y] {
                    lin.insert((x, op.clone(), *z));
                    if reaches_fin[*z] {
                        lin.insert((x, op.clone(), fin));
                    }
                }
            }
        }
        if reaches_fin[init] {
            lin.insert((init, full.clone(), fin));
        }
        // keep states on some path from `init` to `fin`
        let mut fwd = vec![false; n];
        let mut bwd = vec![false; n];
        fwd[init] = true;
        bwd[fin] = true;
        loop {
            let mut changed = false;
            for (x, _, y) in &lin {
                if fwd[*x] && !fwd[*y] {
                    fwd[*y] = true;
                    changed = true;
                }
                if bwd[*y] && !bwd[*x] {
                    bwd[*x] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        if !(fwd[fin] && bwd[init]) {
            return None;
        }
        let mut map = vec![usize::MAX; n];
        let mut names = Vec::new();
        for x in 0..n {
            if fwd[x] && bwd[x] {
                map[x] = names.len();
                names.push(match locs[x] {
                    Loc::Init => "i".to_string(),
                    Loc::Fin => "f".to_string(),
                    Loc::Down(d) => format!("down{d}"),
                    Loc::Settled(e) => format!("low{e}"),
                    Loc::Up(g) => format!("up{g}"),
                    Loc::Back(f) => format!("high{f}"),
                    Loc::Mid(..) => format!("m{x}"),
                });
            }
        }
        let lin = lin
            .into_iter()
            .filter(|(x, _, y)| map[*x] != usize::MAX && map[*y] != usize::MAX)
            .map(|(x, op, y)| (map[x], op, map[y]))
            .collect();
        Some(SubAut { names, lin, init: map[init], fin: map[fin] })
    }
}

/// Bounded fallback: a distinguished copy of the stack part between two states.
fn copied_pair(part: &StackPart, a: &OperationAutomaton, p: usize, p2: usize, full: &StackOp) -> SubAut {
    let n = part.len();
    let (init, fin) = (n, n + 1);
    let mut names: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
    names.push("i".into());
    names.push("f".into());
    let mut lin = Vec::new();
    for (x, l, y) in &a.lin {
        let (Some(&i), Some(&j), LinLabel::Op(op)) = (part.index.get(x), part.index.get(y), l) else {
            continue;
        };
        lin.push((i, op.clone(), j));
        if i == p {
            lin.push((init, op.clone(), j));
        }
        if j == p2 {
            lin.push((i, op.clone(), fin));
        }
        if i == p && j == p2 {
            lin.push((init, op.clone(), fin));
        }
    }
    if p == p2 {
        lin.push((init, full.clone(), fin));
    }
    SubAut { names, lin, init, fin }
}

/// Step 4: the stack part is replaced by the union of normalised automata for
/// every pair of stack states, rewired to the tree part through `Id`.
pub fn step4_normalize_stack_parts(p: &PartitionedAutomaton) -> Result<PartitionedAutomaton, NormError> {
    step4_with(p, Exec::default())
}

pub fn step4_with(p: &PartitionedAutomaton, exec: Exec) -> Result<PartitionedAutomaton, NormError> {
    p.expect(Stage::DestructiveSplit)?;
    let a = &p.automaton;
    let is_s = |q: State| p.part[q as usize] == Some(Part::S);
    let exact = a.order <= 2;
    let full = p.full_test();
    let analysis = if exact {
        Some(Analysis::new(a, &p.alphabet, is_s))
    } else {
        None
    };
    let fallback;
    let part = match &analysis {
        Some(an) => &an.part,
        None => {
            fallback = StackPart::new(a, &p.alphabet, is_s);
            &fallback
        }
    };
    let ns = part.len();
    let pairs: Vec<(usize, usize)> = (0..ns)
        .flat_map(|i| {
            let r = part.reachable_from(i);
            (0..ns).filter(move |j| r[*j]).map(move |j| (i, j))
        })
        .collect();
    let subs: Vec<Option<SubAut>> = exec.map(&pairs, |&(i, j)| match &analysis {
        Some(an) => an.normalized_pair(i, j, &full),
        None => Some(copied_pair(part, a, i, j, &full)),
    });
    let mut out = OperationAutomaton::new(a.order, 0);
    let mut map = vec![u32::MAX; a.n_states()];
    let mut part_v = Vec::new();
    let mut dc = Vec::new();
    for q in 0..a.n_states() {
        if !is_s(q as State) {
            map[q] = out.add_state(a.names[q].clone());
            part_v.push(p.part[q]);
            dc.push(p.dc[q]);
        }
    }
    let m = |q: &State| map[*q as usize];
    for (x, l, y) in &a.lin {
        if matches!(l, LinLabel::Copy1 | LinLabel::Barcopy1) {
            out.lin.insert((m(x), l.clone(), m(y)));
        }
    }
    out.branch = a.branch.iter().map(|(x, y, z)| (m(x), m(y), m(z))).collect();
    out.merge = a.merge.iter().map(|(x, y, z)| (m(x), m(y), m(z))).collect();
    let mut inits_of: HashMap<State, Vec<State>> = HashMap::new();
    let mut fins_of: HashMap<State, Vec<State>> = HashMap::new();
    for (&(i, j), sub) in pairs.iter().zip(subs) {
        let Some(sub) = sub else { continue };
        let (qi, qj) = (part.states[i], part.states[j]);
        let base = out.n_states() as State;
        for name in &sub.names {
            out.add_state(format!("[{},{}].{name}", a.names[qi as usize], a.names[qj as usize]));
            part_v.push(Some(Part::S));
            dc.push(p.dc[qi as usize]);
        }
        for (x, op, y) in sub.lin {
            out.lin.insert((base + x as State, LinLabel::Op(op), base + y as State));
        }
        let (ii, ff) = (base + sub.init as State, base + sub.fin as State);
        inits_of.entry(qi).or_default().push(ii);
        fins_of.entry(qj).or_default().push(ff);
        if a.initial.contains(&qi) {
            out.initial.insert(ii);
        }
        if a.finals.contains(&qj) {
            out.finals.insert(ff);
        }
    }
    let id = LinLabel::Op(StackOp::Id);
    for (x, l, y) in &a.lin {
        if *l != id {
            continue;
        }
        let empty = Vec::new();
        if !is_s(*x) && is_s(*y) {
            for &t in inits_of.get(y).unwrap_or(&empty).iter().chain(fins_of.get(y).unwrap_or(&empty)) {
                out.lin.insert((m(x), id.clone(), t));
            }
        } else if is_s(*x) && !is_s(*y) {
            for &t in fins_of.get(x).unwrap_or(&empty).iter().chain(inits_of.get(x).unwrap_or(&empty)) {
                out.lin.insert((t, id.clone(), m(y)));
            }
        }
    }
    let n = out.n_states();
    let mut res = PartitionedAutomaton {
        automaton: out,
        stage: Stage::StackNormal,
        part: part_v,
        dc,
        tc: vec![None; n],
        ..p.clone()
    };
    if !exact {
        res.certification = Certification::Bounded { max_atoms: p.max_atoms };
    }
    Ok(res.trimmed())
}

/// Step 5: `Id` transitions are removed by saturation; only stack states remain.
pub fn step5_remove_id(p: &PartitionedAutomaton) -> Result<PartitionedAutomaton, NormError> {
    p.expect(Stage::StackNormal)?;
    let a = &p.automaton;
    let is_s = |q: State| p.part[q as usize] == Some(Part::S);
    let (fwd, bwd) = id_targets(a);
    let mut map = vec![u32::MAX; a.n_states()];
    let mut out = OperationAutomaton::new(a.order, 0);
    let mut dc = Vec::new();
    for q in 0..a.n_states() {
        if is_s(q as State) {
            map[q] = out.add_state(a.names[q].clone());
            dc.push(p.dc[q]);
        }
    }
    let m = |q: &State| map[*q as usize];
    let none = Vec::new();
    let after = |t1: &State| fwd.get(t1).unwrap_or(&none).iter().filter(|q| is_s(**q)).map(m).collect::<Vec<_>>();
    let before = |t2: &State| bwd.get(t2).unwrap_or(&none).iter().filter(|q| is_s(**q)).map(m).collect::<Vec<_>>();
    for (x, l, y) in &a.lin {
        match l {
            LinLabel::Op(StackOp::Id) => {}
            LinLabel::Op(_) if is_s(*x) && is_s(*y) => {
                out.lin.insert((m(x), l.clone(), m(y)));
            }
            LinLabel::Copy1 | LinLabel::Barcopy1 => {
                for s in before(x) {
                    for s2 in after(y) {
                        out.lin.insert((s, l.clone(), s2));
                    }
                }
            }
            _ => {}
        }
    }
    for (q1, q2, q3) in &a.branch {
        for s in before(q1) {
            for s2 in after(q2) {
                for s3 in after(q3) {
                    out.branch.insert((s, s2, s3));
                }
            }
        }
    }
    for (q1, q2, q3) in &a.merge {
        for s in before(q1) {
            for s2 in before(q2) {
                for s3 in after(q3) {
                    out.merge.insert((s, s2, s3));
                }
            }
        }
    }
    out.initial = a.initial.iter().filter(|q| is_s(**q)).map(m).collect();
    out.finals = a.finals.iter().filter(|q| is_s(**q)).map(m).collect();
    let n = out.n_states();
    let res = PartitionedAutomaton {
        automaton: out,
        stage: Stage::NoId,
        part: vec![None; n],
        dc,
        tc: vec![None; n],
        ..p.clone()
    };
    Ok(res.trimmed())
}

/// Step 6: test targets (`T`) are separated from all other states (`C`).
pub fn step6_split_tests(p: &PartitionedAutomaton) -> Result<PartitionedAutomaton, NormError> {
    p.expect(Stage::NoId)?;
    let a = &p.automaton;
    let cc = |q: &State| 2 * q;
    let tt = |q: &State| 2 * q + 1;
    let mut out = OperationAutomaton::new(a.order, 0);
    let mut dc = Vec::new();
    let mut tc = Vec::new();
    for (q, name) in a.names.iter().enumerate() {
        out.add_state(format!("{name}.C"));
        out.add_state(format!("{name}.T"));
        dc.extend([p.dc[q], p.dc[q]]);
        tc.extend([Some(Tc::C), Some(Tc::T)]);
    }
    for (x, l, y) in &a.lin {
        if l.is_test() {
            out.lin.insert((cc(x), l.clone(), tt(y)));
        } else {
            out.lin.insert((cc(x), l.clone(), cc(y)));
            out.lin.insert((tt(x), l.clone(), cc(y)));
        }
    }
    for (x, y, z) in &a.merge {
        for u in [cc(x), tt(x)] {
            for v in [cc(y), tt(y)] {
                out.merge.insert((u, v, cc(z)));
            }
        }
    }
    for (x, y, z) in &a.branch {
        out.branch.insert((cc(x), cc(y), cc(z)));
        out.branch.insert((tt(x), cc(y), cc(z)));
    }
    out.initial = a.initial.iter().map(cc).collect();
    out.finals = a.finals.iter().flat_map(|q| [cc(q), tt(q)]).collect();
    let n = out.n_states();
    Ok(PartitionedAutomaton { automaton: out, stage: Stage::TestSplit, part: vec![None; n], dc, tc, ..p.clone() })
}

/// Fresh initial copies with no incoming transitions and fresh final copies
/// with no outgoing ones.
pub fn distinguish(p: &PartitionedAutomaton) -> Result<PartitionedAutomaton, NormError> {
    p.expect(Stage::TestSplit)?;
    let a = &p.automaton;
    let mut out = a.clone();
    out.initial.clear();
    out.finals.clear();
    let mut dc = p.dc.clone();
    let mut tc = p.tc.clone();
    let mut part = p.part.clone();
    let mut fresh = |out: &mut OperationAutomaton, q: State, suffix: &str| -> State {
        dc.push(p.dc[q as usize]);
        tc.push(p.tc[q as usize]);
        part.push(p.part[q as usize]);
        out.add_state(format!("{}.{suffix}", a.names[q as usize]))
    };
    let mut src: HashMap<State, Vec<State>> = HashMap::new();
    let mut dst: HashMap<State, Vec<State>> = HashMap::new();
    for q in 0..a.n_states() as State {
        src.insert(q, vec![q]);
        dst.insert(q, vec![q]);
        let i = a.initial.contains(&q);
        let f = a.finals.contains(&q);
        if i {
            let x = fresh(&mut out, q, "in");
            src.get_mut(&q).unwrap().push(x);
            out.initial.insert(x);
        }
        if f {
            let x = fresh(&mut out, q, "out");
            dst.get_mut(&q).unwrap().push(x);
            out.finals.insert(x);
        }
        if i && f {
            let x = fresh(&mut out, q, "io");
            out.initial.insert(x);
            out.finals.insert(x);
        }
    }
    for (x, l, y) in &a.lin {
        for &u in &src[x] {
            for &v in &dst[y] {
                out.lin.insert((u, l.clone(), v));
            }
        }
    }
    for (x, y, z) in &a.branch {
        for &u in &src[x] {
            for &v in &dst[y] {
                for &w in &dst[z] {
                    out.branch.insert((u, v, w));
                }
            }
        }
    }
    for (x, y, z) in &a.merge {
        for &u in &src[x] {
            for &v in &src[y] {
                for &w in &dst[z] {
                    out.merge.insert((u, v, w));
                }
            }
        }
    }
    let res = PartitionedAutomaton { automaton: out, stage: Stage::Distinguished, part, dc, tc, ..p.clone() };
    Ok(res.trimmed())
}

/// All intermediate automata of the pipeline, from Step 1 to distinguishing.
pub fn pipeline(a: &OperationAutomaton, cfg: &NormConfig) -> Result<Vec<PartitionedAutomaton>, NormError> {
    let s1 = step1_split(a, cfg)?;
    let s2 = step2_bubble_tests(&s1)?;
    let s3 = step3_split_dc(&s2)?;
    let s4 = step4_normalize_stack_parts(&s3)?;
    let s5 = step5_remove_id(&s4)?;
    let s6 = step6_split_tests(&s5)?;
    let s7 = distinguish(&s6)?;
    Ok(vec![s1, s2, s3, s4, s5, s6, s7])
}

/// Distinguished normalised automaton with tests recognising the same relation.
pub fn normalize(a: &OperationAutomaton, cfg: &NormConfig) -> Result<PartitionedAutomaton, NormError> {
    Ok(pipeline(a, cfg)?.pop().expect("non-empty pipeline"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::op_dag::{build, EdgeLabel, OpDag};
    use crate::op_automaton::Budget;
    use crate::stack_tree::{enumerate_trees, StackTree};
    use crate::stacks::enumerate_stacks;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ab() -> Vec<Symbol> {
        vec![Symbol('a'), Symbol('b')]
    }

    fn lin_automaton(order: u8, ops: &[StackOp]) -> OperationAutomaton {
        let mut a = OperationAutomaton::new(order, ops.len() + 1);
        for (i, op) in ops.iter().enumerate() {
            a.lin.insert((i as State, LinLabel::Op(op.clone()), i as State + 1));
        }
        a.initial.insert(0);
        a.finals.insert(ops.len() as State);
        a
    }

    fn bubble() -> OpDag {
        let e = OpDag::emptydag();
        build::diamond(&e, &e, &e, &e).unwrap()
    }

    fn small_universe(max_nodes: usize) -> Vec<StackTree> {
        let labels = enumerate_stacks(1, &ab(), 2);
        enumerate_trees(&labels, max_nodes)
    }

    fn targets(a: &OperationAutomaton, s: &StackTree, nodes: usize, atoms: usize) -> BTreeSet<StackTree> {
        let b = Budget {
            max_steps: None,
            max_tuple: 2,
            max_tree_nodes: Some(nodes),
            max_label_atoms: Some(atoms),
            ..Budget::default()
        };
        let r = a.related(s, &b);
        assert!(r.complete);
        r.targets
    }

    /// Targets within the small bound of one automaton are reachable within
    /// the larger bound by the other, both ways.
    fn assert_equivalent(x: &OperationAutomaton, y: &OperationAutomaton, universe: &[StackTree]) {
        for s in universe {
            let (xs, xl) = (targets(x, s, 3, 2), targets(x, s, 4, 3));
            let (ys, yl) = (targets(y, s, 3, 2), targets(y, s, 4, 3));
            assert!(xs.is_subset(&yl), "{}: {:?} vs {:?}", s.to_text(), xs, yl);
            assert!(ys.is_subset(&xl), "{}: {:?} vs {:?}", s.to_text(), ys, xl);
        }
    }

    #[test]
    fn step1_triples_states() {
        let a = lin_automaton(2, &[StackOp::rew('a', 'b'), StackOp::Cop(1)]);
        let s1 = step1_split(&a, &NormConfig::new(&ab())).unwrap();
        assert_eq!(s1.automaton.n_states(), 3 * a.n_states());
        assert!(matches!(step3_split_dc(&s1), Err(NormError::OutOfOrder { .. })));
    }

    #[test]
    fn loop_language_trivial_cases() {
        let a = lin_automaton(2, &[]);
        let l = loop_language(&a, 0, 0, &ab(), None).unwrap();
        assert!(l.exact && l.language.is_full_dfa());
        let a = lin_automaton(2, &[StackOp::rew('a', 'b')]);
        assert!(loop_language(&a, 0, 1, &ab(), None).unwrap().language.is_empty());
    }

    #[test]
    fn loop_language_ncop_cop_matches_brute_force() {
        let a = lin_automaton(2, &[StackOp::Ncop(1), StackOp::Cop(1)]);
        let l = loop_language(&a, 0, 2, &ab(), None).unwrap().language;
        for s in enumerate_stacks(1, &ab(), 4) {
            let cells = s.components();
            let n = cells.len();
            let expect = n >= 2 && cells[n - 1] == cells[n - 2];
            assert_eq!(l.contains_stack(&s).unwrap(), expect, "{}", s.compact());
        }
    }

    #[test]
    fn loop_language_with_excursions_matches_brute_force() {
        // cop, rew(a,b), rew(b,a), ncop: fixes stacks with top a
        let mut a = lin_automaton(
            2,
            &[StackOp::Cop(1), StackOp::rew('a', 'b'), StackOp::rew('b', 'a'), StackOp::Ncop(1)],
        );
        let t = TestLanguage::contains(1, &ab(), Symbol('b'));
        a.lin.insert((2, LinLabel::Op(StackOp::test(t)), 2));
        let l = loop_language(&a, 0, 4, &ab(), None).unwrap().language;
        let brute = bounded_fixed_points(&a, &|_| true, 0, 4, 1, &ab(), 4);
        for s in enumerate_stacks(1, &ab(), 4) {
            assert_eq!(l.contains_stack(&s).unwrap(), brute.contains(&s), "{}", s.compact());
        }
    }

    #[test]
    fn bubble_normalizes_to_full_test() {
        let a = OperationAutomaton::singleton(&bubble(), 2).unwrap();
        let cfg = NormConfig::new(&ab());
        let s2 = step2_bubble_tests(&step1_split(&a, &cfg).unwrap()).unwrap();
        let full = LinLabel::Op(StackOp::test(TestLanguage::full(1, &ab())));
        assert!(s2.automaton.lin.iter().any(|(_, l, _)| *l == full));
        let n = normalize(&a, &cfg).unwrap();
        let dags = n.automaton.enumerate_accepted(6).unwrap();
        assert_eq!(dags.len(), 1);
        let d = &dags[0];
        assert_eq!(d.vertex_count(), 2);
        match &d.edges()[0].label {
            EdgeLabel::Op(StackOp::Test(l)) => assert!(l.is_full_dfa()),
            other => panic!("unexpected {other:?}"),
        }
        for s in small_universe(1) {
            let b = Budget::default();
            let r = n.automaton.related(&s, &b);
            assert_eq!(r.targets, [s.clone()].into_iter().collect());
        }
    }

    #[test]
    fn pipeline_invariants_on_random_automata() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = NormConfig::new(&ab());
        for _ in 0..6 {
            let a = OperationAutomaton::random(2, 3, 6, &ab(), &mut rng);
            let steps = pipeline(&a, &cfg).unwrap();
            for s in &steps {
                s.check_partition().unwrap();
            }
            let last = steps.last().unwrap();
            assert!(is_distinguished(&last.automaton));
            assert!(!steps[4].automaton.lin.iter().any(|(_, l, _)| *l == LinLabel::Op(StackOp::Id)));
            for d in last.automaton.enumerate_accepted(6).unwrap() {
                assert!(d.is_reduced(2), "{}", d.to_text());
            }
        }
    }

    #[test]
    fn pipeline_preserves_relation_on_small_universe() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = NormConfig::new(&ab());
        let universe = small_universe(2);
        for _ in 0..3 {
            let a = OperationAutomaton::random(2, 3, 5, &ab(), &mut rng);
            let steps = pipeline(&a, &cfg).unwrap();
            let mut prev = a.clone();
            for s in &steps {
                assert_equivalent(&prev, &s.automaton, &universe);
                prev = s.automaton.clone();
            }
        }
    }
}
