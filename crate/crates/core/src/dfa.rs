//! Small deterministic and nondeterministic automata over dense token indices.

use std::collections::{BTreeSet, HashMap, VecDeque};

/// Complete DFA. `delta[q * n_tokens + tok]` is the successor of `q` on `tok`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Dfa {
    pub n_tokens: usize,
    pub start: u32,
    pub accept: Vec<bool>,
    pub delta: Vec<u32>,
}

impl Dfa {
    pub fn n_states(&self) -> usize {
        self.accept.len()
    }

    /// One state, accepting or not, looping on everything.
    pub fn constant(n_tokens: usize, accepting: bool) -> Dfa {
        Dfa { n_tokens, start: 0, accept: vec![accepting], delta: vec![0; n_tokens] }
    }

    #[inline]
    pub fn step(&self, q: u32, tok: usize) -> u32 {
        self.delta[q as usize * self.n_tokens + tok]
    }

    pub fn run<I: IntoIterator<Item = usize>>(&self, from: u32, toks: I) -> u32 {
        toks.into_iter().fold(from, |q, t| self.step(q, t))
    }

    pub fn accepts<I: IntoIterator<Item = usize>>(&self, toks: I) -> bool {
        self.accept[self.run(self.start, toks) as usize]
    }

    pub fn complement(&self) -> Dfa {
        let mut d = self.clone();
        d.accept.iter_mut().for_each(|a| *a = !*a);
        d.minimize()
    }

    /// Reachable product with acceptance combined by `f`.
    pub fn product(&self, other: &Dfa, f: impl Fn(bool, bool) -> bool) -> Dfa {
        assert_eq!(self.n_tokens, other.n_tokens, "token alphabets differ");
        let k = self.n_tokens;
        let mut index: HashMap<(u32, u32), u32> = HashMap::new();
        let mut order = vec![(self.start, other.start)];
        index.insert((self.start, other.start), 0);
        let mut delta = Vec::new();
        let mut i = 0;
        while i < order.len() {
            let (p, q) = order[i];
            for t in 0..k {
                let pair = (self.step(p, t), other.step(q, t));
                let next = order.len() as u32;
                let id = *index.entry(pair).or_insert_with(|| {
                    order.push(pair);
                    next
                });
                delta.push(id);
            }
            i += 1;
        }
        let accept = order
            .iter()
            .map(|&(p, q)| f(self.accept[p as usize], other.accept[q as usize]))
            .collect();
        Dfa { n_tokens: k, start: 0, accept, delta }.minimize()
    }

    pub fn is_empty(&self) -> bool {
        self.reachable().iter().all(|&q| !self.accept[q as usize])
    }

    fn reachable(&self) -> Vec<u32> {
        let mut seen = vec![false; self.n_states()];
        let mut out = vec![self.start];
        seen[self.start as usize] = true;
        let mut i = 0;
        while i < out.len() {
            let q = out[i];
            for t in 0..self.n_tokens {
                let r = self.step(q, t);
                if !seen[r as usize] {
                    seen[r as usize] = true;
                    out.push(r);
                }
            }
            i += 1;
        }
        out
    }

    /// Minimal DFA with states numbered in BFS order from the start state,
    /// so that equal languages give structurally equal automata.
    pub fn minimize(&self) -> Dfa {
        let k = self.n_tokens;
        let reach = self.reachable();
        let mut class: Vec<u32> = vec![u32::MAX; self.n_states()];
        for &q in &reach {
            class[q as usize] = self.accept[q as usize] as u32;
        }
        let mut n_classes = {
            let mut s: BTreeSet<u32> = BTreeSet::new();
            for &q in &reach {
                s.insert(class[q as usize]);
            }
            s.len()
        };
        loop {
            let mut sigs: HashMap<Vec<u32>, u32> = HashMap::new();
            let mut next = vec![u32::MAX; self.n_states()];
            for &q in &reach {
                let mut sig = Vec::with_capacity(k + 1);
                sig.push(class[q as usize]);
                for t in 0..k {
                    sig.push(class[self.step(q, t) as usize]);
                }
                let n = sigs.len() as u32;
                next[q as usize] = *sigs.entry(sig).or_insert(n);
            }
            let grew = sigs.len() != n_classes;
            n_classes = sigs.len();
            class = next;
            if !grew {
                break;
            }
        }
        // canonical BFS renumbering over classes
        let mut rep: Vec<Option<u32>> = vec![None; n_classes];
        for &q in &reach {
            let c = class[q as usize] as usize;
            if rep[c].is_none() {
                rep[c] = Some(q);
            }
        }
        let mut num: Vec<u32> = vec![u32::MAX; n_classes];
        let mut order = vec![class[self.start as usize]];
        num[class[self.start as usize] as usize] = 0;
        let mut i = 0;
        let mut delta = Vec::with_capacity(n_classes * k);
        while i < order.len() {
            let q = rep[order[i] as usize].unwrap();
            for t in 0..k {
                let c = class[self.step(q, t) as usize];
                if num[c as usize] == u32::MAX {
                    num[c as usize] = order.len() as u32;
                    order.push(c);
                }
                delta.push(num[c as usize]);
            }
            i += 1;
        }
        let accept = order.iter().map(|&c| self.accept[rep[c as usize].unwrap() as usize]).collect();
        Dfa { n_tokens: k, start: 0, accept, delta }
    }

    /// Re-index tokens: new token `t` behaves like old token `map[t]`, or goes to a
    /// rejecting sink when `map[t]` is `None`.
    pub fn remap_tokens(&self, map: &[Option<usize>]) -> Dfa {
        let n = self.n_states();
        let sink = n as u32;
        let mut delta = Vec::with_capacity((n + 1) * map.len());
        for q in 0..n as u32 {
            for m in map {
                delta.push(match m {
                    Some(t) => self.step(q, *t),
                    None => sink,
                });
            }
        }
        delta.extend(std::iter::repeat_n(sink, map.len()));
        let mut accept = self.accept.clone();
        accept.push(false);
        Dfa { n_tokens: map.len(), start: self.start, accept, delta }.minimize()
    }
}

/// NFA with epsilon-free transitions and several start states.
#[derive(Clone, Debug, Default)]
pub struct Nfa {
    pub n_tokens: usize,
    pub starts: Vec<u32>,
    pub accept: Vec<bool>,
    pub trans: Vec<Vec<(usize, u32)>>,
}

impl Nfa {
    pub fn new(n_tokens: usize) -> Nfa {
        Nfa { n_tokens, ..Default::default() }
    }

    pub fn add_state(&mut self, accepting: bool) -> u32 {
        self.accept.push(accepting);
        self.trans.push(Vec::new());
        (self.accept.len() - 1) as u32
    }

    pub fn add(&mut self, from: u32, tok: usize, to: u32) {
        self.trans[from as usize].push((tok, to));
    }

    pub fn determinize(&self) -> Dfa {
        let k = self.n_tokens;
        let mut start: Vec<u32> = self.starts.clone();
        start.sort_unstable();
        start.dedup();
        let mut index: HashMap<Vec<u32>, u32> = HashMap::new();
        let mut sets = vec![start.clone()];
        index.insert(start, 0);
        let mut queue = VecDeque::from([0u32]);
        let mut delta: Vec<u32> = Vec::new();
        let mut rows: Vec<Vec<u32>> = Vec::new();
        while let Some(i) = queue.pop_front() {
            let set = sets[i as usize].clone();
            let mut succ: Vec<Vec<u32>> = vec![Vec::new(); k];
            for &q in &set {
                for &(t, r) in &self.trans[q as usize] {
                    succ[t].push(r);
                }
            }
            let mut row = Vec::with_capacity(k);
            for mut s in succ {
                s.sort_unstable();
                s.dedup();
                let n = sets.len() as u32;
                let id = *index.entry(s.clone()).or_insert_with(|| {
                    sets.push(s);
                    queue.push_back(n);
                    n
                });
                row.push(id);
            }
            if rows.len() <= i as usize {
                rows.resize(i as usize + 1, Vec::new());
            }
            rows[i as usize] = row;
        }
        for r in &rows {
            delta.extend_from_slice(r);
        }
        let accept = sets.iter().map(|s| s.iter().any(|&q| self.accept[q as usize])).collect();
        Dfa { n_tokens: k, start: 0, accept, delta }.minimize()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn even_zeros() -> Dfa {
        Dfa { n_tokens: 2, start: 0, accept: vec![true, false], delta: vec![1, 0, 0, 1] }
    }

    #[test]
    fn minimize_merges_equivalent_states() {
        let d = Dfa {
            n_tokens: 2,
            start: 0,
            accept: vec![true, false, false],
            delta: vec![1, 0, 0, 2, 0, 1],
        };
        assert_eq!(d.minimize(), even_zeros().minimize());
    }

    #[test]
    fn product_and_complement() {
        let e = even_zeros();
        assert!(e.product(&e.complement(), |a, b| a && b).is_empty());
        assert!(!e.product(&e.complement(), |a, b| a || b).complement().accepts([0]));
    }

    #[test]
    fn determinize_ends_with_one() {
        let mut n = Nfa::new(2);
        let a = n.add_state(false);
        let b = n.add_state(true);
        n.starts.push(a);
        n.add(a, 0, a);
        n.add(a, 1, a);
        n.add(a, 1, b);
        let d = n.determinize();
        assert!(d.accepts([0, 1]));
        assert!(!d.accepts([1, 0]));
        assert_eq!(d.n_states(), 2);
    }
}
