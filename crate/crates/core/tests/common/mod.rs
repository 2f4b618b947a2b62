//! Shared test helpers: random grammars and an exhaustive derivation oracle
//! that shares no code with the chart parser.

#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treegram::grammar::Rule;
use treegram::{Category, Grammar, RuleKey};

pub const TERMINALS: &[&str] = &["a", "b", "c"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn nonterminal(i: usize) -> Category {
    Category::new(&format!("N{i}"))
}

pub fn terminal(i: usize) -> Category {
    Category::new(TERMINALS[i])
}

/// Knobs for [`random_grammar`].
#[derive(Clone, Copy)]
pub struct Shape {
    pub max_nonterminals: usize,
    pub max_rules: usize,
    pub min_rhs: usize,
    pub max_rhs: usize,
    pub max_count: u64,
}

impl Default for Shape {
    fn default() -> Self {
        Shape {
            max_nonterminals: 6,
            max_rules: 12,
            min_rhs: 1,
            max_rhs: 4,
            max_count: 5,
        }
    }
}

/// A random epsilon-free grammar over `N0..` and the terminals `a b c`.
pub fn random_grammar(rng: &mut impl Rng, shape: Shape) -> Grammar {
    let n_nt = rng.random_range(1..=shape.max_nonterminals);
    let n_rules = rng.random_range(1..=shape.max_rules);
    let symbols: Vec<Category> = (0..n_nt)
        .map(nonterminal)
        .chain((0..TERMINALS.len()).map(terminal))
        .collect();
    let mut g = Grammar::new();
    for _ in 0..n_rules {
        let lhs = nonterminal(rng.random_range(0..n_nt));
        let len = rng.random_range(shape.min_rhs..=shape.max_rhs);
        let rhs: Vec<Category> = (0..len).map(|_| *symbols.choose(rng).unwrap()).collect();
        let count = rng.random_range(1..=shape.max_count);
        g.add_rule(Rule::new(lhs, rhs, count)).unwrap();
    }
    g
}

/// Adds up to `n` composite rules, each made by substituting one rule's
/// right-hand side for a matching symbol in another, like flat treebank
/// rules that nested rules already cover.
pub fn add_composites(rng: &mut impl Rng, grammar: &mut Grammar, n: usize, max_rhs: usize) {
    let keys = grammar.sorted_keys();
    for _ in 0..n {
        let outer = &keys[rng.random_range(0..keys.len())];
        let slots: Vec<usize> = (0..outer.rhs.len())
            .filter(|&i| keys.iter().any(|k| k.lhs == outer.rhs[i]))
            .collect();
        let Some(&slot) = slots.get(rng.random_range(0..slots.len().max(1))) else {
            continue;
        };
        let inner: Vec<&RuleKey> = keys.iter().filter(|k| k.lhs == outer.rhs[slot]).collect();
        let inner = inner[rng.random_range(0..inner.len())];
        let mut rhs = outer.rhs.clone();
        rhs.splice(slot..=slot, inner.rhs.iter().copied());
        if rhs.len() <= max_rhs {
            grammar.add_rule(Rule::new(outer.lhs, rhs, rng.random_range(1..=3))).unwrap();
        }
    }
}

pub fn random_input(rng: &mut impl Rng, max_len: usize, n_nonterminals: usize) -> Vec<Category> {
    let len = rng.random_range(1..=max_len);
    (0..len)
        .map(|_| {
            if n_nonterminals > 0 && rng.random_bool(0.15) {
                nonterminal(rng.random_range(0..n_nonterminals))
            } else {
                terminal(rng.random_range(0..TERMINALS.len()))
            }
        })
        .collect()
}

/// Yield of a random top-down expansion of `goal`, or `None` if it grows
/// past `max_len` symbols.
pub fn sample_yield(rng: &mut impl Rng, grammar: &Grammar, goal: Category, max_len: usize) -> Option<Vec<Category>> {
    let mut frontier = vec![goal];
    for _ in 0..50 {
        let Some(pos) = frontier.iter().position(|c| grammar.keys().any(|k| k.lhs == *c)) else {
            return Some(frontier);
        };
        let options: Vec<&RuleKey> = grammar.keys().filter(|k| k.lhs == frontier[pos]).collect();
        let rule = options[rng.random_range(0..options.len())];
        frontier.splice(pos..=pos, rule.rhs.iter().copied());
        if frontier.len() > max_len {
            return None;
        }
    }
    None
}

/// Every string over `alphabet` of length `1..=max_len`.
pub fn all_strings(alphabet: &[Category], max_len: usize) -> Vec<Vec<Category>> {
    let mut out = Vec::new();
    let mut layer: Vec<Vec<Category>> = vec![Vec::new()];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|s| {
                alphabet.iter().map(move |&c| {
                    let mut t = s.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

/// Exhaustive top-down search over derivations. A derivation may not
/// revisit a `(category, span)` pair on any root-to-leaf path, which is the
/// only way a derivation can be infinite; no such repeat can ever raise a
/// derivation's probability since probabilities are at most one.
pub struct Oracle<'a> {
    rules: Vec<(RuleKey, f64)>,
    input: &'a [Category],
    symbols: HashMap<Category, u32>,
    memo: HashMap<(Category, usize, usize, u64), Option<f64>>,
}

impl<'a> Oracle<'a> {
    /// Probabilities are relative frequencies of the full grammar's counts;
    /// excluded rules keep their mass but may not be used.
    pub fn new(grammar: &Grammar, excluded: &HashSet<RuleKey>, input: &'a [Category]) -> Self {
        let mut totals: HashMap<Category, u64> = HashMap::new();
        for (key, count) in grammar.iter() {
            *totals.entry(key.lhs).or_default() += count;
        }
        let rules: Vec<(RuleKey, f64)> = grammar
            .iter()
            .filter(|(k, _)| !excluded.contains(*k))
            .map(|(k, count)| (k.clone(), count as f64 / totals[&k.lhs] as f64))
            .collect();
        let mut symbols = HashMap::new();
        for (k, _) in &rules {
            for c in std::iter::once(&k.lhs).chain(&k.rhs) {
                let next = symbols.len() as u32;
                symbols.entry(*c).or_insert(next);
            }
        }
        for c in input {
            let next = symbols.len() as u32;
            symbols.entry(*c).or_insert(next);
        }
        assert!(symbols.len() <= 64);
        Oracle {
            rules,
            input,
            symbols,
            memo: HashMap::new(),
        }
    }

    /// Highest derivation probability of the whole input from `goal`.
    pub fn best(&mut self, goal: Category) -> Option<f64> {
        if !self.symbols.contains_key(&goal) {
            return None;
        }
        self.best_at(goal, 0, self.input.len(), 0)
    }

    /// `blocked` holds the categories already on the path over this very
    /// span; ancestors over larger spans can never recur below.
    fn best_at(&mut self, cat: Category, i: usize, j: usize, blocked: u64) -> Option<f64> {
        let bit = 1u64 << self.symbols[&cat];
        if blocked & bit != 0 {
            return None;
        }
        if let Some(&hit) = self.memo.get(&(cat, i, j, blocked)) {
            return hit;
        }
        let mut best: Option<f64> = None;
        if j == i + 1 && self.input[i] == cat {
            best = Some(1.0);
        }
        let rules: Vec<(RuleKey, f64)> = self.rules.iter().filter(|(k, _)| k.lhs == cat).cloned().collect();
        for (key, p) in rules {
            if key.rhs.len() > j - i {
                continue;
            }
            if let Some(q) = self.children(&key.rhs, i, j, blocked | bit) {
                let cand = p * q;
                if best.is_none_or(|b| cand > b) {
                    best = Some(cand);
                }
            }
        }
        self.memo.insert((cat, i, j, blocked), best);
        best
    }

    /// Best product over all ways of splitting `i..j` among `rhs`.
    fn children(&mut self, rhs: &[Category], i: usize, j: usize, blocked_here: u64) -> Option<f64> {
        let (first, rest) = rhs.split_first().unwrap();
        if rest.is_empty() {
            // a lone child covers the parent's span; later siblings never do
            return self.best_at(*first, i, j, blocked_here);
        }
        let mut best: Option<f64> = None;
        for mid in i + 1..=j - rest.len() {
            let Some(left) = self.best_at(*first, i, mid, 0) else {
                continue;
            };
            if let Some(right) = self.children(rest, mid, j, 0) {
                let cand = left * right;
                if best.is_none_or(|b| cand > b) {
                    best = Some(cand);
                }
            }
        }
        best
    }
}

/// True iff some unary cycle consists only of probability-one rules.
pub fn has_certain_unary_cycle(grammar: &Grammar) -> bool {
    let mut totals: HashMap<Category, u64> = HashMap::new();
    for (key, count) in grammar.iter() {
        *totals.entry(key.lhs).or_default() += count;
    }
    let certain: Vec<(Category, Category)> = grammar
        .iter()
        .filter(|(k, c)| k.rhs.len() == 1 && *c == totals[&k.lhs])
        .map(|(k, _)| (k.lhs, k.rhs[0]))
        .collect();
    // each lhs has at most one certain rule, so follow the chain
    certain.iter().any(|&(start, _)| {
        let mut at = start;
        for _ in 0..=certain.len() {
            match certain.iter().find(|(l, _)| *l == at) {
                Some(&(_, next)) if next == start => return true,
                Some(&(_, next)) => at = next,
                None => return false,
            }
        }
        false
    })
}
