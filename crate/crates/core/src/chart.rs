//! Exact CKY recognition and Viterbi parsing over category sequences.
//!
//! N-ary rules are handled through dotted items that consume the right-hand
//! side left to right, so no binarized grammar is ever materialized. Each
//! cell gets a unary closure computed best-first, which terminates on unary
//! cycles. Input symbols seed their own cell at probability one whether they
//! are POS tags or phrasal labels; this is what lets a rule's right-hand side
//! be parsed with the rest of the grammar.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::category::Category;
use crate::grammar::{Grammar, RuleKey};
use crate::treebank::Tree;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChartError {
    #[error("rule {0} has an empty right-hand side")]
    EpsilonRule(Category),
    #[error("rule {0} has zero count and no probability")]
    ZeroCount(RuleKey),
    #[error("degenerate grammar: unary cycle of probability-one rules through {0}")]
    DegenerateUnaryCycle(Category),
}

/// How rule scores are assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// Every rule scores log 1; only derivability matters.
    Unweighted,
    /// Maximum-likelihood probabilities from the grammar's counts.
    Probabilistic,
}

#[derive(Debug, Clone)]
struct CompiledRule {
    key: RuleKey,
    lhs: u32,
    rhs: Vec<u32>,
    logp: f64,
}

/// A grammar indexed for chart parsing. Rules can be switched off and on
/// again without recompiling, which is how the compactor walks the rule set.
///
/// Rule ids follow `(lhs, rhs)` order; that order is also the Viterbi
/// tie-break.
#[derive(Debug, Clone)]
pub struct ChartGrammar {
    symbols: Vec<Category>,
    symbol_ids: HashMap<Category, u32>,
    rules: Vec<CompiledRule>,
    rule_ids: HashMap<RuleKey, u32>,
    /// Rules of length >= 2 indexed by their first right-hand symbol.
    by_first: Vec<Vec<u32>>,
    /// Unary rules indexed by their single right-hand symbol.
    unary_by_child: Vec<Vec<u32>>,
    enabled: Vec<bool>,
    roots: Vec<(Category, u64)>,
}

impl ChartGrammar {
    pub fn new(grammar: &Grammar, weighting: Weighting) -> Result<Self, ChartError> {
        Self::with_probabilities(grammar, weighting, |key| grammar.probability(key))
    }

    /// Compiles `grammar` scoring each rule with `probability`. Used when
    /// probabilities are frozen from an earlier version of the grammar.
    pub fn with_probabilities(
        grammar: &Grammar,
        weighting: Weighting,
        probability: impl Fn(&RuleKey) -> Option<f64>,
    ) -> Result<Self, ChartError> {
        let mut symbols: Vec<Category> = Vec::new();
        let mut symbol_ids: HashMap<Category, u32> = HashMap::new();
        let mut intern = |c: Category| -> u32 {
            *symbol_ids.entry(c).or_insert_with(|| {
                symbols.push(c);
                symbols.len() as u32 - 1
            })
        };
        let mut rules = Vec::with_capacity(grammar.len());
        for key in grammar.sorted_keys() {
            if key.rhs.is_empty() {
                return Err(ChartError::EpsilonRule(key.lhs));
            }
            let logp = match weighting {
                Weighting::Unweighted => 0.0,
                Weighting::Probabilistic => match probability(&key) {
                    Some(p) if p > 0.0 => p.ln(),
                    _ => return Err(ChartError::ZeroCount(key)),
                },
            };
            let lhs = intern(key.lhs);
            let rhs = key.rhs.iter().map(|&c| intern(c)).collect();
            rules.push(CompiledRule { key, lhs, rhs, logp });
        }
        let roots_src = grammar.effective_roots();
        for &(root, _) in &roots_src {
            intern(root);
        }
        let mut by_first = vec![Vec::new(); symbols.len()];
        let mut unary_by_child = vec![Vec::new(); symbols.len()];
        let mut rule_ids = HashMap::with_capacity(rules.len());
        for (id, rule) in rules.iter().enumerate() {
            let first = rule.rhs[0] as usize;
            if rule.rhs.len() == 1 {
                unary_by_child[first].push(id as u32);
            } else {
                by_first[first].push(id as u32);
            }
            rule_ids.insert(rule.key.clone(), id as u32);
        }
        let compiled = ChartGrammar {
            enabled: vec![true; rules.len()],
            symbols,
            symbol_ids,
            rules,
            rule_ids,
            by_first,
            unary_by_child,
            roots: roots_src,
        };
        if weighting == Weighting::Probabilistic {
            compiled.check_unary_cycles()?;
        }
        Ok(compiled)
    }

    /// Rejects strongly connected unary components made of probability-one
    /// rules; Viterbi over them has no well-defined best derivation.
    fn check_unary_cycles(&self) -> Result<(), ChartError> {
        let n = self.symbols.len();
        let mut edges = vec![Vec::new(); n];
        for rule in &self.rules {
            if rule.rhs.len() == 1 && rule.logp == 0.0 {
                edges[rule.lhs as usize].push(rule.rhs[0] as usize);
            }
        }
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = vec![0u8; n];
        for start in 0..n {
            if state[start] != 0 {
                continue;
            }
            let mut stack = vec![(start, 0usize)];
            state[start] = 1;
            while let Some(&mut (node, ref mut next)) = stack.last_mut() {
                if let Some(&succ) = edges[node].get(*next) {
                    *next += 1;
                    match state[succ] {
                        0 => {
                            state[succ] = 1;
                            stack.push((succ, 0));
                        }
                        1 => return Err(ChartError::DegenerateUnaryCycle(self.symbols[succ])),
                        _ => {}
                    }
                } else {
                    state[node] = 2;
                    stack.pop();
                }
            }
        }
        Ok(())
    }

    pub fn rule_id(&self, key: &RuleKey) -> Option<u32> {
        self.rule_ids.get(key).copied()
    }

    pub fn set_enabled(&mut self, key: &RuleKey, enabled: bool) -> bool {
        match self.rule_id(key) {
            Some(id) => {
                self.enabled[id as usize] = enabled;
                true
            }
            None => false,
        }
    }

    pub fn is_enabled(&self, key: &RuleKey) -> bool {
        self.rule_id(key).is_some_and(|id| self.enabled[id as usize])
    }

    pub fn log_probability(&self, key: &RuleKey) -> Option<f64> {
        self.rule_id(key).map(|id| self.rules[id as usize].logp)
    }

    pub fn roots(&self) -> &[(Category, u64)] {
        &self.roots
    }

    /// Builds the chart for `input`. Returns `None` when some input symbol
    /// is unknown to the grammar.
    pub fn chart(&self, input: &[Category]) -> Option<Chart<'_>> {
        let ids: Option<Vec<u32>> = input.iter().map(|c| self.symbol_ids.get(c).copied()).collect();
        Some(Chart::build(self, ids?))
    }

    pub fn recognize(&self, input: &[Category], goal: Category) -> bool {
        match (self.chart(input), self.symbol_ids.get(&goal)) {
            (Some(chart), Some(&goal)) => chart.passive(0, chart.len(), goal).is_some(),
            _ => false,
        }
    }

    pub fn viterbi(&self, input: &[Category], goal: Category) -> ParseResult {
        let Some(chart) = self.chart(input) else {
            return ParseResult::failed();
        };
        match chart.best(goal) {
            Some((logprob, derivation)) => ParseResult {
                recognized: true,
                best_tree: Some(derivation),
                best_logprob: Some(logprob),
            },
            None => ParseResult::failed(),
        }
    }
}

// ---------------------------------------------------------------------------
// Chart

#[derive(Debug, Clone, Copy)]
enum PassiveBack {
    /// The input symbol itself.
    Leaf,
    /// Unary rule over a passive item of the same cell.
    Unary { rule: u32, child: u32 },
    /// N-ary rule whose last child starts at `split`.
    Complete { rule: u32, split: usize },
}

#[derive(Debug, Clone, Copy)]
struct Passive {
    score: f64,
    back: PassiveBack,
}

impl Passive {
    /// Tie-break rank: leaves first, then rule id, then leftmost split.
    fn rank(&self) -> (i64, usize) {
        match self.back {
            PassiveBack::Leaf => (-1, 0),
            PassiveBack::Unary { rule, .. } => (rule as i64, 0),
            PassiveBack::Complete { rule, split } => (rule as i64, split),
        }
    }

    fn beats(&self, other: &Passive) -> bool {
        match self.score.total_cmp(&other.score) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => self.rank() < other.rank(),
        }
    }
}

/// Rule `rule` with its first `dot` right-hand symbols recognized.
#[derive(Debug, Clone, Copy)]
struct Active {
    rule: u32,
    dot: u32,
    score: f64,
    /// Start of the last recognized symbol; equals the item start when dot = 1.
    split: usize,
}

#[derive(Debug, Default)]
struct Cell {
    passive: HashMap<u32, Passive>,
    passive_order: Vec<u32>,
    active: Vec<Active>,
    active_index: HashMap<(u32, u32), usize>,
}

impl Cell {
    fn offer_active(&mut self, item: Active) {
        match self.active_index.get(&(item.rule, item.dot)) {
            Some(&at) => {
                let cur = &mut self.active[at];
                let better = match item.score.total_cmp(&cur.score) {
                    Ordering::Greater => true,
                    Ordering::Less => false,
                    Ordering::Equal => item.split < cur.split,
                };
                if better {
                    *cur = item;
                }
            }
            None => {
                self.active_index.insert((item.rule, item.dot), self.active.len());
                self.active.push(item);
            }
        }
    }
}

#[derive(Debug, PartialEq)]
struct HeapEntry {
    score: f64,
    rank: (i64, usize),
    symbol: u32,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.rank.cmp(&self.rank))
            .then_with(|| other.symbol.cmp(&self.symbol))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub struct Chart<'g> {
    grammar: &'g ChartGrammar,
    input: Vec<u32>,
    cells: Vec<Cell>,
}

impl<'g> Chart<'g> {
    fn index(&self, start: usize, end: usize) -> usize {
        start * (self.input.len() + 1) + end
    }

    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }

    fn build(grammar: &'g ChartGrammar, input: Vec<u32>) -> Self {
        let n = input.len();
        let mut chart = Chart {
            grammar,
            input,
            cells: (0..(n + 1) * (n + 1)).map(|_| Cell::default()).collect(),
        };
        for width in 1..=n {
            for start in 0..=(n - width) {
                chart.fill(start, start + width);
            }
        }
        chart
    }

    fn fill(&mut self, start: usize, end: usize) {
        let g = self.grammar;
        let mut candidates: HashMap<u32, Passive> = HashMap::new();
        let offer = |candidates: &mut HashMap<u32, Passive>, symbol: u32, item: Passive| {
            match candidates.get(&symbol) {
                Some(cur) if !item.beats(cur) => {}
                _ => {
                    candidates.insert(symbol, item);
                }
            }
        };

        // extend active items ending at `split` with passive items covering split..end
        let mut extended: Vec<Active> = Vec::new();
        for split in start + 1..end {
            let left = &self.cells[self.index(start, split)];
            let right = &self.cells[self.index(split, end)];
            for item in &left.active {
                let rule = &g.rules[item.rule as usize];
                let needed = rule.rhs[item.dot as usize];
                if let Some(child) = right.passive.get(&needed) {
                    let next = Active {
                        rule: item.rule,
                        dot: item.dot + 1,
                        score: item.score + child.score,
                        split,
                    };
                    if next.dot as usize == rule.rhs.len() {
                        offer(
                            &mut candidates,
                            rule.lhs,
                            Passive {
                                score: next.score + rule.logp,
                                back: PassiveBack::Complete { rule: item.rule, split },
                            },
                        );
                    } else {
                        extended.push(next);
                    }
                }
            }
        }

        if end == start + 1 {
            offer(
                &mut candidates,
                self.input[start],
                Passive {
                    score: 0.0,
                    back: PassiveBack::Leaf,
                },
            );
        }

        // best-first unary closure
        let mut heap: BinaryHeap<HeapEntry> = candidates
            .iter()
            .map(|(&symbol, p)| HeapEntry {
                score: p.score,
                rank: p.rank(),
                symbol,
            })
            .collect();
        let mut done: HashMap<u32, Passive> = HashMap::new();
        let mut order: Vec<u32> = Vec::new();
        while let Some(entry) = heap.pop() {
            if done.contains_key(&entry.symbol) {
                continue;
            }
            let item = candidates[&entry.symbol];
            if item.score != entry.score || item.rank() != entry.rank {
                continue; // stale
            }
            done.insert(entry.symbol, item);
            order.push(entry.symbol);
            for &rule_id in &g.unary_by_child[entry.symbol as usize] {
                if !g.enabled[rule_id as usize] {
                    continue;
                }
                let rule = &g.rules[rule_id as usize];
                if done.contains_key(&rule.lhs) {
                    continue;
                }
                let cand = Passive {
                    score: item.score + rule.logp,
                    back: PassiveBack::Unary {
                        rule: rule_id,
                        child: entry.symbol,
                    },
                };
                let better = candidates.get(&rule.lhs).is_none_or(|cur| cand.beats(cur));
                if better {
                    candidates.insert(rule.lhs, cand);
                    heap.push(HeapEntry {
                        score: cand.score,
                        rank: cand.rank(),
                        symbol: rule.lhs,
                    });
                }
            }
        }

        let idx = self.index(start, end);
        let cell = &mut self.cells[idx];
        for item in extended {
            cell.offer_active(item);
        }
        // start new dotted items from every passive item of this cell
        for &symbol in &order {
            let p = done[&symbol];
            for &rule_id in &g.by_first[symbol as usize] {
                if g.enabled[rule_id as usize] {
                    cell.offer_active(Active {
                        rule: rule_id,
                        dot: 1,
                        score: p.score,
                        split: start,
                    });
                }
            }
        }
        cell.passive = done;
        cell.passive_order = order;
    }

    fn passive(&self, start: usize, end: usize, symbol: u32) -> Option<&Passive> {
        self.cells[self.index(start, end)].passive.get(&symbol)
    }

    fn active(&self, start: usize, end: usize, rule: u32, dot: u32) -> &Active {
        let cell = &self.cells[self.index(start, end)];
        &cell.active[cell.active_index[&(rule, dot)]]
    }

    /// Best derivation of the whole input from `goal`, with its log-probability.
    pub fn best(&self, goal: Category) -> Option<(f64, Derivation)> {
        let &goal = self.grammar.symbol_ids.get(&goal)?;
        let item = self.passive(0, self.len(), goal)?;
        Some((item.score, self.derivation(0, self.len(), goal)))
    }

    /// Categories spanning the whole input, in best-first order.
    pub fn complete_categories(&self) -> Vec<(Category, f64)> {
        let cell = &self.cells[self.index(0, self.len())];
        cell.passive_order
            .iter()
            .map(|s| (self.grammar.symbols[*s as usize], cell.passive[s].score))
            .collect()
    }

    fn derivation(&self, start: usize, end: usize, symbol: u32) -> Derivation {
        let g = self.grammar;
        let item = self.passive(start, end, symbol).expect("backpointer target exists");
        match item.back {
            PassiveBack::Leaf => Derivation::Leaf(g.symbols[symbol as usize]),
            PassiveBack::Unary { rule, child } => Derivation::Node {
                rule: g.rules[rule as usize].key.clone(),
                children: vec![self.derivation(start, end, child)],
            },
            PassiveBack::Complete { rule, split } => {
                let compiled = &g.rules[rule as usize];
                let len = compiled.rhs.len();
                let mut children = Vec::with_capacity(len);
                let last = compiled.rhs[len - 1];
                children.push(self.derivation(split, end, last));
                let (mut dot, mut right) = (len as u32 - 1, split);
                while dot >= 1 {
                    let item = self.active(start, right, rule, dot);
                    let sym = compiled.rhs[dot as usize - 1];
                    children.push(self.derivation(item.split, right, sym));
                    right = item.split;
                    dot -= 1;
                }
                debug_assert_eq!(right, start);
                children.reverse();
                Derivation::Node {
                    rule: compiled.key.clone(),
                    children,
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Results

/// A derivation over input symbols. Every node is an application of a
/// grammar rule; leaves are the input symbols themselves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Derivation {
    Leaf(Category),
    Node { rule: RuleKey, children: Vec<Derivation> },
}

impl Derivation {
    pub fn label(&self) -> Category {
        match self {
            Derivation::Leaf(c) => *c,
            Derivation::Node { rule, .. } => rule.lhs,
        }
    }

    pub fn leaves(&self) -> Vec<Category> {
        match self {
            Derivation::Leaf(c) => vec![*c],
            Derivation::Node { children, .. } => children.iter().flat_map(|c| c.leaves()).collect(),
        }
    }

    pub fn rules_used(&self) -> Vec<&RuleKey> {
        let mut out = Vec::new();
        self.collect_rules(&mut out);
        out
    }

    fn collect_rules<'a>(&'a self, out: &mut Vec<&'a RuleKey>) {
        if let Derivation::Node { rule, children } = self {
            out.push(rule);
            children.iter().for_each(|c| c.collect_rules(out));
        }
    }

    /// Every node's children match its rule's right-hand side.
    pub fn is_well_formed(&self) -> bool {
        match self {
            Derivation::Leaf(_) => true,
            Derivation::Node { rule, children } => {
                children.iter().map(Derivation::label).eq(rule.rhs.iter().copied())
                    && children.iter().all(Derivation::is_well_formed)
            }
        }
    }

    /// `(NP (NP DT NN) CC (NP DT NN))`
    pub fn to_bracketed(&self) -> String {
        let mut out = String::new();
        self.write_bracketed(&mut out);
        out
    }

    fn write_bracketed(&self, out: &mut String) {
        match self {
            Derivation::Leaf(c) => out.push_str(c.name()),
            Derivation::Node { rule, children } => {
                let _ = write!(out, "({}", rule.lhs);
                for child in children {
                    out.push(' ');
                    child.write_bracketed(out);
                }
                out.push(')');
            }
        }
    }

    /// Converts to a constituent tree; leaf `i` becomes a preterminal over
    /// `words[i]`.
    pub fn to_tree(&self, words: &[String]) -> Tree {
        let mut next = 0;
        let mut tree = self.to_tree_from(words, &mut next);
        tree.renumber(0);
        tree
    }

    fn to_tree_from(&self, words: &[String], next: &mut usize) -> Tree {
        match self {
            Derivation::Leaf(c) => {
                let word = words.get(*next).cloned().unwrap_or_else(|| c.name().to_string());
                *next += 1;
                Tree::preterminal(*c, word)
            }
            Derivation::Node { rule, children } => Tree {
                label: rule.lhs,
                span: crate::treebank::Span::new(0, 0),
                node: crate::treebank::Node::Phrase(
                    children.iter().map(|c| c.to_tree_from(words, next)).collect(),
                ),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseResult {
    pub recognized: bool,
    pub best_tree: Option<Derivation>,
    pub best_logprob: Option<f64>,
}

impl ParseResult {
    fn failed() -> Self {
        ParseResult {
            recognized: false,
            best_tree: None,
            best_logprob: None,
        }
    }

    pub fn probability(&self) -> Option<f64> {
        self.best_logprob.map(f64::exp)
    }
}

fn exclude(compiled: &mut ChartGrammar, excluded: &HashSet<RuleKey>) {
    for key in excluded {
        compiled.set_enabled(key, false);
    }
}

/// True iff `goal` derives `input` using the grammar minus `excluded`.
pub fn recognize(
    grammar: &Grammar,
    input: &[Category],
    goal: Category,
    excluded: &HashSet<RuleKey>,
) -> Result<bool, ChartError> {
    let mut compiled = ChartGrammar::new(grammar, Weighting::Unweighted)?;
    exclude(&mut compiled, excluded);
    Ok(compiled.recognize(input, goal))
}

/// Maximum-probability derivation of `input` from `goal` using the grammar
/// minus `excluded`. Probabilities come from the full grammar's counts.
pub fn viterbi(
    grammar: &Grammar,
    input: &[Category],
    goal: Category,
    excluded: &HashSet<RuleKey>,
) -> Result<ParseResult, ChartError> {
    let mut compiled = ChartGrammar::new(grammar, Weighting::Probabilistic)?;
    exclude(&mut compiled, excluded);
    Ok(compiled.viterbi(input, goal))
}

/// Parse of a POS-tag sequence, possibly the fallback flat tree.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceParse {
    pub tree: Tree,
    pub logprob: Option<f64>,
    pub fallback: bool,
}

/// Best parse of `tags` over any of the grammar's roots. When no root
/// spans the input, returns a flat tree under the most frequent root,
/// marked as a fallback.
pub fn parse_sentence(grammar: &ChartGrammar, tags: &[Category], words: &[String]) -> SentenceParse {
    let roots: HashSet<Category> = grammar.roots.iter().map(|(c, _)| *c).collect();
    if let Some(chart) = grammar.chart(tags) {
        let best = chart
            .complete_categories()
            .into_iter()
            .filter(|(c, _)| roots.contains(c))
            .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)));
        if let Some((root, _)) = best {
            let (logprob, derivation) = chart.best(root).expect("root in final cell");
            // a bare leaf is not a parse of a sentence
            if matches!(derivation, Derivation::Node { .. }) {
                return SentenceParse {
                    tree: derivation.to_tree(words),
                    logprob: Some(logprob),
                    fallback: false,
                };
            }
        }
    }
    SentenceParse {
        tree: fallback_tree(grammar, tags, words),
        logprob: None,
        fallback: true,
    }
}

fn fallback_tree(grammar: &ChartGrammar, tags: &[Category], words: &[String]) -> Tree {
    let label = grammar
        .roots
        .iter()
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        .map(|(c, _)| *c)
        .unwrap_or_else(Category::top);
    let children = tags
        .iter()
        .enumerate()
        .map(|(i, &t)| Tree::preterminal(t, words.get(i).cloned().unwrap_or_else(|| t.name().to_string())))
        .collect();
    Tree::phrase(label, children)
}
