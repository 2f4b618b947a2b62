//! Counted context-free grammars read off normalized treebank trees.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::category::{Category, CategoryKind};
use crate::treebank::Tree;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GrammarError {
    #[error("rule {0} has an empty right-hand side")]
    EpsilonRule(Category),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("category {0} is used both as a POS tag and as a phrasal label")]
    KindConflict(Category),
}

/// Rule identity: left-hand side and right-hand side, without count.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RuleKey {
    pub lhs: Category,
    pub rhs: Vec<Category>,
}

impl RuleKey {
    pub fn new(lhs: Category, rhs: Vec<Category>) -> Self {
        RuleKey { lhs, rhs }
    }

    /// Parses `"NP -> DT NN"`. Panics on malformed input; meant for fixtures.
    pub fn parse(text: &str) -> Self {
        let (lhs, rhs) = text.split_once("->").expect("rule needs `->`");
        RuleKey::new(
            Category::new(lhs.trim()),
            rhs.split_whitespace().map(Category::new).collect(),
        )
    }

    pub fn is_unary(&self) -> bool {
        self.rhs.len() == 1
    }
}

impl Ord for RuleKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.lhs
            .cmp(&other.lhs)
            .then_with(|| self.rhs.cmp(&other.rhs))
    }
}

impl PartialOrd for RuleKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for RuleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ->", self.lhs)?;
        for c in &self.rhs {
            write!(f, " {c}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub lhs: Category,
    pub rhs: Vec<Category>,
    pub count: u64,
}

impl Rule {
    pub fn new(lhs: Category, rhs: Vec<Category>, count: u64) -> Self {
        Rule { lhs, rhs, count }
    }

    pub fn key(&self) -> RuleKey {
        RuleKey::new(self.lhs, self.rhs.clone())
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.count, self.key())
    }
}

/// A rule set with occurrence counts, per-LHS totals and observed roots.
///
/// Rules keep insertion order; that order is what the `input` visiting
/// policy of the compactor walks.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Grammar {
    rules: IndexMap<RuleKey, u64>,
    lhs_totals: BTreeMap<Category, u64>,
    roots: BTreeMap<Category, u64>,
}

impl Grammar {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a grammar from `"count LHS -> RHS"` strings. Panics on bad input.
    pub fn from_rules<'a>(rules: impl IntoIterator<Item = (&'a str, u64)>) -> Self {
        let mut g = Grammar::new();
        for (text, count) in rules {
            let key = RuleKey::parse(text);
            g.add_rule(Rule::new(key.lhs, key.rhs, count)).unwrap();
        }
        g
    }

    pub fn add_rule(&mut self, rule: Rule) -> Result<(), GrammarError> {
        if rule.rhs.is_empty() {
            return Err(GrammarError::EpsilonRule(rule.lhs));
        }
        *self.rules.entry(RuleKey::new(rule.lhs, rule.rhs)).or_insert(0) += rule.count;
        *self.lhs_totals.entry(rule.lhs).or_insert(0) += rule.count;
        Ok(())
    }

    /// Additive merge. All rules are validated before any is added.
    pub fn add_rules(&mut self, rules: impl IntoIterator<Item = Rule>) -> Result<(), GrammarError> {
        let rules: Vec<Rule> = rules.into_iter().collect();
        if let Some(bad) = rules.iter().find(|r| r.rhs.is_empty()) {
            return Err(GrammarError::EpsilonRule(bad.lhs));
        }
        for rule in rules {
            self.add_rule(rule)?;
        }
        Ok(())
    }

    /// Merges another grammar's rules and roots into this one.
    pub fn merge(&mut self, other: &Grammar) {
        for (key, &count) in &other.rules {
            *self.rules.entry(key.clone()).or_insert(0) += count;
            *self.lhs_totals.entry(key.lhs).or_insert(0) += count;
        }
        for (&root, &n) in &other.roots {
            *self.roots.entry(root).or_insert(0) += n;
        }
    }

    pub fn remove(&mut self, key: &RuleKey) -> Option<u64> {
        let count = self.rules.shift_remove(key)?;
        let total = self.lhs_totals.get_mut(&key.lhs).expect("total tracked");
        *total -= count;
        if !self.rules.keys().any(|k| k.lhs == key.lhs) {
            self.lhs_totals.remove(&key.lhs);
        }
        Some(count)
    }

    pub fn add_root(&mut self, root: Category, count: u64) {
        *self.roots.entry(root).or_insert(0) += count;
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn contains(&self, key: &RuleKey) -> bool {
        self.rules.contains_key(key)
    }

    pub fn count(&self, key: &RuleKey) -> Option<u64> {
        self.rules.get(key).copied()
    }

    pub fn lhs_total(&self, lhs: Category) -> u64 {
        self.lhs_totals.get(&lhs).copied().unwrap_or(0)
    }

    /// Maximum-likelihood probability `count / lhs_total`.
    pub fn probability(&self, key: &RuleKey) -> Option<f64> {
        let count = self.count(key)?;
        let total = self.lhs_total(key.lhs);
        (total > 0).then(|| count as f64 / total as f64)
    }

    /// Rules in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&RuleKey, u64)> + '_ {
        self.rules.iter().map(|(k, &c)| (k, c))
    }

    pub fn keys(&self) -> impl Iterator<Item = &RuleKey> + '_ {
        self.rules.keys()
    }

    pub fn rules(&self) -> Vec<Rule> {
        self.iter()
            .map(|(k, c)| Rule::new(k.lhs, k.rhs.clone(), c))
            .collect()
    }

    pub fn sorted_keys(&self) -> Vec<RuleKey> {
        let mut keys: Vec<RuleKey> = self.rules.keys().cloned().collect();
        keys.sort();
        keys
    }

    pub fn roots(&self) -> &BTreeMap<Category, u64> {
        &self.roots
    }

    /// Observed roots, or when none were recorded, the left-hand sides that
    /// never occur on a right-hand side (all left-hand sides as last resort).
    pub fn effective_roots(&self) -> Vec<(Category, u64)> {
        if !self.roots.is_empty() {
            return self.roots.iter().map(|(&c, &n)| (c, n)).collect();
        }
        let on_rhs: HashSet<Category> = self.keys().flat_map(|k| k.rhs.iter().copied()).collect();
        let unused: Vec<(Category, u64)> = self
            .lhs_totals
            .iter()
            .filter(|(c, _)| !on_rhs.contains(c))
            .map(|(&c, &n)| (c, n))
            .collect();
        if unused.is_empty() {
            self.lhs_totals.iter().map(|(&c, &n)| (c, n)).collect()
        } else {
            unused
        }
    }

    pub fn nonterminals(&self) -> impl Iterator<Item = Category> + '_ {
        self.lhs_totals.keys().copied()
    }

    /// A category is a nonterminal of this grammar iff it heads some rule.
    pub fn kind_of(&self, category: Category) -> CategoryKind {
        if self.lhs_totals.contains_key(&category) {
            CategoryKind::Nonterminal
        } else {
            CategoryKind::Terminal
        }
    }

    /// Categories occurring on some right-hand side but heading no rule.
    pub fn terminals(&self) -> Vec<Category> {
        let mut out: Vec<Category> = self
            .keys()
            .flat_map(|k| k.rhs.iter().copied())
            .filter(|c| !self.lhs_totals.contains_key(c))
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        out.sort();
        out
    }

    /// Keeps only rules satisfying `keep`; totals are recomputed.
    pub fn retain(&mut self, mut keep: impl FnMut(&RuleKey, u64) -> bool) {
        self.rules.retain(|k, c| keep(k, *c));
        self.recompute_totals();
    }

    fn recompute_totals(&mut self) {
        self.lhs_totals.clear();
        for (k, &c) in &self.rules {
            *self.lhs_totals.entry(k.lhs).or_insert(0) += c;
        }
    }

    /// Copy with the same roots and no rules.
    pub fn empty_like(&self) -> Grammar {
        Grammar {
            rules: IndexMap::new(),
            lhs_totals: BTreeMap::new(),
            roots: self.roots.clone(),
        }
    }

    /// Rebuilds the grammar with rules ordered by `(lhs, rhs)`.
    pub fn sorted(&self) -> Grammar {
        let mut out = self.empty_like();
        for key in self.sorted_keys() {
            let count = self.rules[&key];
            out.rules.insert(key, count);
        }
        out.recompute_totals();
        out
    }
}

// ---------------------------------------------------------------------------
// Extraction

/// Follows a unary chain down to its lowest node. The lowest node replaces
/// the whole chain, both as the child in the parent's rule and as the LHS
/// of the rule for its own children.
fn collapse_unary(mut node: &Tree) -> &Tree {
    while !node.is_preterminal() && node.children().len() == 1 {
        node = &node.children()[0];
    }
    node
}

fn extract_into(node: &Tree, out: &mut Vec<Rule>) {
    let node = collapse_unary(node);
    if node.is_preterminal() {
        return;
    }
    let children: Vec<&Tree> = node.children().iter().map(collapse_unary).collect();
    out.push(Rule::new(
        node.label,
        children.iter().map(|c| c.label).collect(),
        1,
    ));
    for child in node.children() {
        extract_into(child, out);
    }
}

fn strip_top(tree: &Tree) -> &[Tree] {
    if tree.label.is_top() {
        tree.children()
    } else {
        std::slice::from_ref(tree)
    }
}

/// One rule per branching node, after unary-chain collapsing. Preterminals
/// emit nothing and the `TOP` wrapper is skipped. Identical rules are
/// returned once per occurrence, in pre-order.
pub fn extract_rules(tree: &Tree) -> Vec<Rule> {
    let mut out = Vec::new();
    for root in strip_top(tree) {
        extract_into(root, &mut out);
    }
    out
}

/// Root categories a tree contributes: the collapsed label under `TOP`,
/// unless that is a bare preterminal.
pub fn tree_roots(tree: &Tree) -> Vec<Category> {
    strip_top(tree)
        .iter()
        .map(collapse_unary)
        .filter(|n| !n.is_preterminal())
        .map(|n| n.label)
        .collect()
}

/// Accumulates rules and roots over a stream of normalized trees, checking
/// that no label is used both as a POS tag and a phrasal label.
#[derive(Debug, Default)]
pub struct GrammarBuilder {
    grammar: Grammar,
    pos_tags: HashSet<Category>,
    phrasal: HashSet<Category>,
    tokens: usize,
    trees: usize,
}

impl GrammarBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_tree(&mut self, tree: &Tree) -> Result<(), GrammarError> {
        let mut conflict = None;
        for root in strip_top(tree) {
            root.walk(&mut |n| {
                if conflict.is_some() {
                    return;
                }
                let (mine, other) = if n.is_preterminal() {
                    (&mut self.pos_tags, &self.phrasal)
                } else {
                    (&mut self.phrasal, &self.pos_tags)
                };
                if other.contains(&n.label) {
                    conflict = Some(n.label);
                }
                mine.insert(n.label);
            });
        }
        if let Some(label) = conflict {
            return Err(GrammarError::KindConflict(label));
        }
        self.grammar.add_rules(extract_rules(tree))?;
        for root in tree_roots(tree) {
            self.grammar.add_root(root, 1);
        }
        self.tokens += tree.num_tokens();
        self.trees += 1;
        Ok(())
    }

    pub fn grammar(&self) -> &Grammar {
        &self.grammar
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn trees(&self) -> usize {
        self.trees
    }

    pub fn finish(self) -> Grammar {
        self.grammar
    }
}

pub fn extract_grammar<'a>(trees: impl IntoIterator<Item = &'a Tree>) -> Result<Grammar, GrammarError> {
    let mut builder = GrammarBuilder::new();
    for tree in trees {
        builder.add_tree(tree)?;
    }
    Ok(builder.finish())
}

// ---------------------------------------------------------------------------
// Growth curves

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrowthPoint {
    pub tokens: usize,
    pub distinct_rules: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GrowthCurve {
    pub points: Vec<GrowthPoint>,
}

impl GrowthCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tokens,distinct_rules\n");
        for p in &self.points {
            out.push_str(&format!("{},{}\n", p.tokens, p.distinct_rules));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.points).expect("plain data")
    }
}

/// Streams the trees in order, recording the distinct-rule count each time
/// the cumulative token count crosses a multiple of `sample_every`.
pub fn growth_curve<'a>(
    trees: impl IntoIterator<Item = &'a Tree>,
    sample_every: usize,
) -> GrowthCurve {
    assert!(sample_every >= 1, "sample_every must be at least 1");
    let mut seen: HashSet<RuleKey> = HashSet::new();
    let mut tokens = 0usize;
    let mut curve = GrowthCurve::default();
    for tree in trees {
        for rule in extract_rules(tree) {
            seen.insert(rule.key());
        }
        let before = tokens;
        tokens += tree.num_tokens();
        if tokens / sample_every > before / sample_every {
            curve.points.push(GrowthPoint {
                tokens,
                distinct_rules: seen.len(),
            });
        }
    }
    curve
}

// ---------------------------------------------------------------------------
// Text format: `<count> <LHS> -> <C1> <C2> ...`

const ROOT_DIRECTIVE: &str = "#root";

/// Reads the line format. Blank lines and `#` comments are skipped, except
/// `#root <count> <CAT>` lines which record observed roots.
pub fn read_grammar(text: &str) -> Result<Grammar, GrammarError> {
    let mut grammar = Grammar::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |message: &str| GrammarError::Format {
            line: line_no,
            message: message.to_string(),
        };
        let line = line.trim();
        if let Some(rest) = line.strip_prefix(ROOT_DIRECTIVE) {
            let fields: Vec<&str> = rest.split_whitespace().collect();
            let [count, cat] = fields[..] else {
                return Err(err("expected `#root <count> <category>`"));
            };
            let count: u64 = count.parse().map_err(|_| err("bad root count"))?;
            grammar.add_root(Category::new(cat), count);
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (head, rhs) = line.split_once("->").ok_or_else(|| err("missing `->`"))?;
        let mut head = head.split_whitespace();
        let (Some(count), Some(lhs), None) = (head.next(), head.next(), head.next()) else {
            return Err(err("expected `<count> <LHS> -> <RHS>`"));
        };
        let count: i64 = count
            .parse()
            .map_err(|_| err(&format!("count {count:?} is not an integer")))?;
        if count <= 0 {
            return Err(err("count must be positive"));
        }
        if rhs.contains("->") {
            return Err(err("more than one `->`"));
        }
        let rhs: Vec<Category> = rhs.split_whitespace().map(Category::new).collect();
        if rhs.is_empty() {
            return Err(err("empty right-hand side"));
        }
        grammar
            .add_rule(Rule::new(Category::new(lhs), rhs, count as u64))
            .map_err(|e| err(&e.to_string()))?;
    }
    Ok(grammar)
}

/// Writes roots then rules, sorted by `(lhs, rhs)`.
pub fn write_grammar(grammar: &Grammar) -> String {
    let mut out = String::new();
    for (root, count) in grammar.roots() {
        out.push_str(&format!("{ROOT_DIRECTIVE} {count} {root}\n"));
    }
    for key in grammar.sorted_keys() {
        let count = grammar.count(&key).unwrap();
        out.push_str(&format!("{count} {key}\n"));
    }
    out
}
