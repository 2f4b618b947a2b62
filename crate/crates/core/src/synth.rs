//! Treebanks sampled from a known PCFG, with partial-bracketing noise.
//!
//! Sentence `i` of a corpus draws all of its randomness from a ChaCha8
//! stream keyed by `(seed, i)`, so corpora are reproducible and sentences
//! can be generated independently.

use std::collections::{BTreeMap, HashMap};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::category::Category;
use crate::grammar::{read_grammar, write_grammar, Grammar, RuleKey};
use crate::treebank::{Node, Tree};

/// Identifier of the random stream construction, written to sidecars.
pub const RNG_ALGORITHM: &str = "chacha8-stream-per-sentence";

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("flatten probability {0} is outside [0, 1]")]
    BadProbability(f64),
    #[error("base grammar rule {0} is shorter than two symbols")]
    ShortRule(RuleKey),
    #[error("base grammar has no root categories")]
    NoRoots,
    #[error("nonterminal {0} cannot derive a terminal string within depth {1}")]
    CannotTerminate(Category, usize),
    #[error("no derivation within depth {max_depth} after {attempts} attempts for sentence {sentence}")]
    DepthExceeded {
        sentence: usize,
        attempts: usize,
        max_depth: usize,
    },
}

#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub base_grammar: Grammar,
    pub flatten_probability: f64,
    /// Per-category splice probabilities overriding `flatten_probability`.
    pub category_flatten: BTreeMap<Category, f64>,
    pub max_depth: usize,
    pub sentence_count: usize,
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn new(base_grammar: Grammar) -> Self {
        GeneratorConfig {
            base_grammar,
            flatten_probability: 0.0,
            category_flatten: BTreeMap::new(),
            max_depth: 25,
            sentence_count: 1000,
            seed: 0,
        }
    }

    pub fn flattening(&self) -> Flattening {
        Flattening {
            default: self.flatten_probability,
            by_category: self.category_flatten.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        for p in std::iter::once(self.flatten_probability).chain(self.category_flatten.values().copied()) {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError::BadProbability(p));
            }
        }
        if let Some(short) = self.base_grammar.keys().find(|k| k.rhs.len() < 2) {
            return Err(SynthError::ShortRule(short.clone()));
        }
        if self.base_grammar.roots().is_empty() {
            return Err(SynthError::NoRoots);
        }
        let depths = min_depths(&self.base_grammar);
        for nt in self.base_grammar.nonterminals() {
            match depths.get(&nt) {
                Some(&d) if d <= self.max_depth => {}
                _ => return Err(SynthError::CannotTerminate(nt, self.max_depth)),
            }
        }
        Ok(())
    }
}

/// Fewest rule applications along the deepest path needed for each
/// nonterminal to reach terminals.
fn min_depths(grammar: &Grammar) -> HashMap<Category, usize> {
    let mut depth: HashMap<Category, usize> = HashMap::new();
    loop {
        let mut changed = false;
        for key in grammar.keys() {
            let child_max = key.rhs.iter().try_fold(0usize, |acc, c| {
                if grammar.kind_of(*c) == crate::category::CategoryKind::Terminal {
                    Some(acc)
                } else {
                    depth.get(c).map(|&d| acc.max(d))
                }
            });
            if let Some(d) = child_max {
                let cand = d + 1;
                if depth.get(&key.lhs).is_none_or(|&cur| cand < cur) {
                    depth.insert(key.lhs, cand);
                    changed = true;
                }
            }
        }
        if !changed {
            return depth;
        }
    }
}

/// Distinct base rules used during generation, with use counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UsageLog {
    pub rules: BTreeMap<RuleKey, u64>,
}

impl UsageLog {
    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn contains(&self, key: &RuleKey) -> bool {
        self.rules.contains_key(key)
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    /// Trees wrapped in `TOP`, as a Penn treebank file would have them.
    pub trees: Vec<Tree>,
    pub usage: UsageLog,
}

pub fn sentence_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

struct Sampler {
    choices: HashMap<Category, (Vec<RuleKey>, WeightedIndex<u64>)>,
    roots: (Vec<Category>, WeightedIndex<u64>),
    max_depth: usize,
}

impl Sampler {
    fn new(grammar: &Grammar, max_depth: usize) -> Self {
        let mut by_lhs: BTreeMap<Category, Vec<(RuleKey, u64)>> = BTreeMap::new();
        for key in grammar.sorted_keys() {
            let count = grammar.count(&key).unwrap();
            by_lhs.entry(key.lhs).or_default().push((key, count));
        }
        let choices = by_lhs
            .into_iter()
            .map(|(lhs, rules)| {
                let weights = WeightedIndex::new(rules.iter().map(|r| r.1)).expect("positive counts");
                (lhs, (rules.into_iter().map(|r| r.0).collect(), weights))
            })
            .collect();
        let root_cats: Vec<Category> = grammar.roots().keys().copied().collect();
        let root_weights = WeightedIndex::new(grammar.roots().values().copied()).expect("roots");
        Sampler {
            choices,
            roots: (root_cats, root_weights),
            max_depth,
        }
    }

    fn expand(&self, label: Category, depth: usize, rng: &mut ChaCha8Rng, used: &mut Vec<RuleKey>) -> Option<Tree> {
        let Some((rules, weights)) = self.choices.get(&label) else {
            let word = label.name().to_lowercase();
            return Some(Tree::preterminal(label, word));
        };
        if depth > self.max_depth {
            return None;
        }
        let rule = &rules[weights.sample(rng)];
        used.push(rule.clone());
        let children = rule
            .rhs
            .iter()
            .map(|&c| self.expand(c, depth + 1, rng, used))
            .collect::<Option<Vec<Tree>>>()?;
        Some(Tree {
            label,
            span: crate::treebank::Span::new(0, 0),
            node: Node::Phrase(children),
        })
    }

    fn sentence(&self, index: usize, seed: u64, flattening: &Flattening) -> Result<(Tree, Vec<RuleKey>), SynthError> {
        const ATTEMPTS: usize = 1000;
        let mut rng = sentence_rng(seed, index);
        for _ in 0..ATTEMPTS {
            let root = self.roots.0[self.roots.1.sample(&mut rng)];
            let mut used = Vec::new();
            if let Some(tree) = self.expand(root, 1, &mut rng, &mut used) {
                let tree = flatten_with(&tree, flattening, &mut rng);
                let mut top = Tree::phrase(Category::top(), vec![tree]);
                top.renumber(0);
                return Ok((top, used));
            }
        }
        Err(SynthError::DepthExceeded {
            sentence: index,
            attempts: ATTEMPTS,
            max_depth: self.max_depth,
        })
    }
}

/// Samples `sentence_count` trees top-down from the base grammar's
/// probabilities and flattens each one.
pub fn generate(config: &GeneratorConfig) -> Result<Corpus, SynthError> {
    config.validate()?;
    let sampler = Sampler::new(&config.base_grammar, config.max_depth);
    let flattening = config.flattening();
    let sentences: Vec<(Tree, Vec<RuleKey>)> = (0..config.sentence_count)
        .into_par_iter()
        .map(|i| sampler.sentence(i, config.seed, &flattening))
        .collect::<Result<_, _>>()?;
    let mut usage = UsageLog::default();
    let mut trees = Vec::with_capacity(sentences.len());
    for (tree, used) in sentences {
        for key in used {
            *usage.rules.entry(key).or_insert(0) += 1;
        }
        trees.push(tree);
    }
    Ok(Corpus { trees, usage })
}

/// Splice probabilities: one default, optionally overridden per category.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Flattening {
    pub default: f64,
    pub by_category: BTreeMap<Category, f64>,
}

impl Flattening {
    pub fn uniform(p: f64) -> Self {
        Flattening {
            default: p,
            by_category: BTreeMap::new(),
        }
    }

    pub fn probability(&self, category: Category) -> f64 {
        self.by_category.get(&category).copied().unwrap_or(self.default)
    }
}

/// Splices out each phrasal non-root node with probability `p`, top-down;
/// the node's children take its place in the parent.
pub fn flatten(tree: &Tree, p: f64, seed: u64) -> Tree {
    flatten_with(tree, &Flattening::uniform(p), &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn flatten_with(tree: &Tree, policy: &Flattening, rng: &mut ChaCha8Rng) -> Tree {
    let mut out = if tree.label.is_top() {
        // the wrapped sentence root is itself a root
        Tree {
            label: tree.label,
            span: tree.span,
            node: Node::Phrase(tree.children().iter().map(|c| flatten_with(c, policy, rng)).collect()),
        }
    } else {
        flatten_root(tree, policy, rng)
    };
    out.renumber(tree.span.start);
    out
}

fn flatten_root(tree: &Tree, policy: &Flattening, rng: &mut ChaCha8Rng) -> Tree {
    match &tree.node {
        Node::Leaf(_) => tree.clone(),
        Node::Phrase(children) => {
            let mut kept = Vec::with_capacity(children.len());
            splice_children(children, policy, rng, &mut kept);
            Tree {
                label: tree.label,
                span: tree.span,
                node: Node::Phrase(kept),
            }
        }
    }
}

fn splice_children(children: &[Tree], policy: &Flattening, rng: &mut ChaCha8Rng, out: &mut Vec<Tree>) {
    for child in children {
        if child.is_preterminal() {
            out.push(child.clone());
        } else if rng.random::<f64>() < policy.probability(child.label) {
            splice_children(child.children(), policy, rng, out);
        } else {
            out.push(flatten_root(child, policy, rng));
        }
    }
}

// ---------------------------------------------------------------------------
// Built-in base grammar

/// A 50-rule English-like PCFG over PTB POS tags. Every rule has at least
/// two right-hand symbols and none can be parsed by the others, so naive
/// compaction leaves it unchanged.
pub const DEFAULT_BASE_GRAMMAR: &str = include_str!("../data/base50.grammar");

pub fn default_base_grammar() -> Grammar {
    read_grammar(DEFAULT_BASE_GRAMMAR).expect("bundled grammar is well formed")
}

#[derive(Serialize)]
struct UsageEntry {
    rule: String,
    count: u64,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    rng_algorithm: &'a str,
    seed: u64,
    flatten_probability: f64,
    category_flatten: BTreeMap<String, f64>,
    max_depth: usize,
    sentence_count: usize,
    base_grammar: Vec<String>,
    usage: Vec<UsageEntry>,
}

/// JSON sidecar describing how a corpus was generated.
pub fn sidecar_json(config: &GeneratorConfig, usage: &UsageLog) -> String {
    let sidecar = Sidecar {
        rng_algorithm: RNG_ALGORITHM,
        seed: config.seed,
        flatten_probability: config.flatten_probability,
        category_flatten: config
            .category_flatten
            .iter()
            .map(|(c, &p)| (c.to_string(), p))
            .collect(),
        max_depth: config.max_depth,
        sentence_count: config.sentence_count,
        base_grammar: write_grammar(&config.base_grammar).lines().map(String::from).collect(),
        usage: usage
            .rules
            .iter()
            .map(|(k, &count)| UsageEntry {
                rule: k.to_string(),
                count,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&sidecar).expect("plain data")
}
