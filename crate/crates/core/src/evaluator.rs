//! PARSEVAL bracket scoring in the evalb convention.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::category::Category;
use crate::chart::{parse_sentence, ChartGrammar};
use crate::treebank::{Node, Tree};

/// POS tags removed from the index space before scoring.
pub const PUNCTUATION_TAGS: &[&str] = &[".", ",", ":", "''", "``", "-LRB-", "-RRB-"];

pub fn is_punctuation(tag: Category) -> bool {
    PUNCTUATION_TAGS.contains(&tag.name())
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("yield mismatch: gold has {gold} scored tokens, test has {test}")]
    YieldMismatch { gold: usize, test: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bracket {
    pub label: Category,
    pub start: usize,
    pub end: usize,
}

/// Labeled spans of a tree over punctuation-free token positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BracketSet {
    pub brackets: Vec<Bracket>,
    /// Number of non-punctuation tokens.
    pub length: usize,
}

impl BracketSet {
    pub fn len(&self) -> usize {
        self.brackets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.brackets.is_empty()
    }
}

/// One bracket per phrasal node (root included, `TOP` excluded). Spans are
/// counted after deleting punctuation tokens; brackets left empty vanish.
pub fn extract_brackets(tree: &Tree) -> BracketSet {
    let tags = tree.pos_tags();
    // position of each token boundary once punctuation is deleted
    let mut adjusted = Vec::with_capacity(tags.len() + 1);
    adjusted.push(0usize);
    for &tag in &tags {
        let last = *adjusted.last().unwrap();
        adjusted.push(if is_punctuation(tag) { last } else { last + 1 });
    }
    let base = tree.span.start;
    let mut brackets = Vec::new();
    tree.walk(&mut |node| {
        if matches!(node.node, Node::Leaf(_)) || node.label.is_top() {
            return;
        }
        let start = adjusted[node.span.start - base];
        let end = adjusted[node.span.end - base];
        if end > start {
            brackets.push(Bracket {
                label: node.label,
                start,
                end,
            });
        }
    });
    brackets.sort();
    BracketSet {
        brackets,
        length: *adjusted.last().unwrap(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub matched: usize,
    pub gold: usize,
    pub test: usize,
}

impl Counts {
    pub fn recall(&self) -> f64 {
        percent(self.matched, self.gold)
    }

    pub fn precision(&self) -> f64 {
        percent(self.matched, self.test)
    }

    fn add(&mut self, other: Counts) {
        self.matched += other.matched;
        self.gold += other.gold;
        self.test += other.test;
    }
}

fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

/// Size of the multiset intersection of the two bracket sets.
pub fn score_brackets(gold: &BracketSet, test: &BracketSet, labelled: bool) -> Result<Counts, EvalError> {
    if gold.length != test.length {
        return Err(EvalError::YieldMismatch {
            gold: gold.length,
            test: test.length,
        });
    }
    let key = |b: &Bracket| (labelled.then_some(b.label), b.start, b.end);
    let mut pool: HashMap<(Option<Category>, usize, usize), usize> = HashMap::new();
    for b in &gold.brackets {
        *pool.entry(key(b)).or_insert(0) += 1;
    }
    let mut matched = 0;
    for b in &test.brackets {
        if let Some(n) = pool.get_mut(&key(b)) {
            if *n > 0 {
                *n -= 1;
                matched += 1;
            }
        }
    }
    Ok(Counts {
        matched,
        gold: gold.len(),
        test: test.len(),
    })
}

pub fn score_pair(gold: &Tree, test: &Tree, labelled: bool) -> Result<Counts, EvalError> {
    score_brackets(&extract_brackets(gold), &extract_brackets(test), labelled)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub labelled_recall: f64,
    pub labelled_precision: f64,
    pub unlabelled_recall: f64,
    pub unlabelled_precision: f64,
    pub labelled: Counts,
    pub unlabelled: Counts,
    pub sentences_evaluated: usize,
    pub fallback_parses: usize,
    pub skipped_sentences: usize,
    pub grammar_size: usize,
}

impl EvalReport {
    pub fn from_counts(labelled: Counts, unlabelled: Counts) -> Self {
        EvalReport {
            labelled_recall: labelled.recall(),
            labelled_precision: labelled.precision(),
            unlabelled_recall: unlabelled.recall(),
            unlabelled_precision: unlabelled.precision(),
            labelled,
            unlabelled,
            ..Default::default()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }
}

/// Result of scoring one gold sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceScore {
    pub labelled: Counts,
    pub unlabelled: Counts,
    pub fallback: bool,
}

/// Parses the gold tree's tag sequence and scores the parse against it.
pub fn evaluate_sentence(grammar: &ChartGrammar, gold: &Tree) -> Result<SentenceScore, EvalError> {
    let tokens = gold.tokens();
    let tags: Vec<Category> = tokens.iter().map(|t| t.pos).collect();
    let words: Vec<String> = tokens.into_iter().map(|t| t.word).collect();
    let parse = parse_sentence(grammar, &tags, &words);
    let gold_set = extract_brackets(gold);
    let test_set = extract_brackets(&parse.tree);
    Ok(SentenceScore {
        labelled: score_brackets(&gold_set, &test_set, true)?,
        unlabelled: score_brackets(&gold_set, &test_set, false)?,
        fallback: parse.fallback,
    })
}

/// Micro-averaged PARSEVAL over a corpus: per-sentence counts are summed
/// before dividing. Fallback parses are scored like any other parse.
pub fn evaluate_corpus(grammar: &ChartGrammar, grammar_size: usize, gold: &[Tree]) -> EvalReport {
    let scores: Vec<Result<SentenceScore, EvalError>> = gold
        .par_iter()
        .filter(|t| t.num_tokens() > 0)
        .map(|t| evaluate_sentence(grammar, t))
        .collect();
    let mut labelled = Counts::default();
    let mut unlabelled = Counts::default();
    let (mut evaluated, mut fallbacks, mut skipped) = (0, 0, 0);
    for score in scores {
        match score {
            Ok(s) => {
                labelled.add(s.labelled);
                unlabelled.add(s.unlabelled);
                evaluated += 1;
                fallbacks += usize::from(s.fallback);
            }
            Err(_) => skipped += 1,
        }
    }
    EvalReport {
        sentences_evaluated: evaluated,
        fallback_parses: fallbacks,
        skipped_sentences: skipped,
        grammar_size,
        ..EvalReport::from_counts(labelled, unlabelled)
    }
}

/// Plain-text table with one column per named report: recall and precision
/// for labelled and unlabelled scoring, grammar size and reduction relative
/// to the first column.
pub fn format_table(columns: &[(String, EvalReport)], labelled: bool, unlabelled: bool) -> String {
    let base = columns.first().map(|(_, r)| r.grammar_size).unwrap_or(0);
    let mut rows: Vec<(String, Vec<String>)> = Vec::new();
    let pct = |v: f64| format!("{v:.2}%");
    if labelled {
        rows.push(("Labelled recall".into(), columns.iter().map(|(_, r)| pct(r.labelled_recall)).collect()));
        rows.push(("Labelled precision".into(), columns.iter().map(|(_, r)| pct(r.labelled_precision)).collect()));
    }
    if unlabelled {
        rows.push(("Unlabelled recall".into(), columns.iter().map(|(_, r)| pct(r.unlabelled_recall)).collect()));
        rows.push(("Unlabelled precision".into(), columns.iter().map(|(_, r)| pct(r.unlabelled_precision)).collect()));
    }
    rows.push(("Grammar size".into(), columns.iter().map(|(_, r)| r.grammar_size.to_string()).collect()));
    rows.push((
        "Reduction (% of first)".into(),
        columns
            .iter()
            .map(|(_, r)| format!("{:.0}%", crate::compactor::reduction_percent(base, r.grammar_size.min(base))))
            .collect(),
    ));

    let header: Vec<String> = columns.iter().map(|(n, _)| n.clone()).collect();
    let first_width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
    let widths: Vec<usize> = (0..columns.len())
        .map(|i| {
            rows.iter()
                .map(|(_, cells)| cells[i].len())
                .chain([header[i].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let _ = write!(out, "{:first_width$}", "");
    for (h, w) in header.iter().zip(&widths) {
        let _ = write!(out, "  {h:>w$}");
    }
    out.push('\n');
    for (name, cells) in &rows {
        let _ = write!(out, "{name:first_width$}");
        for (c, w) in cells.iter().zip(&widths) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.push('\n');
    }
    let footer: Vec<String> = columns
        .iter()
        .map(|(n, r)| {
            format!(
                "{n}: {} sentences, {} fallback parses, {} skipped",
                r.sentences_evaluated, r.fallback_parses, r.skipped_sentences
            )
        })
        .collect();
    for line in footer {
        out.push_str(&line);
        out.push('\n');
    }
    out
}
