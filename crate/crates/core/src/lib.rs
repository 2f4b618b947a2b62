//! Treebank grammar extraction, compaction and PARSEVAL evaluation.
//!
//! The pipeline reads Penn-style bracketed trees ([`treebank`]), reads a
//! counted context-free grammar off them ([`grammar`]), removes rules that
//! the rest of the grammar can already parse ([`compactor`], using the
//! chart parser in [`chart`]) and scores the parses a grammar produces
//! against gold trees ([`evaluator`]). [`synth`] generates treebanks with
//! known ground truth for experiments.

pub mod category;
pub mod chart;
pub mod cli;
pub mod compactor;
pub mod evaluator;
pub mod grammar;
pub mod synth;
pub mod treebank;

pub use category::{Category, CategoryKind};
pub use chart::{ChartGrammar, Derivation, ParseResult, SentenceParse, Weighting};
pub use grammar::{Grammar, GrowthCurve, Rule, RuleKey};
pub use treebank::{Span, Token, Tree};
