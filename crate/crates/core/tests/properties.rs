mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use treegram::compactor::{compact, linguistic_compact, threshold, OrderPolicy};
use treegram::evaluator::{extract_brackets, score_brackets, score_pair, Counts};
use treegram::grammar::{extract_grammar, read_grammar, tree_roots, write_grammar};
use treegram::synth::flatten;
use treegram::treebank::{normalize, read_treebank, write_tree};
use treegram::{Category, ChartGrammar, Grammar, Tree, Weighting};

const PHRASES: &[&str] = &["S", "NP", "VP", "PP", "SBAR", "NP-SBJ", "PP-LOC=2"];
const TAGS: &[&str] = &["DT", "NN", "VBZ", "IN", "JJ", ",", ".", "-NONE-"];
const WORDS: &[&str] = &["the", "dog", "barks", "at", "old", "*T*-1", "0", "x"];

fn tree_strategy() -> impl Strategy<Value = Tree> {
    let leaf = (0..TAGS.len(), 0..WORDS.len())
        .prop_map(|(t, w)| Tree::preterminal(Category::new(TAGS[t]), WORDS[w]));
    leaf.prop_recursive(4, 40, 4, |inner| {
        (0..PHRASES.len(), prop::collection::vec(inner, 1..4))
            .prop_map(|(l, kids)| Tree::phrase(Category::new(PHRASES[l]), kids))
    })
}

fn phrase_strategy() -> impl Strategy<Value = Tree> {
    (0..PHRASES.len(), prop::collection::vec(tree_strategy(), 1..4))
        .prop_map(|(l, kids)| Tree::phrase(Category::new(PHRASES[l]), kids))
}

/// Normalized trees with at least one word, as seen downstream.
fn clean_tree() -> impl Strategy<Value = Tree> {
    phrase_strategy().prop_filter_map("normalizes away", |t| normalize(&t))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn write_then_read_is_identity(tree in phrase_strategy()) {
        let text = write_tree(&tree);
        let back = read_treebank(&text).unwrap();
        prop_assert_eq!(back.len(), 1);
        prop_assert_eq!(&back[0], &tree);
    }

    #[test]
    fn normalize_is_idempotent(tree in phrase_strategy()) {
        if let Some(once) = normalize(&tree) {
            prop_assert_eq!(normalize(&once), Some(once.clone()));
            let mut spans_ok = true;
            once.walk(&mut |n| spans_ok &= n.span.len() == n.num_tokens());
            prop_assert!(spans_ok);
        }
    }

    #[test]
    fn grammar_text_round_trips(trees in prop::collection::vec(clean_tree(), 1..8)) {
        let g = extract_grammar(&trees).unwrap();
        let back = read_grammar(&write_grammar(&g)).unwrap();
        prop_assert_eq!(back.sorted(), g.sorted());
    }

    #[test]
    fn probabilities_sum_to_one_per_lhs(trees in prop::collection::vec(clean_tree(), 1..8)) {
        let g = extract_grammar(&trees).unwrap();
        for lhs in g.nonterminals().collect::<HashSet<_>>() {
            let sum: f64 = g.keys().filter(|k| k.lhs == lhs).map(|k| g.probability(k).unwrap()).sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn training_trees_stay_parsable_after_compaction(trees in prop::collection::vec(clean_tree(), 1..6)) {
        let g = extract_grammar(&trees).unwrap();
        let (small, _) = compact(&g, OrderPolicy::FlatFirst);
        let chart = ChartGrammar::new(&small, Weighting::Unweighted).unwrap();
        for t in &trees {
            // unary chains collapse, so the goal is the extracted root
            for root in tree_roots(t) {
                prop_assert!(chart.recognize(&t.pos_tags(), root));
            }
        }
    }

    #[test]
    fn linguistic_keeps_at_least_what_naive_keeps(trees in prop::collection::vec(clean_tree(), 1..6), ratio in 0.1f64..4.0) {
        let g = extract_grammar(&trees).unwrap();
        let naive = compact(&g, OrderPolicy::FlatFirst).0;
        if let Ok((ling, _)) = linguistic_compact(&g, ratio, OrderPolicy::FlatFirst) {
            prop_assert!(ling.len() >= naive.len());
            prop_assert!(ling.len() <= g.len());
        }
    }

    #[test]
    fn threshold_keeps_exactly_frequent_rules(trees in prop::collection::vec(clean_tree(), 1..8), k in 1u64..4) {
        let g = extract_grammar(&trees).unwrap();
        let kept = threshold(&g, k);
        for (key, count) in g.iter() {
            prop_assert_eq!(kept.contains(key), count >= k);
        }
    }

    #[test]
    fn self_score_is_perfect(tree in clean_tree()) {
        let set = extract_brackets(&tree);
        for labelled in [true, false] {
            let c = score_brackets(&set, &set, labelled).unwrap();
            prop_assert_eq!(c.matched, set.len());
        }
    }

    #[test]
    fn recall_and_precision_swap(gold in clean_tree(), seed in any::<u64>()) {
        let test = flatten(&gold, 0.5, seed);
        let forward = score_pair(&gold, &test, true).unwrap();
        let backward = score_pair(&test, &gold, true).unwrap();
        prop_assert_eq!(forward.matched, backward.matched);
        prop_assert_eq!(forward.gold, backward.test);
        prop_assert!((forward.recall() - backward.precision()).abs() < 1e-12);
        let unlabelled = score_pair(&gold, &test, false).unwrap();
        prop_assert!(unlabelled.matched >= forward.matched);
    }

    #[test]
    fn flattening_preserves_yield_and_root(tree in clean_tree(), p in 0.0f64..=1.0, seed in any::<u64>()) {
        let flat = flatten(&tree, p, seed);
        prop_assert_eq!(flat.tokens(), tree.tokens());
        prop_assert_eq!(flat.label, tree.label);
        prop_assert!(flat.node_count() <= tree.node_count());
        prop_assert_eq!(flatten(&tree, 0.0, seed), tree.clone());
    }
}

#[test]
fn corpus_scores_are_micro_averaged() {
    let gold = read_treebank(
        "(S (NP (DT a) (NN b)) (VP (VBZ c) (NP (DT d) (NN e))))\n(S (NN f) (VBZ g))",
    )
    .unwrap();
    let test = read_treebank("(S (DT a) (NN b) (VP (VBZ c) (DT d) (NN e)))\n(S (NN f) (VBZ g))").unwrap();
    let mut total = Counts::default();
    let mut macro_recall = 0.0;
    for (g, t) in gold.iter().zip(&test) {
        let c = score_pair(g, t, true).unwrap();
        macro_recall += c.recall() / 2.0;
        total.matched += c.matched;
        total.gold += c.gold;
        total.test += c.test;
    }
    // 2 of 4 brackets, then 1 of 1: micro 3/5 = 60%, macro (50 + 100) / 2
    assert_eq!((total.matched, total.gold, total.test), (3, 5, 3));
    assert!((total.recall() - 60.0).abs() < 1e-12);
    assert!((macro_recall - 75.0).abs() < 1e-12);

    let g = extract_grammar(&test).unwrap();
    let chart = ChartGrammar::new(&g, Weighting::Probabilistic).unwrap();
    let report = treegram::evaluator::evaluate_corpus(&chart, g.len(), &gold);
    assert_eq!(report.labelled, total);
    assert!((report.labelled_recall - 60.0).abs() < 1e-12);
}

#[test]
fn random_grammars_respect_the_oracle_on_every_category() {
    let mut rng = common::rng(44);
    for _ in 0..200 {
        let g: Grammar = common::random_grammar(&mut rng, common::Shape::default());
        let chart = ChartGrammar::new(&g, Weighting::Unweighted).unwrap();
        let input = common::random_input(&mut rng, 5, 2);
        let none = HashSet::new();
        for nt in g.nonterminals().collect::<Vec<_>>() {
            let expected = common::Oracle::new(&g, &none, &input).best(nt).is_some();
            assert_eq!(chart.recognize(&input, nt), expected);
        }
    }
}
