//! Grammar compaction: removing rules that other rules can parse.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::chart::{ChartError, ChartGrammar, Weighting};
use crate::grammar::{Grammar, RuleKey};

/// Order in which the compaction loop visits rules.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum OrderPolicy {
    /// Longest right-hand side first, then `(lhs, rhs)`.
    #[default]
    FlatFirst,
    /// The grammar's own rule order.
    Input,
    /// `(lhs, rhs)` order shuffled with a seeded stream.
    Random { seed: u64 },
}

impl OrderPolicy {
    pub fn arrange(&self, grammar: &Grammar) -> Vec<RuleKey> {
        match *self {
            OrderPolicy::FlatFirst => {
                let mut keys = grammar.sorted_keys();
                keys.sort_by(|a, b| b.rhs.len().cmp(&a.rhs.len()).then_with(|| a.cmp(b)));
                keys
            }
            OrderPolicy::Input => grammar.keys().cloned().collect(),
            OrderPolicy::Random { seed } => {
                let mut keys = grammar.sorted_keys();
                keys.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                keys
            }
        }
    }
}

impl fmt::Display for OrderPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrderPolicy::FlatFirst => f.write_str("flat-first"),
            OrderPolicy::Input => f.write_str("input"),
            OrderPolicy::Random { seed } => write!(f, "random:{seed}"),
        }
    }
}

impl FromStr for OrderPolicy {
    type Err = String;

    /// Accepts `flat-first`, `input`, `random` (seed 0) and `random:<seed>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flat-first" => Ok(OrderPolicy::FlatFirst),
            "input" => Ok(OrderPolicy::Input),
            "random" => Ok(OrderPolicy::Random { seed: 0 }),
            other => other
                .strip_prefix("random:")
                .and_then(|seed| seed.parse().ok())
                .map(|seed| OrderPolicy::Random { seed })
                .ok_or_else(|| format!("unknown order {other:?} (flat-first|input|random)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reason {
    Parsable,
    BelowThreshold,
    Outprobabilized,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Elimination {
    pub rule: String,
    pub count: u64,
    pub reason: Reason,
    /// Derivation of the rule's right-hand side, in bracketed form.
    pub witness: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule_probability: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parse_probability: Option<f64>,
    #[serde(skip)]
    pub key: Option<RuleKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompactionReport {
    pub mode: String,
    pub initial_size: usize,
    pub final_size: usize,
    /// Percentage of the initial rule set removed.
    pub reduction_percent: f64,
    pub order_used: String,
    pub eliminated: Vec<Elimination>,
}

impl CompactionReport {
    fn new(mode: &str, order: String, initial: usize, eliminated: Vec<Elimination>) -> Self {
        let final_size = initial - eliminated.len();
        CompactionReport {
            mode: mode.to_string(),
            initial_size: initial,
            final_size,
            reduction_percent: reduction_percent(initial, final_size),
            order_used: order,
            eliminated,
        }
    }

    pub fn eliminated_keys(&self) -> Vec<RuleKey> {
        self.eliminated.iter().filter_map(|e| e.key.clone()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }
}

pub fn reduction_percent(initial: usize, remaining: usize) -> f64 {
    if initial == 0 {
        0.0
    } else {
        100.0 * (initial - remaining) as f64 / initial as f64
    }
}

fn without(grammar: &Grammar, eliminated: &[Elimination]) -> Grammar {
    let gone: HashSet<&RuleKey> = eliminated.iter().filter_map(|e| e.key.as_ref()).collect();
    let mut out = grammar.clone();
    out.retain(|k, _| !gone.contains(k));
    out
}

/// Visits every rule once in `order`. A rule is eliminated when its
/// left-hand side still derives its right-hand side with the rule itself
/// switched off; eliminations apply to all later visits.
pub fn compact(grammar: &Grammar, order: OrderPolicy) -> (Grammar, CompactionReport) {
    let mut chart =
        ChartGrammar::new(grammar, Weighting::Unweighted).expect("grammar holds no epsilon rules");
    let mut eliminated = Vec::new();
    for key in order.arrange(grammar) {
        chart.set_enabled(&key, false);
        match chart.viterbi(&key.rhs, key.lhs).best_tree {
            Some(witness) => eliminated.push(Elimination {
                rule: key.to_string(),
                count: grammar.count(&key).unwrap_or(0),
                reason: Reason::Parsable,
                witness: Some(witness.to_bracketed()),
                rule_probability: None,
                parse_probability: None,
                key: Some(key),
            }),
            None => {
                chart.set_enabled(&key, true);
            }
        }
    }
    let report = CompactionReport::new("naive", order.to_string(), grammar.len(), eliminated);
    (without(grammar, &report.eliminated), report)
}

/// Probability-guided compaction: a parsable rule goes only when the best
/// alternative derivation of its right-hand side beats `ratio` times the
/// rule's own probability. Probabilities are frozen from the input counts;
/// the comparison is strict, so ties keep the rule.
pub fn linguistic_compact(
    grammar: &Grammar,
    ratio: f64,
    order: OrderPolicy,
) -> Result<(Grammar, CompactionReport), ChartError> {
    assert!(ratio > 0.0, "ratio must be positive");
    let mut chart = ChartGrammar::new(grammar, Weighting::Probabilistic)?;
    let log_ratio = ratio.ln();
    let mut eliminated = Vec::new();
    for key in order.arrange(grammar) {
        let own = chart.log_probability(&key).expect("compiled rule");
        chart.set_enabled(&key, false);
        let parse = chart.viterbi(&key.rhs, key.lhs);
        let eliminate = parse
            .best_logprob
            .is_some_and(|alt| alt > log_ratio + own);
        if eliminate {
            eliminated.push(Elimination {
                rule: key.to_string(),
                count: grammar.count(&key).unwrap_or(0),
                reason: Reason::Outprobabilized,
                witness: parse.best_tree.map(|d| d.to_bracketed()),
                rule_probability: Some(own.exp()),
                parse_probability: parse.best_logprob.map(f64::exp),
                key: Some(key),
            });
        } else {
            chart.set_enabled(&key, true);
        }
    }
    let mode = format!("linguistic:{ratio}");
    let report = CompactionReport::new(&mode, order.to_string(), grammar.len(), eliminated);
    Ok((without(grammar, &report.eliminated), report))
}

/// Drops rules seen fewer than `min_count` times.
pub fn threshold(grammar: &Grammar, min_count: u64) -> Grammar {
    threshold_with_report(grammar, min_count).0
}

pub fn threshold_with_report(grammar: &Grammar, min_count: u64) -> (Grammar, CompactionReport) {
    assert!(min_count >= 1, "min_count must be at least 1");
    let eliminated: Vec<Elimination> = grammar
        .iter()
        .filter(|(_, count)| *count < min_count)
        .map(|(key, count)| Elimination {
            rule: key.to_string(),
            count,
            reason: Reason::BelowThreshold,
            witness: None,
            rule_probability: None,
            parse_probability: None,
            key: Some(key.clone()),
        })
        .collect();
    let report = CompactionReport::new(
        &format!("threshold:{min_count}"),
        OrderPolicy::Input.to_string(),
        grammar.len(),
        eliminated,
    );
    (without(grammar, &report.eliminated), report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StageRow {
    pub stage: usize,
    /// Distinct rules extracted from all chunks so far.
    pub extracted: usize,
    pub compacted: usize,
}

/// Adds one chunk's rules at a time to the running survivors and compacts
/// the union again, revisiting every rule.
pub fn staged_compact(chunks: &[Grammar], order: OrderPolicy) -> Vec<StageRow> {
    assert!(!chunks.is_empty(), "need at least one chunk");
    let mut seen: HashSet<RuleKey> = HashSet::new();
    let mut running = Grammar::new();
    let mut rows = Vec::with_capacity(chunks.len());
    for (i, chunk) in chunks.iter().enumerate() {
        seen.extend(chunk.keys().cloned());
        running.merge(chunk);
        running = compact(&running, order).0;
        rows.push(StageRow {
            stage: i + 1,
            extracted: seen.len(),
            compacted: running.len(),
        });
    }
    rows
}

pub fn stages_csv(rows: &[StageRow]) -> String {
    let mut out = String::from("stage,extracted,compacted\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.stage, r.extracted, r.compacted));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn survivors(g: &Grammar) -> Vec<String> {
        g.sorted_keys().iter().map(|k| k.to_string()).collect()
    }

    fn coordination(flat: u64, nested: u64, base: u64) -> Grammar {
        Grammar::from_rules([
            ("NP -> DT NN CC DT NN", flat),
            ("NP -> NP CC NP", nested),
            ("NP -> DT NN", base),
        ])
    }

    #[test]
    fn flat_coordination_is_redundant() {
        let (g, report) = compact(&coordination(1, 1, 1), OrderPolicy::FlatFirst);
        assert_eq!(survivors(&g), vec!["NP -> DT NN", "NP -> NP CC NP"]);
        assert_eq!(report.eliminated.len(), 1);
        assert_eq!(report.eliminated[0].witness.as_deref(), Some("(NP (NP DT NN) CC (NP DT NN))"));
        assert_eq!(report.initial_size - report.eliminated.len(), report.final_size);
    }

    #[test]
    fn unary_cycle_order_dependence() {
        let bb_first = Grammar::from_rules([("A -> B B", 1), ("A -> C C", 1), ("B -> C", 1), ("C -> B", 1)]);
        let (g, _) = compact(&bb_first, OrderPolicy::Input);
        assert_eq!(survivors(&g), vec!["A -> C C", "B -> C", "C -> B"]);
        let cc_first = Grammar::from_rules([("A -> C C", 1), ("A -> B B", 1), ("B -> C", 1), ("C -> B", 1)]);
        let (g, _) = compact(&cc_first, OrderPolicy::Input);
        assert_eq!(survivors(&g), vec!["A -> B B", "B -> C", "C -> B"]);
    }

    #[test]
    fn single_rule_survives() {
        let g = Grammar::from_rules([("NP -> DT NN", 4)]);
        let (out, report) = compact(&g, OrderPolicy::FlatFirst);
        assert_eq!(out, g);
        assert!(report.eliminated.is_empty());
    }

    #[test]
    fn idempotent() {
        let g = coordination(3, 2, 5);
        let (once, _) = compact(&g, OrderPolicy::FlatFirst);
        let (twice, report) = compact(&once, OrderPolicy::FlatFirst);
        assert_eq!(once, twice);
        assert!(report.eliminated.is_empty());
    }

    #[test]
    fn survivors_keep_counts_and_roots() {
        let mut g = coordination(3, 2, 5);
        g.add_root("NP".into(), 7);
        let (out, _) = compact(&g, OrderPolicy::FlatFirst);
        assert_eq!(out.count(&RuleKey::parse("NP -> DT NN")), Some(5));
        assert_eq!(out.roots().get(&"NP".into()), Some(&7));
        assert_eq!(out.lhs_total("NP".into()), 7);
    }

    #[test]
    fn linguistic_eliminates_improbable_flat_rule() {
        let (g, report) = linguistic_compact(&coordination(2, 20, 100), 1.0, OrderPolicy::FlatFirst).unwrap();
        assert_eq!(survivors(&g), vec!["NP -> DT NN", "NP -> NP CC NP"]);
        let e = &report.eliminated[0];
        assert_eq!(e.reason, Reason::Outprobabilized);
        assert!((e.rule_probability.unwrap() - 2.0 / 122.0).abs() < 1e-12);
        let parse = (20.0 / 122.0) * (100.0f64 / 122.0).powi(2);
        assert!((e.parse_probability.unwrap() - parse).abs() < 1e-12);
    }

    #[test]
    fn linguistic_retains_probable_flat_rule() {
        let (g, report) = linguistic_compact(&coordination(100, 1, 1), 1.0, OrderPolicy::FlatFirst).unwrap();
        assert_eq!(g.len(), 3);
        assert!(report.eliminated.is_empty());
    }

    #[test]
    fn linguistic_keeps_favoured_flat_attachment() {
        // flat VP attachment is common; the nested analysis needs the rare
        // NP -> NP PP and VP -> VB NP
        let g = Grammar::from_rules([
            ("VP -> VB NP PP", 60),
            ("VP -> VB NP", 40),
            ("NP -> NP PP", 5),
            ("NP -> DT NN", 95),
            ("PP -> IN NP", 10),
        ]);
        assert!(crate::chart::recognize(&g, &crate::category::cats("VB NP PP"), "VP".into(), &[RuleKey::parse("VP -> VB NP PP")].into_iter().collect()).unwrap());
        let (out, _) = linguistic_compact(&g, 1.0, OrderPolicy::FlatFirst).unwrap();
        assert!(out.contains(&RuleKey::parse("VP -> VB NP PP")));
        let (naive, _) = compact(&g, OrderPolicy::FlatFirst);
        assert!(!naive.contains(&RuleKey::parse("VP -> VB NP PP")));
    }

    #[test]
    fn tie_keeps_rule() {
        // alternative derivation has exactly the rule's probability
        let g = Grammar::from_rules([("S -> A B", 1), ("S -> X", 1), ("X -> A B", 1)]);
        // p(S -> A B) = 0.5; via S -> X, X -> A B = 0.5 * 1.0
        let (out, _) = linguistic_compact(&g, 1.0, OrderPolicy::FlatFirst).unwrap();
        assert!(out.contains(&RuleKey::parse("S -> A B")));
        let (out, _) = linguistic_compact(&g, 0.999, OrderPolicy::FlatFirst).unwrap();
        assert!(!out.contains(&RuleKey::parse("S -> A B")));
    }

    #[test]
    fn threshold_drops_rare_rules() {
        let g = Grammar::from_rules([("A -> B C", 5), ("A -> C B", 1)]);
        assert_eq!(survivors(&threshold(&g, 2)), vec!["A -> B C"]);
        assert_eq!(threshold(&g, 2).lhs_total("A".into()), 5);
        assert_eq!(threshold(&g, 1), g);
        let (_, report) = threshold_with_report(&g, 2);
        assert_eq!(report.eliminated[0].reason, Reason::BelowThreshold);
        assert_eq!(report.reduction_percent, 50.0);
    }

    #[test]
    fn staged_constant_after_redundant_chunks() {
        let first = Grammar::from_rules([("NP -> NP CC NP", 1), ("NP -> DT NN", 1)]);
        let second = Grammar::from_rules([("NP -> DT NN CC DT NN", 1)]);
        let third = Grammar::from_rules([("NP -> NP CC DT NN", 2)]);
        let rows = staged_compact(&[first, second, third], OrderPolicy::FlatFirst);
        assert_eq!(
            rows.iter().map(|r| (r.extracted, r.compacted)).collect::<Vec<_>>(),
            vec![(2, 2), (3, 2), (4, 2)]
        );
    }

    #[test]
    fn staged_size_can_shrink() {
        // stage 1 holds four irreducible flat rules; stage 2 brings three
        // rules that parse all of them
        let first = Grammar::from_rules([
            ("X -> a b a b", 1),
            ("X -> a b c d", 1),
            ("X -> c d a b", 1),
            ("X -> c d c d", 1),
        ]);
        let second = Grammar::from_rules([("X -> Y Y", 1), ("Y -> a b", 1), ("Y -> c d", 1)]);
        let rows = staged_compact(&[first, second], OrderPolicy::FlatFirst);
        assert_eq!(rows[0].compacted, 4);
        assert_eq!(rows[1].compacted, 3);
        assert_eq!(rows[1].extracted, 7);
    }

    #[test]
    fn order_policy_strings() {
        for s in ["flat-first", "input", "random:42"] {
            assert_eq!(s.parse::<OrderPolicy>().unwrap().to_string(), s);
        }
        assert_eq!("random".parse::<OrderPolicy>().unwrap(), OrderPolicy::Random { seed: 0 });
        assert!("sideways".parse::<OrderPolicy>().is_err());
    }

    #[test]
    fn flat_first_order() {
        let g = Grammar::from_rules([("A -> b c", 1), ("B -> x y z", 1), ("A -> a b c", 1)]);
        let order: Vec<String> = OrderPolicy::FlatFirst.arrange(&g).iter().map(|k| k.to_string()).collect();
        assert_eq!(order, vec!["A -> a b c", "B -> x y z", "A -> b c"]);
    }
}
