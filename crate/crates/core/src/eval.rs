//! Exact-match scoring, completeness, corpus evaluation, and decode
//! timing.
//!
//! A predicted quadruple counts only if all four elements match a gold
//! quadruple exactly: span for span, implicit for implicit, category and
//! polarity verbatim. Matching is over multisets, so a duplicated gold
//! quad needs a duplicated prediction. Counts aggregate across the corpus
//! before the ratios are taken.
//!
//! Completeness is the fraction of decoded record sets that form a tree
//! and recover to quadruples without error. The decoder satisfies this by
//! construction; the metric exists to assert it rather than assume it.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::builder::{augment, validate_parseable, Sentence};
use crate::chart::{decode, ChartGrammar};
use crate::error::Result;
use crate::grammar::{Grammar, LabelSet};
use crate::quad::SentimentQuadruple;
use crate::recover::recover_quads;
use crate::scorer::Scorer;
use crate::table::SpanScoreTable;
use crate::tree::SpanSet;

/// Micro-averaged exact-match counts and ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrfScores {
    #[serde(rename = "tp")]
    pub true_positives: usize,
    #[serde(rename = "fp")]
    pub false_positives: usize,
    #[serde(rename = "fn")]
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn multiset_overlap(a: &[SentimentQuadruple], b: &[SentimentQuadruple]) -> usize {
    let mut counts: BTreeMap<SentimentQuadruple, usize> = BTreeMap::new();
    for q in a {
        *counts.entry(*q).or_insert(0) += 1;
    }
    let mut hits = 0;
    for q in b {
        if let Some(c) = counts.get_mut(q) {
            if *c > 0 {
                *c -= 1;
                hits += 1;
            }
        }
    }
    hits
}

pub fn prf_from_counts(tp: usize, fp: usize, fn_count: usize) -> PrfScores {
    let (precision, recall) = if tp + fp == 0 && fn_count == 0 {
        // Nothing predicted, nothing to predict.
        (1.0, 1.0)
    } else {
        let p = if tp + fp > 0 {
            tp as f64 / (tp + fp) as f64
        } else {
            0.0
        };
        let r = if tp + fn_count > 0 {
            tp as f64 / (tp + fn_count) as f64
        } else {
            0.0
        };
        (p, r)
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    PrfScores {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_count,
        precision,
        recall,
        f1,
    }
}

/// Exact-match multiset P/R/F1 over parallel prediction and gold lists.
pub fn eval_quads(
    preds: &[Vec<SentimentQuadruple>],
    golds: &[Vec<SentimentQuadruple>],
) -> PrfScores {
    assert_eq!(
        preds.len(),
        golds.len(),
        "prediction and gold lists differ in length"
    );
    let (mut tp, mut np, mut ng) = (0, 0, 0);
    for (p, g) in preds.iter().zip(golds) {
        tp += multiset_overlap(g, p);
        np += p.len();
        ng += g.len();
    }
    prf_from_counts(tp, np - tp, ng - tp)
}

/// Whether one decoded record set forms a tree and yields quadruples.
pub fn structure_is_recoverable(spans: &SpanSet, labels: &LabelSet, fake_prefix: bool) -> bool {
    recover_quads(spans, labels, fake_prefix).is_ok()
}

/// Histogram key for a gold quad set: its situation tag, or the reason it
/// admits no tree.
pub fn situation_key(quads: &[SentimentQuadruple]) -> String {
    match validate_parseable(quads) {
        Ok(tag) => tag.as_str().to_string(),
        Err(reason) => format!("unparseable_{}", reason.as_str()),
    }
}

/// Fraction of successful outcomes; vacuously 1 for an empty list.
pub fn completeness(outcomes: &[bool]) -> f64 {
    if outcomes.is_empty() {
        return 1.0;
    }
    outcomes.iter().filter(|&&ok| ok).count() as f64 / outcomes.len() as f64
}

/// Wall-clock summary of per-sentence decode times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingStats {
    pub mean_s: f64,
    pub p50_s: f64,
    pub p95_s: f64,
}

pub fn timing_stats(times: &[f64]) -> Option<TimingStats> {
    if times.is_empty() {
        return None;
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = |q: f64| {
        let k = (q * sorted.len() as f64).ceil() as usize;
        sorted[k.clamp(1, sorted.len()) - 1]
    };
    Some(TimingStats {
        mean_s: sorted.iter().sum::<f64>() / sorted.len() as f64,
        p50_s: rank(0.50),
        p95_s: rank(0.95),
    })
}

/// One labeled evaluation sentence, in original token coordinates.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub sentence: Sentence,
    pub quads: Vec<SentimentQuadruple>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub sentences: usize,
    #[serde(flatten)]
    pub scores: PrfScores,
    pub completeness: f64,
    /// Gold-side situation tags, or the reason a gold set has no tree.
    pub situation_histogram: BTreeMap<String, usize>,
    pub timing: Option<TimingStats>,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("sentences    {}\n", self.sentences));
        out.push_str(&format!(
            "exact match  tp {} fp {} fn {}\n",
            self.scores.true_positives, self.scores.false_positives, self.scores.false_negatives
        ));
        out.push_str(&format!(
            "precision    {:.4}\nrecall       {:.4}\nf1           {:.4}\n",
            self.scores.precision, self.scores.recall, self.scores.f1
        ));
        out.push_str(&format!("completeness {:.4}\n", self.completeness));
        if let Some(t) = self.timing {
            out.push_str(&format!(
                "decode time  mean {:.6}s p50 {:.6}s p95 {:.6}s\n",
                t.mean_s, t.p50_s, t.p95_s
            ));
        }
        for (tag, count) in &self.situation_histogram {
            out.push_str(&format!("situation    {tag} {count}\n"));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Decodes every sentence with the given scorer and reports exact-match
/// quality against the gold quadruples. Sentences whose gold contains a
/// fully implicit quad are scored in their prefixed form, mirroring
/// training. A decode whose structure fails to recover counts against
/// completeness and predicts nothing.
pub fn eval_corpus(scorer: &Scorer, grammar: &Grammar, items: &[EvalItem]) -> Result<EvalReport> {
    let cg = ChartGrammar::new(grammar);
    let labels = grammar.label_set();
    let mut preds = Vec::with_capacity(items.len());
    let mut golds = Vec::with_capacity(items.len());
    let mut outcomes = Vec::with_capacity(items.len());
    let mut times = Vec::with_capacity(items.len());
    let mut histogram: BTreeMap<String, usize> = BTreeMap::new();

    for item in items {
        let (sent, _) = augment(&item.sentence, &item.quads);
        let fp = scorer.forward(&sent.tokens);
        let t0 = Instant::now();
        let dec = decode(&cg, &fp.table)?;
        times.push(t0.elapsed().as_secs_f64());
        let recovered = recover_quads(&dec.records, &labels, sent.fake_prefix);
        outcomes.push(recovered.is_ok());
        preds.push(recovered.unwrap_or_default());
        golds.push(item.quads.clone());
        *histogram.entry(situation_key(&item.quads)).or_insert(0) += 1;
    }

    Ok(EvalReport {
        sentences: items.len(),
        scores: eval_quads(&preds, &golds),
        completeness: completeness(&outcomes),
        situation_histogram: histogram,
        timing: timing_stats(&times),
    })
}

/// Decode-time scaling measurement over random tables.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingBench {
    pub sizes: Vec<usize>,
    /// Mean seconds per decode at each size, averaged over the runs.
    pub mean_seconds: Vec<f64>,
    /// Least-squares slope of log time against log length.
    pub exponent: f64,
}

/// Times the chart decoder on uniform random score tables of the given
/// lengths, averaging over `runs` decodes per length after one warmup,
/// and fits the length-scaling exponent on the log-log points.
pub fn bench_scaling(grammar: &Grammar, sizes: &[usize], runs: usize, seed: u64) -> ScalingBench {
    assert!(sizes.len() >= 2, "need at least two lengths to fit a slope");
    assert!(runs > 0, "need at least one run per length");
    let cg = ChartGrammar::new(grammar);
    let n_labels = grammar.label_set().len() as usize;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let table = SpanScoreTable::random_uniform(n, n_labels, -1.0, 1.0, &mut rng);
        decode(&cg, &table).expect("decode succeeds on finite tables");
        let mut total = 0.0;
        for _ in 0..runs {
            let t0 = Instant::now();
            decode(&cg, &table).expect("decode succeeds on finite tables");
            total += t0.elapsed().as_secs_f64();
        }
        means.push(total / runs as f64);
    }
    let xs: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = means.iter().map(|&t| t.ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    ScalingBench {
        sizes: sizes.to_vec(),
        mean_seconds: means,
        exponent: cov / var,
    }
}

#[cfg(test)]
mod test {
    use super::*;
    use crate::grammar::{build_grammar, GrammarConfig};
    use crate::quad::{Polarity, Span};

    fn q(
        aspect: Option<(usize, usize)>,
        category: u16,
        opinion: Option<(usize, usize)>,
        polarity: Polarity,
    ) -> SentimentQuadruple {
        SentimentQuadruple {
            aspect: aspect.map(|(a, b)| Span::new(a, b)),
            category,
            opinion: opinion.map(|(a, b)| Span::new(a, b)),
            polarity,
        }
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let gold = vec![vec![
            q(Some((0, 1)), 0, Some((2, 3)), Polarity::Positive),
            q(None, 1, Some((4, 5)), Polarity::Negative),
        ]];
        let s = eval_quads(&gold, &gold);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        assert_eq!(s.true_positives, 2);
    }

    #[test]
    fn disjoint_sets_score_zero() {
        let gold = vec![vec![q(Some((0, 1)), 0, Some((2, 3)), Polarity::Positive)]];
        let pred = vec![vec![q(Some((0, 1)), 1, Some((2, 3)), Polarity::Positive)]];
        let s = eval_quads(&pred, &gold);
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn half_overlap_scores_half() {
        let a = q(Some((0, 1)), 0, Some((2, 3)), Polarity::Positive);
        let b = q(Some((4, 5)), 0, Some((2, 3)), Polarity::Positive);
        let c = q(None, 2, None, Polarity::Neutral);
        let s = eval_quads(&[vec![a, b]], &[vec![a, c]]);
        assert_eq!(s.true_positives, 1);
        assert_eq!(s.false_positives, 1);
        assert_eq!(s.false_negatives, 1);
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn duplicates_match_as_multisets() {
        let a = q(Some((0, 1)), 0, Some((2, 3)), Polarity::Positive);
        // Two gold copies need two predicted copies; one is a miss.
        let s = eval_quads(&[vec![a]], &[vec![a, a]]);
        assert_eq!(s.true_positives, 1);
        assert_eq!(s.false_negatives, 1);
    }

    #[test]
    fn empty_against_empty_is_perfect() {
        let s = eval_quads(&[vec![]], &[vec![]]);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn completeness_counts_failures() {
        assert_eq!(completeness(&[]), 1.0);
        let mut outcomes = vec![true; 9];
        outcomes.push(false);
        assert!((completeness(&outcomes) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn timing_quantiles_use_nearest_rank() {
        let times: Vec<f64> = (1..=20).map(|k| k as f64).collect();
        let t = timing_stats(&times).unwrap();
        assert_eq!(t.p50_s, 10.0);
        assert_eq!(t.p95_s, 19.0);
        assert!((t.mean_s - 10.5).abs() < 1e-12);
        assert!(timing_stats(&[]).is_none());
    }

    #[test]
    fn scaling_fit_recovers_a_planted_slope() {
        // Plant exact cubic times and check the pure fitting arithmetic
        // via the public struct.
        let sizes = [8usize, 16, 32, 64];
        let times: Vec<f64> = sizes.iter().map(|&n| 1e-7 * (n as f64).powi(3)).collect();
        let xs: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
        let ys: Vec<f64> = times.iter().map(|&t| t.ln()).collect();
        let mx = xs.iter().sum::<f64>() / 4.0;
        let my = ys.iter().sum::<f64>() / 4.0;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        assert!((cov / var - 3.0).abs() < 1e-9);
    }

    #[test]
    fn bench_runs_and_reports_every_size() {
        let g = build_grammar(&GrammarConfig::all_families(vec!["A#A".into()])).unwrap();
        let bench = bench_scaling(&g, &[4, 8], 2, 7);
        assert_eq!(bench.sizes, vec![4, 8]);
        assert_eq!(bench.mean_seconds.len(), 2);
        assert!(bench.mean_seconds.iter().all(|&t| t > 0.0));
        assert!(bench.exponent.is_finite());
    }
}
