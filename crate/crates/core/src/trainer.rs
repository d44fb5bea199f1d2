//! Structured max-margin training over the span scorer.
//!
//! Each step decodes the most-violating structure on a loss-augmented
//! table, where every non-gold cell gains one point of Hamming slack. The
//! hinge is the augmented optimum minus the gold score; the gold structure
//! sits inside the search space with zero slack, so the hinge is never
//! negative and vanishes exactly when the margin holds. Its subgradient
//! touches each recorded span once, plus one through the violator and
//! minus one through the gold, with shared records canceling. Filler
//! records reach no parameters and drop out on their own.
//!
//! Gradients are averaged over each batch and accumulated in a fixed
//! order, and the epoch shuffle is drawn from the config seed, so a fit
//! is reproducible bit for bit.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::builder::{build_tree, prune_tree, Sentence};
use crate::chart::{decode, loss_augmented_decode, ChartGrammar, DecodeResult};
use crate::error::{Error, Result};
use crate::eval::eval_quads;
use crate::grammar::Grammar;
use crate::quad::{sort_quads, SentimentQuadruple};
use crate::recover::recover_quads;
use crate::scorer::{Grads, Scorer};
use crate::table::SpanScoreTable;
use crate::tree::{tree_to_spans, SpanSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub optimizer: OptimizerKind,
    /// Adam moment decays and stabilizer; unused under sgd.
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Stop after any epoch whose training F1 reaches this value.
    pub stop_at_f1: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 200,
            batch_size: 8,
            seed: 0,
            shuffle: true,
            optimizer: OptimizerKind::Sgd,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            stop_at_f1: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(
                "learning_rate must be positive and finite".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("adam eps must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if let Some(t) = self.stop_at_f1 {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config("stop_at_f1 must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// One training sentence, normalized: the scoring form of the sentence,
/// the records of its pruned gold tree, and the original gold quads for
/// exact-match reporting.
#[derive(Debug, Clone)]
pub struct TrainInstance {
    pub sentence: Sentence,
    pub gold: SpanSet,
    pub gold_quads: Vec<SentimentQuadruple>,
}

/// Builds, prunes, and records the gold tree for one labeled sentence.
/// Fails on gold the grammar cannot express, or whose tree leaves no room
/// for its records.
pub fn make_instance(
    grammar: &Grammar,
    sentence: &Sentence,
    quads: &[SentimentQuadruple],
) -> Result<TrainInstance> {
    let built = build_tree(sentence, quads)?;
    let pruned = prune_tree(&built.tree)?;
    let gold = tree_to_spans(&pruned, &grammar.label_set())?;
    let mut gold_quads = quads.to_vec();
    sort_quads(&mut gold_quads);
    gold_quads.dedup();
    Ok(TrainInstance {
        sentence: built.sentence,
        gold,
        gold_quads,
    })
}

/// Structured hinge for one table: the loss-augmented optimum against the
/// gold score, along with the violating decode. When the optimum is the
/// gold tree itself the margin holds and the loss is zero by definition;
/// short-circuiting that case keeps it exact instead of leaving float
/// summation-order dust.
pub fn hinge_loss(
    cg: &ChartGrammar,
    table: &SpanScoreTable,
    gold: &SpanSet,
) -> Result<(f64, DecodeResult)> {
    let viol = loss_augmented_decode(cg, table, gold)?;
    if viol.records == *gold {
        return Ok((0.0, viol));
    }
    let loss = (viol.score - table.score_records(gold)).max(0.0);
    Ok((loss, viol))
}

/// Cell gradient of the margin: +1 through the violator's records, -1
/// through the gold's. Records present in both cancel exactly.
pub fn margin_gradient(
    n: usize,
    n_labels: usize,
    viol: &SpanSet,
    gold: &SpanSet,
) -> SpanScoreTable {
    let mut g = SpanScoreTable::zeros(n, n_labels);
    for (span, l) in viol.iter() {
        g.add(span.start, span.end, l, 1.0);
    }
    for (span, l) in gold.iter() {
        g.add(span.start, span.end, l, -1.0);
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub f1: f64,
}

impl fmt::Display for EpochMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {:.6}, {:.6})", self.epoch, self.mean_loss, self.f1)
    }
}

/// The training log as line-delimited "(epoch, loss, f1)" records.
pub fn format_metrics(log: &[EpochMetrics]) -> String {
    let mut out = String::new();
    for m in log {
        out.push_str(&m.to_string());
        out.push('\n');
    }
    out
}

struct OptState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptState {
    fn new(n_params: usize) -> OptState {
        OptState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    fn step(&mut self, scorer: &mut Scorer, grads: &Grads, cfg: &TrainConfig) {
        let (lr, wd) = (cfg.learning_rate, cfg.weight_decay);
        match cfg.optimizer {
            OptimizerKind::Sgd => scorer.update(grads, |_, p, g| {
                *p -= lr * (g + wd * *p);
            }),
            OptimizerKind::Adam => {
                self.t += 1;
                let (b1, b2) = (cfg.beta1, cfg.beta2);
                let rate =
                    lr * (1.0 - b2.powi(self.t as i32)).sqrt() / (1.0 - b1.powi(self.t as i32));
                let (m, v) = (&mut self.m, &mut self.v);
                scorer.update(grads, |i, p, g| {
                    let g = g + wd * *p;
                    m[i] = b1 * m[i] + (1.0 - b1) * g;
                    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                    *p -= rate * m[i] / (v[i].sqrt() + cfg.eps);
                });
            }
        }
    }
}

fn training_f1(
    scorer: &Scorer,
    cg: &ChartGrammar,
    grammar: &Grammar,
    data: &[TrainInstance],
    epoch: usize,
) -> Result<f64> {
    let labels = grammar.label_set();
    let mut preds = Vec::with_capacity(data.len());
    let mut golds = Vec::with_capacity(data.len());
    for inst in data {
        let table = scorer.score_all(&inst.sentence.tokens);
        if !table.is_finite() {
            return Err(Error::Diverged(format!(
                "epoch {epoch}: non-finite span scores"
            )));
        }
        let dec = decode(cg, &table)?;
        // A structure that fails recovery predicts nothing; completeness
        // accounting belongs to evaluation, not the training log.
        preds.push(
            recover_quads(&dec.records, &labels, inst.sentence.fake_prefix).unwrap_or_default(),
        );
        golds.push(inst.gold_quads.clone());
    }
    Ok(eval_quads(&preds, &golds).f1)
}

/// Runs the margin-training loop and returns the per-epoch log. The
/// scorer is updated in place; a non-finite score or gradient aborts with
/// a divergence error naming the epoch.
pub fn fit(
    scorer: &mut Scorer,
    grammar: &Grammar,
    data: &[TrainInstance],
    cfg: &TrainConfig,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    let labels = grammar.label_set();
    if scorer.n_labels() + 1 != labels.len() {
        return Err(Error::Config(format!(
            "scorer covers {} labels but the grammar needs {}",
            scorer.n_labels(),
            labels.scored_len()
        )));
    }
    let cg = ChartGrammar::new(grammar);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut opt = OptState::new(scorer.n_params());
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Option<Grads> = None;
            for &idx in batch {
                let inst = &data[idx];
                let fp = scorer.forward(&inst.sentence.tokens);
                if !fp.table.is_finite() {
                    return Err(Error::Diverged(format!(
                        "epoch {epoch}: non-finite span scores"
                    )));
                }
                let (loss, viol) = hinge_loss(&cg, &fp.table, &inst.gold)?;
                loss_sum += loss;
                if loss > 0.0 {
                    let gt = margin_gradient(
                        fp.table.n(),
                        fp.table.n_labels(),
                        &viol.records,
                        &inst.gold,
                    );
                    let g = scorer.backward(&fp, &gt);
                    match &mut acc {
                        None => acc = Some(g),
                        Some(a) => a.accumulate(&g),
                    }
                }
            }
            if let Some(mut g) = acc {
                g.scale(1.0 / batch.len() as f64);
                if !g.is_finite() {
                    return Err(Error::Diverged(format!(
                        "epoch {epoch}: non-finite gradient"
                    )));
                }
                opt.step(scorer, &g, cfg);
            }
        }
        let mean_loss = if data.is_empty() {
            0.0
        } else {
            loss_sum / data.len() as f64
        };
        let f1 = training_f1(scorer, &cg, grammar, data, epoch)?;
        log.push(EpochMetrics {
            epoch,
            mean_loss,
            f1,
        });
        if cfg.stop_at_f1.is_some_and(|t| f1 >= t) {
            break;
        }
    }
    Ok(log)
}

#[cfg(test)]
mod test {
    use super::*;
    use crate::bruteforce::enumerate_record_sets;
    use crate::grammar::{build_grammar, Grammar, GrammarConfig};
    use crate::quad::{Polarity, Span};
    use crate::scorer::{ScorerConfig, Vocab};

    fn grammar() -> Grammar {
        build_grammar(&GrammarConfig::all_families(vec![
            "A#A".into(),
            "B#B".into(),
        ]))
        .unwrap()
    }

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

    fn instances(g: &Grammar) -> Vec<TrainInstance> {
        let cases: Vec<(&str, Vec<SentimentQuadruple>)> = vec![
            (
                "the pasta was great",
                vec![q(Some((1, 2)), 0, Some((3, 4)), Polarity::Positive)],
            ),
            (
                "screen dim and keyboard mushy",
                vec![
                    q(Some((0, 1)), 1, Some((1, 2)), Polarity::Negative),
                    q(Some((3, 4)), 0, Some((4, 5)), Polarity::Negative),
                ],
            ),
            (
                "would buy again",
                vec![q(None, 0, None, Polarity::Positive)],
            ),
        ];
        cases
            .into_iter()
            .map(|(text, quads)| make_instance(g, &Sentence::from_text(text), &quads).unwrap())
            .collect()
    }

    fn scorer_for(g: &Grammar, data: &[TrainInstance], seed: u64) -> Scorer {
        let vocab = Vocab::build(
            data.iter()
                .flat_map(|i| i.sentence.tokens.iter().map(|t| t.as_str())),
        );
        Scorer::new(
            ScorerConfig { dim: 8, hidden: 10 },
            vocab,
            g.label_set().scored_len(),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn zero_epochs_is_a_noop() {
        let g = grammar();
        let data = instances(&g);
        let mut s = scorer_for(&g, &data, 1);
        let before = s.score_all(&data[0].sentence.tokens);
        let log = fit(
            &mut s,
            &g,
            &data,
            &TrainConfig {
                epochs: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(log.is_empty());
        let after = s.score_all(&data[0].sentence.tokens);
        let n = data[0].sentence.tokens.len();
        for i in 0..n {
            for j in i + 1..=n {
                for l in 0..g.label_set().len() as u16 {
                    assert_eq!(before.get(i, j, l).to_bits(), after.get(i, j, l).to_bits());
                }
            }
        }
    }

    #[test]
    fn boosted_gold_satisfies_the_margin() {
        let g = grammar();
        let data = instances(&g);
        let cg = ChartGrammar::new(&g);
        for inst in &data {
            let n = inst.sentence.tokens.len();
            let mut table = SpanScoreTable::zeros(n, g.label_set().len());
            for (span, l) in inst.gold.iter() {
                table.set(span.start, span.end, l, 10.0);
            }
            let (loss, viol) = hinge_loss(&cg, &table, &inst.gold).unwrap();
            assert_eq!(loss, 0.0);
            let got: Vec<_> = viol.records.iter().collect();
            let want: Vec<_> = inst.gold.iter().collect();
            assert_eq!(got, want);
        }
    }

    /// On an all-zero table the hinge equals the largest Hamming slack any
    /// expressible structure can collect against the gold.
    #[test]
    fn zero_table_hinge_matches_enumerated_slack() {
        let g = grammar();
        let cg = ChartGrammar::new(&g);
        let inst = make_instance(
            &g,
            &Sentence::from_text("pasta great here"),
            &[q(Some((0, 1)), 0, Some((1, 2)), Polarity::Positive)],
        )
        .unwrap();
        let n = 3;
        let table = SpanScoreTable::zeros(n, g.label_set().len());
        let (loss, _) = hinge_loss(&cg, &table, &inst.gold).unwrap();
        let best = enumerate_record_sets(&g, n)
            .into_iter()
            .map(|recs| {
                recs.iter()
                    .filter(|&&(s, l)| inst.gold.get(&s) != Some(l))
                    .count()
            })
            .max()
            .unwrap() as f64;
        assert_eq!(loss, best);
    }

    #[test]
    fn shared_records_cancel_in_the_margin_gradient() {
        let g = grammar();
        let inst = make_instance(
            &g,
            &Sentence::from_text("pasta great here"),
            &[q(Some((0, 1)), 0, Some((1, 2)), Polarity::Positive)],
        )
        .unwrap();
        let gt = margin_gradient(3, g.label_set().len(), &inst.gold, &inst.gold);
        for i in 0..3 {
            for j in i + 1..=3 {
                for l in 0..g.label_set().len() as u16 {
                    assert_eq!(gt.get(i, j, l), 0.0);
                }
            }
        }
    }

    #[test]
    fn single_sentence_converges_under_sgd() {
        let g = grammar();
        let data = vec![make_instance(
            &g,
            &Sentence::from_text("the pasta was great"),
            &[q(Some((1, 2)), 0, Some((3, 4)), Polarity::Positive)],
        )
        .unwrap()];
        let mut s = scorer_for(&g, &data, 2);
        let cfg = TrainConfig {
            learning_rate: 0.1,
            epochs: 200,
            batch_size: 1,
            ..Default::default()
        };
        let log = fit(&mut s, &g, &data, &cfg).unwrap();
        assert!(
            log.iter().any(|m| m.mean_loss == 0.0 && m.f1 == 1.0),
            "never converged: last = {:?}",
            log.last()
        );
    }

    #[test]
    fn descent_is_mostly_monotone_on_one_example() {
        let g = grammar();
        let data = vec![make_instance(
            &g,
            &Sentence::from_text("keyboard feels mushy overall"),
            &[q(Some((0, 1)), 1, Some((2, 3)), Polarity::Negative)],
        )
        .unwrap()];
        let mut s = scorer_for(&g, &data, 3);
        let cfg = TrainConfig {
            learning_rate: 1e-4,
            epochs: 100,
            batch_size: 1,
            shuffle: false,
            ..Default::default()
        };
        let log = fit(&mut s, &g, &data, &cfg).unwrap();
        let increases = log
            .windows(2)
            .filter(|w| w[1].mean_loss > w[0].mean_loss + 1e-12)
            .count();
        assert!(
            increases * 20 <= log.len(),
            "{increases} increases in {} steps",
            log.len()
        );
    }

    #[test]
    fn fit_is_deterministic() {
        let g = grammar();
        let data = instances(&g);
        let cfg = TrainConfig {
            epochs: 12,
            ..Default::default()
        };
        let mut a = scorer_for(&g, &data, 4);
        let mut b = scorer_for(&g, &data, 4);
        let la = fit(&mut a, &g, &data, &cfg).unwrap();
        let lb = fit(&mut b, &g, &data, &cfg).unwrap();
        assert_eq!(la, lb);
        let probe = &data[1].sentence.tokens;
        let (ta, tb) = (a.score_all(probe), b.score_all(probe));
        let n = probe.len();
        for i in 0..n {
            for j in i + 1..=n {
                for l in 0..g.label_set().len() as u16 {
                    assert_eq!(ta.get(i, j, l).to_bits(), tb.get(i, j, l).to_bits());
                }
            }
        }
    }

    #[test]
    fn adam_converges_on_a_small_corpus() {
        let g = grammar();
        let data = instances(&g);
        let mut s = scorer_for(&g, &data, 5);
        let cfg = TrainConfig {
            learning_rate: 0.01,
            epochs: 300,
            optimizer: OptimizerKind::Adam,
            stop_at_f1: Some(1.0),
            ..Default::default()
        };
        let log = fit(&mut s, &g, &data, &cfg).unwrap();
        let last = log.last().unwrap();
        assert_eq!(last.f1, 1.0, "stalled at {last}");
        assert!(log.len() < 300, "early stop never fired");
    }

    /// Central differences on the fixed-violator margin agree with the
    /// backward pass, sampled across every parameter group.
    #[test]
    fn fixed_violator_gradient_matches_finite_differences() {
        let g = grammar();
        let data = instances(&g);
        let cg = ChartGrammar::new(&g);
        let mut s = scorer_for(&g, &data, 6);
        let inst = &data[1];
        let fp = s.forward(&inst.sentence.tokens);
        let (loss, viol) = hinge_loss(&cg, &fp.table, &inst.gold).unwrap();
        assert!(loss > 0.0, "fresh parameters should violate the margin");
        let gt = margin_gradient(fp.table.n(), fp.table.n_labels(), &viol.records, &inst.gold);
        let grads = s.backward(&fp, &gt);
        let flat: Vec<f64> = [
            grads.emb.as_slice(),
            grads.boundary.as_slice(),
            grads.wq.as_slice(),
            grads.wk.as_slice(),
            grads.wv.as_slice(),
            grads.w1.as_slice(),
            grads.b1.as_slice(),
            grads.w2.as_slice(),
            grads.b2.as_slice(),
        ]
        .concat();

        let margin = |s: &Scorer| -> f64 {
            let t = s.score_all(&inst.sentence.tokens);
            t.score_records(&viol.records) - t.score_records(&inst.gold)
        };
        let n_params = s.n_params();
        let eps = 1e-5;
        let sample: Vec<usize> = (0..40).map(|k| k * n_params / 40).collect();
        for idx in sample {
            let nudge = |s: &mut Scorer, delta: f64| {
                s.update(&grads, |i, p, _| {
                    if i == idx {
                        *p += delta;
                    }
                })
            };
            nudge(&mut s, eps);
            let plus = margin(&s);
            nudge(&mut s, -2.0 * eps);
            let minus = margin(&s);
            nudge(&mut s, eps);
            let fd = (plus - minus) / (2.0 * eps);
            let rel = (flat[idx] - fd).abs() / flat[idx].abs().max(fd.abs()).max(1.0);
            assert!(
                rel <= 1e-4,
                "param {idx}: analytic {} vs fd {fd}",
                flat[idx]
            );
        }
    }

    #[test]
    fn runaway_learning_rate_reports_divergence() {
        let g = grammar();
        let data = instances(&g);
        let mut s = scorer_for(&g, &data, 7);
        let cfg = TrainConfig {
            learning_rate: 1e308,
            epochs: 5,
            ..Default::default()
        };
        match fit(&mut s, &g, &data, &cfg) {
            Err(Error::Diverged(_)) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
