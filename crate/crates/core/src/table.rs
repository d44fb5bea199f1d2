//! Dense per-sentence score tables: one f64 for every (start, end, label)
//! cell with end > start. The filler label has a column like any other so
//! that loss augmentation can charge wrong filler records; the learned
//! scorer writes zeros there.

use rand::Rng;

use crate::grammar::LabelId;
use crate::quad::Span;
use crate::tree::SpanSet;

#[derive(Debug, Clone, PartialEq)]
pub struct SpanScoreTable {
    n: usize,
    n_labels: usize,
    vals: Vec<f64>,
}

impl SpanScoreTable {
    pub fn zeros(n: usize, n_labels: usize) -> SpanScoreTable {
        SpanScoreTable {
            n,
            n_labels,
            vals: vec![0.0; (n + 1) * (n + 1) * n_labels],
        }
    }

    pub fn random_uniform<R: Rng>(
        n: usize,
        n_labels: usize,
        lo: f64,
        hi: f64,
        rng: &mut R,
    ) -> SpanScoreTable {
        let mut t = SpanScoreTable::zeros(n, n_labels);
        for i in 0..n {
            for j in i + 1..=n {
                for l in 0..n_labels {
                    let v = rng.random::<f64>() * (hi - lo) + lo;
                    t.set(i, j, l as LabelId, v);
                }
            }
        }
        t
    }

    /// Uniform random table snapped to multiples of 2^-bits. Modest sums
    /// of such values are exact in binary floating point regardless of
    /// association order, so two decoders summing the same cells in
    /// different orders produce bitwise equal totals; use this wherever
    /// scores are compared exactly. Keep `bits` small enough that every
    /// partial sum stays under 2^53 times the grid step.
    pub fn random_dyadic<R: Rng>(
        n: usize,
        n_labels: usize,
        lo: f64,
        hi: f64,
        bits: u32,
        rng: &mut R,
    ) -> SpanScoreTable {
        let scale = (1u64 << bits) as f64;
        let mut t = SpanScoreTable::random_uniform(n, n_labels, lo, hi, rng);
        for v in &mut t.vals {
            *v = (*v * scale).round() / scale;
        }
        t
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    fn idx(&self, i: usize, j: usize, l: LabelId) -> usize {
        debug_assert!(i < j && j <= self.n && (l as usize) < self.n_labels);
        (i * (self.n + 1) + j) * self.n_labels + l as usize
    }

    pub fn get(&self, i: usize, j: usize, l: LabelId) -> f64 {
        self.vals[self.idx(i, j, l)]
    }

    pub fn set(&mut self, i: usize, j: usize, l: LabelId, v: f64) {
        let idx = self.idx(i, j, l);
        self.vals[idx] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, l: LabelId, v: f64) {
        let idx = self.idx(i, j, l);
        self.vals[idx] += v;
    }

    pub fn is_finite(&self) -> bool {
        self.vals.iter().all(|v| v.is_finite())
    }

    /// Sum of the table entries named by a record set.
    pub fn score_records(&self, records: &SpanSet) -> f64 {
        records
            .iter()
            .map(|(span, l)| self.get(span.start, span.end, l))
            .sum()
    }

    /// Table with a unit penalty on every cell that is not a gold record;
    /// a structure's score then carries its one-sided Hamming distance to
    /// the gold records.
    pub fn loss_augmented(&self, gold: &SpanSet) -> SpanScoreTable {
        let mut t = self.clone();
        for i in 0..self.n {
            for j in i + 1..=self.n {
                for l in 0..self.n_labels {
                    let hit = gold.get(&Span::new(i, j)) == Some(l as LabelId);
                    if !hit {
                        t.add(i, j, l as LabelId, 1.0);
                    }
                }
            }
        }
        t
    }
}

#[cfg(test)]
mod test {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn augmented_score_is_score_plus_hamming() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = SpanScoreTable::random_uniform(4, 6, -1.0, 1.0, &mut rng);
        let mut gold = SpanSet::new(4);
        gold.insert(Span::new(0, 4), 5).unwrap();
        gold.insert(Span::new(0, 2), 1).unwrap();
        let mut pred = SpanSet::new(4);
        pred.insert(Span::new(0, 4), 5).unwrap();
        pred.insert(Span::new(0, 2), 2).unwrap();
        pred.insert(Span::new(2, 4), 0).unwrap();
        let aug = t.loss_augmented(&gold);
        let plain = t.score_records(&pred);
        assert!((aug.score_records(&pred) - (plain + 2.0)).abs() < 1e-12);
        assert!((aug.score_records(&gold) - t.score_records(&gold)).abs() < 1e-12);
    }
}
