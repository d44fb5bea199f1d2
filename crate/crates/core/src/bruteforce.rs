//! Exhaustive reference enumeration of every record set the chart parser
//! is allowed to produce, built straight from the definition of the
//! canonical form rather than from the parsing rules. Feasible only for
//! short sentences; used to cross-check the dynamic program.
//!
//! The form, per sentence: either the bare sentence record (no quads), or
//! a full-width quad body (the group marker is implied and not recorded),
//! or a sequence of two or more parts where each part is a filler, a quad
//! group, or an implicit-side shell, with no two fillers adjacent. A quad
//! body is a run of aspect composites and a run of opinion composites, one
//! run per side in either order, single fillers optionally between
//! neighbours; runs longer than one need the one-to-many rules. A
//! composite is either bare over its span or, with the cross-mapping
//! rules, a shell wrapping one opposite-side bare composite, an optional
//! filler, and an inner same-side composite. An implicit-side shell wraps
//! one opposite-side bare composite plus filler on either or both sides,
//! and needs the implicit rules.

use std::collections::HashMap;
use std::rc::Rc;

use crate::grammar::{Grammar, Label, LabelId, LabelSet, RuleFamily};
use crate::quad::{Span, POLARITIES};
use crate::table::SpanScoreTable;

/// One chart structure, as its labeled span records.
pub type RecordVec = Vec<(Span, LabelId)>;

struct Enumerator {
    labels: LabelSet,
    n_cats: u16,
    one_to_many: bool,
    mono: bool,
    cross: bool,
    a_memo: HashMap<(usize, usize), Rc<Vec<RecordVec>>>,
    o_memo: HashMap<(usize, usize), Rc<Vec<RecordVec>>>,
    body_memo: HashMap<(usize, usize), Rc<Vec<RecordVec>>>,
}

impl Enumerator {
    fn new(grammar: &Grammar) -> Enumerator {
        Enumerator {
            labels: grammar.label_set(),
            n_cats: grammar.categories().len() as u16,
            one_to_many: grammar.has_family(RuleFamily::OneToMany),
            mono: grammar.has_family(RuleFamily::MonoImplicit),
            cross: grammar.has_family(RuleFamily::CrossMapping),
            a_memo: HashMap::new(),
            o_memo: HashMap::new(),
            body_memo: HashMap::new(),
        }
    }

    fn fill(&self, i: usize, j: usize) -> (Span, LabelId) {
        (Span::new(i, j), self.labels.empty_id())
    }

    fn side_labels(&self, aspect_side: bool) -> Vec<LabelId> {
        if aspect_side {
            (0..self.n_cats)
                .map(|c| self.labels.id(Label::ACat(c)))
                .collect()
        } else {
            POLARITIES
                .iter()
                .map(|&p| self.labels.id(Label::OPol(p)))
                .collect()
        }
    }

    /// All composites of one side over a span: bare ones for every value,
    /// plus cross shells around a nearer opposite partner.
    fn composites(&mut self, aspect_side: bool, i: usize, j: usize) -> Rc<Vec<RecordVec>> {
        let memo = if aspect_side {
            &self.a_memo
        } else {
            &self.o_memo
        };
        if let Some(hit) = memo.get(&(i, j)) {
            return hit.clone();
        }
        let span = Span::new(i, j);
        let own = self.side_labels(aspect_side);
        let partner_vals = self.side_labels(!aspect_side);
        let mut out: Vec<RecordVec> = own.iter().map(|&l| vec![(span, l)]).collect();
        if self.cross && j - i >= 2 {
            for partner_left in [true, false] {
                // partner, optional filler, inner composite (or mirrored)
                for k in i + 1..j {
                    for m in k..j {
                        let (partner, gap, inner) = if partner_left {
                            (Span::new(i, k), Span::new(k, m), Span::new(m, j))
                        } else {
                            (Span::new(m, j), Span::new(k, m), Span::new(i, k))
                        };
                        let inners = self.composites(aspect_side, inner.start, inner.end);
                        for &pv in &partner_vals {
                            for inner_set in inners.iter() {
                                for &l in &own {
                                    let mut set = vec![(span, l), (partner, pv)];
                                    if gap.width() > 0 {
                                        set.push((gap, self.labels.empty_id()));
                                    }
                                    set.extend(inner_set.iter().copied());
                                    out.push(set);
                                }
                            }
                        }
                    }
                }
            }
        }
        let rc = Rc::new(out);
        let memo = if aspect_side {
            &mut self.a_memo
        } else {
            &mut self.o_memo
        };
        memo.insert((i, j), rc.clone());
        rc
    }

    /// Implicit-side shells over a span: a bare opposite partner strictly
    /// inside, filler covering the rest.
    fn mono_shells(&mut self, i: usize, j: usize) -> Vec<RecordVec> {
        let mut out = Vec::new();
        if !self.mono || j - i < 2 {
            return out;
        }
        let span = Span::new(i, j);
        for aspect_side in [true, false] {
            let own = self.side_labels(aspect_side);
            let partner_vals = self.side_labels(!aspect_side);
            for a in i..j {
                for b in a + 1..=j {
                    if (a, b) == (i, j) {
                        continue;
                    }
                    for &l in &own {
                        for &pv in &partner_vals {
                            let mut set = vec![(span, l)];
                            if a > i {
                                set.push(self.fill(i, a));
                            }
                            set.push((Span::new(a, b), pv));
                            if b < j {
                                set.push(self.fill(b, j));
                            }
                            out.push(set);
                        }
                    }
                }
            }
        }
        out
    }

    /// All quad bodies over a span.
    fn bodies(&mut self, i: usize, j: usize) -> Rc<Vec<RecordVec>> {
        if let Some(hit) = self.body_memo.get(&(i, j)) {
            return hit.clone();
        }
        let mut out = Vec::new();
        for first_aspect in [true, false] {
            let mut acc = Vec::new();
            self.body_element(first_aspect, true, i, j, &mut acc, &mut out);
        }
        let rc = Rc::new(out);
        self.body_memo.insert((i, j), rc.clone());
        rc
    }

    /// Place one run element starting at `pos`, then continue.
    fn body_element(
        &mut self,
        first_aspect: bool,
        in_first_run: bool,
        pos: usize,
        j: usize,
        acc: &mut RecordVec,
        out: &mut Vec<RecordVec>,
    ) {
        let aspect_side = first_aspect == in_first_run;
        for k in pos + 1..=j {
            let comps = self.composites(aspect_side, pos, k);
            for comp in comps.iter() {
                let mark = acc.len();
                acc.extend(comp.iter().copied());
                self.body_after_element(first_aspect, in_first_run, k, j, acc, out);
                acc.truncate(mark);
            }
        }
    }

    fn body_after_element(
        &mut self,
        first_aspect: bool,
        in_first_run: bool,
        k: usize,
        j: usize,
        acc: &mut RecordVec,
        out: &mut Vec<RecordVec>,
    ) {
        if k == j {
            if !in_first_run {
                out.push(acc.clone());
            }
            return;
        }
        for next in k..j {
            let mark = acc.len();
            if next > k {
                acc.push(self.fill(k, next));
            }
            if self.one_to_many {
                self.body_element(first_aspect, in_first_run, next, j, acc, out);
            }
            if in_first_run {
                self.body_element(first_aspect, false, next, j, acc, out);
            }
            acc.truncate(mark);
        }
    }

    /// Sequences of two or more sentence-level parts.
    fn sequence(
        &mut self,
        pos: usize,
        n: usize,
        last_was_fill: bool,
        parts: usize,
        groups: usize,
        acc: &mut RecordVec,
        out: &mut Vec<RecordVec>,
    ) {
        if pos == n {
            if parts >= 2 && groups >= 1 {
                out.push(acc.clone());
            }
            return;
        }
        if !last_was_fill {
            for k in pos + 1..=n {
                if (pos, k) == (0, n) {
                    continue;
                }
                acc.push(self.fill(pos, k));
                self.sequence(k, n, true, parts + 1, groups, acc, out);
                acc.pop();
            }
        }
        for k in pos + 1..=n {
            if (pos, k) == (0, n) {
                continue;
            }
            let bodies = self.bodies(pos, k);
            let q = self.labels.id(Label::Q);
            for body in bodies.iter() {
                let mark = acc.len();
                acc.push((Span::new(pos, k), q));
                acc.extend(body.iter().copied());
                self.sequence(k, n, false, parts + 1, groups + 1, acc, out);
                acc.truncate(mark);
            }
            for shell in self.mono_shells(pos, k) {
                let mark = acc.len();
                acc.extend(shell.iter().copied());
                self.sequence(k, n, false, parts + 1, groups + 1, acc, out);
                acc.truncate(mark);
            }
        }
    }
}

/// Every record set the chart can yield for a sentence of `n` tokens.
pub fn enumerate_record_sets(grammar: &Grammar, n: usize) -> Vec<RecordVec> {
    assert!(n >= 1, "sentences have at least one token");
    let mut e = Enumerator::new(grammar);
    let s_rec = (Span::new(0, n), e.labels.id(Label::S));
    let mut out = vec![vec![s_rec]];
    for body in e.bodies(0, n).iter() {
        let mut set = vec![s_rec];
        set.extend(body.iter().copied());
        out.push(set);
    }
    let mut acc = vec![s_rec];
    let mut seqs = Vec::new();
    e.sequence(0, n, false, 0, 0, &mut acc, &mut seqs);
    out.extend(seqs);
    out
}

/// Highest achievable table score with the index of one witness set.
/// Scans the enumeration; ties resolve to the first witness.
pub fn max_score_bruteforce(sets: &[RecordVec], table: &SpanScoreTable) -> (f64, usize) {
    assert!(!sets.is_empty());
    let mut best = f64::NEG_INFINITY;
    let mut best_i = 0;
    for (i, set) in sets.iter().enumerate() {
        let s: f64 = set
            .iter()
            .map(|(sp, l)| table.get(sp.start, sp.end, *l))
            .sum();
        if s > best {
            best = s;
            best_i = i;
        }
    }
    (best, best_i)
}

/// Best achievable score by memoized recursion straight down the form
/// definition, without materializing structures. Same language as
/// `enumerate_record_sets` (the tests pin that); usable where the full
/// enumeration no longer fits in time or memory.
pub fn max_score_recursive(grammar: &Grammar, table: &SpanScoreTable) -> f64 {
    let mut o = MaxOracle {
        labels: grammar.label_set(),
        n_cats: grammar.categories().len() as u16,
        one_to_many: grammar.has_family(RuleFamily::OneToMany),
        mono: grammar.has_family(RuleFamily::MonoImplicit),
        cross: grammar.has_family(RuleFamily::CrossMapping),
        table,
        comp_memo: HashMap::new(),
        body_memo: HashMap::new(),
        seq_memo: HashMap::new(),
    };
    let n = table.n();
    let s = table.get(0, n, o.labels.id(Label::S));
    let mut best = 0.0f64; // no quads
    for first_aspect in [true, false] {
        best = best.max(o.body_element(first_aspect, true, 0, n));
    }
    best = best.max(o.sequence(0, n, false, false, 0));
    s + best
}

struct MaxOracle<'t> {
    labels: LabelSet,
    n_cats: u16,
    one_to_many: bool,
    mono: bool,
    cross: bool,
    table: &'t SpanScoreTable,
    comp_memo: HashMap<(bool, usize, usize), f64>,
    body_memo: HashMap<(bool, bool, usize, usize), f64>,
    seq_memo: HashMap<(usize, bool, bool, usize), f64>,
}

impl MaxOracle<'_> {
    fn fill(&self, i: usize, j: usize) -> f64 {
        self.table.get(i, j, self.labels.empty_id())
    }

    /// Best own-label column for one side over a span.
    fn bare(&self, aspect_side: bool, i: usize, j: usize) -> f64 {
        let mut best = f64::NEG_INFINITY;
        if aspect_side {
            for c in 0..self.n_cats {
                best = best.max(self.table.get(i, j, self.labels.id(Label::ACat(c))));
            }
        } else {
            for &p in &POLARITIES {
                best = best.max(self.table.get(i, j, self.labels.id(Label::OPol(p))));
            }
        }
        best
    }

    fn composite(&mut self, aspect_side: bool, i: usize, j: usize) -> f64 {
        if let Some(&hit) = self.comp_memo.get(&(aspect_side, i, j)) {
            return hit;
        }
        let own = self.bare(aspect_side, i, j);
        let mut extra = 0.0f64; // bare form
        if self.cross && j - i >= 2 {
            for k in i + 1..j {
                for m in k..j {
                    let gap = if m > k { self.fill(k, m) } else { 0.0 };
                    let left =
                        self.bare(!aspect_side, i, k) + gap + self.composite(aspect_side, m, j);
                    let right =
                        self.composite(aspect_side, i, k) + gap + self.bare(!aspect_side, m, j);
                    extra = extra.max(left).max(right);
                }
            }
        }
        let v = own + extra;
        self.comp_memo.insert((aspect_side, i, j), v);
        v
    }

    fn mono_shell(&mut self, i: usize, j: usize) -> f64 {
        if !self.mono || j - i < 2 {
            return f64::NEG_INFINITY;
        }
        let mut best = f64::NEG_INFINITY;
        for aspect_side in [true, false] {
            let own = self.bare(aspect_side, i, j);
            for a in i..j {
                for b in a + 1..=j {
                    if (a, b) == (i, j) {
                        continue;
                    }
                    let mut v = own + self.bare(!aspect_side, a, b);
                    if a > i {
                        v += self.fill(i, a);
                    }
                    if b < j {
                        v += self.fill(b, j);
                    }
                    best = best.max(v);
                }
            }
        }
        best
    }

    fn body_element(
        &mut self,
        first_aspect: bool,
        in_first_run: bool,
        pos: usize,
        j: usize,
    ) -> f64 {
        if let Some(&hit) = self.body_memo.get(&(first_aspect, in_first_run, pos, j)) {
            return hit;
        }
        let aspect_side = first_aspect == in_first_run;
        let mut best = f64::NEG_INFINITY;
        for k in pos + 1..=j {
            let el = self.composite(aspect_side, pos, k);
            let rest = if k == j {
                if in_first_run {
                    f64::NEG_INFINITY
                } else {
                    0.0
                }
            } else {
                let mut r = f64::NEG_INFINITY;
                for next in k..j {
                    let gap = if next > k { self.fill(k, next) } else { 0.0 };
                    if self.one_to_many {
                        r = r.max(gap + self.body_element(first_aspect, in_first_run, next, j));
                    }
                    if in_first_run {
                        r = r.max(gap + self.body_element(first_aspect, false, next, j));
                    }
                }
                r
            };
            best = best.max(el + rest);
        }
        self.body_memo
            .insert((first_aspect, in_first_run, pos, j), best);
        best
    }

    fn body(&mut self, i: usize, j: usize) -> f64 {
        self.body_element(true, true, i, j)
            .max(self.body_element(false, true, i, j))
    }

    fn sequence(
        &mut self,
        pos: usize,
        n: usize,
        last_was_fill: bool,
        has_group: bool,
        parts: usize,
    ) -> f64 {
        let parts = parts.min(2);
        if pos == n {
            return if parts >= 2 && has_group {
                0.0
            } else {
                f64::NEG_INFINITY
            };
        }
        let key = (pos, last_was_fill, has_group, parts);
        if let Some(&hit) = self.seq_memo.get(&key) {
            return hit;
        }
        let mut best = f64::NEG_INFINITY;
        for k in pos + 1..=n {
            if (pos, k) == (0, n) {
                continue;
            }
            if !last_was_fill {
                best =
                    best.max(self.fill(pos, k) + self.sequence(k, n, true, has_group, parts + 1));
            }
            let q = self.table.get(pos, k, self.labels.id(Label::Q));
            let group = (self.body(pos, k) + q).max(self.mono_shell(pos, k));
            best = best.max(group + self.sequence(k, n, false, true, parts + 1));
        }
        self.seq_memo.insert(key, best);
        best
    }
}

#[cfg(test)]
mod test {
    use super::*;
    use crate::grammar::{build_grammar, GrammarConfig};
    use crate::tree::{spans_to_tree, tree_to_spans, SpanSet};
    use std::collections::BTreeSet;

    fn full(cats: usize) -> Grammar {
        let names = ["CAT#A", "CAT#B", "CAT#C"];
        build_grammar(&GrammarConfig::all_families(
            names[..cats].iter().map(|s| s.to_string()).collect(),
        ))
        .unwrap()
    }

    fn basic(cats: usize) -> Grammar {
        let names = ["CAT#A", "CAT#B", "CAT#C"];
        build_grammar(&GrammarConfig {
            categories: names[..cats].iter().map(|s| s.to_string()).collect(),
            families: Default::default(),
        })
        .unwrap()
    }

    #[test]
    fn counts_match_hand_enumeration() {
        // One token admits only the quadless reading.
        assert_eq!(enumerate_record_sets(&full(1), 1).len(), 1);
        // Two tokens, one category: quadless, plus both full-width
        // two-element bodies (1 aspect value x 3 polarities, either order).
        assert_eq!(enumerate_record_sets(&full(1), 2).len(), 7);
        // Three tokens, one category, all families: 1 quadless + 114
        // full-width bodies + 36 two-part sequences.
        assert_eq!(enumerate_record_sets(&full(1), 3).len(), 151);
        // Same without any optional family: runs, shells and implicit
        // shells all disappear.
        assert_eq!(enumerate_record_sets(&basic(1), 3).len(), 31);
    }

    #[test]
    fn sets_are_distinct() {
        for n in 1..=4 {
            let sets = enumerate_record_sets(&full(2), n);
            let uniq: BTreeSet<RecordVec> = sets
                .iter()
                .map(|s| {
                    let mut s = s.clone();
                    s.sort();
                    s
                })
                .collect();
            assert_eq!(uniq.len(), sets.len(), "duplicate structures at n={n}");
        }
    }

    #[test]
    fn recursive_max_agrees_with_full_enumeration() {
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;
        for g in [full(2), basic(1), full(1)] {
            let labels = g.label_set();
            for n in 1..=4 {
                let sets = enumerate_record_sets(&g, n);
                for seed in 0..25u64 {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed * 1000 + n as u64);
                    let t = SpanScoreTable::random_uniform(n, labels.len(), -1.0, 1.0, &mut rng);
                    let (best, _) = max_score_bruteforce(&sets, &t);
                    let rec = max_score_recursive(&g, &t);
                    assert!(
                        (best - rec).abs() < 1e-9,
                        "n={n} seed={seed}: {best} vs {rec}"
                    );
                }
            }
        }
    }

    #[test]
    fn every_set_survives_the_tree_round_trip() {
        let g = full(2);
        let labels = g.label_set();
        for n in 1..=4 {
            for set in enumerate_record_sets(&g, n) {
                let mut spans = SpanSet::new(n);
                for &(sp, l) in &set {
                    spans.insert(sp, l).unwrap();
                }
                let tree = spans_to_tree(&spans, &labels).unwrap();
                let back = tree_to_spans(&tree, &labels).unwrap();
                assert_eq!(back, spans, "n={n} set={set:?}");
            }
        }
    }
}
