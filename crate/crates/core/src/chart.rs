//! Exact decoding: a bottom-up span chart whose states spell out the
//! canonical form. Each cell holds, per state, the best score of any
//! derivation of that state over the span, and decoding walks the argmax
//! back into labeled span records.
//!
//! States fall into three layers. Composite states cover one side's
//! composites: bare over the whole span, or (cross rules) a shell around a
//! bare opposite partner with an optional filler and a same-side inner
//! composite, or (implicit rules) a shell around a bare opposite partner
//! padded by filler. Body states spell the element runs of a quad group:
//! one run per side, in either order, single fillers between neighbours,
//! runs longer than one element gated on the one-to-many rules. Sentence
//! states spell the top sequence: groups and fillers, no two fillers
//! adjacent, at least two parts, or a single full-width body (group marker
//! implied, not recorded), or no quads at all.
//!
//! A state contributes exactly one record when it carries a label: fillers
//! and bare composites record themselves, shells record their own span
//! on top of their children's records, group markers record the group
//! span, the root records the sentence span. Glue states record nothing.
//! Since a composite's own column is independent of its children, each
//! cell tracks only the best category and polarity rather than one state
//! per value.
//!
//! Ties resolve deterministically: alternatives without a split point are
//! preferred, then lower split points, then the fixed alternative order.

use crate::error::{Error, Result};
use crate::grammar::{Grammar, Label, LabelId, LabelSet, RuleFamily};
use crate::quad::{Span, POLARITIES};
use crate::table::SpanScoreTable;
use crate::tree::SpanSet;

/// Chart states. Order is the per-cell evaluation order; same-span
/// references only point at earlier states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
enum St {
    /// Filler leaf, records the filler label.
    Fill = 0,
    /// Bare aspect composite (no children), records the best category.
    BareA,
    /// Bare opinion composite, records the best polarity.
    BareO,
    /// Any aspect composite: bare, or a cross shell.
    AnyA,
    /// Any opinion composite.
    AnyO,
    /// Filler then any aspect composite (shell interior).
    FillA,
    /// Filler then any opinion composite.
    FillO,
    /// Filler then a bare aspect composite.
    FillBareA,
    /// Filler then a bare opinion composite.
    FillBareO,
    /// Bare aspect composite then filler (implicit-shell interior).
    BareAFill,
    /// Bare opinion composite then filler.
    BareOFill,
    /// Implicit-side shell labeled with a category.
    MonoA,
    /// Implicit-side shell labeled with a polarity.
    MonoO,
    /// Body suffix after one or more aspect elements (aspect run first).
    ASuf,
    /// Same, directly after a filler: an element must follow.
    ASufEl,
    /// Body suffix inside the opinion run of an aspect-first body.
    AOSuf,
    /// Same, directly after a filler.
    AOSufEl,
    /// Mirrors of the four above for opinion-first bodies.
    OSuf,
    OSufEl,
    OASuf,
    OASufEl,
    /// A complete quad body (both runs), no group record.
    Body,
    /// A quad group: a body plus the group record.
    QNode,
    /// Any sentence-level group: a quad group or an implicit-side shell.
    AnyGroup,
    /// Sentence sequence suffix: parts from here to the right edge.
    SeqTail,
    /// Same, directly after a filler: a group must come first.
    SeqAfterFill,
    /// The sentence itself; computed only over the full span.
    Root,
}

const N_STATES: usize = St::Root as usize + 1;

#[derive(Debug, Clone, Copy)]
enum AltKind {
    /// Terminal: the state covers the span by itself.
    Leaf,
    /// Adopt another state over the same span.
    Same(St),
    /// Two states split at every interior point.
    Bin(St, St),
}

struct AltSpec {
    lhs: St,
    kind: AltKind,
    needs: Option<RuleFamily>,
}

fn alt_specs() -> Vec<AltSpec> {
    use AltKind::{Bin, Leaf, Same};
    use RuleFamily::{CrossMapping, MonoImplicit, OneToMany};
    use St::*;
    let spec = |lhs, kind, needs| AltSpec { lhs, kind, needs };
    vec![
        spec(Fill, Leaf, None),
        spec(BareA, Leaf, None),
        spec(BareO, Leaf, None),
        spec(AnyA, Leaf, None),
        spec(AnyA, Bin(BareO, AnyA), Some(CrossMapping)),
        spec(AnyA, Bin(BareO, FillA), Some(CrossMapping)),
        spec(AnyA, Bin(AnyA, BareO), Some(CrossMapping)),
        spec(AnyA, Bin(AnyA, FillBareO), Some(CrossMapping)),
        spec(AnyO, Leaf, None),
        spec(AnyO, Bin(BareA, AnyO), Some(CrossMapping)),
        spec(AnyO, Bin(BareA, FillO), Some(CrossMapping)),
        spec(AnyO, Bin(AnyO, BareA), Some(CrossMapping)),
        spec(AnyO, Bin(AnyO, FillBareA), Some(CrossMapping)),
        spec(FillA, Bin(Fill, AnyA), Some(CrossMapping)),
        spec(FillO, Bin(Fill, AnyO), Some(CrossMapping)),
        spec(FillBareA, Bin(Fill, BareA), Some(CrossMapping)),
        spec(FillBareO, Bin(Fill, BareO), Some(CrossMapping)),
        spec(BareAFill, Bin(BareA, Fill), Some(MonoImplicit)),
        spec(BareOFill, Bin(BareO, Fill), Some(MonoImplicit)),
        spec(MonoA, Bin(BareO, Fill), Some(MonoImplicit)),
        spec(MonoA, Bin(Fill, BareO), Some(MonoImplicit)),
        spec(MonoA, Bin(Fill, BareOFill), Some(MonoImplicit)),
        spec(MonoO, Bin(BareA, Fill), Some(MonoImplicit)),
        spec(MonoO, Bin(Fill, BareA), Some(MonoImplicit)),
        spec(MonoO, Bin(Fill, BareAFill), Some(MonoImplicit)),
        // Aspect-first body suffixes.
        spec(ASuf, Bin(AnyA, ASuf), Some(OneToMany)),
        spec(ASuf, Bin(AnyA, AnyO), Some(OneToMany)),
        spec(ASuf, Bin(Fill, ASufEl), Some(OneToMany)),
        spec(ASuf, Bin(Fill, AnyO), None),
        spec(ASuf, Bin(AnyO, AOSuf), Some(OneToMany)),
        spec(ASuf, Bin(AnyO, AnyO), Some(OneToMany)),
        spec(ASufEl, Bin(AnyA, ASuf), Some(OneToMany)),
        spec(ASufEl, Bin(AnyA, AnyO), Some(OneToMany)),
        spec(ASufEl, Bin(AnyO, AOSuf), Some(OneToMany)),
        spec(ASufEl, Bin(AnyO, AnyO), Some(OneToMany)),
        spec(AOSuf, Bin(AnyO, AOSuf), Some(OneToMany)),
        spec(AOSuf, Bin(AnyO, AnyO), Some(OneToMany)),
        spec(AOSuf, Bin(Fill, AOSufEl), Some(OneToMany)),
        spec(AOSuf, Bin(Fill, AnyO), Some(OneToMany)),
        spec(AOSufEl, Bin(AnyO, AOSuf), Some(OneToMany)),
        spec(AOSufEl, Bin(AnyO, AnyO), Some(OneToMany)),
        // Opinion-first mirrors.
        spec(OSuf, Bin(AnyO, OSuf), Some(OneToMany)),
        spec(OSuf, Bin(AnyO, AnyA), Some(OneToMany)),
        spec(OSuf, Bin(Fill, OSufEl), Some(OneToMany)),
        spec(OSuf, Bin(Fill, AnyA), None),
        spec(OSuf, Bin(AnyA, OASuf), Some(OneToMany)),
        spec(OSuf, Bin(AnyA, AnyA), Some(OneToMany)),
        spec(OSufEl, Bin(AnyO, OSuf), Some(OneToMany)),
        spec(OSufEl, Bin(AnyO, AnyA), Some(OneToMany)),
        spec(OSufEl, Bin(AnyA, OASuf), Some(OneToMany)),
        spec(OSufEl, Bin(AnyA, AnyA), Some(OneToMany)),
        spec(OASuf, Bin(AnyA, OASuf), Some(OneToMany)),
        spec(OASuf, Bin(AnyA, AnyA), Some(OneToMany)),
        spec(OASuf, Bin(Fill, OASufEl), Some(OneToMany)),
        spec(OASuf, Bin(Fill, AnyA), Some(OneToMany)),
        spec(OASufEl, Bin(AnyA, OASuf), Some(OneToMany)),
        spec(OASufEl, Bin(AnyA, AnyA), Some(OneToMany)),
        // Complete bodies and groups.
        spec(Body, Bin(AnyA, AnyO), None),
        spec(Body, Bin(AnyA, ASuf), None),
        spec(Body, Bin(AnyO, AnyA), None),
        spec(Body, Bin(AnyO, OSuf), None),
        spec(QNode, Bin(AnyA, AnyO), None),
        spec(QNode, Bin(AnyA, ASuf), None),
        spec(QNode, Bin(AnyO, AnyA), None),
        spec(QNode, Bin(AnyO, OSuf), None),
        spec(AnyGroup, Same(QNode), None),
        spec(AnyGroup, Same(MonoA), Some(MonoImplicit)),
        spec(AnyGroup, Same(MonoO), Some(MonoImplicit)),
        // Sentence sequences.
        spec(SeqTail, Bin(AnyGroup, SeqTail), None),
        spec(SeqTail, Bin(Fill, SeqAfterFill), None),
        spec(SeqTail, Bin(AnyGroup, AnyGroup), None),
        spec(SeqTail, Bin(AnyGroup, Fill), None),
        spec(SeqTail, Bin(Fill, AnyGroup), None),
        spec(SeqAfterFill, Bin(AnyGroup, SeqTail), None),
        spec(SeqAfterFill, Bin(AnyGroup, AnyGroup), None),
        spec(SeqAfterFill, Bin(AnyGroup, Fill), None),
        // No quads at all, one full-width body, or a sequence.
        spec(Root, Leaf, None),
        spec(Root, Same(Body), None),
        spec(Root, Bin(AnyGroup, AnyGroup), None),
        spec(Root, Bin(AnyGroup, Fill), None),
        spec(Root, Bin(Fill, AnyGroup), None),
        spec(Root, Bin(AnyGroup, SeqTail), None),
        spec(Root, Bin(Fill, SeqAfterFill), None),
    ]
}

/// The rule system compiled for chart use: per-state alternatives with
/// disabled families removed.
pub struct ChartGrammar {
    labels: LabelSet,
    n_cats: u16,
    alts: Vec<Vec<AltKind>>,
}

impl ChartGrammar {
    pub fn new(grammar: &Grammar) -> ChartGrammar {
        let mut alts: Vec<Vec<AltKind>> = (0..N_STATES).map(|_| Vec::new()).collect();
        for spec in alt_specs() {
            if spec.needs.map_or(true, |f| grammar.has_family(f)) {
                alts[spec.lhs as usize].push(spec.kind);
            }
        }
        ChartGrammar {
            labels: grammar.label_set(),
            n_cats: grammar.categories().len() as u16,
            alts,
        }
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }
}

pub struct DecodeResult {
    pub score: f64,
    pub records: SpanSet,
}

const NO_CHOICE: u16 = u16::MAX;

struct Chart<'a> {
    cg: &'a ChartGrammar,
    table: &'a SpanScoreTable,
    n: usize,
    /// (cell, state) -> best score.
    val: Vec<f64>,
    /// (cell, state) -> (alternative index, split point).
    choice: Vec<(u16, u16)>,
    /// Per cell: best category and best polarity with their scores.
    best_cat: Vec<(f64, u16)>,
    best_pol: Vec<(f64, u16)>,
}

impl<'a> Chart<'a> {
    fn cell(&self, i: usize, j: usize) -> usize {
        i * (self.n + 1) + j
    }

    fn at(&self, i: usize, j: usize, s: St) -> f64 {
        self.val[self.cell(i, j) * N_STATES + s as usize]
    }

    /// The label a state records over a cell, if it records one.
    fn record_label(&self, s: St, cell: usize) -> Option<LabelId> {
        let labels = &self.cg.labels;
        match s {
            St::Fill => Some(labels.empty_id()),
            St::BareA | St::AnyA | St::MonoA => Some(labels.id(Label::ACat(self.best_cat[cell].1))),
            St::BareO | St::AnyO | St::MonoO => {
                Some(labels.id(Label::OPol(POLARITIES[self.best_pol[cell].1 as usize])))
            }
            St::QNode => Some(labels.id(Label::Q)),
            St::Root => Some(labels.id(Label::S)),
            _ => None,
        }
    }

    /// Own table contribution of a state over a cell.
    fn own_add(&self, s: St, cell: usize) -> f64 {
        match s {
            St::BareA | St::AnyA | St::MonoA => self.best_cat[cell].0,
            St::BareO | St::AnyO | St::MonoO => self.best_pol[cell].0,
            St::Fill | St::QNode | St::Root => {
                // Safe: record_label is Some for these.
                let l = self.record_label(s, cell).unwrap();
                let j = cell % (self.n + 1);
                let i = cell / (self.n + 1);
                self.table.get(i, j, l)
            }
            _ => 0.0,
        }
    }

    fn fill_cell(&mut self, i: usize, j: usize, s: St) {
        let cell = self.cell(i, j);
        let mut best = f64::NEG_INFINITY;
        let mut pick = (NO_CHOICE, 0u16);
        // Split-free alternatives first, then splits ascending, keeping
        // the first candidate on ties.
        for (ai, alt) in self.cg.alts[s as usize].iter().enumerate() {
            match alt {
                AltKind::Leaf => {
                    if 0.0 > best {
                        best = 0.0;
                        pick = (ai as u16, 0);
                    }
                }
                AltKind::Same(inner) => {
                    let v = self.at(i, j, *inner);
                    if v > best {
                        best = v;
                        pick = (ai as u16, 0);
                    }
                }
                AltKind::Bin(..) => {}
            }
        }
        for k in i + 1..j {
            for (ai, alt) in self.cg.alts[s as usize].iter().enumerate() {
                if let AltKind::Bin(l, r) = alt {
                    let v = self.at(i, k, *l) + self.at(k, j, *r);
                    if v > best {
                        best = v;
                        pick = (ai as u16, k as u16);
                    }
                }
            }
        }
        if best > f64::NEG_INFINITY {
            best += self.own_add(s, cell);
        }
        self.val[cell * N_STATES + s as usize] = best;
        self.choice[cell * N_STATES + s as usize] = pick;
    }

    fn extract(&self, i: usize, j: usize, s: St, out: &mut SpanSet) -> Result<()> {
        let cell = self.cell(i, j);
        if let Some(l) = self.record_label(s, cell) {
            out.insert(Span::new(i, j), l)?;
        }
        let (ai, k) = self.choice[cell * N_STATES + s as usize];
        if ai == NO_CHOICE {
            return Err(Error::Internal(format!(
                "argmax walk reached a dead state {s:?} over {i},{j}"
            )));
        }
        match self.cg.alts[s as usize][ai as usize] {
            AltKind::Leaf => Ok(()),
            AltKind::Same(inner) => self.extract(i, j, inner, out),
            AltKind::Bin(l, r) => {
                self.extract(i, k as usize, l, out)?;
                self.extract(k as usize, j, r, out)
            }
        }
    }
}

/// Best structure under the table, with the exact argmax records. The
/// returned score always equals the recomputed sum over the records.
pub fn decode(cg: &ChartGrammar, table: &SpanScoreTable) -> Result<DecodeResult> {
    let n = table.n();
    if n == 0 {
        return Err(Error::Internal("decoding an empty sentence".into()));
    }
    if table.n_labels() != cg.labels.len() {
        return Err(Error::Internal(format!(
            "table has {} label columns, grammar has {}",
            table.n_labels(),
            cg.labels.len()
        )));
    }
    let cells = (n + 1) * (n + 1);
    let mut chart = Chart {
        cg,
        table,
        n,
        val: vec![f64::NEG_INFINITY; cells * N_STATES],
        choice: vec![(NO_CHOICE, 0); cells * N_STATES],
        best_cat: vec![(f64::NEG_INFINITY, 0); cells],
        best_pol: vec![(f64::NEG_INFINITY, 0); cells],
    };
    for i in 0..n {
        for j in i + 1..=n {
            let cell = chart.cell(i, j);
            for c in 0..cg.n_cats {
                let v = table.get(i, j, cg.labels.id(Label::ACat(c)));
                if v > chart.best_cat[cell].0 {
                    chart.best_cat[cell] = (v, c);
                }
            }
            for (pi, &p) in POLARITIES.iter().enumerate() {
                let v = table.get(i, j, cg.labels.id(Label::OPol(p)));
                if v > chart.best_pol[cell].0 {
                    chart.best_pol[cell] = (v, pi as u16);
                }
            }
        }
    }

    const ORDER: [St; N_STATES] = [
        St::Fill,
        St::BareA,
        St::BareO,
        St::AnyA,
        St::AnyO,
        St::FillA,
        St::FillO,
        St::FillBareA,
        St::FillBareO,
        St::BareAFill,
        St::BareOFill,
        St::MonoA,
        St::MonoO,
        St::ASuf,
        St::ASufEl,
        St::AOSuf,
        St::AOSufEl,
        St::OSuf,
        St::OSufEl,
        St::OASuf,
        St::OASufEl,
        St::Body,
        St::QNode,
        St::AnyGroup,
        St::SeqTail,
        St::SeqAfterFill,
        St::Root,
    ];
    for width in 1..=n {
        for i in 0..=n - width {
            let j = i + width;
            for s in ORDER {
                if s == St::Root && !(i == 0 && j == n) {
                    continue;
                }
                chart.fill_cell(i, j, s);
            }
        }
    }

    let score = chart.at(0, n, St::Root);
    let mut records = SpanSet::new(n);
    chart.extract(0, n, St::Root, &mut records)?;
    let check = table.score_records(&records);
    if !(score.is_finite() && (check - score).abs() <= 1e-6 * (1.0 + score.abs())) {
        return Err(Error::Internal(format!(
            "chart score {score} disagrees with its records' sum {check}"
        )));
    }
    Ok(DecodeResult { score, records })
}

/// Decode under the gold-aware table: every non-gold record carries a unit
/// penalty, so the result maximizes score plus one-sided Hamming distance.
pub fn loss_augmented_decode(
    cg: &ChartGrammar,
    table: &SpanScoreTable,
    gold: &SpanSet,
) -> Result<DecodeResult> {
    decode(cg, &table.loss_augmented(gold))
}
