//! From labeled span records back to sentiment quadruples.
//!
//! Recovery totals over everything the decoder can emit, not only record
//! sets that came from gold quads. Each quad group pairs its aspect items
//! with its opinion items as a full cross product. A nested shell
//! contributes one quad per nesting level, pairing that level's value with
//! the partner directly inside it, always anchored on the shell's
//! innermost core term; the core itself then joins the surrounding run and
//! pairs with partners outside the shell. An implicit-side shell at
//! sentence level yields a single quad whose shell side has no term.
//!
//! Under a fake prefix, an aspect term at exactly the first position or an
//! opinion term at exactly the second stands for an implicit side; any
//! other term touching the prefix is malformed. Surviving spans shift back
//! onto the original tokens.

use crate::error::{Error, Result};
use crate::grammar::LabelSet;
use crate::quad::{sort_quads, CatId, Polarity, SentimentQuadruple, Span};
use crate::tree::{spans_to_tree, OpinionTree, SpanSet, TreeLabel};

/// Which side a composite sits on, together with its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Value {
    Aspect(CatId),
    Opinion(Polarity),
}

impl Value {
    fn of(label: &TreeLabel) -> Option<Value> {
        match *label {
            TreeLabel::ACat(c) => Some(Value::Aspect(c)),
            TreeLabel::OPol(p) => Some(Value::Opinion(p)),
            _ => None,
        }
    }

    fn is_aspect(self) -> bool {
        matches!(self, Value::Aspect(_))
    }
}

fn pair(aspect: (Span, CatId), opinion: (Span, Polarity)) -> SentimentQuadruple {
    SentimentQuadruple {
        aspect: Some(aspect.0),
        category: aspect.1,
        opinion: Some(opinion.0),
        polarity: opinion.1,
    }
}

/// A composite whose only child is its own term leaf.
fn is_bare(node: &OpinionTree) -> bool {
    node.children.len() == 1 && matches!(node.children[0].label, TreeLabel::At | TreeLabel::Ot)
}

/// Splits a shell's children into the opposite-side partner and the
/// same-side inner composite, ignoring fillers.
fn shell_parts<'t>(
    node: &'t OpinionTree,
    side: Value,
) -> Result<(&'t OpinionTree, Option<&'t OpinionTree>)> {
    let mut partner: Option<&OpinionTree> = None;
    let mut inner: Option<&OpinionTree> = None;
    for ch in &node.children {
        let slot = match Value::of(&ch.label) {
            Some(v) if v.is_aspect() == side.is_aspect() => &mut inner,
            Some(_) => &mut partner,
            None if ch.label == TreeLabel::I => continue,
            None => {
                return Err(Error::Recovery(format!(
                    "unexpected {:?} inside a shell over {}",
                    ch.label, node.span
                )))
            }
        };
        if slot.replace(ch).is_some() {
            return Err(Error::Recovery(format!(
                "shell over {} holds more than one composite per side",
                node.span
            )));
        }
    }
    match partner {
        Some(p) => Ok((p, inner)),
        None => Err(Error::Recovery(format!(
            "composite over {} holds no partner",
            node.span
        ))),
    }
}

/// Resolves a quad-group element down to the term that stands for it in
/// the group's cross product, emitting the internal quads of any shell
/// levels passed on the way. Every internal quad anchors on the core.
fn element_core(el: &OpinionTree, out: &mut Vec<SentimentQuadruple>) -> Result<(Span, Value)> {
    let mut levels: Vec<(Value, Span, Value)> = Vec::new();
    let mut node = el;
    let core = loop {
        let side = Value::of(&node.label)
            .ok_or_else(|| Error::Recovery(format!("{:?} is not a composite", node.label)))?;
        if is_bare(node) {
            break (node.span, side);
        }
        let (partner, inner) = shell_parts(node, side)?;
        let inner = inner.ok_or_else(|| {
            Error::Recovery(format!(
                "implicit-side shell over {} inside a quad group",
                node.span
            ))
        })?;
        let pval = Value::of(&partner.label).unwrap();
        if !is_bare(partner) {
            return Err(Error::Recovery(format!(
                "shell partner over {} is not a bare term",
                partner.span
            )));
        }
        levels.push((side, partner.span, pval));
        node = inner;
    };
    for (side, pspan, pval) in levels {
        let quad = match (side, pval) {
            (Value::Aspect(c), Value::Opinion(p)) => pair((core.0, c), (pspan, p)),
            (Value::Opinion(p), Value::Aspect(c)) => pair((pspan, c), (core.0, p)),
            _ => unreachable!("partner side always opposes the shell side"),
        };
        out.push(quad);
    }
    Ok(core)
}

/// One quad group: resolve every element to its core term, then take the
/// cross product of the aspect cores against the opinion cores.
fn group_quads(group: &OpinionTree, out: &mut Vec<SentimentQuadruple>) -> Result<()> {
    let mut aspects: Vec<(Span, CatId)> = Vec::new();
    let mut opinions: Vec<(Span, Polarity)> = Vec::new();
    for el in &group.children {
        if el.label == TreeLabel::I {
            continue;
        }
        match element_core(el, out)? {
            (span, Value::Aspect(c)) => aspects.push((span, c)),
            (span, Value::Opinion(p)) => opinions.push((span, p)),
        }
    }
    if aspects.is_empty() || opinions.is_empty() {
        return Err(Error::Recovery(format!(
            "quad group {} covers only one side",
            group.span
        )));
    }
    for &a in &aspects {
        for &o in &opinions {
            out.push(pair(a, o));
        }
    }
    Ok(())
}

/// An implicit-side shell at sentence level: the shell's own side has no
/// term, the partner inside it supplies the other side.
fn implicit_side_quad(node: &OpinionTree) -> Result<SentimentQuadruple> {
    let side = Value::of(&node.label).unwrap();
    let (partner, inner) = shell_parts(node, side)?;
    if inner.is_some() {
        return Err(Error::Recovery(format!(
            "shell over {} mixes sides at sentence level",
            node.span
        )));
    }
    if !is_bare(partner) {
        return Err(Error::Recovery(format!(
            "shell partner over {} is not a bare term",
            partner.span
        )));
    }
    let quad = match (side, Value::of(&partner.label).unwrap()) {
        (Value::Aspect(c), Value::Opinion(p)) => SentimentQuadruple {
            aspect: None,
            category: c,
            opinion: Some(partner.span),
            polarity: p,
        },
        (Value::Opinion(p), Value::Aspect(c)) => SentimentQuadruple {
            aspect: Some(partner.span),
            category: c,
            opinion: None,
            polarity: p,
        },
        _ => unreachable!("partner side always opposes the shell side"),
    };
    Ok(quad)
}

/// Shifts terms back off the fake prefix. Exact hits on the two fake
/// positions become implicit sides; anything else touching the prefix
/// cannot come from a well-formed parse of the prefixed sentence.
fn strip_fake_prefix(quads: &mut Vec<SentimentQuadruple>) -> Result<()> {
    for q in quads {
        for (name, slot, fake) in [
            ("aspect", &mut q.aspect, Span::new(0, 1)),
            ("opinion", &mut q.opinion, Span::new(1, 2)),
        ] {
            *slot = match *slot {
                Some(s) if s == fake => None,
                Some(s) if s.start >= 2 => Some(Span::new(s.start - 2, s.end - 2)),
                Some(s) => {
                    return Err(Error::Recovery(format!(
                        "{name} term {s} overlaps the fake prefix"
                    )))
                }
                None => None,
            };
        }
    }
    Ok(())
}

/// Reads the quadruples encoded by a pruned tree. `fake_prefix` must match
/// the sentence the tree spans; spans in the result are in original token
/// coordinates. The result is sorted and deduplicated.
pub fn recover_quads_from_tree(
    tree: &OpinionTree,
    fake_prefix: bool,
) -> Result<Vec<SentimentQuadruple>> {
    if tree.label != TreeLabel::S {
        return Err(Error::Recovery(format!(
            "root is {:?}, not a sentence",
            tree.label
        )));
    }
    let mut out = Vec::new();
    for child in &tree.children {
        match child.label {
            TreeLabel::I => {}
            TreeLabel::Q => group_quads(child, &mut out)?,
            TreeLabel::ACat(_) | TreeLabel::OPol(_) => out.push(implicit_side_quad(child)?),
            ref other => {
                return Err(Error::Recovery(format!(
                    "unexpected {other:?} at sentence level"
                )))
            }
        }
    }
    if fake_prefix {
        strip_fake_prefix(&mut out)?;
    }
    sort_quads(&mut out);
    out.dedup();
    Ok(out)
}

/// Reads the quadruples encoded by a record set, by way of its tree.
pub fn recover_quads(
    spans: &SpanSet,
    labels: &LabelSet,
    fake_prefix: bool,
) -> Result<Vec<SentimentQuadruple>> {
    recover_quads_from_tree(&spans_to_tree(spans, labels)?, fake_prefix)
}

#[cfg(test)]
mod test {
    use super::*;
    use crate::builder::{build_tree, prune_tree, Sentence};
    use crate::grammar::{build_grammar, Grammar, GrammarConfig, Label};
    use crate::quad::POLARITIES;
    use crate::tree::tree_to_spans;

    fn grammar(cats: &[&str]) -> Grammar {
        let cats = cats.iter().map(|c| c.to_string()).collect();
        build_grammar(&GrammarConfig::all_families(cats)).unwrap()
    }

    fn record_set(g: &Grammar, n: usize, recs: &[(usize, usize, Label)]) -> SpanSet {
        let mut spans = SpanSet::new(n);
        for &(a, b, ref label) in recs {
            spans
                .insert(Span::new(a, b), g.label_set().id(*label))
                .unwrap();
        }
        spans
    }

    fn quad(
        aspect: Option<(usize, usize)>,
        category: CatId,
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
    fn product_group_with_leading_filler() {
        let g = grammar(&["RESTAURANT#GENERAL"]);
        let pos = POLARITIES[2];
        let spans = record_set(
            &g,
            7,
            &[
                (0, 7, Label::S),
                (0, 1, Label::Empty),
                (1, 7, Label::Q),
                (1, 2, Label::OPol(pos)),
                (2, 5, Label::Empty),
                (5, 6, Label::OPol(pos)),
                (6, 7, Label::ACat(0)),
            ],
        );
        let got = recover_quads(&spans, &g.label_set(), false).unwrap();
        let want = vec![
            quad(Some((6, 7)), 0, Some((1, 2)), pos),
            quad(Some((6, 7)), 0, Some((5, 6)), pos),
        ];
        assert_eq!(got, want);
    }

    #[test]
    fn shell_pairs_inward_and_core_pairs_outward() {
        let g = grammar(&["LAPTOP#GENERAL", "LAPTOP#DESIGN"]);
        let (neg, pos) = (POLARITIES[0], POLARITIES[2]);
        // Great but expensive laptop: the hub term serves both partners.
        let spans = record_set(
            &g,
            4,
            &[
                (0, 4, Label::S),
                (0, 1, Label::OPol(pos)),
                (1, 2, Label::Empty),
                (2, 4, Label::ACat(1)),
                (2, 3, Label::OPol(neg)),
                (3, 4, Label::ACat(0)),
            ],
        );
        let got = recover_quads(&spans, &g.label_set(), false).unwrap();
        let want = vec![
            quad(Some((3, 4)), 0, Some((0, 1)), pos),
            quad(Some((3, 4)), 1, Some((2, 3)), neg),
        ];
        assert_eq!(got, want);
    }

    #[test]
    fn sentence_level_shell_has_an_implicit_side() {
        let g = grammar(&["LAPTOP#GENERAL"]);
        let pos = POLARITIES[2];
        let spans = record_set(
            &g,
            4,
            &[
                (0, 4, Label::S),
                (0, 1, Label::Empty),
                (1, 4, Label::ACat(0)),
                (1, 2, Label::OPol(pos)),
                (2, 4, Label::Empty),
            ],
        );
        let got = recover_quads(&spans, &g.label_set(), false).unwrap();
        assert_eq!(got, vec![quad(None, 0, Some((1, 2)), pos)]);
    }

    #[test]
    fn fake_prefix_terms_become_implicit_sides() {
        let g = grammar(&["LAPTOP#GENERAL"]);
        let pos = POLARITIES[2];
        let recs = [
            (0, 5, Label::S),
            (0, 2, Label::Q),
            (0, 1, Label::ACat(0)),
            (1, 2, Label::OPol(pos)),
            (2, 5, Label::Empty),
        ];
        let spans = record_set(&g, 5, &recs);
        let got = recover_quads(&spans, &g.label_set(), true).unwrap();
        assert_eq!(got, vec![quad(None, 0, None, pos)]);

        let raw = recover_quads(&spans, &g.label_set(), false).unwrap();
        assert_eq!(raw, vec![quad(Some((0, 1)), 0, Some((1, 2)), pos)]);
    }

    #[test]
    fn real_terms_overlapping_the_prefix_are_malformed() {
        let g = grammar(&["LAPTOP#GENERAL"]);
        let pos = POLARITIES[2];
        let spans = record_set(
            &g,
            5,
            &[
                (0, 5, Label::S),
                (0, 3, Label::Q),
                (0, 2, Label::ACat(0)),
                (2, 3, Label::OPol(pos)),
                (3, 5, Label::Empty),
            ],
        );
        let err = recover_quads(&spans, &g.label_set(), true).unwrap_err();
        assert!(err.to_string().contains("fake prefix"), "{err}");
    }

    #[test]
    fn sentence_without_quads_recovers_empty() {
        let g = grammar(&["LAPTOP#GENERAL"]);
        let spans = record_set(&g, 3, &[(0, 3, Label::S)]);
        assert_eq!(
            recover_quads(&spans, &g.label_set(), false).unwrap(),
            vec![]
        );
    }

    #[test]
    fn one_sided_group_is_rejected() {
        let g = grammar(&["LAPTOP#GENERAL"]);
        let spans = record_set(
            &g,
            3,
            &[
                (0, 3, Label::S),
                (0, 1, Label::ACat(0)),
                (1, 2, Label::Empty),
                (2, 3, Label::ACat(0)),
            ],
        );
        let err = recover_quads(&spans, &g.label_set(), false).unwrap_err();
        assert!(err.to_string().contains("only one side"), "{err}");
    }

    /// Everything the decoder can emit must map to quads without error.
    #[test]
    fn every_enumerated_set_recovers() {
        let g = grammar(&["A#A", "B#B"]);
        let labels = g.label_set();
        for n in 1..=4 {
            for recs in crate::bruteforce::enumerate_record_sets(&g, n) {
                let mut spans = SpanSet::new(n);
                for (span, id) in recs {
                    spans.insert(span, id).unwrap();
                }
                recover_quads(&spans, &labels, false)
                    .unwrap_or_else(|e| panic!("n={n} {}: {e}", spans.dump(&labels, &g)));
            }
        }
    }

    /// Build, prune, record, recover: the original quads come back for
    /// every situation the builder accepts.
    #[test]
    fn round_trip_from_gold_quads() {
        let g = grammar(&["A#A", "B#B", "C#C"]);
        let (neg, neu, pos) = (POLARITIES[0], POLARITIES[1], POLARITIES[2]);
        let cases: Vec<(&str, Vec<SentimentQuadruple>)> = vec![
            (
                "the pasta was great and cheap",
                vec![
                    quad(Some((1, 2)), 0, Some((3, 4)), pos),
                    quad(Some((1, 2)), 1, Some((5, 6)), pos),
                ],
            ),
            (
                "screen and keyboard feel solid",
                vec![
                    quad(Some((0, 1)), 0, Some((4, 5)), neu),
                    quad(Some((2, 3)), 1, Some((4, 5)), neu),
                ],
            ),
            (
                "great but expensive laptop",
                vec![
                    quad(Some((3, 4)), 0, Some((0, 1)), pos),
                    quad(Some((3, 4)), 1, Some((2, 3)), neg),
                ],
            ),
            ("but tasty !", vec![quad(None, 2, Some((1, 2)), pos)]),
            ("would buy again", vec![quad(None, 0, None, pos)]),
            (
                "service slow , food cold",
                vec![
                    quad(Some((0, 1)), 0, Some((1, 2)), neg),
                    quad(Some((3, 4)), 1, Some((4, 5)), neg),
                ],
            ),
        ];
        for (text, mut quads) in cases {
            let sent = Sentence::from_text(text);
            let built = build_tree(&sent, &quads).unwrap();
            let pruned = prune_tree(&built.tree).unwrap();
            let spans = tree_to_spans(&pruned, &g.label_set()).unwrap();
            let got = recover_quads(&spans, &g.label_set(), built.sentence.fake_prefix).unwrap();
            sort_quads(&mut quads);
            assert_eq!(got, quads, "round trip failed for: {text}");
            let direct = recover_quads_from_tree(&pruned, built.sentence.fake_prefix).unwrap();
            assert_eq!(direct, quads, "tree-direct recovery failed for: {text}");
        }
    }
}
