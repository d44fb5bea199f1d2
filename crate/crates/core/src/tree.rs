//! Opinion tree structure, its bracketed text form, and the span/label
//! record view the chart works with.
//!
//! Trees come in two shapes. Built trees follow the grammar rules directly:
//! plain `A`/`O` run shells, `C`/`P` value chains, and explicit leaf spans
//! for terms and irrelevant stretches (`W` recursion is never materialized;
//! leaves span tokens directly, possibly zero of them). Pruned trees are the
//! compact canonical shape the decoder reasons about: composite `A:cat` and
//! `O:pol` nodes, filler leaves, no zero-width material, and each node
//! owning a distinct span.
//!
//! `tree_to_spans` flattens a pruned tree into its record set, folding the
//! handful of same-span unary pairs that stay reconstructible (sentence
//! over lone filler, sentence over a full-width quad group, composites over
//! their own term). `spans_to_tree` is its inverse on canonical trees.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grammar::{debinarize_rules, Grammar, Label, LabelId, LabelSet, Symbol};
use crate::quad::{CatId, Polarity, Span};

/// Node labels across both tree shapes. `C`/`P` carry their value; plain
/// `A`/`O` are the run shells of built trees; `ACat`/`OPol` are the pruned
/// composites; `Intermediate` only appears in binarized trees.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TreeLabel {
    S,
    Q,
    I,
    A,
    O,
    C(CatId),
    P(Polarity),
    At,
    Ot,
    ACat(CatId),
    OPol(Polarity),
    Intermediate(String),
}

impl TreeLabel {
    pub fn display(&self, grammar: &Grammar) -> String {
        match self {
            TreeLabel::S => "S".into(),
            TreeLabel::Q => "Q".into(),
            TreeLabel::I => "I".into(),
            TreeLabel::A => "A".into(),
            TreeLabel::O => "O".into(),
            TreeLabel::C(c) => format!("C:{}", grammar.category_name(*c)),
            TreeLabel::P(p) => format!("P:{}", p.as_str()),
            TreeLabel::At => "AT".into(),
            TreeLabel::Ot => "OT".into(),
            TreeLabel::ACat(c) => format!("A:{}", grammar.category_name(*c)),
            TreeLabel::OPol(p) => format!("O:{}", p.as_str()),
            TreeLabel::Intermediate(name) => name.clone(),
        }
    }

    pub fn parse(text: &str, grammar: &Grammar) -> Result<TreeLabel> {
        if let Some((kind, value)) = text.split_once(':') {
            return match kind {
                "A" | "C" => {
                    let cat = grammar
                        .category_id(value)
                        .ok_or_else(|| Error::Brackets(format!("unknown category '{value}'")))?;
                    Ok(if kind == "A" {
                        TreeLabel::ACat(cat)
                    } else {
                        TreeLabel::C(cat)
                    })
                }
                "O" | "P" => {
                    let pol = Polarity::parse(value)
                        .ok_or_else(|| Error::Brackets(format!("unknown polarity '{value}'")))?;
                    Ok(if kind == "O" {
                        TreeLabel::OPol(pol)
                    } else {
                        TreeLabel::P(pol)
                    })
                }
                _ => Err(Error::Brackets(format!("unknown label '{text}'"))),
            };
        }
        Ok(match text {
            "S" => TreeLabel::S,
            "Q" => TreeLabel::Q,
            "I" => TreeLabel::I,
            "A" => TreeLabel::A,
            "O" => TreeLabel::O,
            "AT" => TreeLabel::At,
            "OT" => TreeLabel::Ot,
            name if name.contains('|') => TreeLabel::Intermediate(name.to_string()),
            other => return Err(Error::Brackets(format!("unknown label '{other}'"))),
        })
    }

    /// Grammar symbol used for rule matching. Pruned-only labels have none.
    pub fn symbol(&self) -> Option<Symbol> {
        Some(match self {
            TreeLabel::S => Symbol::S,
            TreeLabel::Q => Symbol::Q,
            TreeLabel::I => Symbol::I,
            TreeLabel::A => Symbol::A,
            TreeLabel::O => Symbol::O,
            TreeLabel::C(_) => Symbol::C,
            TreeLabel::P(_) => Symbol::P,
            TreeLabel::At => Symbol::At,
            TreeLabel::Ot => Symbol::Ot,
            TreeLabel::ACat(_) | TreeLabel::OPol(_) | TreeLabel::Intermediate(_) => return None,
        })
    }

    /// Value-free tag used when naming binarization intermediates.
    fn tag(&self) -> String {
        match self {
            TreeLabel::ACat(_) => "A*".into(),
            TreeLabel::OPol(_) => "O*".into(),
            TreeLabel::C(_) => "C".into(),
            TreeLabel::P(_) => "P".into(),
            TreeLabel::Intermediate(name) => name.clone(),
            other => other
                .symbol()
                .map(|s| s.name().to_string())
                .unwrap_or_else(|| "?".into()),
        }
    }
}

/// A node over a contiguous token span. Leaves own their span directly
/// (width zero allowed in built trees); internal nodes span exactly the
/// concatenation of their children.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpinionTree {
    pub label: TreeLabel,
    pub span: Span,
    pub children: Vec<OpinionTree>,
}

impl OpinionTree {
    pub fn leaf(label: TreeLabel, span: Span) -> OpinionTree {
        OpinionTree {
            label,
            span,
            children: Vec::new(),
        }
    }

    /// Internal node; children must be contiguous left to right.
    pub fn node(label: TreeLabel, children: Vec<OpinionTree>) -> OpinionTree {
        assert!(!children.is_empty(), "internal node needs children");
        for pair in children.windows(2) {
            assert_eq!(
                pair[0].span.end, pair[1].span.start,
                "children must tile the parent span"
            );
        }
        let span = Span::new(
            children[0].span.start,
            children[children.len() - 1].span.end,
        );
        OpinionTree {
            label,
            span,
            children,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn preorder<'a>(&'a self, f: &mut impl FnMut(&'a OpinionTree)) {
        f(self);
        for child in &self.children {
            child.preorder(f);
        }
    }
}

// ---------------------------------------------------------------------------
// Bracketed text form
// ---------------------------------------------------------------------------

fn push_escaped(out: &mut String, token: &str) {
    for ch in token.chars() {
        if matches!(ch, '(' | ')' | '\\') || ch.is_whitespace() {
            out.push('\\');
        }
        out.push(ch);
    }
}

/// Render as `(LABEL ...)` with leaf tokens inline, one space between
/// items. Parens, backslashes, and whitespace inside tokens are
/// backslash-escaped. Zero-width leaves render as a bare `(LABEL)`.
pub fn tree_to_brackets(tree: &OpinionTree, tokens: &[String], grammar: &Grammar) -> String {
    fn render(node: &OpinionTree, tokens: &[String], grammar: &Grammar, out: &mut String) {
        out.push('(');
        out.push_str(&node.label.display(grammar));
        if node.is_leaf() {
            for tok in &tokens[node.span.start..node.span.end] {
                out.push(' ');
                push_escaped(out, tok);
            }
        } else {
            for child in &node.children {
                out.push(' ');
                render(child, tokens, grammar, out);
            }
        }
        out.push(')');
    }
    let mut out = String::new();
    render(tree, tokens, grammar, &mut out);
    out
}

enum BracketTok {
    Open,
    Close,
    Word(String),
}

fn lex_brackets(text: &str) -> Result<Vec<BracketTok>> {
    let mut toks = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(ch) = chars.next() {
        match ch {
            '(' => toks.push(BracketTok::Open),
            ')' => toks.push(BracketTok::Close),
            c if c.is_whitespace() => {}
            c => {
                let mut word = String::new();
                let mut pending = Some(c);
                while let Some(cur) = pending {
                    if cur == '\\' {
                        match chars.next() {
                            Some(esc) => word.push(esc),
                            None => return Err(Error::Brackets("dangling escape".into())),
                        }
                    } else {
                        word.push(cur);
                    }
                    pending = match chars.peek() {
                        Some(&next) if next != '(' && next != ')' && !next.is_whitespace() => {
                            chars.next()
                        }
                        _ => None,
                    };
                }
                toks.push(BracketTok::Word(word));
            }
        }
    }
    Ok(toks)
}

/// Parse the bracketed form, recovering both the tree and the token list
/// (leaves are assigned consecutive positions left to right).
pub fn tree_from_brackets(text: &str, grammar: &Grammar) -> Result<(OpinionTree, Vec<String>)> {
    fn parse_node(
        toks: &[BracketTok],
        idx: &mut usize,
        tokens: &mut Vec<String>,
        grammar: &Grammar,
    ) -> Result<OpinionTree> {
        match toks.get(*idx) {
            Some(BracketTok::Open) => *idx += 1,
            _ => return Err(Error::Brackets("expected '('".into())),
        }
        let label = match toks.get(*idx) {
            Some(BracketTok::Word(w)) => {
                *idx += 1;
                TreeLabel::parse(w, grammar)?
            }
            _ => return Err(Error::Brackets("expected a label after '('".into())),
        };
        let mut children = Vec::new();
        let mut words = Vec::new();
        loop {
            match toks.get(*idx) {
                Some(BracketTok::Close) => {
                    *idx += 1;
                    break;
                }
                Some(BracketTok::Open) => children.push(parse_node(toks, idx, tokens, grammar)?),
                Some(BracketTok::Word(w)) => {
                    words.push(w.clone());
                    *idx += 1;
                }
                None => return Err(Error::Brackets("unclosed '('".into())),
            }
        }
        if !children.is_empty() && !words.is_empty() {
            return Err(Error::Brackets(format!(
                "node {label:?} mixes tokens and subtrees"
            )));
        }
        if children.is_empty() {
            let start = tokens.len();
            tokens.extend(words);
            Ok(OpinionTree::leaf(label, Span::new(start, tokens.len())))
        } else {
            Ok(OpinionTree::node(label, children))
        }
    }

    let toks = lex_brackets(text)?;
    let mut idx = 0;
    let mut tokens = Vec::new();
    let tree = parse_node(&toks, &mut idx, &mut tokens, grammar)?;
    if idx != toks.len() {
        return Err(Error::Brackets("trailing content after the tree".into()));
    }
    Ok((tree, tokens))
}

// ---------------------------------------------------------------------------
// Tree binarization
// ---------------------------------------------------------------------------

/// Right-branching binarization mirroring the grammar's: nodes with more
/// than two children split off their first child and push the rest under a
/// named intermediate.
pub fn binarize_tree(tree: &OpinionTree) -> OpinionTree {
    fn inter_label(base: &TreeLabel, rest: &[OpinionTree]) -> TreeLabel {
        let mut name = format!("{}|", base.tag());
        for (k, child) in rest.iter().enumerate() {
            if k > 0 {
                name.push('.');
            }
            name.push_str(&child.label.tag());
        }
        TreeLabel::Intermediate(name)
    }
    fn fold(base: &TreeLabel, rest: &[OpinionTree]) -> OpinionTree {
        if rest.len() == 2 {
            OpinionTree::node(
                inter_label(base, rest),
                vec![rest[0].clone(), rest[1].clone()],
            )
        } else {
            let tail = fold(base, &rest[1..]);
            OpinionTree::node(inter_label(base, rest), vec![rest[0].clone(), tail])
        }
    }
    let children: Vec<OpinionTree> = tree.children.iter().map(binarize_tree).collect();
    if children.len() <= 2 {
        OpinionTree {
            label: tree.label.clone(),
            span: tree.span,
            children,
        }
    } else {
        let tail = fold(&tree.label, &children[1..]);
        OpinionTree {
            label: tree.label.clone(),
            span: tree.span,
            children: vec![children[0].clone(), tail],
        }
    }
}

/// Splice intermediate nodes back out; inverse of [`binarize_tree`].
pub fn collapse_tree(tree: &OpinionTree) -> OpinionTree {
    if tree.is_leaf() {
        return tree.clone();
    }
    let mut children = Vec::new();
    for child in &tree.children {
        let collapsed = collapse_tree(child);
        if matches!(collapsed.label, TreeLabel::Intermediate(_)) {
            children.extend(collapsed.children);
        } else {
            children.push(collapsed);
        }
    }
    OpinionTree {
        label: tree.label.clone(),
        span: tree.span,
        children,
    }
}

// ---------------------------------------------------------------------------
// Rule-derivability check for built trees
// ---------------------------------------------------------------------------

/// Whether a built tree is derivable from the grammar rules. Zero-width
/// irrelevant stretches may be spelled as explicit empty leaves or dropped
/// entirely, so each rule is matched up to omission of its `I` slots.
/// Binarized trees and grammars are collapsed first.
pub fn is_valid_tree(tree: &OpinionTree, grammar: &Grammar) -> bool {
    let tree = collapse_tree(tree);
    let mut variants: HashSet<(Symbol, Vec<Symbol>)> = HashSet::new();
    for rule in debinarize_rules(grammar) {
        if rule.lhs == Symbol::W
            || matches!(rule.rhs.as_slice(), [Symbol::W])
            || rule.rhs.is_empty()
        {
            // Leaf-level recursion; handled by the leaf width checks below.
            continue;
        }
        let i_slots: Vec<usize> = rule
            .rhs
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == Symbol::I)
            .map(|(i, _)| i)
            .collect();
        for mask in 0..(1u32 << i_slots.len()) {
            let rhs: Vec<Symbol> = rule
                .rhs
                .iter()
                .enumerate()
                .filter(|(i, _)| {
                    i_slots
                        .iter()
                        .position(|s| s == i)
                        .map_or(true, |k| mask & (1 << k) == 0)
                })
                .map(|(_, s)| s.clone())
                .collect();
            if !rhs.is_empty() {
                variants.insert((rule.lhs.clone(), rhs));
            }
        }
    }
    // A sentence with no quads at all: the quad slot vanished between the
    // two irrelevant stretches.
    variants.insert((Symbol::S, vec![Symbol::I]));

    fn check(node: &OpinionTree, variants: &HashSet<(Symbol, Vec<Symbol>)>, root: bool) -> bool {
        let Some(sym) = node.label.symbol() else {
            return false;
        };
        if root && sym != Symbol::S {
            return false;
        }
        if node.is_leaf() {
            return match sym {
                Symbol::I => true,
                Symbol::At | Symbol::Ot => node.span.width() >= 1,
                Symbol::Q => node.span.width() == 0,
                _ => false,
            };
        }
        let Some(kinds) = node
            .children
            .iter()
            .map(|c| c.label.symbol())
            .collect::<Option<Vec<_>>>()
        else {
            return false;
        };
        if !variants.contains(&(sym, kinds)) {
            return false;
        }
        node.children.iter().all(|c| check(c, variants, false))
    }
    check(&tree, &variants, true)
}

// ---------------------------------------------------------------------------
// Span records
// ---------------------------------------------------------------------------

/// The record set of a pruned tree: each span carries exactly one label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanSet {
    n: usize,
    recs: BTreeMap<Span, LabelId>,
}

impl SpanSet {
    pub fn new(n: usize) -> SpanSet {
        SpanSet {
            n,
            recs: BTreeMap::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.recs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recs.is_empty()
    }

    pub fn insert(&mut self, span: Span, label: LabelId) -> Result<()> {
        if span.width() == 0 || span.end > self.n {
            return Err(Error::Spans(format!(
                "span {span} out of bounds for sentence length {}",
                self.n
            )));
        }
        if self.recs.contains_key(&span) {
            return Err(Error::Spans(format!("two records over span {span}")));
        }
        self.recs.insert(span, label);
        Ok(())
    }

    pub fn get(&self, span: &Span) -> Option<LabelId> {
        self.recs.get(span).copied()
    }

    pub fn contains(&self, span: &Span, label: LabelId) -> bool {
        self.get(span) == Some(label)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Span, LabelId)> + '_ {
        self.recs.iter().map(|(s, l)| (*s, *l))
    }

    /// Count of records in `self` that `other` lacks; the structured error
    /// used to scale training margins. One-sided on purpose: extra gold
    /// structure missing from `self` is not charged here.
    pub fn hamming(&self, other: &SpanSet) -> usize {
        self.iter().filter(|(s, l)| !other.contains(s, *l)).count()
    }

    pub fn dump(&self, labels: &LabelSet, grammar: &Grammar) -> String {
        let mut out = String::new();
        for (span, id) in self.iter() {
            let _ = writeln!(out, "{span}\t{}", labels.display(id, grammar));
        }
        out
    }
}

/// Flatten a pruned tree into span records. Folded same-span pairs, each
/// reconstructible from context: sentence over a lone filler leaf, sentence
/// over a full-width quad group, and a composite over its own term leaf.
/// Any other same-span stack cannot fit a one-label-per-span chart and is
/// an error.
pub fn tree_to_spans(tree: &OpinionTree, labels: &LabelSet) -> Result<SpanSet> {
    fn walk(node: &OpinionTree, labels: &LabelSet, out: &mut SpanSet) -> Result<()> {
        if node.span.width() == 0 {
            return Err(Error::Spans(format!(
                "zero-width {:?} node survives pruning",
                node.label
            )));
        }
        let rec = match &node.label {
            TreeLabel::S => Label::S,
            TreeLabel::Q => Label::Q,
            TreeLabel::I => Label::Empty,
            TreeLabel::ACat(c) => Label::ACat(*c),
            TreeLabel::OPol(p) => Label::OPol(*p),
            TreeLabel::At | TreeLabel::Ot => {
                return Err(Error::Spans(format!(
                    "term leaf over {} sits outside its composite",
                    node.span
                )))
            }
            other => return Err(Error::Spans(format!("label {other:?} has no chart form"))),
        };
        out.insert(node.span, labels.id(rec))?;
        if let [child] = node.children.as_slice() {
            if child.span == node.span {
                return match (&node.label, &child.label) {
                    (TreeLabel::S, TreeLabel::I) if child.is_leaf() => Ok(()),
                    (TreeLabel::S, TreeLabel::Q) => {
                        for gc in &child.children {
                            walk(gc, labels, out)?;
                        }
                        Ok(())
                    }
                    (TreeLabel::ACat(_), TreeLabel::At) if child.is_leaf() => Ok(()),
                    (TreeLabel::OPol(_), TreeLabel::Ot) if child.is_leaf() => Ok(()),
                    _ => Err(Error::Spans(format!(
                        "no chart slack: {:?} and {:?} both need span {}",
                        node.label, child.label, node.span
                    ))),
                };
            }
        }
        for child in &node.children {
            walk(child, labels, out)?;
        }
        Ok(())
    }

    if tree.label != TreeLabel::S || tree.span.start != 0 {
        return Err(Error::Spans(
            "root must be a sentence node starting at 0".into(),
        ));
    }
    let mut out = SpanSet::new(tree.span.end);
    walk(tree, labels, &mut out)?;
    Ok(out)
}

/// Rebuild the canonical pruned tree from its records. Inverse of
/// [`tree_to_spans`] on canonical trees: implied term leaves, the implied
/// full-width quad group, and the implied lone filler are reinserted.
pub fn spans_to_tree(spans: &SpanSet, labels: &LabelSet) -> Result<OpinionTree> {
    struct Raw {
        span: Span,
        label: Label,
        children: Vec<usize>,
    }

    let n = spans.n();
    if n == 0 {
        return Err(Error::Spans("empty sentence".into()));
    }
    let mut recs: Vec<(Span, LabelId)> = spans.iter().collect();
    recs.sort_by_key(|(s, _)| (s.start, std::cmp::Reverse(s.end)));
    match recs.first() {
        Some(&(span, id)) if span == Span::new(0, n) && labels.label(id) == Label::S => {}
        _ => {
            return Err(Error::Spans(
                "record set lacks a full-span sentence root".into(),
            ))
        }
    }

    let mut nodes: Vec<Raw> = Vec::with_capacity(recs.len());
    let mut stack: Vec<usize> = Vec::new();
    for (span, id) in recs {
        while let Some(&top) = stack.last() {
            if nodes[top].span.end <= span.start {
                stack.pop();
            } else {
                break;
            }
        }
        let idx = nodes.len();
        if let Some(&top) = stack.last() {
            if span.end > nodes[top].span.end {
                return Err(Error::Spans(format!(
                    "record {span} partially overlaps {}",
                    nodes[top].span
                )));
            }
            nodes[top].children.push(idx);
        } else if idx != 0 {
            return Err(Error::Spans(format!(
                "record {span} outside the sentence root"
            )));
        }
        nodes.push(Raw {
            span,
            label: labels.label(id),
            children: Vec::new(),
        });
        stack.push(idx);
    }

    fn tiles(span: Span, children: &[OpinionTree]) -> bool {
        !children.is_empty()
            && children[0].span.start == span.start
            && children[children.len() - 1].span.end == span.end
            && children
                .windows(2)
                .all(|p| p[0].span.end == p[1].span.start)
    }

    /// A composite directly under the root that is not an implicit-side
    /// shell must be a quad-body element, meaning the sentence is one
    /// full-width group whose Q record was folded away.
    fn is_body_element(nodes: &[Raw], idx: usize) -> bool {
        let raw = &nodes[idx];
        let a_side = match raw.label {
            Label::ACat(_) => true,
            Label::OPol(_) => false,
            _ => return false,
        };
        if raw.children.is_empty() {
            return true;
        }
        raw.children.iter().any(|&c| match nodes[c].label {
            Label::ACat(_) => a_side,
            Label::OPol(_) => !a_side,
            _ => false,
        })
    }

    fn build(nodes: &[Raw], idx: usize) -> Result<OpinionTree> {
        let raw = &nodes[idx];
        let children: Vec<OpinionTree> = raw
            .children
            .iter()
            .map(|&c| build(nodes, c))
            .collect::<Result<_>>()?;
        match raw.label {
            Label::Empty => {
                if !children.is_empty() {
                    return Err(Error::Spans(format!(
                        "records nested inside filler {}",
                        raw.span
                    )));
                }
                Ok(OpinionTree::leaf(TreeLabel::I, raw.span))
            }
            Label::At | Label::Ot => {
                Err(Error::Spans(format!("bare term record over {}", raw.span)))
            }
            Label::ACat(c) => {
                if children.is_empty() {
                    Ok(OpinionTree::node(
                        TreeLabel::ACat(c),
                        vec![OpinionTree::leaf(TreeLabel::At, raw.span)],
                    ))
                } else if tiles(raw.span, &children) {
                    Ok(OpinionTree {
                        label: TreeLabel::ACat(c),
                        span: raw.span,
                        children,
                    })
                } else {
                    Err(Error::Spans(format!("composite {} has gaps", raw.span)))
                }
            }
            Label::OPol(p) => {
                if children.is_empty() {
                    Ok(OpinionTree::node(
                        TreeLabel::OPol(p),
                        vec![OpinionTree::leaf(TreeLabel::Ot, raw.span)],
                    ))
                } else if tiles(raw.span, &children) {
                    Ok(OpinionTree {
                        label: TreeLabel::OPol(p),
                        span: raw.span,
                        children,
                    })
                } else {
                    Err(Error::Spans(format!("composite {} has gaps", raw.span)))
                }
            }
            Label::Q => {
                if !tiles(raw.span, &children) {
                    return Err(Error::Spans(format!("quad group {} has gaps", raw.span)));
                }
                Ok(OpinionTree {
                    label: TreeLabel::Q,
                    span: raw.span,
                    children,
                })
            }
            Label::S => {
                if idx != 0 {
                    return Err(Error::Spans(format!(
                        "sentence label below the root at {}",
                        raw.span
                    )));
                }
                if children.is_empty() {
                    return Ok(OpinionTree::node(
                        TreeLabel::S,
                        vec![OpinionTree::leaf(TreeLabel::I, raw.span)],
                    ));
                }
                if !tiles(raw.span, &children) {
                    return Err(Error::Spans("sentence level has gaps".into()));
                }
                if raw.children.iter().any(|&c| is_body_element(nodes, c)) {
                    let q = OpinionTree {
                        label: TreeLabel::Q,
                        span: raw.span,
                        children,
                    };
                    Ok(OpinionTree::node(TreeLabel::S, vec![q]))
                } else {
                    Ok(OpinionTree {
                        label: TreeLabel::S,
                        span: raw.span,
                        children,
                    })
                }
            }
        }
    }

    build(&nodes, 0)
}

#[cfg(test)]
mod test {
    use super::*;
    use crate::grammar::{build_grammar, GrammarConfig};
    use crate::quad::POLARITIES;

    fn grammar() -> Grammar {
        build_grammar(&GrammarConfig::all_families(vec![
            "RESTAURANT#GENERAL".into()
        ]))
        .unwrap()
    }

    fn pos() -> Polarity {
        POLARITIES[2]
    }

    fn leaf(label: TreeLabel, a: usize, b: usize) -> OpinionTree {
        OpinionTree::leaf(label, Span::new(a, b))
    }

    /// Pruned tree for "So happy to have a great bar": two opinions share
    /// the aspect, so the group is a flat run under one Q.
    fn golden_tree() -> OpinionTree {
        OpinionTree::node(
            TreeLabel::S,
            vec![
                leaf(TreeLabel::I, 0, 1),
                OpinionTree::node(
                    TreeLabel::Q,
                    vec![
                        OpinionTree::node(TreeLabel::OPol(pos()), vec![leaf(TreeLabel::Ot, 1, 2)]),
                        leaf(TreeLabel::I, 2, 5),
                        OpinionTree::node(TreeLabel::OPol(pos()), vec![leaf(TreeLabel::Ot, 5, 6)]),
                        OpinionTree::node(TreeLabel::ACat(0), vec![leaf(TreeLabel::At, 6, 7)]),
                    ],
                ),
            ],
        )
    }

    fn golden_tokens() -> Vec<String> {
        "So happy to have a great bar"
            .split(' ')
            .map(String::from)
            .collect()
    }

    #[test]
    fn brackets_render_and_parse() {
        let g = grammar();
        let tree = golden_tree();
        let text = tree_to_brackets(&tree, &golden_tokens(), &g);
        assert_eq!(
            text,
            "(S (I So) (Q (O:positive (OT happy)) (I to have a) \
             (O:positive (OT great)) (A:RESTAURANT#GENERAL (AT bar))))"
        );
        let (parsed, tokens) = tree_from_brackets(&text, &g).unwrap();
        assert_eq!(parsed, tree);
        assert_eq!(tokens, golden_tokens());
    }

    #[test]
    fn brackets_escape_special_tokens() {
        let g = grammar();
        let tokens: Vec<String> = vec![":)".into(), "a(b)".into(), "back\\slash".into()];
        let tree = OpinionTree::node(TreeLabel::S, vec![leaf(TreeLabel::I, 0, 3)]);
        let text = tree_to_brackets(&tree, &tokens, &g);
        let (parsed, toks) = tree_from_brackets(&text, &g).unwrap();
        assert_eq!(parsed, tree);
        assert_eq!(toks, tokens);
    }

    #[test]
    fn binarize_then_collapse_is_identity() {
        let tree = golden_tree();
        let bin = binarize_tree(&tree);
        let widest = {
            let mut w = 0;
            bin.preorder(&mut |n| w = w.max(n.children.len()));
            w
        };
        assert!(widest <= 2);
        assert_eq!(collapse_tree(&bin), tree);
    }

    #[test]
    fn validity_follows_the_rules() {
        let g = grammar();
        // Built form of the golden sentence, with explicit empty stretches.
        let built = OpinionTree::node(
            TreeLabel::S,
            vec![
                leaf(TreeLabel::I, 0, 1),
                OpinionTree::node(
                    TreeLabel::Q,
                    vec![
                        OpinionTree::node(
                            TreeLabel::O,
                            vec![
                                OpinionTree::node(
                                    TreeLabel::O,
                                    vec![OpinionTree::node(
                                        TreeLabel::P(pos()),
                                        vec![leaf(TreeLabel::Ot, 1, 2)],
                                    )],
                                ),
                                leaf(TreeLabel::I, 2, 5),
                                OpinionTree::node(
                                    TreeLabel::O,
                                    vec![OpinionTree::node(
                                        TreeLabel::P(pos()),
                                        vec![leaf(TreeLabel::Ot, 5, 6)],
                                    )],
                                ),
                            ],
                        ),
                        leaf(TreeLabel::I, 6, 6),
                        OpinionTree::node(
                            TreeLabel::A,
                            vec![OpinionTree::node(
                                TreeLabel::C(0),
                                vec![leaf(TreeLabel::At, 6, 7)],
                            )],
                        ),
                    ],
                ),
                leaf(TreeLabel::I, 7, 7),
            ],
        );
        assert!(is_valid_tree(&built, &g));
        assert!(is_valid_tree(&binarize_tree(&built), &g));

        // An aspect shell directly over a term skips the value chain.
        let broken = OpinionTree::node(
            TreeLabel::S,
            vec![
                leaf(TreeLabel::I, 0, 1),
                OpinionTree::node(
                    TreeLabel::Q,
                    vec![
                        OpinionTree::node(TreeLabel::A, vec![leaf(TreeLabel::At, 1, 2)]),
                        leaf(TreeLabel::I, 2, 3),
                        OpinionTree::node(
                            TreeLabel::O,
                            vec![OpinionTree::node(
                                TreeLabel::P(pos()),
                                vec![leaf(TreeLabel::Ot, 3, 4)],
                            )],
                        ),
                    ],
                ),
            ],
        );
        assert!(!is_valid_tree(&broken, &g));

        // Pruned composites are not rule material.
        assert!(!is_valid_tree(&golden_tree(), &g));
    }

    #[test]
    fn golden_records() {
        let g = grammar();
        let labels = g.label_set();
        let spans = tree_to_spans(&golden_tree(), &labels).unwrap();
        let want: Vec<(Span, Label)> = vec![
            (Span::new(0, 7), Label::S),
            (Span::new(0, 1), Label::Empty),
            (Span::new(1, 7), Label::Q),
            (Span::new(1, 2), Label::OPol(pos())),
            (Span::new(2, 5), Label::Empty),
            (Span::new(5, 6), Label::OPol(pos())),
            (Span::new(6, 7), Label::ACat(0)),
        ];
        assert_eq!(spans.len(), want.len());
        for (span, label) in want {
            assert_eq!(spans.get(&span), Some(labels.id(label)), "span {span}");
        }
        assert_eq!(spans_to_tree(&spans, &labels).unwrap(), golden_tree());
    }

    #[test]
    fn spans_fold_reconstructible_pairs() {
        let g = grammar();
        let labels = g.label_set();

        // Sentence with no quads: one record, filler reappears on the way
        // back.
        let quiet = OpinionTree::node(TreeLabel::S, vec![leaf(TreeLabel::I, 0, 3)]);
        let spans = tree_to_spans(&quiet, &labels).unwrap();
        assert_eq!(spans.len(), 1);
        assert_eq!(spans_to_tree(&spans, &labels).unwrap(), quiet);

        // One quad covering the sentence: the group record folds into the
        // root and is reinserted on reconstruction.
        let full = OpinionTree::node(
            TreeLabel::S,
            vec![OpinionTree::node(
                TreeLabel::Q,
                vec![
                    OpinionTree::node(TreeLabel::ACat(0), vec![leaf(TreeLabel::At, 0, 1)]),
                    leaf(TreeLabel::I, 1, 2),
                    OpinionTree::node(TreeLabel::OPol(pos()), vec![leaf(TreeLabel::Ot, 2, 3)]),
                ],
            )],
        );
        let spans = tree_to_spans(&full, &labels).unwrap();
        assert_eq!(spans.len(), 4);
        assert_eq!(spans.get(&Span::new(0, 3)), Some(labels.id(Label::S)));
        assert!(spans.get(&Span::new(0, 3)) != Some(labels.id(Label::Q)));
        assert_eq!(spans_to_tree(&spans, &labels).unwrap(), full);
    }

    #[test]
    fn hamming_counts_one_sided_differences() {
        let g = grammar();
        let labels = g.label_set();
        let a = tree_to_spans(&golden_tree(), &labels).unwrap();
        let mut b = SpanSet::new(7);
        b.insert(Span::new(0, 7), labels.id(Label::S)).unwrap();
        assert_eq!(a.hamming(&b), 6);
        assert_eq!(b.hamming(&a), 0);
    }

    #[test]
    fn stacked_same_span_labels_are_rejected() {
        let g = grammar();
        let labels = g.label_set();
        // A single-token implicit-aspect quad: the shell, its partner, and
        // the sentence all want the same span.
        let stacked = OpinionTree::node(
            TreeLabel::S,
            vec![OpinionTree::node(
                TreeLabel::ACat(0),
                vec![OpinionTree::node(
                    TreeLabel::OPol(pos()),
                    vec![leaf(TreeLabel::Ot, 0, 1)],
                )],
            )],
        );
        let err = tree_to_spans(&stacked, &labels).unwrap_err();
        assert!(err.to_string().contains("no chart slack"), "{err}");
    }
}
