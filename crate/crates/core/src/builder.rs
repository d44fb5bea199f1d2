//! From gold quadruples to trees: feasibility checks, fake-token
//! augmentation, rule-form tree assembly, and pruning down to the canonical
//! chart shape.
//!
//! Not every quad set fits the rule system. Quads connected by shared terms
//! form groups; a group must be either a full cross product of its aspect
//! and opinion terms (rendered as two adjacent runs) or a single hub term
//! whose per-quad values chain (rendered as nested shells). Groups must
//! occupy disjoint stretches of the sentence, sharing never involves
//! implicit sides, and a hub's partners stay on one side of it. Everything
//! else is rejected with a reason.
//!
//! Pruning is staged: value chains fold into composite nodes, zero-width
//! material disappears, run and chain wrappers splice away, and then two
//! normalization passes reshape what is left for the one-label-per-span
//! chart: value stacks become nested shells that capture their partners,
//! and implicit-side shells absorb an adjacent slice of filler so that
//! every node owns a distinct span.

use std::fmt;

use crate::error::{Error, Result};
use crate::grammar::{FAKE_ASPECT_TOKEN, FAKE_OPINION_TOKEN};
use crate::quad::{sort_quads, CatId, Polarity, SentimentQuadruple, Span};
use crate::tree::{OpinionTree, TreeLabel};

/// A tokenized sentence. `fake_prefix` marks that positions 0 and 1 hold
/// the fake aspect/opinion tokens rather than real text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub fake_prefix: bool,
}

impl Sentence {
    pub fn new(tokens: Vec<String>) -> Sentence {
        Sentence {
            tokens,
            fake_prefix: false,
        }
    }

    pub fn from_text(text: &str) -> Sentence {
        Sentence::new(text.split_whitespace().map(String::from).collect())
    }

    pub fn n(&self) -> usize {
        self.tokens.len()
    }
}

/// The single structural phenomenon a sentence is filed under, highest
/// priority first when several apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SituationTag {
    Basic = 0,
    OneToMany = 1,
    MonoImplicit = 2,
    BiImplicit = 3,
    CrossMapping = 4,
}

impl SituationTag {
    pub const ALL: [SituationTag; 5] = [
        SituationTag::Basic,
        SituationTag::OneToMany,
        SituationTag::MonoImplicit,
        SituationTag::BiImplicit,
        SituationTag::CrossMapping,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SituationTag::Basic => "basic",
            SituationTag::OneToMany => "one_to_many",
            SituationTag::MonoImplicit => "mono_implicit",
            SituationTag::BiImplicit => "bi_implicit",
            SituationTag::CrossMapping => "cross_mapping",
        }
    }

    pub fn parse(s: &str) -> Option<SituationTag> {
        SituationTag::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for SituationTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Why a quad set cannot be rendered as a tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UnparseableReason {
    /// Term sharing involves an implicit or fake side, including two fully
    /// implicit quads competing for the same fake positions.
    OneToManyWithImplicit,
    /// A term or group properly contains another of the same kind.
    NestedSpans,
    /// Terms overlap without nesting, overlap across sides, or two quads
    /// share both terms at once.
    OverlappedSpans,
    /// Group extents interleave, a hub has partners on both sides, or the
    /// sharing pattern has no single hub and no full cross product.
    CrossingQuads,
}

impl UnparseableReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            UnparseableReason::OneToManyWithImplicit => "one_to_many_with_implicit",
            UnparseableReason::NestedSpans => "nested_spans",
            UnparseableReason::OverlappedSpans => "overlapped_spans",
            UnparseableReason::CrossingQuads => "crossing_quads",
        }
    }

    pub fn parse(s: &str) -> Option<UnparseableReason> {
        [
            UnparseableReason::OneToManyWithImplicit,
            UnparseableReason::NestedSpans,
            UnparseableReason::OverlappedSpans,
            UnparseableReason::CrossingQuads,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
    }
}

impl fmt::Display for UnparseableReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Insert the fake aspect/opinion tokens in front of a sentence that has a
/// fully implicit quad, shifting every explicit span right by two and
/// giving the implicit quad the fake positions. Idempotent: an already
/// augmented sentence passes through untouched.
pub fn augment(
    sentence: &Sentence,
    quads: &[SentimentQuadruple],
) -> (Sentence, Vec<SentimentQuadruple>) {
    if sentence.fake_prefix || quads.iter().all(|q| !q.fully_implicit()) {
        return (sentence.clone(), quads.to_vec());
    }
    let mut tokens = vec![
        FAKE_ASPECT_TOKEN.to_string(),
        FAKE_OPINION_TOKEN.to_string(),
    ];
    tokens.extend(sentence.tokens.iter().cloned());
    let quads = quads
        .iter()
        .map(|q| {
            if q.fully_implicit() {
                SentimentQuadruple {
                    aspect: Some(Span::new(0, 1)),
                    opinion: Some(Span::new(1, 2)),
                    ..*q
                }
            } else {
                SentimentQuadruple {
                    aspect: q.aspect.map(|s| s.shifted(2)),
                    opinion: q.opinion.map(|s| s.shifted(2)),
                    ..*q
                }
            }
        })
        .collect();
    (
        Sentence {
            tokens,
            fake_prefix: true,
        },
        quads,
    )
}

// ---------------------------------------------------------------------------
// Grouping and classification
// ---------------------------------------------------------------------------

/// Connected components of quads linked by a shared explicit same-side
/// term, ordered by the leftmost explicit span of the component.
fn quad_groups(quads: &[SentimentQuadruple]) -> Vec<Vec<usize>> {
    let k = quads.len();
    let mut parent: Vec<usize> = (0..k).collect();
    fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..k {
        for j in i + 1..k {
            let share_a = quads[i].aspect.is_some() && quads[i].aspect == quads[j].aspect;
            let share_o = quads[i].opinion.is_some() && quads[i].opinion == quads[j].opinion;
            if share_a || share_o {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri] = rj;
            }
        }
    }
    let mut by_root: Vec<(usize, Vec<usize>)> = Vec::new();
    for i in 0..k {
        let r = find(&mut parent, i);
        match by_root.iter_mut().find(|(root, _)| *root == r) {
            Some((_, v)) => v.push(i),
            None => by_root.push((r, vec![i])),
        }
    }
    let mut groups: Vec<Vec<usize>> = by_root.into_iter().map(|(_, v)| v).collect();
    groups.sort_by_key(|g| group_hull(quads, g).map(|h| h.start).unwrap_or(usize::MAX));
    groups
}

/// Smallest span covering every explicit term of the group; `None` when
/// the group is a lone fully implicit quad.
fn group_hull(quads: &[SentimentQuadruple], members: &[usize]) -> Option<Span> {
    let mut lo = usize::MAX;
    let mut hi = 0;
    for &i in members {
        for span in [quads[i].aspect, quads[i].opinion].into_iter().flatten() {
            lo = lo.min(span.start);
            hi = hi.max(span.end);
        }
    }
    (lo < hi).then(|| Span::new(lo, hi))
}

/// How a validated group renders.
#[derive(Debug, Clone, PartialEq, Eq)]
enum GroupKind {
    /// One quad, any implicitness.
    Single,
    /// Full cross product of aspect terms and opinion terms; the two runs
    /// sit on opposite sides of the group.
    Product {
        aspects: Vec<(Span, CatId)>,
        opinions: Vec<(Span, Polarity)>,
    },
    /// One hub term shared by all quads, each pairing it with its own
    /// partner term and value on one side.
    Cross {
        hub_is_aspect: bool,
        hub: Span,
        partners: Vec<PartnerLink>,
    },
}

/// One quad of a hub group: the partner term with both quad values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PartnerLink {
    span: Span,
    category: CatId,
    polarity: Polarity,
}

fn classify_group(
    quads: &[SentimentQuadruple],
    members: &[usize],
) -> std::result::Result<GroupKind, UnparseableReason> {
    if members.len() == 1 {
        return Ok(GroupKind::Single);
    }
    // Multi-quad groups were linked through explicit terms; any implicit
    // side in one means sharing mixed with implicitness.
    if members.iter().any(|&i| quads[i].has_implicit_side()) {
        return Err(UnparseableReason::OneToManyWithImplicit);
    }

    let mut aspects: Vec<Span> = Vec::new();
    let mut opinions: Vec<Span> = Vec::new();
    for &i in members {
        let a = quads[i].aspect.unwrap();
        let o = quads[i].opinion.unwrap();
        if !aspects.contains(&a) {
            aspects.push(a);
        }
        if !opinions.contains(&o) {
            opinions.push(o);
        }
    }
    aspects.sort();
    opinions.sort();

    // Full cross product with values a function of the owning term.
    if aspects.len() * opinions.len() == members.len() {
        let mut cats: Vec<Option<CatId>> = vec![None; aspects.len()];
        let mut pols: Vec<Option<Polarity>> = vec![None; opinions.len()];
        let mut consistent = true;
        for &i in members {
            let q = &quads[i];
            let ai = aspects
                .iter()
                .position(|s| *s == q.aspect.unwrap())
                .unwrap();
            let oi = opinions
                .iter()
                .position(|s| *s == q.opinion.unwrap())
                .unwrap();
            if *cats[ai].get_or_insert(q.category) != q.category
                || *pols[oi].get_or_insert(q.polarity) != q.polarity
            {
                consistent = false;
            }
        }
        let product_complete = members.len()
            == members
                .iter()
                .map(|&i| (quads[i].aspect.unwrap(), quads[i].opinion.unwrap()))
                .collect::<std::collections::HashSet<_>>()
                .len();
        if consistent && product_complete {
            let a_hull = Span::new(aspects[0].start, aspects.last().unwrap().end);
            let o_hull = Span::new(opinions[0].start, opinions.last().unwrap().end);
            if a_hull.overlaps(&o_hull) {
                // Runs interleave; the two sides cannot be separated.
                return Err(UnparseableReason::CrossingQuads);
            }
            return Ok(GroupKind::Product {
                aspects: aspects
                    .iter()
                    .map(|s| {
                        let i = members
                            .iter()
                            .copied()
                            .find(|&i| quads[i].aspect == Some(*s))
                            .unwrap();
                        (*s, quads[i].category)
                    })
                    .collect(),
                opinions: opinions
                    .iter()
                    .map(|s| {
                        let i = members
                            .iter()
                            .copied()
                            .find(|&i| quads[i].opinion == Some(*s))
                            .unwrap();
                        (*s, quads[i].polarity)
                    })
                    .collect(),
            });
        }
    }

    // One hub with per-quad partner terms.
    for (hub_is_aspect, hubs, partners) in
        [(true, &aspects, &opinions), (false, &opinions, &aspects)]
    {
        if hubs.len() != 1 || partners.len() != members.len() {
            continue;
        }
        let hub = hubs[0];
        let left = partners.iter().all(|p| p.end <= hub.start);
        let right = partners.iter().all(|p| hub.end <= p.start);
        if !left && !right {
            return Err(UnparseableReason::CrossingQuads);
        }
        let mut links: Vec<PartnerLink> = members
            .iter()
            .map(|&i| {
                let q = &quads[i];
                let span = if hub_is_aspect {
                    q.opinion.unwrap()
                } else {
                    q.aspect.unwrap()
                };
                PartnerLink {
                    span,
                    category: q.category,
                    polarity: q.polarity,
                }
            })
            .collect();
        links.sort_by_key(|l| l.span);
        return Ok(GroupKind::Cross {
            hub_is_aspect,
            hub,
            partners: links,
        });
    }

    Err(UnparseableReason::CrossingQuads)
}

/// Decide whether the quads fit the rule system, and under which tag.
/// Precondition: spans already bounds-checked and quads deduplicated.
pub fn validate_parseable(
    quads: &[SentimentQuadruple],
) -> std::result::Result<SituationTag, UnparseableReason> {
    // Term-level conflicts.
    let terms: Vec<(bool, Span)> = quads
        .iter()
        .flat_map(|q| {
            q.aspect
                .map(|s| (true, s))
                .into_iter()
                .chain(q.opinion.map(|s| (false, s)))
        })
        .collect();
    for (i, &(ai, a)) in terms.iter().enumerate() {
        for &(bi, b) in &terms[i + 1..] {
            if !a.overlaps(&b) {
                continue;
            }
            if ai != bi {
                return Err(UnparseableReason::OverlappedSpans);
            }
            if a == b {
                continue; // same-side sharing; grouped below
            }
            if a.contains(&b) || b.contains(&a) {
                return Err(UnparseableReason::NestedSpans);
            }
            return Err(UnparseableReason::OverlappedSpans);
        }
    }

    // Two quads sharing both terms cannot both be read off one tree.
    for (i, a) in quads.iter().enumerate() {
        for b in &quads[i + 1..] {
            if a.aspect.is_some()
                && a.aspect == b.aspect
                && a.opinion.is_some()
                && a.opinion == b.opinion
            {
                return Err(UnparseableReason::OverlappedSpans);
            }
        }
    }

    if quads.iter().filter(|q| q.fully_implicit()).count() >= 2 {
        return Err(UnparseableReason::OneToManyWithImplicit);
    }

    let groups = quad_groups(quads);
    let mut tag = SituationTag::Basic;
    for members in &groups {
        match classify_group(quads, members)? {
            GroupKind::Single => {}
            GroupKind::Product { aspects, opinions } => {
                if aspects.len() > 1 || opinions.len() > 1 {
                    tag = tag.max(SituationTag::OneToMany);
                }
            }
            GroupKind::Cross { .. } => tag = tag.max(SituationTag::CrossMapping),
        }
    }

    // Group extents must be disjoint to line up as sequence of subtrees.
    let hulls: Vec<Span> = groups.iter().filter_map(|g| group_hull(quads, g)).collect();
    for (i, a) in hulls.iter().enumerate() {
        for b in &hulls[i + 1..] {
            if !a.overlaps(b) {
                continue;
            }
            if a.contains(b) || b.contains(a) {
                return Err(UnparseableReason::NestedSpans);
            }
            return Err(UnparseableReason::CrossingQuads);
        }
    }

    for q in quads {
        if q.fully_implicit() {
            tag = tag.max(SituationTag::BiImplicit);
        } else if q.has_implicit_side() {
            tag = tag.max(SituationTag::MonoImplicit);
        }
    }
    Ok(tag)
}

// ---------------------------------------------------------------------------
// Tree assembly
// ---------------------------------------------------------------------------

/// A built tree together with the (possibly augmented) sentence and quads
/// it spans.
#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub sentence: Sentence,
    pub quads: Vec<SentimentQuadruple>,
    pub tree: OpinionTree,
    pub tag: SituationTag,
}

fn filler(a: usize, b: usize) -> OpinionTree {
    OpinionTree::leaf(TreeLabel::I, Span::new(a, b))
}

/// `A -> C -> AT` over one aspect term.
fn aspect_part(cat: CatId, span: Span) -> OpinionTree {
    let at = OpinionTree::leaf(TreeLabel::At, span);
    OpinionTree::node(
        TreeLabel::A,
        vec![OpinionTree::node(TreeLabel::C(cat), vec![at])],
    )
}

/// `O -> P -> OT` over one opinion term.
fn opinion_part(pol: Polarity, span: Span) -> OpinionTree {
    let ot = OpinionTree::leaf(TreeLabel::Ot, span);
    OpinionTree::node(
        TreeLabel::O,
        vec![OpinionTree::node(TreeLabel::P(pol), vec![ot])],
    )
}

/// Left-branching run of same-side parts with explicit gaps.
fn run(shell: TreeLabel, parts: Vec<OpinionTree>) -> OpinionTree {
    let mut iter = parts.into_iter();
    let mut acc = iter.next().expect("run needs parts");
    for next in iter {
        let gap = filler(acc.span.end, next.span.start);
        acc = OpinionTree::node(shell.clone(), vec![acc, gap, next]);
    }
    acc
}

fn group_subtree(quads: &[SentimentQuadruple], members: &[usize]) -> Result<OpinionTree> {
    let kind = classify_group(quads, members)
        .map_err(|r| Error::Internal(format!("building an invalid group: {r}")))?;
    match kind {
        GroupKind::Single => {
            let q = &quads[members[0]];
            match (q.aspect, q.opinion) {
                (Some(a), Some(o)) => {
                    let ap = aspect_part(q.category, a);
                    let op = opinion_part(q.polarity, o);
                    let (first, second) = if a.start < o.start {
                        (ap, op)
                    } else {
                        (op, ap)
                    };
                    let gap = filler(first.span.end, second.span.start);
                    Ok(OpinionTree::node(TreeLabel::Q, vec![first, gap, second]))
                }
                (None, Some(o)) => {
                    // Implicit aspect: the category node absorbs the opinion.
                    let inner = opinion_part(q.polarity, o);
                    let c = OpinionTree::node(TreeLabel::C(q.category), vec![inner]);
                    Ok(OpinionTree::node(TreeLabel::Q, vec![c]))
                }
                (Some(a), None) => {
                    let inner = aspect_part(q.category, a);
                    let p = OpinionTree::node(TreeLabel::P(q.polarity), vec![inner]);
                    Ok(OpinionTree::node(TreeLabel::Q, vec![p]))
                }
                (None, None) => Err(Error::Internal(
                    "fully implicit quad reached assembly without augmentation".into(),
                )),
            }
        }
        GroupKind::Product { aspects, opinions } => {
            let a_run = run(
                TreeLabel::A,
                aspects.iter().map(|&(s, c)| aspect_part(c, s)).collect(),
            );
            let o_run = run(
                TreeLabel::O,
                opinions.iter().map(|&(s, p)| opinion_part(p, s)).collect(),
            );
            let (first, second) = if a_run.span.start < o_run.span.start {
                (a_run, o_run)
            } else {
                (o_run, a_run)
            };
            let gap = filler(first.span.end, second.span.start);
            Ok(OpinionTree::node(TreeLabel::Q, vec![first, gap, second]))
        }
        GroupKind::Cross {
            hub_is_aspect,
            hub,
            partners,
        } => {
            // Partner list is position-sorted. Chain values run outermost to
            // innermost as farthest to nearest partner.
            let left_side = partners[0].span.end <= hub.start;
            let far_to_near: Vec<&PartnerLink> = if left_side {
                partners.iter().collect()
            } else {
                partners.iter().rev().collect()
            };
            let mut core = OpinionTree::leaf(
                if hub_is_aspect {
                    TreeLabel::At
                } else {
                    TreeLabel::Ot
                },
                hub,
            );
            for link in far_to_near.iter().rev() {
                let label = if hub_is_aspect {
                    TreeLabel::C(link.category)
                } else {
                    TreeLabel::P(link.polarity)
                };
                core = OpinionTree::node(label, vec![core]);
            }
            let chain = OpinionTree::node(
                if hub_is_aspect {
                    TreeLabel::A
                } else {
                    TreeLabel::O
                },
                vec![core],
            );
            let parts: Vec<OpinionTree> = partners
                .iter()
                .map(|l| {
                    if hub_is_aspect {
                        opinion_part(l.polarity, l.span)
                    } else {
                        aspect_part(l.category, l.span)
                    }
                })
                .collect();
            let prun = run(
                if hub_is_aspect {
                    TreeLabel::O
                } else {
                    TreeLabel::A
                },
                parts,
            );
            let (first, second) = if left_side {
                (prun, chain)
            } else {
                (chain, prun)
            };
            let gap = filler(first.span.end, second.span.start);
            Ok(OpinionTree::node(TreeLabel::Q, vec![first, gap, second]))
        }
    }
}

/// Render quads as a rule-form tree over the (augmented where necessary)
/// sentence. The input is validated first; unrepresentable quad sets fail
/// with the reason in the message.
pub fn build_tree(sentence: &Sentence, quads: &[SentimentQuadruple]) -> Result<BuildOutput> {
    let n = sentence.n();
    if n == 0 {
        return Err(Error::InvalidTree("empty sentence".into()));
    }
    let mut qs = quads.to_vec();
    sort_quads(&mut qs);
    qs.dedup();
    for q in &qs {
        q.check_spans(n)?;
    }
    let tag = validate_parseable(&qs)
        .map_err(|r| Error::InvalidTree(format!("quads do not fit the rule system: {r}")))?;
    let (sentence, qs) = augment(sentence, &qs);
    let n = sentence.n();

    let groups = quad_groups(&qs);
    let mut subtrees = Vec::new();
    for members in &groups {
        subtrees.push(group_subtree(&qs, members)?);
    }

    let tree = if subtrees.is_empty() {
        OpinionTree::node(
            TreeLabel::S,
            vec![
                filler(0, n),
                OpinionTree::leaf(TreeLabel::Q, Span::new(n, n)),
                filler(n, n),
            ],
        )
    } else {
        let mut iter = subtrees.into_iter();
        let mut chain = iter.next().unwrap();
        for next in iter {
            let gap = filler(chain.span.end, next.span.start);
            chain = OpinionTree::node(TreeLabel::Q, vec![chain, gap, next]);
        }
        let lead = filler(0, chain.span.start);
        let trail = filler(chain.span.end, n);
        OpinionTree::node(TreeLabel::S, vec![lead, chain, trail])
    };

    Ok(BuildOutput {
        sentence,
        quads: qs,
        tree,
        tag,
    })
}

// ---------------------------------------------------------------------------
// Pruning
// ---------------------------------------------------------------------------

fn merge_fillers(children: &mut Vec<OpinionTree>) {
    let mut i = 0;
    while i + 1 < children.len() {
        if children[i].label == TreeLabel::I && children[i + 1].label == TreeLabel::I {
            let merged = filler(children[i].span.start, children[i + 1].span.end);
            children[i] = merged;
            children.remove(i + 1);
        } else {
            i += 1;
        }
    }
}

/// Fold value chains into composites, drop zero-width material, and splice
/// run/chain wrappers. Returns the node's replacement sequence.
fn fold_and_splice(node: &OpinionTree) -> Vec<OpinionTree> {
    if node.is_leaf() {
        return match node.label {
            TreeLabel::I | TreeLabel::Q if node.span.width() == 0 => vec![],
            _ => vec![node.clone()],
        };
    }
    let mut kids: Vec<OpinionTree> = Vec::new();
    for child in &node.children {
        kids.extend(fold_and_splice(child));
    }
    merge_fillers(&mut kids);
    let rebuilt = |label: TreeLabel, kids: Vec<OpinionTree>| {
        vec![OpinionTree {
            label,
            span: node.span,
            children: kids,
        }]
    };
    match &node.label {
        TreeLabel::A | TreeLabel::O => kids,
        TreeLabel::C(c) => rebuilt(TreeLabel::ACat(*c), kids),
        TreeLabel::P(p) => rebuilt(TreeLabel::OPol(*p), kids),
        TreeLabel::ACat(c) => rebuilt(TreeLabel::ACat(*c), kids),
        TreeLabel::OPol(p) => rebuilt(TreeLabel::OPol(*p), kids),
        TreeLabel::Q => {
            if kids.is_empty() {
                vec![]
            } else if kids.iter().any(|k| k.label == TreeLabel::Q) {
                kids
            } else if kids.len() == 1
                && kids[0].span == node.span
                && matches!(kids[0].label, TreeLabel::ACat(_) | TreeLabel::OPol(_))
            {
                // Lone implicit-side quad: its shell stands by itself.
                kids
            } else {
                rebuilt(TreeLabel::Q, kids)
            }
        }
        TreeLabel::S => rebuilt(TreeLabel::S, kids),
        other => vec![OpinionTree {
            label: other.clone(),
            span: node.span,
            children: kids,
        }],
    }
}

/// A composite stacked directly on a same-side composite of equal span;
/// the shape value chains fold into.
fn stack_labels(node: &OpinionTree) -> Option<Vec<TreeLabel>> {
    fn same_side(a: &TreeLabel, b: &TreeLabel) -> bool {
        matches!(
            (a, b),
            (TreeLabel::ACat(_), TreeLabel::ACat(_)) | (TreeLabel::OPol(_), TreeLabel::OPol(_))
        )
    }
    let mut labels = Vec::new();
    let mut cur = node;
    loop {
        match cur.children.as_slice() {
            [child] if child.span == cur.span && same_side(&cur.label, &child.label) => {
                labels.push(cur.label.clone());
                cur = child;
            }
            _ => break,
        }
    }
    (!labels.is_empty()).then(|| {
        labels.push(cur.label.clone());
        labels
    })
}

/// Innermost node of a stack (the one holding the term leaf).
fn stack_core(node: &OpinionTree, depth: usize) -> &OpinionTree {
    let mut cur = node;
    for _ in 0..depth {
        cur = &cur.children[0];
    }
    cur
}

fn opposite_side(a: &TreeLabel, b: &TreeLabel) -> bool {
    matches!(
        (a, b),
        (TreeLabel::ACat(_), TreeLabel::OPol(_)) | (TreeLabel::OPol(_), TreeLabel::ACat(_))
    )
}

/// Rewrite one quad-group body: a value stack becomes nested shells, each
/// shell capturing the nearest remaining partner (and the gap between
/// them), until one partner is left outside for the innermost value.
fn shellify_body(children: Vec<OpinionTree>) -> Result<Vec<OpinionTree>> {
    let stack_at = children
        .iter()
        .position(|c| stack_labels(c).map_or(false, |ls| ls.len() >= 2));
    let Some(idx) = stack_at else {
        return Ok(children);
    };
    let stack = &children[idx];
    let labels = stack_labels(stack).unwrap();
    let depth = labels.len() - 1;
    let core = stack_core(stack, depth);

    // Units of (partner, adjacent gap toward the hub), nearest first.
    struct Unit {
        part: OpinionTree,
        gap: Option<OpinionTree>,
    }
    let hub_on_right = idx + 1 == children.len();
    let mut units: Vec<Unit> = Vec::new();
    if hub_on_right {
        // [p_far, g?, ..., p_near, g?, STACK]
        let mut pending: Option<OpinionTree> = None;
        for item in children[..idx].iter().rev() {
            if item.label == TreeLabel::I {
                if pending.is_some() {
                    return Err(Error::Internal("two gaps between partners".into()));
                }
                pending = Some(item.clone());
            } else if opposite_side(&stack.label, &item.label) {
                units.push(Unit {
                    part: item.clone(),
                    gap: pending.take(),
                });
            } else {
                return Err(Error::Internal(
                    "unexpected item beside a value stack".into(),
                ));
            }
        }
        if pending.is_some() {
            return Err(Error::Internal("leading gap inside a group body".into()));
        }
    } else if idx == 0 {
        // [STACK, g?, p_near, ..., g?, p_far]
        let mut pending: Option<OpinionTree> = None;
        for item in children[1..].iter() {
            if item.label == TreeLabel::I {
                if pending.is_some() {
                    return Err(Error::Internal("two gaps between partners".into()));
                }
                pending = Some(item.clone());
            } else if opposite_side(&stack.label, &item.label) {
                units.push(Unit {
                    part: item.clone(),
                    gap: pending.take(),
                });
            } else {
                return Err(Error::Internal(
                    "unexpected item beside a value stack".into(),
                ));
            }
        }
        if pending.is_some() {
            return Err(Error::Internal("trailing gap inside a group body".into()));
        }
    } else {
        return Err(Error::Internal(
            "value stack in the middle of its group".into(),
        ));
    }
    if units.len() != depth + 1 {
        return Err(Error::Internal(format!(
            "value stack of {} against {} partners",
            depth + 1,
            units.len()
        )));
    }

    // Innermost composite takes the top value (farthest partner's); shells
    // going outward take the remaining values nearest first.
    let mut cur = OpinionTree {
        label: labels[0].clone(),
        span: core.span,
        children: core.children.clone(),
    };
    for (unit, label) in units.iter().zip(labels.iter().skip(1).rev()) {
        let mut ch = Vec::new();
        if hub_on_right {
            ch.push(unit.part.clone());
            if let Some(g) = &unit.gap {
                ch.push(g.clone());
            }
            ch.push(cur);
        } else {
            ch.push(cur);
            if let Some(g) = &unit.gap {
                ch.push(g.clone());
            }
            ch.push(unit.part.clone());
        }
        cur = OpinionTree::node(label.clone(), ch);
    }
    let far = units.pop().unwrap();
    let mut body = Vec::new();
    if hub_on_right {
        body.push(far.part);
        if let Some(g) = far.gap {
            body.push(g);
        }
        body.push(cur);
    } else {
        body.push(cur);
        if let Some(g) = far.gap {
            body.push(g);
        }
        body.push(far.part);
    }
    Ok(body)
}

/// An implicit-side shell still stacked on its partner: composite with one
/// equal-span opposite-side child.
fn is_mono_stack(node: &OpinionTree) -> bool {
    matches!(node.children.as_slice(),
        [child] if child.span == node.span && opposite_side(&node.label, &child.label))
}

/// Give every implicit-side shell a strictly wider span than its partner
/// by absorbing an adjacent slice of filler. Candidates in order: the
/// whole left filler, all but its first token, the whole right filler, all
/// but its last token. A candidate is valid when the widened shell still
/// sits strictly inside the sentence. Shells with no valid candidate stay
/// stacked; record extraction rejects them later.
fn absorb_mono_slack(children: &mut Vec<OpinionTree>, sentence_span: Span) {
    let mut i = 0;
    while i < children.len() {
        if !is_mono_stack(&children[i]) {
            i += 1;
            continue;
        }
        let shell_label = children[i].label.clone();
        let partner = children[i].children[0].clone();
        let left = (i > 0 && children[i - 1].label == TreeLabel::I).then(|| children[i - 1].span);
        let right = (i + 1 < children.len() && children[i + 1].label == TreeLabel::I)
            .then(|| children[i + 1].span);

        // (absorbed slice, remainder of the donor filler)
        let mut candidates: Vec<(Span, Option<Span>, bool)> = Vec::new();
        if let Some(l) = left {
            candidates.push((l, None, true));
            if l.width() >= 2 {
                candidates.push((
                    Span::new(l.start + 1, l.end),
                    Some(Span::new(l.start, l.start + 1)),
                    true,
                ));
            }
        }
        if let Some(r) = right {
            candidates.push((r, None, false));
            if r.width() >= 2 {
                candidates.push((
                    Span::new(r.start, r.end - 1),
                    Some(Span::new(r.end - 1, r.end)),
                    false,
                ));
            }
        }
        let chosen = candidates.into_iter().find(|(slice, _, from_left)| {
            let span = if *from_left {
                Span::new(slice.start, children[i].span.end)
            } else {
                Span::new(children[i].span.start, slice.end)
            };
            span != sentence_span
        });
        let Some((slice, rest, from_left)) = chosen else {
            i += 1;
            continue;
        };
        let fill = OpinionTree::leaf(TreeLabel::I, slice);
        let shell_children = if from_left {
            vec![fill, partner]
        } else {
            vec![partner, fill]
        };
        let shell = OpinionTree::node(shell_label, shell_children);
        children[i] = shell;
        if from_left {
            match rest {
                Some(r) => children[i - 1] = OpinionTree::leaf(TreeLabel::I, r),
                None => {
                    children.remove(i - 1);
                    i -= 1;
                }
            }
        } else {
            match rest {
                Some(r) => children[i + 1] = OpinionTree::leaf(TreeLabel::I, r),
                None => {
                    children.remove(i + 1);
                }
            }
        }
        i += 1;
    }
}

/// Prune a built tree to the canonical chart shape. Idempotent: pruned
/// trees pass through unchanged.
pub fn prune_tree(tree: &OpinionTree) -> Result<OpinionTree> {
    let folded = fold_and_splice(tree);
    let [mut root] = <[OpinionTree; 1]>::try_from(folded)
        .map_err(|_| Error::InvalidTree("pruning lost the sentence root".into()))?;
    if root.label != TreeLabel::S {
        return Err(Error::InvalidTree("pruned root is not a sentence".into()));
    }
    let sentence_span = root.span;

    // Value stacks nest into shells inside each group body; a sentence-wide
    // group keeps its body under the group node.
    let mut new_children = Vec::new();
    for child in std::mem::take(&mut root.children) {
        if child.label == TreeLabel::Q {
            let body = shellify_body(child.children)?;
            new_children.push(OpinionTree {
                label: TreeLabel::Q,
                span: child.span,
                children: body,
            });
        } else {
            new_children.push(child);
        }
    }
    // A stack may also sit at sentence level when its group wrapper was a
    // lone implicit-side quad; those are handled by slack absorption, not
    // shells. Cross stacks never reach sentence level.
    absorb_mono_slack(&mut new_children, sentence_span);
    root.children = new_children;
    Ok(root)
}

#[cfg(test)]
mod test {
    use super::*;
    use crate::grammar::{build_grammar, GrammarConfig, Label};
    use crate::quad::POLARITIES;
    use crate::tree::{is_valid_tree, tree_to_brackets, tree_to_spans};

    fn quad(
        aspect: Option<(usize, usize)>,
        cat: CatId,
        opinion: Option<(usize, usize)>,
        pol: Polarity,
    ) -> SentimentQuadruple {
        SentimentQuadruple {
            aspect: aspect.map(|(a, b)| Span::new(a, b)),
            category: cat,
            opinion: opinion.map(|(a, b)| Span::new(a, b)),
            polarity: pol,
        }
    }

    fn pos() -> Polarity {
        POLARITIES[2]
    }

    fn neg() -> Polarity {
        POLARITIES[0]
    }

    fn grammar2() -> crate::grammar::Grammar {
        build_grammar(&GrammarConfig::all_families(vec![
            "LAPTOP#GENERAL".into(),
            "LAPTOP#DESIGN".into(),
        ]))
        .unwrap()
    }

    #[test]
    fn validator_accepts_and_tags() {
        let cases: Vec<(Vec<SentimentQuadruple>, SituationTag)> = vec![
            (vec![], SituationTag::Basic),
            (
                vec![quad(Some((0, 1)), 0, Some((2, 3)), pos())],
                SituationTag::Basic,
            ),
            (
                vec![
                    quad(Some((6, 7)), 0, Some((1, 2)), pos()),
                    quad(Some((6, 7)), 0, Some((5, 6)), pos()),
                ],
                SituationTag::OneToMany,
            ),
            (
                vec![quad(None, 0, Some((1, 2)), pos())],
                SituationTag::MonoImplicit,
            ),
            (vec![quad(None, 0, None, pos())], SituationTag::BiImplicit),
            (
                vec![
                    quad(Some((3, 4)), 0, Some((0, 1)), pos()),
                    quad(Some((3, 4)), 1, Some((2, 3)), neg()),
                ],
                SituationTag::CrossMapping,
            ),
            // Mixed: a mono quad plus a one-to-many group; implicitness
            // outranks sharing.
            (
                vec![
                    quad(None, 0, Some((0, 1)), pos()),
                    quad(Some((8, 9)), 0, Some((3, 4)), pos()),
                    quad(Some((8, 9)), 0, Some((6, 7)), neg()),
                ],
                SituationTag::MonoImplicit,
            ),
        ];
        for (quads, want) in cases {
            assert_eq!(validate_parseable(&quads), Ok(want), "{quads:?}");
        }
    }

    #[test]
    fn validator_rejects_with_reasons() {
        use UnparseableReason::*;
        let cases: Vec<(Vec<SentimentQuadruple>, UnparseableReason)> = vec![
            // Same-side partial overlap.
            (
                vec![
                    quad(Some((0, 2)), 0, Some((5, 6)), pos()),
                    quad(Some((1, 3)), 0, Some((7, 8)), pos()),
                ],
                OverlappedSpans,
            ),
            // Cross-side overlap.
            (
                vec![
                    quad(Some((0, 2)), 0, Some((5, 6)), pos()),
                    quad(Some((7, 8)), 0, Some((1, 2)), pos()),
                ],
                OverlappedSpans,
            ),
            // Same-side nesting.
            (
                vec![
                    quad(Some((0, 3)), 0, Some((5, 6)), pos()),
                    quad(Some((1, 2)), 0, Some((7, 8)), pos()),
                ],
                NestedSpans,
            ),
            // Two quads over the same term pair.
            (
                vec![
                    quad(Some((0, 1)), 0, Some((2, 3)), pos()),
                    quad(Some((0, 1)), 1, Some((2, 3)), neg()),
                ],
                OverlappedSpans,
            ),
            // Sharing with an implicit side.
            (
                vec![
                    quad(Some((0, 1)), 0, Some((2, 3)), pos()),
                    quad(Some((0, 1)), 0, None, neg()),
                ],
                OneToManyWithImplicit,
            ),
            // Two fully implicit quads.
            (
                vec![quad(None, 0, None, pos()), quad(None, 1, None, neg())],
                OneToManyWithImplicit,
            ),
            // Hub with partners on both sides.
            (
                vec![
                    quad(Some((2, 3)), 0, Some((0, 1)), pos()),
                    quad(Some((2, 3)), 1, Some((4, 5)), neg()),
                ],
                CrossingQuads,
            ),
            // Interleaved group extents.
            (
                vec![
                    quad(Some((0, 1)), 0, Some((4, 5)), pos()),
                    quad(Some((2, 3)), 0, Some((6, 7)), pos()),
                ],
                CrossingQuads,
            ),
            // One group extent inside another.
            (
                vec![
                    quad(Some((0, 1)), 0, Some((6, 7)), pos()),
                    quad(Some((2, 3)), 0, Some((4, 5)), pos()),
                ],
                NestedSpans,
            ),
            // Hub sharing chained through a partner: no single hub.
            (
                vec![
                    quad(Some((0, 1)), 0, Some((2, 3)), pos()),
                    quad(Some((0, 1)), 1, Some((4, 5)), neg()),
                    quad(Some((6, 7)), 1, Some((4, 5)), neg()),
                ],
                CrossingQuads,
            ),
        ];
        for (quads, want) in cases {
            assert_eq!(validate_parseable(&quads), Err(want), "{quads:?}");
        }
    }

    #[test]
    fn bipartite_product_groups_are_accepted() {
        // Two aspects and two opinions, all four pairings present.
        let quads = vec![
            quad(Some((0, 1)), 0, Some((4, 5)), pos()),
            quad(Some((0, 1)), 0, Some((6, 7)), neg()),
            quad(Some((2, 3)), 1, Some((4, 5)), pos()),
            quad(Some((2, 3)), 1, Some((6, 7)), neg()),
        ];
        assert_eq!(validate_parseable(&quads), Ok(SituationTag::OneToMany));
        // Missing one pairing: no longer a product, no single hub.
        assert_eq!(
            validate_parseable(&quads[..3]),
            Err(UnparseableReason::CrossingQuads)
        );
    }

    #[test]
    fn golden_build_and_prune() {
        let g = build_grammar(&GrammarConfig::all_families(vec![
            "RESTAURANT#GENERAL".into()
        ]))
        .unwrap();
        let sent = Sentence::from_text("So happy to have a great bar");
        let quads = vec![
            quad(Some((6, 7)), 0, Some((1, 2)), pos()),
            quad(Some((6, 7)), 0, Some((5, 6)), pos()),
        ];
        let built = build_tree(&sent, &quads).unwrap();
        assert_eq!(built.tag, SituationTag::OneToMany);
        assert!(!built.sentence.fake_prefix);
        assert!(is_valid_tree(&built.tree, &g));

        let pruned = prune_tree(&built.tree).unwrap();
        assert_eq!(
            tree_to_brackets(&pruned, &built.sentence.tokens, &g),
            "(S (I So) (Q (O:positive (OT happy)) (I to have a) \
             (O:positive (OT great)) (A:RESTAURANT#GENERAL (AT bar))))"
        );
        assert_eq!(prune_tree(&pruned).unwrap(), pruned);
    }

    #[test]
    fn cross_group_prunes_to_nested_shells() {
        let g = grammar2();
        let sent = Sentence::from_text("Great but expensive laptop");
        let quads = vec![
            quad(Some((3, 4)), 0, Some((0, 1)), pos()),
            quad(Some((3, 4)), 1, Some((2, 3)), neg()),
        ];
        let built = build_tree(&sent, &quads).unwrap();
        assert_eq!(built.tag, SituationTag::CrossMapping);
        assert!(is_valid_tree(&built.tree, &g));

        let pruned = prune_tree(&built.tree).unwrap();
        // The outer shell takes the nearest partner's category and wraps
        // the farthest partner's category around the shared term.
        assert_eq!(
            tree_to_brackets(&pruned, &built.sentence.tokens, &g),
            "(S (Q (O:positive (OT Great)) (I but) \
             (A:LAPTOP#DESIGN (O:negative (OT expensive)) (A:LAPTOP#GENERAL (AT laptop)))))"
        );
        assert_eq!(prune_tree(&pruned).unwrap(), pruned);

        let labels = g.label_set();
        let spans = tree_to_spans(&pruned, &labels).unwrap();
        assert_eq!(spans.len(), 6);
        assert_eq!(spans.get(&Span::new(2, 4)), Some(labels.id(Label::ACat(1))));
        assert_eq!(spans.get(&Span::new(3, 4)), Some(labels.id(Label::ACat(0))));
    }

    #[test]
    fn mono_shell_absorbs_filler() {
        let g = grammar2();
        let labels = g.label_set();

        // Filler on the left: the shell takes all of it.
        let built = build_tree(
            &Sentence::from_text("but tasty !"),
            &[quad(None, 0, Some((1, 2)), pos())],
        )
        .unwrap();
        let pruned = prune_tree(&built.tree).unwrap();
        assert_eq!(
            tree_to_brackets(&pruned, &built.sentence.tokens, &g),
            "(S (A:LAPTOP#GENERAL (I but) (O:positive (OT tasty))) (I !))"
        );
        let spans = tree_to_spans(&pruned, &labels).unwrap();
        assert_eq!(spans.len(), 5);

        // Absorbing the whole left filler would swallow the sentence, so
        // the shell leaves the first token out.
        let built = build_tree(
            &Sentence::from_text("really really tasty"),
            &[quad(None, 0, Some((2, 3)), pos())],
        )
        .unwrap();
        let pruned = prune_tree(&built.tree).unwrap();
        assert_eq!(
            tree_to_brackets(&pruned, &built.sentence.tokens, &g),
            "(S (I really) (A:LAPTOP#GENERAL (I really) (O:positive (OT tasty))))"
        );

        // One token, no slack anywhere: pruning succeeds but the record
        // extraction refuses the stacked shell.
        let built = build_tree(
            &Sentence::from_text("Yum"),
            &[quad(None, 0, Some((0, 1)), pos())],
        )
        .unwrap();
        let pruned = prune_tree(&built.tree).unwrap();
        assert!(tree_to_spans(&pruned, &labels).is_err());
        assert_eq!(prune_tree(&pruned).unwrap(), pruned);
    }

    #[test]
    fn fully_implicit_quads_take_the_fake_prefix() {
        let g = grammar2();
        let sent = Sentence::from_text("would buy again");
        let quads = vec![quad(None, 0, None, pos())];
        let built = build_tree(&sent, &quads).unwrap();
        assert_eq!(built.tag, SituationTag::BiImplicit);
        assert!(built.sentence.fake_prefix);
        assert_eq!(built.sentence.tokens[0], FAKE_ASPECT_TOKEN);
        assert_eq!(built.sentence.tokens[1], FAKE_OPINION_TOKEN);
        assert_eq!(built.quads[0].aspect, Some(Span::new(0, 1)));
        assert_eq!(built.quads[0].opinion, Some(Span::new(1, 2)));

        // Idempotent: augmenting the augmented pair changes nothing.
        let (s2, q2) = augment(&built.sentence, &built.quads);
        assert_eq!(s2, built.sentence);
        assert_eq!(q2, built.quads);

        let pruned = prune_tree(&built.tree).unwrap();
        assert_eq!(
            tree_to_brackets(&pruned, &built.sentence.tokens, &g),
            "(S (Q (A:LAPTOP#GENERAL (AT FA)) (O:positive (OT FO))) (I would buy again))"
        );
    }

    #[test]
    fn zero_quad_sentences_prune_to_a_lone_filler() {
        let built = build_tree(&Sentence::from_text("Came home late"), &[]).unwrap();
        let pruned = prune_tree(&built.tree).unwrap();
        assert_eq!(
            pruned,
            OpinionTree::node(
                TreeLabel::S,
                vec![OpinionTree::leaf(TreeLabel::I, Span::new(0, 3))]
            )
        );
    }
}
