//! The opinion grammar: rule inventory, conditional rule families, the
//! pruned label set, and mechanical binarization.
//!
//! The base rule system describes one sentence as irrelevant context around
//! quad subtrees: `S -> I Q I`, `Q -> A I O | O I A | eps`, `Q -> Q I Q`,
//! with unary value chains `A -> C -> AT` and `O -> P -> OT` carrying the
//! category and polarity, and `W`-recursion spelling out terminals. Four
//! optional families extend it: self-recursive one-to-many rules, unary
//! implicit-side rules, fake-token support for fully implicit quads, and
//! category/polarity chain rules for many-to-many mappings.
//!
//! `W` recursion is never materialized in charts; multi-token `I`/`AT`/`OT`
//! spans are leaf spans directly. Word-level rules (`W -> <word>`) are
//! vocabulary-dependent and are likewise left implicit.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use crate::error::{Error, Result};
use crate::quad::{CatId, Polarity, POLARITIES};

/// Grammar symbols. `C` and `P` are value-bearing in trees (they carry a
/// concrete category or polarity); in rules only the kind matters.
/// `Intermediate` symbols exist only in binarized grammars.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    S,
    Q,
    I,
    A,
    O,
    C,
    P,
    At,
    Ot,
    W,
    Intermediate(String),
}

impl Symbol {
    pub fn name(&self) -> &str {
        match self {
            Symbol::S => "S",
            Symbol::Q => "Q",
            Symbol::I => "I",
            Symbol::A => "A",
            Symbol::O => "O",
            Symbol::C => "C",
            Symbol::P => "P",
            Symbol::At => "AT",
            Symbol::Ot => "OT",
            Symbol::W => "W",
            Symbol::Intermediate(name) => name,
        }
    }

    pub fn parse(s: &str) -> Result<Symbol> {
        Ok(match s {
            "S" => Symbol::S,
            "Q" => Symbol::Q,
            "I" => Symbol::I,
            "A" => Symbol::A,
            "O" => Symbol::O,
            "C" => Symbol::C,
            "P" => Symbol::P,
            "AT" => Symbol::At,
            "OT" => Symbol::Ot,
            "W" => Symbol::W,
            name if name.contains('|') => Symbol::Intermediate(name.to_string()),
            other => {
                return Err(Error::GrammarConfig(format!("unknown symbol '{other}'")));
            }
        })
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which part of the rule system a rule belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RuleFamily {
    Basic,
    OneToMany,
    MonoImplicit,
    BiImplicit,
    CrossMapping,
}

pub const CONDITIONAL_FAMILIES: [RuleFamily; 4] = [
    RuleFamily::OneToMany,
    RuleFamily::MonoImplicit,
    RuleFamily::BiImplicit,
    RuleFamily::CrossMapping,
];

impl RuleFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            RuleFamily::Basic => "basic",
            RuleFamily::OneToMany => "one_to_many",
            RuleFamily::MonoImplicit => "mono_implicit",
            RuleFamily::BiImplicit => "bi_implicit",
            RuleFamily::CrossMapping => "cross_mapping",
        }
    }

    pub fn parse(s: &str) -> Option<RuleFamily> {
        match s {
            "basic" => Some(RuleFamily::Basic),
            "one_to_many" => Some(RuleFamily::OneToMany),
            "mono_implicit" => Some(RuleFamily::MonoImplicit),
            "bi_implicit" => Some(RuleFamily::BiImplicit),
            "cross_mapping" => Some(RuleFamily::CrossMapping),
            _ => None,
        }
    }
}

impl fmt::Display for RuleFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One production. An empty `rhs` is an epsilon production.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rule {
    pub lhs: Symbol,
    pub rhs: Vec<Symbol>,
    pub family: RuleFamily,
}

impl Rule {
    fn new(lhs: Symbol, rhs: Vec<Symbol>, family: RuleFamily) -> Rule {
        Rule { lhs, rhs, family }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ->", self.lhs)?;
        if self.rhs.is_empty() {
            write!(f, " ε")?;
        } else {
            for sym in &self.rhs {
                write!(f, " {sym}")?;
            }
        }
        write!(f, " # {}", self.family)
    }
}

/// Grammar construction settings: the ordered category inventory and which
/// conditional families are enabled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrammarConfig {
    pub categories: Vec<String>,
    pub families: BTreeSet<RuleFamily>,
}

impl GrammarConfig {
    pub fn all_families(categories: Vec<String>) -> GrammarConfig {
        GrammarConfig {
            categories,
            families: CONDITIONAL_FAMILIES.into_iter().collect(),
        }
    }
}

/// Fake tokens inserted in front of sentences whose quads are fully
/// implicit. They are ordinary terminals as far as the rules are concerned.
pub const FAKE_ASPECT_TOKEN: &str = "FA";
pub const FAKE_OPINION_TOKEN: &str = "FO";

/// A complete rule system plus its category inventory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    categories: Vec<String>,
    families: BTreeSet<RuleFamily>,
    rules: Vec<Rule>,
    binarized: bool,
    cat_index: BTreeMap<String, CatId>,
}

fn category_is_well_formed(cat: &str) -> bool {
    !cat.is_empty()
        && !cat.starts_with('#')
        && !cat.ends_with('#')
        && !cat.contains("##")
        && cat
            .chars()
            .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_' || c == '#')
}

/// Build the grammar for a config. Rules are emitted in a fixed canonical
/// order: the base system in listing order, then each enabled family in
/// family order. Calling this twice with the same config yields an
/// identical grammar, byte for byte.
pub fn build_grammar(config: &GrammarConfig) -> Result<Grammar> {
    if config.categories.is_empty() {
        return Err(Error::GrammarConfig("empty category set".into()));
    }
    let mut seen = HashSet::new();
    for cat in &config.categories {
        if !category_is_well_formed(cat) {
            return Err(Error::GrammarConfig(format!(
                "malformed category '{cat}' (expected uppercase segments joined by '#')"
            )));
        }
        if !seen.insert(cat.clone()) {
            return Err(Error::GrammarConfig(format!("duplicate category '{cat}'")));
        }
    }

    use Symbol::*;
    let mut rules = vec![
        Rule::new(S, vec![I, Q, I], RuleFamily::Basic),
        Rule::new(Q, vec![A, I, O], RuleFamily::Basic),
        Rule::new(Q, vec![O, I, A], RuleFamily::Basic),
        Rule::new(Q, vec![], RuleFamily::Basic),
        Rule::new(Q, vec![Q, I, Q], RuleFamily::Basic),
        Rule::new(A, vec![C], RuleFamily::Basic),
        Rule::new(C, vec![At], RuleFamily::Basic),
        Rule::new(O, vec![P], RuleFamily::Basic),
        Rule::new(P, vec![Ot], RuleFamily::Basic),
        Rule::new(At, vec![W], RuleFamily::Basic),
        Rule::new(Ot, vec![W], RuleFamily::Basic),
        Rule::new(I, vec![W], RuleFamily::Basic),
        Rule::new(W, vec![W, W], RuleFamily::Basic),
        Rule::new(W, vec![], RuleFamily::Basic),
    ];
    if config.families.contains(&RuleFamily::OneToMany) {
        rules.push(Rule::new(A, vec![A, I, A], RuleFamily::OneToMany));
        rules.push(Rule::new(O, vec![O, I, O], RuleFamily::OneToMany));
    }
    if config.families.contains(&RuleFamily::MonoImplicit) {
        rules.push(Rule::new(Q, vec![C], RuleFamily::MonoImplicit));
        rules.push(Rule::new(C, vec![O], RuleFamily::MonoImplicit));
        rules.push(Rule::new(Q, vec![P], RuleFamily::MonoImplicit));
        rules.push(Rule::new(P, vec![A], RuleFamily::MonoImplicit));
    }
    // The fake-token family adds no rules: FA and FO are terminals covered by
    // the usual AT/OT leaf spans. Enabling it only licenses augmentation.
    if config.families.contains(&RuleFamily::CrossMapping) {
        rules.push(Rule::new(C, vec![C], RuleFamily::CrossMapping));
        rules.push(Rule::new(P, vec![P], RuleFamily::CrossMapping));
    }

    let cat_index = config
        .categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.clone(), i as CatId))
        .collect();
    Ok(Grammar {
        categories: config.categories.clone(),
        families: config.families.clone(),
        rules,
        binarized: false,
        cat_index,
    })
}

impl Grammar {
    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn families(&self) -> &BTreeSet<RuleFamily> {
        &self.families
    }

    pub fn has_family(&self, family: RuleFamily) -> bool {
        family == RuleFamily::Basic || self.families.contains(&family)
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn is_binarized(&self) -> bool {
        self.binarized
    }

    pub fn category_id(&self, name: &str) -> Option<CatId> {
        self.cat_index.get(name).copied()
    }

    pub fn category_name(&self, id: CatId) -> &str {
        &self.categories[id as usize]
    }

    pub fn label_set(&self) -> LabelSet {
        LabelSet::new(self.categories.len())
    }
}

/// Deterministic name for the intermediate symbol that covers the rhs
/// suffix `rest` of a rule headed by `lhs`.
fn intermediate_name(lhs: &Symbol, rest: &[Symbol]) -> String {
    let mut name = format!("{lhs}|");
    for (k, sym) in rest.iter().enumerate() {
        if k > 0 {
            name.push('.');
        }
        name.push_str(sym.name());
    }
    name
}

/// Right-branching binarization. Rules with at most two rhs symbols pass
/// through unchanged; longer rules split off their first symbol and hand the
/// rest to a named intermediate, recursively. Intermediates with the same
/// name are shared. De-binarizing (splicing intermediates) reproduces the
/// source rules.
pub fn binarize(grammar: &Grammar) -> Grammar {
    let mut rules = Vec::new();
    let mut emitted: HashSet<Rule> = HashSet::new();
    let mut push = |rule: Rule, rules: &mut Vec<Rule>| {
        if emitted.insert(rule.clone()) {
            rules.push(rule);
        }
    };
    for rule in &grammar.rules {
        if rule.rhs.len() <= 2 {
            push(rule.clone(), &mut rules);
            continue;
        }
        let mut lhs = rule.lhs.clone();
        let mut rest = rule.rhs.as_slice();
        loop {
            if rest.len() == 2 {
                push(
                    Rule::new(lhs, vec![rest[0].clone(), rest[1].clone()], rule.family),
                    &mut rules,
                );
                break;
            }
            let inter = Symbol::Intermediate(intermediate_name(&rule.lhs, &rest[1..]));
            push(
                Rule::new(lhs, vec![rest[0].clone(), inter.clone()], rule.family),
                &mut rules,
            );
            lhs = inter;
            rest = &rest[1..];
        }
    }
    Grammar {
        categories: grammar.categories.clone(),
        families: grammar.families.clone(),
        rules,
        binarized: true,
        cat_index: grammar.cat_index.clone(),
    }
}

/// Splice intermediate symbols out of a binarized rule list, recovering the
/// original n-ary rules in their first-appearance order.
pub fn debinarize_rules(grammar: &Grammar) -> Vec<Rule> {
    if !grammar.binarized {
        return grammar.rules.clone();
    }
    let by_lhs: BTreeMap<&Symbol, Vec<&Rule>> = {
        let mut m: BTreeMap<&Symbol, Vec<&Rule>> = BTreeMap::new();
        for r in &grammar.rules {
            m.entry(&r.lhs).or_default().push(r);
        }
        m
    };
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for rule in &grammar.rules {
        if matches!(rule.lhs, Symbol::Intermediate(_)) {
            continue;
        }
        // Expand the rightmost symbol while it is an intermediate. Each
        // intermediate has exactly one expansion by construction.
        let mut rhs = rule.rhs.clone();
        while let Some(Symbol::Intermediate(_)) = rhs.last() {
            let inter = rhs.pop().unwrap();
            let expansion = by_lhs
                .get(&inter)
                .and_then(|v| v.first())
                .expect("intermediate symbol without expansion");
            rhs.extend(expansion.rhs.iter().cloned());
        }
        let full = Rule::new(rule.lhs.clone(), rhs, rule.family);
        if seen.insert(full.clone()) {
            out.push(full);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Label set
// ---------------------------------------------------------------------------

/// Index of a label in the pruned label inventory.
pub type LabelId = u16;

/// Chart label for a pruned-tree node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    /// Aspect node with its integrated category.
    ACat(CatId),
    /// Opinion node with its integrated polarity.
    OPol(Polarity),
    At,
    Ot,
    Q,
    S,
    /// "Span carries no constituent": irrelevant content and binarization
    /// artifacts. Scores identically zero and has no scorer output column.
    Empty,
}

/// Total bijection between pruned labels and dense ids. Layout: one
/// composite label per (A, category) pair, then per (O, polarity) pair, then
/// AT, OT, Q, S, and EMPTY last, so `len = |categories| + |polarities| + 5`
/// and the first `len - 1` ids are exactly the scored labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    n_categories: usize,
}

impl LabelSet {
    pub fn new(n_categories: usize) -> LabelSet {
        LabelSet { n_categories }
    }

    pub fn len(&self) -> usize {
        self.n_categories + POLARITIES.len() + 5
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of labels with learned scores (everything but EMPTY).
    pub fn scored_len(&self) -> usize {
        self.len() - 1
    }

    pub fn id(&self, label: Label) -> LabelId {
        let c = self.n_categories;
        (match label {
            Label::ACat(cat) => {
                debug_assert!((cat as usize) < c);
                cat as usize
            }
            Label::OPol(p) => c + p.index(),
            Label::At => c + 3,
            Label::Ot => c + 4,
            Label::Q => c + 5,
            Label::S => c + 6,
            Label::Empty => c + 7,
        }) as LabelId
    }

    pub fn label(&self, id: LabelId) -> Label {
        let c = self.n_categories;
        let id = id as usize;
        if id < c {
            Label::ACat(id as CatId)
        } else if id < c + 3 {
            POLARITIES[id - c].into()
        } else {
            match id - c - 3 {
                0 => Label::At,
                1 => Label::Ot,
                2 => Label::Q,
                3 => Label::S,
                4 => Label::Empty,
                _ => panic!("label id {id} out of range"),
            }
        }
    }

    pub fn empty_id(&self) -> LabelId {
        self.id(Label::Empty)
    }

    /// Render a label for reports and chart dumps.
    pub fn display(&self, id: LabelId, grammar: &Grammar) -> String {
        match self.label(id) {
            Label::ACat(c) => format!("A:{}", grammar.category_name(c)),
            Label::OPol(p) => format!("O:{p}"),
            Label::At => "AT".into(),
            Label::Ot => "OT".into(),
            Label::Q => "Q".into(),
            Label::S => "S".into(),
            Label::Empty => "∅".into(),
        }
    }
}

impl From<Polarity> for Label {
    fn from(p: Polarity) -> Label {
        Label::OPol(p)
    }
}

// ---------------------------------------------------------------------------
// Grammar text format
// ---------------------------------------------------------------------------

/// Serialize a grammar to the versioned text format:
///
/// ```text
/// optree-grammar v1
/// categories FOOD#QUALITY RESTAURANT#GENERAL
/// families one_to_many mono_implicit bi_implicit cross_mapping
/// S -> I Q I # basic
/// Q -> ε # basic
/// ...
/// ```
///
/// One rule per line; epsilon is written `ε`. Parsing the output yields an
/// equal grammar, and re-serializing is byte-identical.
pub fn grammar_to_text(grammar: &Grammar) -> String {
    let mut out = String::new();
    out.push_str("optree-grammar v1\n");
    out.push_str("categories");
    for c in &grammar.categories {
        out.push(' ');
        out.push_str(c);
    }
    out.push('\n');
    out.push_str("families");
    for f in &grammar.families {
        out.push(' ');
        out.push_str(f.as_str());
    }
    out.push('\n');
    if grammar.binarized {
        out.push_str("binarized\n");
    }
    for rule in &grammar.rules {
        out.push_str(&rule.to_string());
        out.push('\n');
    }
    out
}

/// Parse the text format produced by [`grammar_to_text`]. The rule listing
/// must match what `build_grammar` (or `binarize`) produces for the declared
/// categories and families; this keeps hand-edited files honest.
pub fn grammar_from_text(text: &str) -> Result<Grammar> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::GrammarText {
        line: 1,
        msg: "empty file".into(),
    })?;
    if header.trim() != "optree-grammar v1" {
        return Err(Error::GrammarText {
            line: 1,
            msg: format!("unsupported header '{header}'"),
        });
    }

    let mut categories: Option<Vec<String>> = None;
    let mut families: Option<BTreeSet<RuleFamily>> = None;
    let mut binarized = false;
    let mut listed_rules: Vec<(usize, Rule)> = Vec::new();

    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with("//") {
            continue;
        }
        if let Some(rest) = line.strip_prefix("categories") {
            categories = Some(rest.split_whitespace().map(|s| s.to_string()).collect());
        } else if let Some(rest) = line.strip_prefix("families") {
            let mut set = BTreeSet::new();
            for tok in rest.split_whitespace() {
                if tok == "basic" {
                    continue;
                }
                let fam = RuleFamily::parse(tok).ok_or_else(|| Error::GrammarText {
                    line: line_no,
                    msg: format!("unknown family '{tok}'"),
                })?;
                set.insert(fam);
            }
            families = Some(set);
        } else if line == "binarized" {
            binarized = true;
        } else {
            listed_rules.push((line_no, parse_rule_line(line, line_no)?));
        }
    }

    let categories = categories.ok_or_else(|| Error::GrammarText {
        line: 1,
        msg: "missing 'categories' line".into(),
    })?;
    let families = families.ok_or_else(|| Error::GrammarText {
        line: 1,
        msg: "missing 'families' line".into(),
    })?;

    let config = GrammarConfig {
        categories,
        families,
    };
    let built = build_grammar(&config)?;
    let expected = if binarized { binarize(&built) } else { built };
    let listed: Vec<Rule> = listed_rules.iter().map(|(_, r)| r.clone()).collect();
    if listed != expected.rules {
        // Point at the first divergent line for a usable message.
        for (i, (line_no, rule)) in listed_rules.iter().enumerate() {
            if expected.rules.get(i) != Some(rule) {
                return Err(Error::GrammarText {
                    line: *line_no,
                    msg: format!(
                        "rule listing diverges from the declared families: found '{rule}'{}",
                        match expected.rules.get(i) {
                            Some(want) => format!(", expected '{want}'"),
                            None => ", expected end of listing".into(),
                        }
                    ),
                });
            }
        }
        return Err(Error::GrammarText {
            line: 1,
            msg: format!(
                "rule listing incomplete: {} rules listed, {} expected",
                listed.len(),
                expected.rules.len()
            ),
        });
    }
    Ok(expected)
}

fn parse_rule_line(line: &str, line_no: usize) -> Result<Rule> {
    let err = |msg: String| Error::GrammarText { line: line_no, msg };
    let (body, family) = line
        .rsplit_once('#')
        .ok_or_else(|| err("missing '# family' suffix".into()))?;
    let family = RuleFamily::parse(family.trim())
        .ok_or_else(|| err(format!("unknown family '{}'", family.trim())))?;
    let (lhs, rhs) = body
        .split_once("->")
        .ok_or_else(|| err("missing '->'".into()))?;
    let lhs = Symbol::parse(lhs.trim()).map_err(|e| err(e.to_string()))?;
    let rhs_toks: Vec<&str> = rhs.split_whitespace().collect();
    let rhs = if rhs_toks == ["ε"] {
        Vec::new()
    } else {
        rhs_toks
            .iter()
            .map(|t| Symbol::parse(t))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| err(e.to_string()))?
    };
    Ok(Rule::new(lhs, rhs, family))
}
