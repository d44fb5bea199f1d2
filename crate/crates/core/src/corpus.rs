//! Corpus records and the two on-disk corpus dialects: a canonical
//! line-delimited format, and import of the public ACOS tab-separated
//! dumps.
//!
//! Canonical format, tab-separated fields, one record per line:
//!
//! ```text
//! categories<TAB>NAME...                              (header, first line)
//! split<TAB>source_line<TAB>tokens<TAB>quad...        (records)
//! quad  := span SP category SP polarity SP span
//! span  := start,end | -1,-1                          (-1,-1 = implicit)
//! ```
//!
//! Tokens are space-separated, numbers are unpadded decimal, polarity is
//! written out (`negative`). The reader rejects every deviation, so any
//! accepted file is already in canonical form and import followed by
//! export reproduces it byte for byte.
//!
//! The ACOS dialect has no header, writes polarity as a numeric code, and
//! leaves the category inventory implicit in the data. Lines whose quads
//! cannot be rendered as a tree are routed to a skip report instead of
//! failing the import; malformed lines and out-of-range spans are hard
//! errors carrying the 1-based line number.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::builder::{
    build_tree, prune_tree, validate_parseable, Sentence, SituationTag, UnparseableReason,
};
use crate::error::{Error, Result};
use crate::grammar::LabelSet;
use crate::quad::{sort_quads, CatId, Polarity, SentimentQuadruple, Span};
use crate::tree::tree_to_spans;

fn line_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Corpus {
        line,
        msg: msg.into(),
    }
}

/// Which portion of a dataset a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One sentence with its gold quadruples and provenance. Tokens are the
/// raw surface text: fake-token augmentation for fully implicit quads is
/// the tree builder's job, not the corpus reader's.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusRecord {
    pub tokens: Vec<String>,
    pub quads: Vec<SentimentQuadruple>,
    pub split: Split,
    /// 1-based line of the file the record came from.
    pub source_line: usize,
}

impl CorpusRecord {
    pub fn n(&self) -> usize {
        self.tokens.len()
    }

    pub fn sentence(&self) -> Sentence {
        Sentence::new(self.tokens.clone())
    }
}

/// Records resolved against one category inventory; a quad's category id
/// is its position in `categories`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub categories: Vec<String>,
    pub records: Vec<CorpusRecord>,
}

impl Corpus {
    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &CorpusRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

/// Why a line was routed to the skip report rather than imported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SkipReason {
    /// The quad set falls outside the rule system.
    Unparseable(UnparseableReason),
    /// The quads classify cleanly but the sentence has no room to hold
    /// the tree: some same-span stack has no legal fold.
    NoChartSlack,
}

impl SkipReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            SkipReason::Unparseable(r) => r.as_str(),
            SkipReason::NoChartSlack => "no_chart_slack",
        }
    }
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One skipped line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkipEntry {
    pub line: usize,
    pub reason: SkipReason,
}

/// Skipped lines with reasons, plus the retained count for rates. Every
/// skipped line appears in exactly one entry.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SkipReport {
    pub entries: Vec<SkipEntry>,
    pub retained: usize,
}

impl SkipReport {
    pub fn skipped(&self) -> usize {
        self.entries.len()
    }

    pub fn total(&self) -> usize {
        self.retained + self.skipped()
    }

    /// Skipped fraction of all lines; 0 on an empty file.
    pub fn rate(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.skipped() as f64 / self.total() as f64
        }
    }

    pub fn by_reason(&self) -> BTreeMap<SkipReason, usize> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry(e.reason).or_insert(0) += 1;
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "retained {} of {} lines, skipped {} ({:.2}%)\n",
            self.retained,
            self.total(),
            self.skipped(),
            self.rate() * 100.0
        );
        for (reason, count) in self.by_reason() {
            let lines: Vec<String> = self
                .entries
                .iter()
                .filter(|e| e.reason == reason)
                .map(|e| e.line.to_string())
                .collect();
            let word = if count == 1 { "line" } else { "lines" };
            out.push_str(&format!(
                "  {reason}: {count} ({word} {})\n",
                lines.join(", ")
            ));
        }
        out
    }
}

/// Classify a record and verify the sentence can actually hold its tree.
/// The second step catches stacked shells with no token slack to fold
/// into, which the quad-level classifier cannot see.
pub fn check_situation(
    sentence: &Sentence,
    quads: &[SentimentQuadruple],
    labels: &LabelSet,
) -> std::result::Result<SituationTag, SkipReason> {
    let tag = validate_parseable(quads).map_err(SkipReason::Unparseable)?;
    let built = build_tree(sentence, quads).map_err(|_| SkipReason::NoChartSlack)?;
    let pruned = prune_tree(&built.tree).map_err(|_| SkipReason::NoChartSlack)?;
    tree_to_spans(&pruned, labels).map_err(|_| SkipReason::NoChartSlack)?;
    Ok(tag)
}

fn parse_tokens(field: &str, lineno: usize) -> Result<Vec<String>> {
    if field.is_empty() {
        return Err(line_err(lineno, "empty sentence"));
    }
    let tokens: Vec<String> = field.split(' ').map(String::from).collect();
    if tokens.iter().any(|t| t.is_empty()) {
        return Err(line_err(lineno, "stray space in the sentence field"));
    }
    Ok(tokens)
}

// ---------------------------------------------------------------------------
// ACOS import
// ---------------------------------------------------------------------------

/// Outcome of importing one ACOS dump.
#[derive(Debug, Clone)]
pub struct AcosImport {
    pub records: Vec<CorpusRecord>,
    pub skips: SkipReport,
}

fn parse_acos_span(s: &str, n: usize, lineno: usize) -> Result<Option<Span>> {
    let bad = || {
        line_err(
            lineno,
            format!("bad span {s:?}: expected start,end or -1,-1"),
        )
    };
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    let (a, b) = match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return Err(bad()),
    };
    if (a, b) == (-1, -1) {
        return Ok(None);
    }
    if a < 0 || b <= a {
        return Err(bad());
    }
    if b as usize > n {
        return Err(line_err(
            lineno,
            format!("span {s} ends past the {n}-token sentence"),
        ));
    }
    Ok(Some(Span::new(a as usize, b as usize)))
}

fn parse_acos_quad(
    field: &str,
    index: &BTreeMap<&str, CatId>,
    codes: &[Polarity; 3],
    n: usize,
    lineno: usize,
) -> Result<SentimentQuadruple> {
    let sub: Vec<&str> = field.split(' ').collect();
    if sub.len() != 4 || sub.iter().any(|s| s.is_empty()) {
        return Err(line_err(
            lineno,
            format!("quadruple field {field:?}: expected \"aspect CATEGORY code opinion\""),
        ));
    }
    let aspect = parse_acos_span(sub[0], n, lineno)?;
    let category = *index
        .get(sub[1])
        .ok_or_else(|| line_err(lineno, format!("unknown category {:?}", sub[1])))?;
    let polarity = sub[2]
        .parse::<usize>()
        .ok()
        .and_then(|c| codes.get(c).copied())
        .ok_or_else(|| line_err(lineno, format!("bad polarity code {:?}", sub[2])))?;
    let opinion = parse_acos_span(sub[3], n, lineno)?;
    Ok(SentimentQuadruple {
        aspect,
        category,
        opinion,
        polarity,
    })
}

/// Lenient scan of an ACOS dump for the category names it uses, for
/// deriving an inventory ahead of the real import. Malformed lines simply
/// contribute nothing; the import proper rejects them.
pub fn acos_categories(text: &str, into: &mut BTreeSet<String>) {
    for line in text.lines() {
        for field in line.split('\t').skip(1) {
            let sub: Vec<&str> = field.split(' ').collect();
            if sub.len() == 4 {
                into.insert(sub[1].to_string());
            }
        }
    }
}

/// Import one ACOS dump: each line is a space-tokenized sentence, a TAB,
/// then one or more quads `a_start,a_end CATEGORY code o_start,o_end`
/// separated by TABs. `-1,-1` marks an implicit term. `codes` gives the
/// polarity each numeric code denotes; the public dumps use 0/1/2 for
/// negative/neutral/positive, which is `POLARITIES` itself. Duplicate
/// quads on a line collapse and the rest are stored in canonical order.
pub fn import_acos_tsv(
    text: &str,
    split: Split,
    categories: &[String],
    codes: &[Polarity; 3],
) -> Result<AcosImport> {
    let index: BTreeMap<&str, CatId> = categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i as CatId))
        .collect();
    let labels = LabelSet::new(categories.len());
    let mut records = Vec::new();
    let mut skips = SkipReport::default();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let mut fields = line.split('\t');
        let tokens = parse_tokens(fields.next().unwrap_or(""), lineno)?;
        let mut set = BTreeSet::new();
        for field in fields {
            set.insert(parse_acos_quad(field, &index, codes, tokens.len(), lineno)?);
        }
        if set.is_empty() {
            return Err(line_err(
                lineno,
                "expected at least one quadruple after the sentence",
            ));
        }
        let mut quads: Vec<SentimentQuadruple> = set.into_iter().collect();
        sort_quads(&mut quads);
        match check_situation(&Sentence::new(tokens.clone()), &quads, &labels) {
            Ok(_) => {
                records.push(CorpusRecord {
                    tokens,
                    quads,
                    split,
                    source_line: lineno,
                });
                skips.retained += 1;
            }
            Err(reason) => skips.entries.push(SkipEntry {
                line: lineno,
                reason,
            }),
        }
    }
    Ok(AcosImport { records, skips })
}

// ---------------------------------------------------------------------------
// Canonical format
// ---------------------------------------------------------------------------

fn span_to_text(s: Option<Span>) -> String {
    match s {
        Some(s) => s.to_string(),
        None => "-1,-1".to_string(),
    }
}

/// One quadruple in canonical field order: aspect span, category name,
/// polarity word, opinion span.
pub fn quad_to_text(q: &SentimentQuadruple, categories: &[String]) -> String {
    format!(
        "{} {} {} {}",
        span_to_text(q.aspect),
        categories[q.category as usize],
        q.polarity,
        span_to_text(q.opinion)
    )
}

/// Render a corpus in canonical form. Reading the result back and dumping
/// it again reproduces it byte for byte.
pub fn corpus_to_text(corpus: &Corpus) -> String {
    let mut out = String::from("categories");
    for c in &corpus.categories {
        out.push('\t');
        out.push_str(c);
    }
    out.push('\n');
    for r in &corpus.records {
        out.push_str(&format!(
            "{}\t{}\t{}",
            r.split,
            r.source_line,
            r.tokens.join(" ")
        ));
        for q in &r.quads {
            out.push('\t');
            out.push_str(&quad_to_text(q, &corpus.categories));
        }
        out.push('\n');
    }
    out
}

/// Decimal with no padding, sign, or leading zeros, so re-rendering the
/// value reproduces the input.
fn parse_canonical_usize(s: &str) -> Option<usize> {
    let v: usize = s.parse().ok()?;
    (v.to_string() == s).then_some(v)
}

fn parse_canonical_span(s: &str, n: usize, lineno: usize) -> Result<Option<Span>> {
    if s == "-1,-1" {
        return Ok(None);
    }
    let bad = || {
        line_err(
            lineno,
            format!("bad span {s:?}: expected start,end or -1,-1"),
        )
    };
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    let a = parse_canonical_usize(a).ok_or_else(bad)?;
    let b = parse_canonical_usize(b).ok_or_else(bad)?;
    if a >= b {
        return Err(bad());
    }
    if b > n {
        return Err(line_err(
            lineno,
            format!("span {s} ends past the {n}-token sentence"),
        ));
    }
    Ok(Some(Span::new(a, b)))
}

fn parse_canonical_quad(
    field: &str,
    index: &BTreeMap<&str, CatId>,
    n: usize,
    lineno: usize,
) -> Result<SentimentQuadruple> {
    let sub: Vec<&str> = field.split(' ').collect();
    if sub.len() != 4 || sub.iter().any(|s| s.is_empty()) {
        return Err(line_err(
            lineno,
            format!("quadruple field {field:?}: expected \"aspect CATEGORY polarity opinion\""),
        ));
    }
    let aspect = parse_canonical_span(sub[0], n, lineno)?;
    let category = *index.get(sub[1]).ok_or_else(|| {
        line_err(
            lineno,
            format!("category {:?} is not in the header", sub[1]),
        )
    })?;
    let polarity = Polarity::parse(sub[2])
        .ok_or_else(|| line_err(lineno, format!("bad polarity {:?}", sub[2])))?;
    let opinion = parse_canonical_span(sub[3], n, lineno)?;
    Ok(SentimentQuadruple {
        aspect,
        category,
        opinion,
        polarity,
    })
}

/// Parse the canonical format sketched in the module doc. Every deviation
/// is an error with its line number, which is what keeps accepted files
/// canonical and the round trip exact. Quads stay in file order.
pub fn corpus_from_text(text: &str) -> Result<Corpus> {
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, h)) => h,
        None => return Err(line_err(1, "missing categories header")),
    };
    let mut fields = header.split('\t');
    if fields.next() != Some("categories") {
        return Err(line_err(1, "first line must start with \"categories\""));
    }
    let mut categories = Vec::new();
    let mut seen = BTreeSet::new();
    for name in fields {
        if name.is_empty() || name.contains(' ') {
            return Err(line_err(1, format!("bad category name {name:?}")));
        }
        if !seen.insert(name) {
            return Err(line_err(1, format!("duplicate category {name:?}")));
        }
        categories.push(name.to_string());
    }
    if categories.is_empty() {
        return Err(line_err(1, "empty category inventory"));
    }
    let index: BTreeMap<&str, CatId> = categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i as CatId))
        .collect();

    let mut records = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let mut fields = line.split('\t');
        let split_field = fields.next().unwrap_or("");
        let split = Split::parse(split_field)
            .ok_or_else(|| line_err(lineno, format!("bad split {split_field:?}")))?;
        let src_field = fields
            .next()
            .ok_or_else(|| line_err(lineno, "missing source line field"))?;
        let source_line = parse_canonical_usize(src_field)
            .ok_or_else(|| line_err(lineno, format!("bad source line {src_field:?}")))?;
        let sent_field = fields
            .next()
            .ok_or_else(|| line_err(lineno, "missing sentence field"))?;
        let tokens = parse_tokens(sent_field, lineno)?;
        let mut quads = Vec::new();
        for field in fields {
            quads.push(parse_canonical_quad(field, &index, tokens.len(), lineno)?);
        }
        records.push(CorpusRecord {
            tokens,
            quads,
            split,
            source_line,
        });
    }
    Ok(Corpus {
        categories,
        records,
    })
}

/// Read a category inventory, one name per line. Blank lines are ignored;
/// names must be unique and free of whitespace.
pub fn categories_from_text(text: &str) -> Result<Vec<String>> {
    let mut out: Vec<String> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let name = line.trim();
        if name.is_empty() {
            continue;
        }
        if name.contains(' ') || name.contains('\t') {
            return Err(line_err(i + 1, format!("bad category name {name:?}")));
        }
        if out.iter().any(|c| c == name) {
            return Err(line_err(i + 1, format!("duplicate category {name:?}")));
        }
        out.push(name.to_string());
    }
    if out.is_empty() {
        return Err(line_err(1, "no categories"));
    }
    Ok(out)
}
