//! Seeded synthetic data: fixture corpora that exercise every structural
//! situation, and random quad sets and trees for property checks. All
//! generators are deterministic in their seed.
//!
//! Labels are deterministic functions of the content words (a noun fixes
//! its category, an adjective its polarity), so no two sentences ever
//! assign conflicting labels to the same surface form and a big enough
//! network can fit a fixture corpus exactly.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::builder::{build_tree, validate_parseable, BuildOutput, Sentence};
use crate::corpus::{Corpus, CorpusRecord, Split};
use crate::quad::{sort_quads, CatId, Polarity, SentimentQuadruple, Span, POLARITIES};

/// Category inventory all synthetic corpora share.
pub const CATEGORIES: [&str; 4] = [
    "AMBIENCE#GENERAL",
    "FOOD#QUALITY",
    "PRICE#VALUE",
    "SERVICE#GENERAL",
];

const NOUNS: [&str; 24] = [
    "food", "service", "screen", "battery", "keyboard", "pasta", "staff", "decor", "menu", "wine",
    "touchpad", "salad", "burger", "coffee", "desk", "mouse", "lamp", "sofa", "router", "bread",
    "cheese", "juice", "fan", "shelf",
];
const ADJS: [&str; 24] = [
    "great", "bland", "slow", "crisp", "fair", "noisy", "fresh", "dim", "sturdy", "cheap", "soft",
    "sharp", "warm", "cold", "loud", "quiet", "bright", "rough", "smooth", "stale", "tender",
    "bitter", "roomy", "flimsy",
];
const FILLERS: [&str; 24] = [
    "would", "buy", "again", "maybe", "soon", "honestly", "still", "back", "often", "here",
    "today", "anyway", "perhaps", "truly", "rather", "indeed", "somewhat", "mostly", "barely",
    "nearly", "fully", "partly", "almost", "later",
];
// Words for fully implicit sentences. These sentences all share the same
// anchor spans, so the encoder can only read their labels out of the
// words; keying the tails to the lead gives it three consistent tokens
// instead of one, and keeping the pools private to this pattern means the
// tokens never pick up gradients from other roles.
const BI_LEADS: [&str; 12] = [
    "recommend",
    "avoid",
    "return",
    "skip",
    "revisit",
    "complain",
    "endorse",
    "regret",
    "reorder",
    "hesitate",
    "praise",
    "dismiss",
];
const BI_TAILS: [&str; 12] = [
    "wholeheartedly",
    "never",
    "gladly",
    "hardly",
    "eagerly",
    "bitterly",
    "surely",
    "sadly",
    "promptly",
    "reluctantly",
    "warmly",
    "flatly",
];
const BI_TAILS2: [&str; 12] = [
    "everyone",
    "nobody",
    "anytime",
    "twice",
    "forever",
    "elsewhere",
    "someday",
    "once",
    "online",
    "upstairs",
    "downtown",
    "outright",
];

/// Category carried by pool word `i`.
fn word_cat(i: usize) -> CatId {
    (i % CATEGORIES.len()) as CatId
}

/// Polarity carried by pool word `i`.
fn word_pol(i: usize) -> Polarity {
    POLARITIES[i % POLARITIES.len()]
}

fn pick_i<R: Rng>(len: usize, rng: &mut R) -> usize {
    rng.random_range(0..len)
}

/// Two distinct indices.
fn pick2_i<R: Rng>(len: usize, rng: &mut R) -> (usize, usize) {
    let a = rng.random_range(0..len);
    let mut b = rng.random_range(0..len - 1);
    if b >= a {
        b += 1;
    }
    (a, b)
}

/// Two indices from distinct classes mod `m`, so the words carry
/// different labels.
fn pick2_mod<R: Rng>(len: usize, m: usize, rng: &mut R) -> (usize, usize) {
    loop {
        let (a, b) = pick2_i(len, rng);
        if a % m != b % m {
            return (a, b);
        }
    }
}

fn q(
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

pub const N_PATTERNS: usize = 10;

/// One sentence from the fixed pattern inventory. Patterns 0, 1 and 9 are
/// basic (9 carries no quads at all), 2 and 3 share a term one-to-many,
/// 4 and 5 leave one side implicit, 6 leaves both implicit, and 7 and 8
/// share a hub term whose pairings differ per partner. Every pattern
/// leaves the slack the tree needs, so all records survive a corpus
/// import unskipped.
pub fn make_pattern<R: Rng>(pattern: usize, rng: &mut R) -> (Vec<String>, Vec<SentimentQuadruple>) {
    let nouns = NOUNS.len();
    let adjs = ADJS.len();
    let fillers = FILLERS.len();
    match pattern % N_PATTERNS {
        0 => {
            let n = pick_i(nouns, rng);
            let a = pick_i(adjs, rng);
            let quads = vec![q(Some((1, 2)), word_cat(n), Some((3, 4)), word_pol(a))];
            (
                vec![
                    "the".into(),
                    NOUNS[n].into(),
                    "was".into(),
                    ADJS[a].into(),
                    ".".into(),
                ],
                quads,
            )
        }
        1 => {
            let (n1, n2) = pick2_i(nouns, rng);
            let (a1, a2) = pick2_i(adjs, rng);
            let quads = vec![
                q(Some((0, 1)), word_cat(n1), Some((2, 3)), word_pol(a1)),
                q(Some((4, 5)), word_cat(n2), Some((6, 7)), word_pol(a2)),
            ];
            let tokens = vec![
                NOUNS[n1].into(),
                "was".into(),
                ADJS[a1].into(),
                "but".into(),
                NOUNS[n2].into(),
                "was".into(),
                ADJS[a2].into(),
            ];
            (tokens, quads)
        }
        2 => {
            let n = pick_i(nouns, rng);
            let (a1, a2) = pick2_i(adjs, rng);
            let quads = vec![
                q(Some((0, 1)), word_cat(n), Some((2, 3)), word_pol(a1)),
                q(Some((0, 1)), word_cat(n), Some((4, 5)), word_pol(a2)),
            ];
            let tokens = vec![
                NOUNS[n].into(),
                "was".into(),
                ADJS[a1].into(),
                "and".into(),
                ADJS[a2].into(),
            ];
            (tokens, quads)
        }
        3 => {
            let (n1, n2) = pick2_i(nouns, rng);
            let a = pick_i(adjs, rng);
            let quads = vec![
                q(Some((0, 1)), word_cat(n1), Some((4, 5)), word_pol(a)),
                q(Some((2, 3)), word_cat(n2), Some((4, 5)), word_pol(a)),
            ];
            let tokens = vec![
                NOUNS[n1].into(),
                "and".into(),
                NOUNS[n2].into(),
                "were".into(),
                ADJS[a].into(),
            ];
            (tokens, quads)
        }
        4 => {
            let a = pick_i(adjs, rng);
            let quads = vec![q(None, word_cat(a), Some((2, 3)), word_pol(a))];
            (
                vec![
                    "really".into(),
                    "very".into(),
                    ADJS[a].into(),
                    "overall".into(),
                ],
                quads,
            )
        }
        5 => {
            let n = pick_i(nouns, rng);
            let quads = vec![q(Some((1, 2)), word_cat(n), None, word_pol(n))];
            (
                vec!["the".into(), NOUNS[n].into(), "overall".into(), ".".into()],
                quads,
            )
        }
        6 => {
            let w1 = pick_i(BI_LEADS.len(), rng);
            let quads = vec![q(None, word_cat(w1), None, word_pol(w1))];
            (
                vec![
                    BI_LEADS[w1].into(),
                    BI_TAILS[w1].into(),
                    BI_TAILS2[w1].into(),
                ],
                quads,
            )
        }
        7 => {
            // Aspect hub; the partner adjectives carry distinct categories,
            // which is what makes the pairing per-partner.
            let (a1, a2) = pick2_mod(adjs, CATEGORIES.len(), rng);
            let n = pick_i(nouns, rng);
            let quads = vec![
                q(Some((3, 4)), word_cat(a1), Some((0, 1)), word_pol(a1)),
                q(Some((3, 4)), word_cat(a2), Some((2, 3)), word_pol(a2)),
            ];
            (
                vec![
                    ADJS[a1].into(),
                    "but".into(),
                    ADJS[a2].into(),
                    NOUNS[n].into(),
                ],
                quads,
            )
        }
        8 => {
            // Opinion hub; polarity rides on the partner nouns and the two
            // differ, so the shared adjective cannot settle it alone.
            let (n1, n2) = pick2_mod(nouns, POLARITIES.len(), rng);
            let a = pick_i(adjs, rng);
            let quads = vec![
                q(Some((0, 1)), word_cat(n1), Some((3, 4)), word_pol(n1)),
                q(Some((2, 3)), word_cat(n2), Some((3, 4)), word_pol(n2)),
            ];
            (
                vec![
                    NOUNS[n1].into(),
                    "and".into(),
                    NOUNS[n2].into(),
                    ADJS[a].into(),
                ],
                quads,
            )
        }
        _ => {
            let w1 = pick_i(fillers, rng);
            let (w2, w3) = pick2_i(fillers, rng);
            let w4 = pick_i(fillers, rng);
            let tokens = vec![
                FILLERS[w1].into(),
                FILLERS[w2].into(),
                FILLERS[w3].into(),
                FILLERS[w4].into(),
            ];
            (tokens, vec![])
        }
    }
}

fn record(
    i: usize,
    tokens: Vec<String>,
    mut quads: Vec<SentimentQuadruple>,
    split: Split,
) -> CorpusRecord {
    sort_quads(&mut quads);
    CorpusRecord {
        tokens,
        quads,
        split,
        source_line: i + 1,
    }
}

/// A corpus of `n` sentences cycling through the pattern inventory, split
/// 8:1:1 into train, validation, and test. The validation and test slots
/// rotate one position per block of ten, so no split is confounded with a
/// pattern.
pub fn fixture_corpus(n: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let (tokens, quads) = make_pattern(i % N_PATTERNS, &mut rng);
        let split = match (i + i / 10) % 10 {
            8 => Split::Validation,
            9 => Split::Test,
            _ => Split::Train,
        };
        records.push(record(i, tokens, quads, split));
    }
    Corpus {
        categories: CATEGORIES.map(String::from).to_vec(),
        records,
    }
}

/// Fifty unique training sentences for memorization runs. Uniqueness
/// matters: repeated draws of one surface form would shrink the corpus
/// below the advertised size, even though they could no longer conflict.
///
/// The mix leans on the explicit patterns. The implicit ones all hang
/// their labels on the same two anchor spans, where the encoder has to
/// read the value out of a distant word, so piling them up makes the fit
/// needlessly slow without covering anything new.
pub fn overfit_corpus(seed: u64) -> Corpus {
    const MIX: [usize; N_PATTERNS] = [8, 7, 6, 6, 3, 3, 2, 6, 5, 4];
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut seen = std::collections::BTreeSet::new();
    let mut records = Vec::new();
    for (pattern, want) in MIX.iter().enumerate() {
        let mut have = 0;
        while have < *want {
            let (tokens, quads) = make_pattern(pattern, &mut rng);
            if !seen.insert(tokens.join(" ")) {
                continue;
            }
            records.push(record(records.len(), tokens, quads, Split::Train));
            have += 1;
        }
    }
    Corpus {
        categories: CATEGORIES.map(String::from).to_vec(),
        records,
    }
}

/// Random quad set over `n` tokens that the validator accepts; rejection
/// sampled, so any accepted shape can appear.
pub fn random_quad_set<R: Rng>(
    n: usize,
    n_categories: usize,
    rng: &mut R,
) -> Vec<SentimentQuadruple> {
    loop {
        let k = rng.random_range(0..=3);
        let mut quads = Vec::with_capacity(k);
        for _ in 0..k {
            let side = |rng: &mut R| {
                if rng.random_range(0..4) == 0 {
                    return None;
                }
                let a = rng.random_range(0..n);
                let b = rng.random_range(a + 1..=n.min(a + 3));
                Some(Span::new(a, b))
            };
            quads.push(SentimentQuadruple {
                aspect: side(rng),
                category: rng.random_range(0..n_categories) as CatId,
                opinion: side(rng),
                polarity: POLARITIES[rng.random_range(0..POLARITIES.len())],
            });
        }
        sort_quads(&mut quads);
        quads.dedup();
        if validate_parseable(&quads).is_ok() {
            return quads;
        }
    }
}

/// Random sentence of `n` words drawn from the shared pools.
pub fn random_words<R: Rng>(n: usize, rng: &mut R) -> Vec<String> {
    (0..n)
        .map(|_| {
            let pool = match rng.random_range(0..3) {
                0 => &NOUNS,
                1 => &ADJS,
                _ => &FILLERS,
            };
            pool[rng.random_range(0..pool.len())].to_string()
        })
        .collect()
}

/// Random rule-form tree: a random accepted quad set rendered over a
/// random sentence, rejection sampled until the sentence can hold it.
pub fn random_tree<R: Rng>(n: usize, n_categories: usize, rng: &mut R) -> BuildOutput {
    loop {
        let quads = random_quad_set(n, n_categories, rng);
        let sentence = Sentence::new(random_words(n, rng));
        if let Ok(out) = build_tree(&sentence, &quads) {
            return out;
        }
    }
}

#[cfg(test)]
mod test {
    use super::*;
    use crate::builder::SituationTag;
    use crate::corpus::check_situation;
    use crate::grammar::{build_grammar, GrammarConfig, LabelSet};
    use crate::recover::recover_quads;
    use crate::trainer::make_instance;

    #[test]
    fn fixtures_cover_every_tag_and_survive_import_checks() {
        let c = fixture_corpus(60, 1);
        let labels = LabelSet::new(c.categories.len());
        let mut tags = std::collections::BTreeSet::new();
        for r in &c.records {
            let tag = check_situation(&r.sentence(), &r.quads, &labels)
                .unwrap_or_else(|e| panic!("record {} skipped: {e}", r.source_line));
            tags.insert(tag);
        }
        assert_eq!(tags.len(), SituationTag::ALL.len());
        for split in Split::ALL {
            assert!(c.records_in(split).count() > 0, "{split} empty");
        }
    }

    #[test]
    fn fixtures_round_trip_to_their_gold_quads() {
        let g = build_grammar(&GrammarConfig::all_families(
            CATEGORIES.map(String::from).to_vec(),
        ))
        .unwrap();
        let labels = g.label_set();
        let c = fixture_corpus(40, 2);
        for r in &c.records {
            let inst = make_instance(&g, &r.sentence(), &r.quads).unwrap();
            let got = recover_quads(&inst.gold, &labels, inst.sentence.fake_prefix).unwrap();
            assert_eq!(got, inst.gold_quads, "line {}", r.source_line);
        }
    }

    #[test]
    fn labels_are_functions_of_the_surface() {
        // The same surface form can never carry two different quad sets.
        let mut seen: std::collections::BTreeMap<String, Vec<SentimentQuadruple>> =
            std::collections::BTreeMap::new();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for i in 0..400 {
            let (tokens, mut quads) = make_pattern(i % N_PATTERNS, &mut rng);
            sort_quads(&mut quads);
            let key = tokens.join(" ");
            if let Some(prev) = seen.get(&key) {
                assert_eq!(prev, &quads, "{key}");
            } else {
                seen.insert(key, quads);
            }
        }
    }

    #[test]
    fn generators_are_seed_deterministic() {
        assert_eq!(fixture_corpus(30, 7), fixture_corpus(30, 7));
        assert_ne!(fixture_corpus(30, 7), fixture_corpus(30, 8));
        assert_eq!(overfit_corpus(3), overfit_corpus(3));
    }

    #[test]
    fn overfit_corpus_has_fifty_unique_train_sentences() {
        let c = overfit_corpus(0);
        assert_eq!(c.records.len(), 50);
        let keys: std::collections::BTreeSet<String> =
            c.records.iter().map(|r| r.tokens.join(" ")).collect();
        assert_eq!(keys.len(), 50);
        assert!(c.records.iter().all(|r| r.split == Split::Train));
    }

    #[test]
    fn random_trees_build_and_stay_in_bounds() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(2..8);
            let out = random_tree(n, 2, &mut rng);
            assert_eq!(out.tree.span, Span::new(0, out.sentence.n()));
            for quad in &out.quads {
                quad.check_spans(out.sentence.n()).unwrap();
            }
        }
    }
}
