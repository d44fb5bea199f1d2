//! Sentiment quadruples and the spans they are anchored to.
//!
//! A quadruple is (aspect term, aspect category, opinion term, opinion
//! polarity). Terms are token spans over one sentence; either term may be
//! implicit, in which case its span is absent.

use std::fmt;

use crate::error::{Error, Result};

/// Half-open token span `[start, end)` over fencepost positions.
/// `start < end` always; zero-width spans are never stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end, "span bounds reversed: [{start},{end})");
        Span { start, end }
    }

    pub fn width(&self) -> usize {
        self.end - self.start
    }

    /// Midpoint in fencepost units; used for token-distance tie decisions.
    pub fn midpoint(&self) -> f64 {
        (self.start + self.end) as f64 / 2.0
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Distance between span midpoints, in tokens.
    pub fn distance(&self, other: &Span) -> f64 {
        (self.midpoint() - other.midpoint()).abs()
    }

    pub fn shifted(&self, by: usize) -> Span {
        Span::new(self.start + by, self.end + by)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.start, self.end)
    }
}

/// Opinion polarity. The discriminants match the numeric codes used by the
/// public quadruple corpora (0 negative, 1 neutral, 2 positive), which also
/// fixes the canonical ordering everywhere a polarity list appears.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarity {
    Negative = 0,
    Neutral = 1,
    Positive = 2,
}

pub const POLARITIES: [Polarity; 3] = [Polarity::Negative, Polarity::Neutral, Polarity::Positive];

impl Polarity {
    pub fn from_code(code: u8) -> Option<Polarity> {
        match code {
            0 => Some(Polarity::Negative),
            1 => Some(Polarity::Neutral),
            2 => Some(Polarity::Positive),
            _ => None,
        }
    }

    pub fn code(&self) -> u8 {
        *self as u8
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
            Polarity::Positive => "positive",
        }
    }

    pub fn parse(s: &str) -> Option<Polarity> {
        match s {
            "negative" => Some(Polarity::Negative),
            "neutral" => Some(Polarity::Neutral),
            "positive" => Some(Polarity::Positive),
            _ => None,
        }
    }

    /// Index into the canonical polarity ordering.
    pub fn index(&self) -> usize {
        *self as usize
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Index of a category in the grammar's ordered category list.
pub type CatId = u16;

/// One aspect sentiment quadruple with the category resolved against a
/// grammar. `None` spans mean the term is implicit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SentimentQuadruple {
    pub aspect: Option<Span>,
    pub category: CatId,
    pub opinion: Option<Span>,
    pub polarity: Polarity,
}

impl SentimentQuadruple {
    pub fn fully_implicit(&self) -> bool {
        self.aspect.is_none() && self.opinion.is_none()
    }

    pub fn has_implicit_side(&self) -> bool {
        self.aspect.is_none() || self.opinion.is_none()
    }

    /// Every explicit span must lie inside `[0, n)` and be non-empty.
    pub fn check_spans(&self, n: usize) -> Result<()> {
        for (side, span) in [("aspect", self.aspect), ("opinion", self.opinion)] {
            if let Some(s) = span {
                if s.start >= s.end || s.end > n {
                    return Err(Error::Spans(format!(
                        "{side} span [{},{}) out of range for sentence of {n} tokens",
                        s.start, s.end
                    )));
                }
            }
        }
        Ok(())
    }

    /// Leftmost explicit term position, used for canonical quad ordering.
    /// Quads are ordered by (leftmost explicit start, aspect start, opinion
    /// start), implicit sides sorting last.
    pub fn sort_key(&self) -> (usize, usize, usize) {
        let a = self.aspect.map(|s| s.start).unwrap_or(usize::MAX);
        let o = self.opinion.map(|s| s.start).unwrap_or(usize::MAX);
        (a.min(o), a, o)
    }
}

/// Sort quads into the canonical reporting order.
pub fn sort_quads(quads: &mut [SentimentQuadruple]) {
    quads.sort_by_key(|q| (q.sort_key(), q.category, q.polarity));
}
