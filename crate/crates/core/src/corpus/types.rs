use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A surface token with its character range in the raw document text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub index: usize,
    pub text: String,
    /// Character (not byte) offset of the first character.
    pub char_start: usize,
    /// Exclusive character offset.
    pub char_end: usize,
}

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "(usize, usize)", try_from = "(usize, usize)")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start >= end {
            return Err(Error::InvalidEntity(format!("empty span {start}..{end}")));
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, index: usize) -> bool {
        self.start <= index && index < self.end
    }

    pub fn contains_span(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

impl From<Span> for (usize, usize) {
    fn from(s: Span) -> Self {
        (s.start, s.end)
    }
}

impl TryFrom<(usize, usize)> for Span {
    type Error = Error;

    fn try_from((start, end): (usize, usize)) -> Result<Self> {
        Span::new(start, end)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.start, self.end)
    }
}

/// A typed entity made of one or more ordered, disjoint, non-adjacent spans.
///
/// Construction normalizes the fragments: spans are sorted and any
/// overlapping or touching fragments are merged, so `discontinuous()` is
/// well defined.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawEntity")]
pub struct Entity {
    pub label: String,
    pub spans: Vec<Span>,
}

#[derive(Deserialize)]
struct RawEntity {
    label: String,
    spans: Vec<Span>,
}

impl TryFrom<RawEntity> for Entity {
    type Error = Error;

    fn try_from(raw: RawEntity) -> Result<Self> {
        Entity::new(raw.label, raw.spans)
    }
}

impl Entity {
    pub fn new(label: impl Into<String>, mut spans: Vec<Span>) -> Result<Self> {
        let label = label.into();
        if spans.is_empty() {
            return Err(Error::InvalidEntity(format!("entity {label:?} has no spans")));
        }
        spans.sort();
        let mut merged: Vec<Span> = Vec::with_capacity(spans.len());
        for s in spans {
            if s.is_empty() {
                return Err(Error::InvalidEntity(format!("entity {label:?} has empty span")));
            }
            match merged.last_mut() {
                Some(last) if s.start <= last.end => last.end = last.end.max(s.end),
                _ => merged.push(s),
            }
        }
        Ok(Self { label, spans: merged })
    }

    /// Builds an entity from (not necessarily sorted) token indices.
    pub fn from_indices(label: impl Into<String>, indices: &[usize]) -> Result<Self> {
        let mut idx = indices.to_vec();
        idx.sort_unstable();
        idx.dedup();
        let spans = idx.iter().map(|&i| Span { start: i, end: i + 1 }).collect();
        Entity::new(label, spans)
    }

    pub fn token_indices(&self) -> Vec<usize> {
        self.spans.iter().flat_map(|s| s.start..s.end).collect()
    }

    pub fn head(&self) -> usize {
        self.spans[0].start
    }

    /// Index of the last token (inclusive).
    pub fn tail(&self) -> usize {
        self.spans[self.spans.len() - 1].end - 1
    }

    /// Minimal contiguous interval covering every fragment.
    pub fn covering(&self) -> Span {
        Span {
            start: self.head(),
            end: self.tail() + 1,
        }
    }

    pub fn is_discontinuous(&self) -> bool {
        self.spans.len() >= 2
    }

    /// True when the fragments touch two or more newline-delimited sentences.
    pub fn is_cross_sentence(&self, sentence_breaks: &[usize]) -> bool {
        sentence_of(sentence_breaks, self.head()) != sentence_of(sentence_breaks, self.tail())
    }

    pub fn len(&self) -> usize {
        self.spans.iter().map(Span::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    /// Ordering key used for deterministic output: (head, tail, label, spans).
    pub fn sort_key(&self) -> (usize, usize, &str, &[Span]) {
        (self.head(), self.tail(), self.label.as_str(), &self.spans)
    }
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.label)?;
        for (k, s) in self.spans.iter().enumerate() {
            if k > 0 {
                write!(f, "+")?;
            }
            write!(f, "{s}")?;
        }
        write!(f, ")")
    }
}

/// Sorts entities by [`Entity::sort_key`] and removes exact duplicates.
pub fn normalize_entities(entities: &mut Vec<Entity>) {
    entities.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    entities.dedup();
}

/// Sentence number of a token given the sorted break positions.
pub fn sentence_of(sentence_breaks: &[usize], token: usize) -> usize {
    sentence_breaks.partition_point(|&b| b <= token)
}
