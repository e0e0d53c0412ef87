use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeMode {
    /// NONE, NNW and one THW tag per label.
    Base,
    /// Base plus PNW and one HTW tag per label.
    Extended,
}

/// A word-pair relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    None,
    /// Next-neighboring word, at `(i, j)` with `i < j`.
    Nnw,
    /// Tail-head word carrying a label index, at `(tail, head)` with `tail >= head`.
    Thw(usize),
    /// Previous-neighboring word, mirror of NNW at `(j, i)`.
    Pnw,
    /// Head-tail word, mirror of THW at `(head, tail)`.
    Htw(usize),
}

/// Tag inventory over an ordered label set.
///
/// Ids: `0 = NONE`, `1 = NNW`, `2.. = THW-label`; the extended mode then
/// appends `PNW` and `HTW-label`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagScheme {
    pub mode: SchemeMode,
    pub labels: Vec<String>,
}

impl TagScheme {
    pub fn new(mode: SchemeMode, mut labels: Vec<String>) -> Self {
        labels.sort();
        labels.dedup();
        Self { mode, labels }
    }

    pub fn base<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Self {
        Self::new(SchemeMode::Base, labels.into_iter().map(Into::into).collect())
    }

    pub fn extended<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Self {
        Self::new(SchemeMode::Extended, labels.into_iter().map(Into::into).collect())
    }

    pub fn num_tags(&self) -> usize {
        let l = self.labels.len();
        match self.mode {
            SchemeMode::Base => 2 + l,
            SchemeMode::Extended => 3 + 2 * l,
        }
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    pub fn id(&self, tag: Tag) -> u16 {
        let l = self.labels.len();
        let id = match tag {
            Tag::None => 0,
            Tag::Nnw => 1,
            Tag::Thw(k) => 2 + k,
            Tag::Pnw => 2 + l,
            Tag::Htw(k) => 3 + l + k,
        };
        id as u16
    }

    pub fn tag(&self, id: u16) -> Result<Tag> {
        let id = id as usize;
        let l = self.labels.len();
        let tag = match id {
            0 => Tag::None,
            1 => Tag::Nnw,
            _ if id < 2 + l => Tag::Thw(id - 2),
            _ if self.mode == SchemeMode::Extended && id == 2 + l => Tag::Pnw,
            _ if self.mode == SchemeMode::Extended && id < 3 + 2 * l => Tag::Htw(id - 3 - l),
            _ => {
                return Err(Error::TagOutOfRange {
                    tag: id,
                    num_tags: self.num_tags(),
                })
            }
        };
        Ok(tag)
    }

    pub fn name(&self, tag: Tag) -> String {
        match tag {
            Tag::None => "NONE".into(),
            Tag::Nnw => "NNW".into(),
            Tag::Thw(k) => format!("THW-{}", self.labels[k]),
            Tag::Pnw => "PNW".into(),
            Tag::Htw(k) => format!("HTW-{}", self.labels[k]),
        }
    }

    pub fn parse_name(&self, name: &str) -> Result<Tag> {
        let unknown = || Error::Config(format!("unknown tag {name:?}"));
        let label = |l: &str| self.label_index(l).ok_or_else(unknown);
        let tag = match name {
            "NONE" => Tag::None,
            "NNW" => Tag::Nnw,
            "PNW" if self.mode == SchemeMode::Extended => Tag::Pnw,
            _ => {
                if let Some(l) = name.strip_prefix("THW-") {
                    Tag::Thw(label(l)?)
                } else if let Some(l) = name.strip_prefix("HTW-").filter(|_| self.mode == SchemeMode::Extended) {
                    Tag::Htw(label(l)?)
                } else {
                    return Err(unknown());
                }
            }
        };
        Ok(tag)
    }

    /// Whether `tag` may sit at `(row, col)`.
    pub fn placement_ok(tag: Tag, row: usize, col: usize) -> bool {
        match tag {
            Tag::None => true,
            Tag::Nnw => row < col,
            Tag::Thw(_) => row >= col,
            Tag::Pnw => row > col,
            Tag::Htw(_) => row <= col,
        }
    }
}
