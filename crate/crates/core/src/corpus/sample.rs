use serde::{Deserialize, Serialize};

use super::document::Document;
use super::types::{normalize_entities, Entity};
use crate::error::{Error, Result};

/// How a sample was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    /// Baseline segmentation (newline split or whole document).
    Plain,
    /// Contains at least one anchoring predicted entity.
    Es,
    /// Contains no anchoring predicted entity.
    Nes,
}

/// A model input unit cut from a document, with a map back to document
/// token positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub doc_id: String,
    pub tokens: Vec<String>,
    /// Sample position -> document token index, strictly increasing.
    pub offset_map: Vec<usize>,
    pub kind: SampleKind,
    /// Gold entities in sample coordinates.
    pub gold: Vec<Entity>,
    /// Anchoring predictions in sample coordinates (ES samples only).
    pub anchors: Vec<Entity>,
    /// Positions preceded by a document sentence break, in sample coordinates.
    pub sentence_breaks: Vec<usize>,
}

impl Sample {
    /// Cuts `offset_map` out of `doc` and projects every gold entity whose
    /// tokens all fall inside the sample.
    pub fn from_document(
        doc: &Document,
        id: impl Into<String>,
        offset_map: Vec<usize>,
        kind: SampleKind,
    ) -> Result<Self> {
        let id = id.into();
        check_offset_map(&id, &offset_map, doc.len())?;
        let tokens = offset_map.iter().map(|&i| doc.tokens[i].text.clone()).collect();
        let mut sample = Self {
            id,
            doc_id: doc.id.clone(),
            tokens,
            offset_map,
            kind,
            gold: Vec::new(),
            anchors: Vec::new(),
            sentence_breaks: Vec::new(),
        };
        sample.gold = sample.project_all(&doc.gold);
        sample.sentence_breaks = (1..sample.len())
            .filter(|&k| doc.sentence_of(sample.offset_map[k]) != doc.sentence_of(sample.offset_map[k - 1]))
            .collect();
        Ok(sample)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Sample position of a document token, if present.
    pub fn position_of(&self, doc_index: usize) -> Option<usize> {
        self.offset_map.binary_search(&doc_index).ok()
    }

    /// Whether every token of a document-coordinate entity is in the sample.
    pub fn contains(&self, entity: &Entity) -> bool {
        entity
            .spans
            .iter()
            .all(|s| (s.start..s.end).all(|i| self.position_of(i).is_some()))
    }

    /// Maps a document-coordinate entity into sample coordinates.
    pub fn project(&self, entity: &Entity) -> Option<Entity> {
        let idx: Option<Vec<usize>> = entity
            .token_indices()
            .into_iter()
            .map(|i| self.position_of(i))
            .collect();
        idx.and_then(|idx| Entity::from_indices(entity.label.clone(), &idx).ok())
    }

    pub fn project_all(&self, entities: &[Entity]) -> Vec<Entity> {
        let mut out: Vec<Entity> = entities.iter().filter_map(|e| self.project(e)).collect();
        normalize_entities(&mut out);
        out
    }

    /// Maps a sample-coordinate entity back to document coordinates.
    pub fn to_document(&self, entity: &Entity) -> Result<Entity> {
        let idx = entity
            .token_indices()
            .into_iter()
            .map(|i| {
                self.offset_map.get(i).copied().ok_or_else(|| {
                    Error::Consistency(format!("sample {}: position {i} beyond {} tokens", self.id, self.len()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Entity::from_indices(entity.label.clone(), &idx)
    }

    /// Checks that the sample can have been cut from `doc`.
    pub fn check_against(&self, doc: &Document) -> Result<()> {
        if self.doc_id != doc.id {
            return Err(Error::Consistency(format!(
                "sample {} belongs to {}, not {}",
                self.id, self.doc_id, doc.id
            )));
        }
        check_offset_map(&self.id, &self.offset_map, doc.len())?;
        if self.tokens.len() != self.offset_map.len() {
            return Err(Error::Consistency(format!(
                "sample {}: token/offset length mismatch",
                self.id
            )));
        }
        Ok(())
    }
}

fn check_offset_map(id: &str, map: &[usize], doc_len: usize) -> Result<()> {
    if map.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Consistency(format!(
            "sample {id}: offset map not strictly increasing"
        )));
    }
    if let Some(&last) = map.last() {
        if last >= doc_len {
            return Err(Error::Consistency(format!(
                "sample {id}: offset {last} outside document of {doc_len} tokens"
            )));
        }
    }
    Ok(())
}
