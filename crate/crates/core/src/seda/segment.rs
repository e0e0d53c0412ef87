//! Boundary-driven segmentation, entity localization and supplemental
//! intervals.
//!
//! Predicted entities become odd-numbered segments (their minimal covering
//! intervals, merged when they overlap or touch); the text between them
//! becomes even-numbered segments, split into blocks no longer than the
//! grid size. Each odd segment is then joined to the block right before it,
//! so the entity sits at the end of its sample.

use serde::{Deserialize, Serialize};

use super::config::SedaConfig;
use crate::corpus::{Document, Entity, Sample, SampleKind, Span};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    /// Covers one or more predicted entities.
    OddEntity,
    /// Text between predicted entities.
    EvenText,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub parity: Parity,
    /// Position number, with a block suffix for split text (`"2-1"`).
    pub block_id: String,
    /// Token range in document coordinates.
    pub range: Span,
    /// Indices of the anchoring predictions (odd segments only).
    pub anchors: Vec<usize>,
}

pub fn grid_size_for(doc_length: usize, config: &SedaConfig) -> usize {
    config.grid_size_table.size_for(doc_length)
}

/// Splits `len` tokens into `ceil(len / max)` blocks whose sizes differ by
/// at most one.
fn balanced_blocks(start: usize, len: usize, max: usize) -> Vec<Span> {
    if len == 0 {
        return Vec::new();
    }
    let k = len.div_ceil(max);
    let (base, extra) = (len / k, len % k);
    let mut out = Vec::with_capacity(k);
    let mut s = start;
    for b in 0..k {
        let size = base + usize::from(b < extra);
        out.push(Span {
            start: s,
            end: s + size,
        });
        s += size;
    }
    out
}

/// Tiles `doc` with odd segments around `anchors` and even text blocks.
pub fn build_segments(doc: &Document, anchors: &[Entity], grid_size: usize) -> Result<Vec<Segment>> {
    if grid_size == 0 {
        return Err(Error::Config("grid size must be positive".into()));
    }
    let n = doc.len();
    let mut intervals: Vec<(usize, usize, usize)> = Vec::with_capacity(anchors.len());
    for (k, e) in anchors.iter().enumerate() {
        if e.tail() >= n {
            return Err(Error::InvalidEntity(format!(
                "prediction {e} outside document {} of {n} tokens",
                doc.id
            )));
        }
        intervals.push((e.head(), e.tail() + 1, k));
    }
    intervals.sort();
    // merge overlapping or adjacent covering intervals
    let mut odd: Vec<(Span, Vec<usize>)> = Vec::new();
    for (s, e, k) in intervals {
        match odd.last_mut() {
            Some((span, ids)) if s <= span.end => {
                span.end = span.end.max(e);
                ids.push(k);
            }
            _ => odd.push((Span { start: s, end: e }, vec![k])),
        }
    }
    let mut segments = Vec::new();
    let push_text = |segments: &mut Vec<Segment>, number: usize, start: usize, end: usize| {
        let blocks = balanced_blocks(start, end - start, grid_size);
        let split = blocks.len() > 1;
        for (b, range) in blocks.into_iter().enumerate() {
            segments.push(Segment {
                parity: Parity::EvenText,
                block_id: if split {
                    format!("{number}-{}", b + 1)
                } else {
                    number.to_string()
                },
                range,
                anchors: Vec::new(),
            });
        }
    };
    let mut cursor = 0;
    for (m, (span, mut ids)) in odd.into_iter().enumerate() {
        push_text(&mut segments, 2 * m, cursor, span.start);
        ids.sort_unstable();
        segments.push(Segment {
            parity: Parity::OddEntity,
            block_id: (2 * m + 1).to_string(),
            range: span,
            anchors: ids,
        });
        cursor = span.end;
    }
    let last = segments.iter().filter(|s| s.parity == Parity::OddEntity).count();
    push_text(&mut segments, 2 * last, cursor, n);
    Ok(segments)
}

/// Joins every odd segment to the text block immediately before it (an ES
/// sample ending on the entity); every other text block becomes an NES
/// sample. Anchors are projected into the ES samples.
pub fn localize(doc: &Document, segments: &[Segment], anchors: &[Entity]) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    let mut pending: Option<&Segment> = None;
    let nes = |seg: &Segment| {
        Sample::from_document(
            doc,
            format!("{}#{}", doc.id, seg.block_id),
            (seg.range.start..seg.range.end).collect(),
            SampleKind::Nes,
        )
    };
    for seg in segments {
        match seg.parity {
            Parity::EvenText => {
                if let Some(prev) = pending.replace(seg) {
                    out.push(nes(prev)?);
                }
            }
            Parity::OddEntity => {
                let (start, id) = match pending.take() {
                    Some(prev) if prev.range.end == seg.range.start => (
                        prev.range.start,
                        format!("{}#{}+{}", doc.id, prev.block_id, seg.block_id),
                    ),
                    Some(prev) => {
                        out.push(nes(prev)?);
                        (seg.range.start, format!("{}#{}", doc.id, seg.block_id))
                    }
                    None => (seg.range.start, format!("{}#{}", doc.id, seg.block_id)),
                };
                let mut s = Sample::from_document(doc, id, (start..seg.range.end).collect(), SampleKind::Es)?;
                let own: Vec<Entity> = seg.anchors.iter().map(|&k| anchors[k].clone()).collect();
                s.anchors = s.project_all(&own);
                out.push(s);
            }
        }
    }
    if let Some(prev) = pending {
        out.push(nes(prev)?);
    }
    Ok(out)
}

/// Adds up to `look_backward` preceding and `look_forward` following
/// document tokens to samples of the enabled kinds, then re-projects gold
/// and anchors.
pub fn supplement(sample: &Sample, doc: &Document, config: &SedaConfig) -> Result<Sample> {
    let enabled = match sample.kind {
        SampleKind::Es => config.es,
        SampleKind::Nes => config.nes,
        SampleKind::Plain => false,
    };
    let (Some(&first), Some(&last)) = (sample.offset_map.first(), sample.offset_map.last()) else {
        return Ok(sample.clone());
    };
    if !enabled {
        return Ok(sample.clone());
    }
    if last + 1 - first != sample.len() {
        return Err(Error::Consistency(format!(
            "sample {} is not a contiguous window",
            sample.id
        )));
    }
    let start = first.saturating_sub(config.look_backward);
    let end = (last + 1 + config.look_forward).min(doc.len());
    let anchors = sample
        .anchors
        .iter()
        .map(|a| sample.to_document(a))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Sample::from_document(doc, sample.id.clone(), (start..end).collect(), sample.kind)?;
    out.anchors = out.project_all(&anchors);
    Ok(out)
}

/// Samples of one document and the segmentation that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub grid_size: usize,
    pub segments: Vec<Segment>,
    pub samples: Vec<Sample>,
}

pub fn augment_document(doc: &Document, anchors: &[Entity], config: &SedaConfig) -> Result<Augmented> {
    let grid_size = grid_size_for(doc.len(), config);
    let segments = build_segments(doc, anchors, grid_size)?;
    let samples = localize(doc, &segments, anchors)?
        .iter()
        .map(|s| supplement(s, doc, config))
        .collect::<Result<_>>()?;
    Ok(Augmented {
        grid_size,
        segments,
        samples,
    })
}
