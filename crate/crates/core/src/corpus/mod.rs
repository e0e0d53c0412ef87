//! Corpus ingestion, tokenization, baseline segmentation, context masking
//! and coverage accounting.

mod document;
pub mod io;
mod sample;
mod segment;
mod standoff;
mod tokenize;
mod types;

pub use document::Document;
pub use sample::{Sample, SampleKind};
pub use segment::{
    corpus_coverage, coverage, mask_context, split_newline, whole_document, CorpusStats, CoverageReport, MaskMode,
    MaskOutcome, SubsetCount,
};
pub use standoff::{parse_annotation_lines, parse_standoff, StandoffAnnotation};
pub use tokenize::tokenize;
pub use types::{normalize_entities, sentence_of, Entity, Span, Token};
