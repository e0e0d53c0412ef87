//! Entity-centric grid augmentation for discontinuous named-entity
//! recognition.
//!
//! The crate is organised along the pipeline:
//!
//! - [`corpus`]: standoff ingestion, tokenization, newline segmentation,
//!   context masking and coverage accounting.
//! - [`grid`]: the NNW/THW word-pair tag scheme (plus PNW/HTW mirrors),
//!   encoding and path decoding.
//! - [`metrics`]: exact-match P/R/F1, entity-boundary scores and the subset
//!   and unified-evaluation filters.
//! - [`tagger`]: a small grid tagging network with hand-written gradients.
//! - [`seda`]: boundary-driven segmentation, grid size normalization, entity
//!   localization, supplemental intervals and the iterative loop.
//! - [`synthetic`]: a generator for toy corpora with discontinuous and
//!   cross-sentence entities.

pub mod corpus;
mod error;
pub mod grid;
pub mod metrics;
pub mod seda;
pub mod synthetic;
pub mod tagger;
pub mod util;

pub use error::{Error, Result};
