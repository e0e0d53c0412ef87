//! Self-adapted, entity-centric data augmentation: predicted entities
//! drive a re-segmentation of each document into samples that keep every
//! anchoring entity whole, pad them with nearby context, and feed them back
//! to the tagger, optionally over several iterations.

mod config;
mod pipeline;
mod segment;

pub use config::{Combiner, GridSizeTable, SedaConfig};
pub use pipeline::{
    augment_corpus, baseline_predictions, combine, cross_sentence_report, gold_anchors, predict_documents, run_mul,
    run_once, select_boundaries, CrossSentenceRow, EntityPredictor, GoldOracle, IterationSummary, ModelFactory,
    SedaRun, SplitRun, Splits,
};
pub use segment::{augment_document, build_segments, grid_size_for, localize, supplement, Augmented, Parity, Segment};
