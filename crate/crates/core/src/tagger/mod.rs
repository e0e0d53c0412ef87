//! A toy-scale grid tagging network with exact analytic gradients, its
//! training loop and prediction.

mod config;
pub mod gradcheck;
mod model;
pub mod nn;
mod params;
mod train;
mod vocab;

pub use config::{ModelConfig, Selection};
pub use model::{Checkpoint, GridModel, Inspection, Prediction};
pub use params::{Group, Params, Tensor};
pub use train::{init_model, labels_of, train, train_model, DevSet, EpochRecord, TrainOutcome};
pub use vocab::Vocab;
