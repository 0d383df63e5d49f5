//! One-shot pruning of layered linear models.
//!
//! Weights are scored by magnitude, by magnitude times input feature norm
//! (Wanda), or by a second-order saliency built from the layer Hessian, then
//! pruned within configurable comparison groups or N:M blocks. Pruned layers
//! can optionally be refit by least squares on calibration activations.

pub mod cli;
pub mod error;
pub mod model_store;
pub mod numerics;
pub mod pipeline;
pub mod prune;
pub mod reconstruct;
pub mod synth;

pub use error::{Error, Result};
pub use model_store::{
    load_calibration, load_checkpoint, save_calibration, save_checkpoint, Activation,
    CalibrationBatch, LinearLayer, ModelCheckpoint,
};
pub use numerics::{DenseMatrix, NormKind};
pub use pipeline::{prune_model, PruneConfig, PruneReport};
pub use prune::{GroupingScheme, PruneMask, PruneMetric, ScoreMatrix, SparsityTarget};
pub use reconstruct::{Dampening, UpdatePolicy};
