//! Copy-generation network for temporal knowledge graph completion.
//!
//! Given a query `(subject, relation, ?, time)`, the model mixes a *copy*
//! distribution restricted to objects that already completed the pair in
//! earlier snapshots with a *generation* distribution over every entity.
//!
//! * [`data`]: quadruple files, normalization, reciprocal relations, splits
//! * [`vocab`]: historical vocabulary and copy masks
//! * [`model`]: forward pass and prediction
//! * [`train`]: hand-derived gradients, AMSGrad, snapshot-sequential fitting
//! * [`eval`]: filtered ranking metrics
//! * [`synth`]: synthetic data with controllable recurrence
//! * [`checkpoint`]: the `CYG1` binary parameter format
//! * [`cli`]: the `copygen` command line

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod synth;
pub mod train;
pub mod vocab;

pub use checkpoint::Checkpoint;
pub use data::{Dataset, DatasetMeta, Quadruple, SnapshotSequence};
pub use error::{Error, Result};
pub use eval::{evaluate, EvalConfig, EvalReport, FilterIndex, FilterRegime};
pub use model::{combine, predict, Mode, ModelParams, Predictor, ProbVector, Query};
pub use train::{fit, TrainConfig, Trained};
pub use vocab::{CopyMask, HistVocab, MaskStyle};
