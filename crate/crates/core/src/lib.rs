//! Statistical relation network for sequence-level (VAS) pain estimation.
//!
//! A video is a time series of per-frame facial action unit (AU) occurrence
//! probabilities. Videos are centered, cut into fixed-length segments, run
//! through a GRU, pooled by a statistical layer (mean, std, LogSumExp, median)
//! into a fixed-length vector, and compared against a sample set holding one
//! video per VAS level. A small relation MLP scores each pair and a softmax
//! over the 11 scores gives the class distribution.
//!
//! Everything is written against plain `Vec<f64>` buffers with explicit
//! forward/backward passes; see [`diffcore`] for the gradient checker that
//! keeps those passes honest.

pub mod config;
pub mod diffcore;
pub mod embedding;
pub mod episodic;
pub mod error;
pub mod eval;
pub mod features;
pub mod gradcheck;
mod linalg;
pub mod model;
pub mod relation;

pub use config::RunConfig;
pub use diffcore::{Adam, OptimizerState, ParamSet, ParamTensor};
pub use embedding::{BatchNorm, Gru, StatOp};
pub use episodic::{Episode, LossKind, TrainConfig, TrainOutcome, TrainingMode};
pub use error::{Error, Result};
pub use eval::{MetricReport, Metrics, Prediction};
pub use features::{Dataset, FoldSplit, FrameMatrix, SynthSpec, Trial, VideoRecord};
pub use model::{ModelConfig, PainNet, Summarizer};
pub use relation::{Comparison, EpisodeProbs, RelationInit};

/// Number of VAS pain levels (0..=10).
pub const NUM_CLASSES: usize = 11;
