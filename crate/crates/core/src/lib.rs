//! Ranking-based at-risk student prediction with simulated federated
//! learning and pairwise differential features.
//!
//! The pipeline, bottom to top:
//!
//! - [`data`]: event and grade records, grade scoring, at-risk labels,
//!   lecture-window truncation.
//! - [`features`]: unnormalized per-student activity histograms.
//! - [`pairs`]: within-course difference pairs and the pairwise-to-individual
//!   score reduction.
//! - [`nn`]: the two-hidden-layer regressor and its SGD trainer.
//! - [`federation`]: FedAvg rounds over in-process clients and the pooled
//!   centralized baseline.
//! - [`metrics`]: risk ranking, Top-n precision, nDCG and PR-AUC.
//! - [`synth`]: synthetic cohorts with controllable per-course shift.
//! - [`model`], [`pipeline`], [`experiment`]: persistence and the glue the
//!   `fedrank` binary is built on.
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

pub mod data;
pub mod error;
pub mod experiment;
pub mod features;
pub mod federation;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pairs;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
