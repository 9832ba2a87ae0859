//! Few-shot fake news detection by aligning per-article base predictions
//! over a news proximity graph built from shared readership.
//!
//! The pipeline: [`ingest`] loads articles, labels and user engagements;
//! [`graph`] projects active-user engagements to a normalized article graph;
//! [`predict`] supplies base class probabilities; [`align`] injects training
//! labels, hardens confident predictions and propagates them over the graph;
//! [`eval`] runs seeded few-shot experiments. [`fna`] and [`synth`] support
//! analysis and verification.

pub mod align;
pub mod error;
pub mod eval;
pub mod fna;
pub mod graph;
pub mod ingest;
pub mod matrix;
pub mod predict;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use ingest::{Dataset, SplitSpec};
pub use matrix::Matrix;
pub use predict::PredictionMatrix;
