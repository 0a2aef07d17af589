//! Extraction of commonsense LocatedNear object pairs from dependency-parsed
//! text.
//!
//! The pipeline grounds object pairs in parsed sentences ([`corpus`]),
//! classifies each instance with either a kernel SVM over hand-built
//! features ([`features`], [`svm`]) or an LSTM over normalized token
//! sequences ([`normalize`], [`neural`]), then pools instance confidences
//! per pair into ranked triples ([`aggregate`]). [`metrics`] covers the
//! classification and ranking evaluation.

pub mod aggregate;
pub mod config;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod features;
pub mod metrics;
pub mod neural;
pub mod normalize;
pub mod pipeline;
pub mod svm;
pub mod synth;

pub use error::{Error, Result};
