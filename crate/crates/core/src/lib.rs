//! Explainable fact checking with question answering as a proxy.
//!
//! A claim is broken into question/answer pairs; the same questions are
//! answered from the evidence, and the two answer sets are compared either
//! with similarity metrics plus a calibrated threshold ([`metrics`]) or with
//! a trained attention classifier whose per-question weights double as an
//! explanation ([`model`], [`eval::explain_claim`]).
//!
//! Pipeline stages map onto modules:
//!
//! - [`ingest`]: claims and QA files, answer filtering, question selection,
//!   the extractive QA service client.
//! - [`embed`]: feature bundles from a hashing embedder or an embedding store.
//! - [`metrics`]: token F1, cosine similarity, threshold calibration.
//! - [`model`]: attention and no-attention classifiers, training, checkpoints.
//! - [`eval`]: macro accuracy, multi-seed experiments, synthetic data, reports.

pub mod embed;
pub mod error;
pub mod eval;
pub mod exec;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod types;

pub use error::{Error, Result};
pub use exec::Exec;
pub use types::{
    validate_record, ClaimRecord, ExperimentConfig, FeatureBundle, Label, QAPair, QASet, SequenceVecs, Split,
    Variant, NO_ANSWER,
};
