//! Dead-code backdoors for neural code summarization, and their detection
//! through spectral signatures of learned representations.
//!
//! The crate is organized along the experiment pipeline:
//!
//! - [`corpus`]: datasets, tokenization, vocabularies, index encoding.
//! - [`backdoor`]: fixed and grammatical dead-code triggers, static and
//!   dynamic targets, dataset poisoning.
//! - [`model`]: a bidirectional-LSTM encoder / attention-LSTM decoder
//!   summarizer with hand-written backpropagation and representation hooks.
//! - [`detector`]: centering, top-k singular basis, outlier scoring and
//!   removal of the most suspicious training points.
//! - [`metrics`]: subtoken F1 and backdoor success rate.
//! - [`pipeline`]: file-based experiment stages with manifests.

pub mod backdoor;
pub mod corpus;
pub mod detector;
mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod seed;

pub use error::{Error, Result};
