//! Review-response generation with multi-source prior knowledge.
//!
//! The pipeline: retrieve similar historical review-response pairs with a
//! weighted-field BM25 index, encode the review/title/store text together
//! with pooled pair embeddings, attend over review segments while decoding,
//! and mix a generation softmax with a copy distribution so exact names can
//! be reproduced. Training runs on a small f64 autodiff tape and is verified
//! with finite-difference gradient checks.

pub mod cli;
pub mod dataset;
pub mod metrics;
pub mod model;
pub mod retrieval;
pub mod tensor;
pub mod text;
pub mod util;
