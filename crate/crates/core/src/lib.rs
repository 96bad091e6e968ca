//! Multi-stream feature hallucination toolkit.
//!
//! Ground-truth descriptors (bag-of-words, Fisher vectors, object- and
//! saliency-detection multi-moment descriptors) are compressed with count
//! sketches and power normalization. Hallucination streams learn to regress
//! them from a backbone feature under a full-covariance Gaussian objective
//! whose sparse Cholesky precision factor is predicted by a small network,
//! and the streams are fused for classification with weights tuned by
//! golden-section search.

pub mod dataio;
pub mod descriptors;
pub mod encode;
mod error;
pub mod hallucinate;
pub mod numkit;
pub mod sketch;

pub use error::{Error, Result};
