//! Numerical building blocks: clustering, mixture fitting, factorizations,
//! line search, the Adam optimizer and a finite-difference gradient checker.

mod adam;
mod cholesky;
mod gmm;
mod golden;
mod gradcheck;
mod kmeans;
mod matrix;
pub mod rng;
mod svd;

pub use adam::{AdamConfig, AdamState};
pub use cholesky::cholesky_lower;
pub use gmm::{gmm_fit, log_sum_exp, GmmEm, GmmFit, GmmModel, STD_FLOOR};
pub use golden::{golden_section, GoldenBracket, GoldenResult, INV_PHI};
pub use gradcheck::{grad_check, relative_error};
pub use kmeans::{kmeans, Dictionary, KMeans, KMeansFit};
pub use matrix::{dot, l2_norm, sq_dist, Matrix};
pub use svd::{thin_svd, ThinSvd};
