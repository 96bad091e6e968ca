//! Hallucination streams, the covariance network, fusion and training.

mod fusion;
mod layers;
mod model;
mod nets;
mod precision;
mod stream;
mod train;

pub use fusion::{fuse_weighted, fusion_weights, FusionMode, FusionWeights, DEFAULT_RHO};
pub use layers::{argmax, cross_entropy, relu, Dense, Norm};
pub use model::{
    toy_problem, BatchStats, BlockCheck, BlockGroup, CeNetGrad, Clip, DenseGrad, Gradients, LossReport, LossTerms, Model, ModelConfig,
    NormGrad, StreamSpec,
};
pub use nets::{CeGrads, CeInput, CeNet, CeTrace, PredGrads, PredNet, PredTrace};
pub use precision::{uncertainty_loss, PrecisionFactor, SparsityPattern, UncertaintyLoss};
pub use stream::{StreamId, StreamNet, StreamTrace, MAX_ODF_VARIANTS, MAX_SDF_VARIANTS};
pub use train::{
    hallucination_histogram, train, train_with_observer, Dataset, EpochMetrics, Histogram, LinearProbe, OmegaMode,
    ProbeConfig, TrainingConfig, METRICS_SCHEMA,
};
