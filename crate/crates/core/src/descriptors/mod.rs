//! Ground-truth descriptors built from detections (ODF) and saliency maps
//! (SDF), both summarised by the multi-moment encoder.

mod detection;
mod moments;
mod saliency;

pub use detection::{
    detections_to_matrix, encode_detection, encode_detection_plain, odf_descriptor,
    DetectionRecord, DET_CLASSES, INET_DIM, ODF_EMBED_DIM, ODF_PIVOTS, ODF_PLAIN_DIM, ODF_SIGMA,
};
pub use moments::{
    multi_moment, multi_moment_weighted, MomentConfig, MomentDescriptor, MomentInput,
    SignConvention,
};
pub use saliency::{
    sdf_descriptor, SaliencyFrame, SaliencySource, SdfEncoder, SDF_DIM, SDF_GRADIENT_DIM,
    SDF_LOWRES,
};

use crate::encode::PnOperator;
use crate::error::Result;
use crate::sketch::SketchPlan;

/// Power-normalize a descriptor, then sketch it: `P·g(ψ)`.
pub fn finalize_ground_truth(desc: &[f64], pn: &PnOperator, plan: &SketchPlan) -> Result<Vec<f64>> {
    plan.apply(&pn.apply(desc))
}
