//! File formats, manifests, run configuration and synthetic data.

mod bytes;
mod checkpoint;
mod config;
mod detections;
mod features;
mod manifest;
mod saliency;
mod synth;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::{OdfLayout, RunConfig};
pub use detections::{
    detections_to_string, load_detections, parse_detections, save_detections, INET_L1_TOLERANCE,
};
pub use features::{Dtype, FeatureFile};
pub use manifest::{resolve, ClipManifest, Manifest, Split};
pub use saliency::{decode_saliency, encode_saliency, load_saliency, save_saliency, SALIENCY_SLACK};
pub use synth::{synth_dataset, synth_generate, SynthStream, SyntheticSpec};
