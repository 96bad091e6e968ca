use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::moments::{multi_moment_weighted, MomentConfig, MomentDescriptor, MomentInput};
use crate::encode::PivotSet;
use crate::error::{Error, Result};
use crate::numkit::Matrix;

/// Detector classes: 91 COCO ids (0–90) followed by 80 AVA ids (91–170).
pub const DET_CLASSES: usize = 171;
/// Length of the image classifier score vector.
pub const INET_DIM: usize = 1001;
pub const ODF_PIVOTS: usize = 7;
pub const ODF_SIGMA: f64 = 0.5;
pub const ODF_EMBED_DIM: usize = DET_CLASSES + INET_DIM + 6 * ODF_PIVOTS;
pub const ODF_PLAIN_DIM: usize = DET_CLASSES + INET_DIM + 6;

const SCORE_L1_TOL: f64 = 1e-6;

/// One bounding box from a detector run over a clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    /// 0-based frame index.
    pub frame: usize,
    /// Sequence length in frames.
    pub tau: usize,
    pub class_id: usize,
    pub score: f64,
    /// Normalized corner coordinates `(x1, y1, x2, y2)`.
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    /// ℓ1-normalized classifier scores.
    pub inet: Vec<f64>,
}

impl DetectionRecord {
    pub fn validate(&self) -> Result<()> {
        if self.class_id >= DET_CLASSES {
            return Err(Error::OutOfRange(format!(
                "class_id {} not below {DET_CLASSES}",
                self.class_id
            )));
        }
        if self.tau == 0 || self.frame >= self.tau {
            return Err(Error::OutOfRange(format!(
                "frame {} outside sequence of length {}",
                self.frame, self.tau
            )));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::OutOfRange(format!("score {} outside [0, 1]", self.score)));
        }
        if self.bbox.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::OutOfRange(format!("box {:?} outside [0, 1]", self.bbox)));
        }
        if self.inet.len() != INET_DIM {
            return Err(Error::dim("inet scores", INET_DIM, self.inet.len()));
        }
        if self.inet.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::invalid("inet scores must be finite and non-negative"));
        }
        let l1: f64 = self.inet.iter().sum();
        if (l1 - 1.0).abs() > SCORE_L1_TOL {
            return Err(Error::invalid(format!("inet scores sum to {l1}, not 1")));
        }
        Ok(())
    }

    /// `t/(τ−1)` for the 0-based frame index, and 0 for single-frame clips.
    pub fn normalized_time(&self) -> f64 {
        if self.tau <= 1 {
            0.0
        } else {
            self.frame as f64 / (self.tau - 1) as f64
        }
    }

    fn head(&self, len: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(len);
        out.resize(DET_CLASSES, 0.0);
        out[self.class_id] = 1.0;
        out.extend_from_slice(&self.inet);
        out
    }
}

/// `[δ(class); scores; φ(ς); φ(v_1..v_4); φ(time)]`, 1214 long for 7 pivots.
pub fn encode_detection(rec: &DetectionRecord, pivots: &PivotSet) -> Result<Vec<f64>> {
    rec.validate()?;
    let z = pivots.len();
    let len = DET_CLASSES + INET_DIM + 6 * z;
    let mut out = rec.head(len);
    let scalars = [
        rec.score,
        rec.bbox[0],
        rec.bbox[1],
        rec.bbox[2],
        rec.bbox[3],
        rec.normalized_time(),
    ];
    for x in scalars {
        out.extend(pivots.embed(x));
    }
    debug_assert_eq!(out.len(), len);
    Ok(out)
}

/// Same layout as [`encode_detection`] with raw scalars in place of the
/// RBF embeddings; 1178 long.
pub fn encode_detection_plain(rec: &DetectionRecord) -> Result<Vec<f64>> {
    rec.validate()?;
    let mut out = rec.head(ODF_PLAIN_DIM);
    out.push(rec.score);
    out.extend_from_slice(&rec.bbox);
    out.push(rec.normalized_time());
    Ok(out)
}

/// Groups encoded detections by frame. `μ` is the mean over all `N`
/// detections; column `n` of the spread is `(υ_n − μ)/(J·K_j)`, where `J`
/// counts frames holding at least one detection and `K_j` is the number of
/// detections in frame `j`. Columns are ordered by frame, then input order.
pub fn detections_to_matrix(records: &[DetectionRecord], encoded: &[Vec<f64>]) -> Result<MomentInput> {
    if records.len() != encoded.len() {
        return Err(Error::dim("encoded detections", records.len(), encoded.len()));
    }
    let first = encoded
        .first()
        .ok_or_else(|| Error::invalid("detections_to_matrix needs at least one detection"))?;
    let d = first.len();
    let mut by_frame: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, rec) in records.iter().enumerate() {
        if encoded[i].len() != d {
            return Err(Error::dim("encoded detection", d, encoded[i].len()));
        }
        by_frame.entry(rec.frame).or_default().push(i);
    }

    let n = encoded.len();
    let mut mean = vec![0.0; d];
    for v in encoded {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let j = by_frame.len() as f64;
    let mut spread = Vec::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    for members in by_frame.values() {
        let scale = 1.0 / (j * members.len() as f64);
        for &i in members {
            let centred: Vec<f64> = encoded[i].iter().zip(&mean).map(|(x, m)| x - m).collect();
            spread.push(centred.iter().map(|x| x * scale).collect::<Vec<f64>>());
            samples.push(centred);
        }
    }
    Ok(MomentInput {
        mean,
        spread: Matrix::from_columns(d, &spread)?,
        samples: Matrix::from_columns(d, &samples)?,
    })
}

/// Full ODF descriptor of one clip. With no detections the result is all
/// zeros of length `d(4+n′)`.
pub fn odf_descriptor(
    records: &[DetectionRecord],
    pivots: Option<&PivotSet>,
    cfg: &MomentConfig,
) -> Result<MomentDescriptor> {
    let d = match pivots {
        Some(p) => DET_CLASSES + INET_DIM + 6 * p.len(),
        None => ODF_PLAIN_DIM,
    };
    if records.is_empty() {
        return multi_moment_weighted(&MomentInput::empty(d), cfg);
    }
    let encoded = records
        .iter()
        .map(|r| match pivots {
            Some(p) => encode_detection(r, p),
            None => encode_detection_plain(r),
        })
        .collect::<Result<Vec<_>>>()?;
    multi_moment_weighted(&detections_to_matrix(records, &encoded)?, cfg)
}
