use serde::{Deserialize, Serialize};

use super::moments::{multi_moment_weighted, MomentConfig, MomentDescriptor, MomentInput};
use crate::encode::PivotSet;
use crate::error::{Error, Result};
use crate::numkit::{l2_norm, Matrix};

pub const SDF_ORIENT_PIVOTS: usize = 12;
pub const SDF_SPATIAL_PIVOTS: usize = 5;
pub const SDF_LOWRES: usize = 16;
pub const SDF_GRADIENT_DIM: usize = SDF_ORIENT_PIVOTS * SDF_SPATIAL_PIVOTS * SDF_SPATIAL_PIVOTS;
pub const SDF_DIM: usize = SDF_GRADIENT_DIM + SDF_LOWRES * SDF_LOWRES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SaliencySource {
    Spatial,
    Temporal,
}

/// Saliency map of one frame. `data[y * width + x]`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyFrame {
    width: usize,
    height: usize,
    data: Vec<f64>,
    source: SaliencySource,
}

impl SaliencyFrame {
    pub fn new(width: usize, height: usize, data: Vec<f64>, source: SaliencySource) -> Result<Self> {
        if width < 3 || height < 3 {
            return Err(Error::invalid(format!("saliency grid {width}x{height} is below 3x3")));
        }
        if data.len() != width * height {
            return Err(Error::dim("saliency grid", width * height, data.len()));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange(format!("saliency value {bad} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            data,
            source,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn source(&self) -> SaliencySource {
        self.source
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Central differences `[−1, 0, 1]` along x and y with replicated borders.
    pub fn gradients(&self) -> (Vec<f64>, Vec<f64>) {
        let (w, h) = (self.width, self.height);
        let mut gx = vec![0.0; w * h];
        let mut gy = vec![0.0; w * h];
        for y in 0..h {
            let (up, down) = (y.saturating_sub(1), (y + 1).min(h - 1));
            for x in 0..w {
                let (left, right) = (x.saturating_sub(1), (x + 1).min(w - 1));
                gx[y * w + x] = self.at(right, y) - self.at(left, y);
                gy[y * w + x] = self.at(x, down) - self.at(x, up);
            }
        }
        (gx, gy)
    }
}

/// Per-frame SDF encoder: orientation-weighted gradient histogram over a
/// spatial RBF grid, followed by a low-resolution intensity map.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfEncoder {
    orientation: PivotSet,
    spatial: PivotSet,
    lowres: usize,
}

impl Default for SdfEncoder {
    fn default() -> Self {
        Self {
            orientation: PivotSet::periodic(SDF_ORIENT_PIVOTS, 1.0 / SDF_ORIENT_PIVOTS as f64)
                .expect("valid orientation pivots"),
            spatial: PivotSet::even(SDF_SPATIAL_PIVOTS, 0.25).expect("valid spatial pivots"),
            lowres: SDF_LOWRES,
        }
    }
}

impl SdfEncoder {
    pub fn new(orientation: PivotSet, spatial: PivotSet, lowres: usize) -> Result<Self> {
        if !orientation.is_periodic() {
            return Err(Error::invalid("orientation pivots must be periodic"));
        }
        if lowres == 0 {
            return Err(Error::invalid("low-resolution size must be positive"));
        }
        Ok(Self {
            orientation,
            spatial,
            lowres,
        })
    }

    pub fn orientation(&self) -> &PivotSet {
        &self.orientation
    }

    pub fn spatial(&self) -> &PivotSet {
        &self.spatial
    }

    pub fn gradient_dim(&self) -> usize {
        self.orientation.len() * self.spatial.len() * self.spatial.len()
    }

    pub fn output_dim(&self) -> usize {
        self.gradient_dim() + self.lowres * self.lowres
    }

    /// Unnormalized `Σ Λ φ(θ/2π) ⊗ φ(x/(W−1)) ⊗ φ(y/(H−1))`; entry
    /// `(o, a, b)` sits at `o·Z_s² + a·Z_s + b`.
    pub fn gradient_histogram(&self, frame: &SaliencyFrame) -> Vec<f64> {
        let (w, h) = (frame.width(), frame.height());
        let zs = self.spatial.len();
        let zo = self.orientation.len();
        let ex: Vec<Vec<f64>> = (0..w)
            .map(|x| self.spatial.embed(x as f64 / (w - 1) as f64))
            .collect();
        let ey: Vec<Vec<f64>> = (0..h)
            .map(|y| self.spatial.embed(y as f64 / (h - 1) as f64))
            .collect();
        let (gx, gy) = frame.gradients();

        let mut out = vec![0.0; zo * zs * zs];
        let mut eo = vec![0.0; zo];
        let mut plane = vec![0.0; zs * zs];
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (gx[y * w + x], gy[y * w + x]);
                let mag = dx.hypot(dy);
                if mag == 0.0 {
                    continue;
                }
                let theta = dy.atan2(dx) / std::f64::consts::TAU;
                self.orientation.embed_into(theta.rem_euclid(1.0), &mut eo);
                for a in 0..zs {
                    for b in 0..zs {
                        plane[a * zs + b] = mag * ex[x][a] * ey[y][b];
                    }
                }
                for (o, &wo) in eo.iter().enumerate() {
                    let block = &mut out[o * zs * zs..(o + 1) * zs * zs];
                    for (dst, p) in block.iter_mut().zip(&plane) {
                        *dst += wo * p;
                    }
                }
            }
        }
        out
    }

    /// Area-averaged `lowres × lowres` intensity, row-major.
    pub fn downsample(&self, frame: &SaliencyFrame) -> Vec<f64> {
        let wx = area_weights(frame.width(), self.lowres);
        let wy = area_weights(frame.height(), self.lowres);
        let mut out = vec![0.0; self.lowres * self.lowres];
        for (v, row_w) in wy.iter().enumerate() {
            for (u, col_w) in wx.iter().enumerate() {
                let mut acc = 0.0;
                for &(y, fy) in row_w {
                    for &(x, fx) in col_w {
                        acc += fy * fx * frame.at(x, y);
                    }
                }
                out[v * self.lowres + u] = acc;
            }
        }
        out
    }

    /// `[υ′/‖υ′‖₂; I/‖I‖₁]`; either half stays zero when its norm is zero.
    pub fn encode_frame(&self, frame: &SaliencyFrame) -> Vec<f64> {
        let hist = self.gradient_histogram(frame);
        let n2 = l2_norm(&hist);
        let mut out: Vec<f64> = if n2 > 0.0 {
            hist.iter().map(|x| x / n2).collect()
        } else {
            hist
        };
        let low = self.downsample(frame);
        let n1: f64 = low.iter().map(|x| x.abs()).sum();
        if n1 > 0.0 {
            out.extend(low.iter().map(|x| x / n1));
        } else {
            out.extend(low);
        }
        out
    }
}

// For each output cell, the pixels it overlaps and the fraction of the cell
// each one covers.
fn area_weights(input: usize, output: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|u| {
            let (lo, hi) = (u as f64 * ratio, (u + 1) as f64 * ratio);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(input);
            (first..last)
                .filter_map(|x| {
                    let overlap = (hi.min((x + 1) as f64) - lo.max(x as f64)).max(0.0);
                    (overlap > 0.0).then_some((x, overlap / ratio))
                })
                .collect()
        })
        .collect()
}

/// SDF descriptor of a frame sequence: spread columns `(υ_j − μ)/J`,
/// samples `υ_j − μ`.
pub fn sdf_descriptor(
    frames: &[SaliencyFrame],
    encoder: &SdfEncoder,
    cfg: &MomentConfig,
) -> Result<MomentDescriptor> {
    if frames.is_empty() {
        return Err(Error::invalid("sdf_descriptor needs at least one frame"));
    }
    let encoded: Vec<Vec<f64>> = frames.iter().map(|f| encoder.encode_frame(f)).collect();
    let d = encoder.output_dim();
    let j = encoded.len() as f64;
    let mut mean = vec![0.0; d];
    for v in &encoded {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= j);
    let samples: Vec<Vec<f64>> = encoded
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let spread: Vec<Vec<f64>> = samples
        .iter()
        .map(|c| c.iter().map(|x| x / j).collect())
        .collect();
    multi_moment_weighted(
        &MomentInput {
            mean,
            spread: Matrix::from_columns(d, &spread)?,
            samples: Matrix::from_columns(d, &samples)?,
        },
        cfg,
    )
}
