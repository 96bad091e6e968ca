use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{l2_norm, thin_svd, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignConvention {
    /// Flip each singular vector so its largest-magnitude coordinate is
    /// positive (first such coordinate on ties).
    LargestPositive,
    /// Keep whatever sign the SVD produced.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentConfig {
    pub n_vectors: usize,
    pub sign: SignConvention,
    /// Skewness and kurtosis are zero where the variance is at or below this.
    pub epsilon: f64,
}

impl Default for MomentConfig {
    fn default() -> Self {
        Self {
            n_vectors: 1,
            sign: SignConvention::LargestPositive,
            epsilon: 1e-8,
        }
    }
}

impl MomentConfig {
    pub fn with_vectors(n_vectors: usize) -> Self {
        Self {
            n_vectors,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_vectors == 0 {
            return Err(Error::invalid("multi-moment descriptor needs n' >= 1"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::invalid("moment epsilon must be non-negative"));
        }
        Ok(())
    }
}

/// Inputs of the multi-moment encoder.
///
/// `spread` (d × N) feeds the SVD and may carry per-column weights;
/// `samples` (d × M) are the unweighted samples used for skewness and
/// kurtosis; each coordinate is re-centred on its own mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentInput {
    pub mean: Vec<f64>,
    pub spread: Matrix,
    pub samples: Matrix,
}

impl MomentInput {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Empty input: mean of dimension `d` set to zero, no columns.
    pub fn empty(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            spread: Matrix::zeros(d, 0),
            samples: Matrix::zeros(d, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentDescriptor {
    pub mean: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub skewness: Vec<f64>,
    pub kurtosis: Vec<f64>,
    pub spectrum: Vec<f64>,
}

impl MomentDescriptor {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn len(&self) -> usize {
        self.dim() * (4 + self.vectors.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[μ/‖μ‖; u_1; …; u_n′; skewness; kurtosis; spectrum]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.mean);
        for u in &self.vectors {
            out.extend_from_slice(u);
        }
        out.extend_from_slice(&self.skewness);
        out.extend_from_slice(&self.kurtosis);
        out.extend_from_slice(&self.spectrum);
        out
    }
}

/// Multi-moment descriptor with uniform column weights: `mat` holds the
/// centred samples as columns.
pub fn multi_moment(mu: &[f64], mat: &Matrix, cfg: &MomentConfig) -> Result<MomentDescriptor> {
    multi_moment_weighted(
        &MomentInput {
            mean: mu.to_vec(),
            spread: mat.clone(),
            samples: mat.clone(),
        },
        cfg,
    )
}

pub fn multi_moment_weighted(input: &MomentInput, cfg: &MomentConfig) -> Result<MomentDescriptor> {
    cfg.validate()?;
    let d = input.dim();
    if input.spread.rows() != d {
        return Err(Error::dim("moment spread rows", d, input.spread.rows()));
    }
    if input.samples.rows() != d {
        return Err(Error::dim("moment sample rows", d, input.samples.rows()));
    }

    let norm = l2_norm(&input.mean);
    let mean = if norm > 0.0 {
        input.mean.iter().map(|x| x / norm).collect()
    } else {
        vec![0.0; d]
    };

    let (skewness, kurtosis) = standardized_moments(&input.samples, cfg.epsilon);
    let (vectors, spectrum) = spectral_blocks(&input.spread, &input.mean, cfg);

    Ok(MomentDescriptor {
        mean,
        vectors,
        skewness,
        kurtosis,
        spectrum,
    })
}

fn standardized_moments(samples: &Matrix, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let d = samples.rows();
    let n = samples.cols();
    let mut skew = vec![0.0; d];
    let mut kurt = vec![0.0; d];
    if n == 0 {
        return (skew, kurt);
    }
    let inv = 1.0 / n as f64;
    for i in 0..d {
        let row = samples.row(i);
        let centre = row.iter().sum::<f64>() * inv;
        let (mut k2, mut k3, mut k4) = (0.0, 0.0, 0.0);
        for &x in row {
            let x = x - centre;
            let x2 = x * x;
            k2 += x2;
            k3 += x2 * x;
            k4 += x2 * x2;
        }
        let (k2, k3, k4) = (k2 * inv, k3 * inv, k4 * inv);
        if k2 > eps {
            skew[i] = k3 / k2.powf(1.5);
            kurt[i] = k4 / (k2 * k2);
        }
    }
    (skew, kurt)
}

fn spectral_blocks(spread: &Matrix, mean: &[f64], cfg: &MomentConfig) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = spread.rows();
    let mut vectors = vec![vec![0.0; d]; cfg.n_vectors];
    let mut spectrum = vec![0.0; d];
    if spread.cols() == 0 || d == 0 {
        return (vectors, spectrum);
    }
    let svd = thin_svd(spread);
    // Rounding residue left by centring identical samples is not signal.
    let floor = 1e-12 * l2_norm(mean).max(1.0);
    let values: Vec<f64> = svd
        .singular_values
        .iter()
        .map(|&s| if s > floor { s } else { 0.0 })
        .collect();
    let energy: f64 = values.iter().map(|s| s * s).sum();
    if energy == 0.0 {
        return (vectors, spectrum);
    }
    for (slot, (spec, s)) in spectrum.iter_mut().zip(&values).enumerate() {
        *spec = s * s / energy;
        if slot < cfg.n_vectors && *s > 0.0 {
            let mut u = svd.left_vectors.column(slot);
            if cfg.sign == SignConvention::LargestPositive {
                orient(&mut u);
            }
            vectors[slot] = u;
        }
    }
    (vectors, spectrum)
}

fn orient(u: &mut [f64]) {
    let mut best = 0;
    for (i, x) in u.iter().enumerate() {
        if x.abs() > u[best].abs() {
            best = i;
        }
    }
    if u[best] < 0.0 {
        u.iter_mut().for_each(|x| *x = -*x);
    }
}
