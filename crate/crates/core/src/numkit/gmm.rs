use rand::Rng;

use super::kmeans::{count_distinct_rows, seed_centroids, KMeans};
use super::matrix::Matrix;
use super::rng::stream_rng;
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-4;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    weights: Vec<f64>,
    means: Matrix,
    stds: Matrix,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Matrix, stds: Matrix) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::invalid("GMM needs at least one component"));
        }
        if means.rows() != k || stds.rows() != k || means.cols() != stds.cols() {
            return Err(Error::invalid("GMM means/stds must both be K x D"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("GMM weights must be non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("GMM weights sum to {total}, not 1")));
        }
        if stds.as_slice().iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("GMM standard deviations must be positive"));
        }
        if !means.is_finite() {
            return Err(Error::invalid("GMM means must be finite"));
        }
        Ok(Self {
            weights,
            means,
            stds,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &Matrix {
        &self.means
    }

    pub fn stds(&self) -> &Matrix {
        &self.stds
    }

    /// `log w_k + log N(x | m_k, diag(σ_k²))` for every component.
    pub fn log_joint(&self, x: &[f64]) -> Vec<f64> {
        (0..self.components())
            .map(|k| {
                let mut acc = self.weights[k].ln() - 0.5 * LN_2PI * self.dim() as f64;
                for ((&xi, &m), &s) in x.iter().zip(self.means.row(k)).zip(self.stds.row(k)) {
                    let z = (xi - m) / s;
                    acc -= 0.5 * z * z + s.ln();
                }
                acc
            })
            .collect()
    }

    /// Component posteriors `p(m_k | x)`, computed with log-sum-exp.
    pub fn posteriors(&self, x: &[f64]) -> Vec<f64> {
        let lj = self.log_joint(x);
        let lse = log_sum_exp(&lj);
        lj.iter().map(|l| (l - lse).exp()).collect()
    }

    pub fn log_likelihood(&self, points: &Matrix) -> f64 {
        (0..points.rows())
            .map(|i| log_sum_exp(&self.log_joint(points.row(i))))
            .sum()
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Log-likelihood of the data under the parameters entering each E-step.
    pub history: Vec<f64>,
    /// Number of components re-seeded because they lost all responsibility.
    pub reseeded: usize,
}

#[derive(Debug, Clone)]
pub struct GmmEm {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for GmmEm {
    fn default() -> Self {
        Self {
            max_iters: 300,
            tol: 1e-6,
        }
    }
}

pub fn gmm_fit(points: &Matrix, k: usize, seed: u64) -> Result<GmmModel> {
    GmmEm::default().fit(points, k, seed).map(|f| f.model)
}

impl GmmEm {
    pub fn fit(&self, points: &Matrix, k: usize, seed: u64) -> Result<GmmFit> {
        let n = points.rows();
        let dim = points.cols();
        if k == 0 || dim == 0 {
            return Err(Error::invalid("GMM needs k >= 1 and D >= 1"));
        }
        if n < k {
            return Err(Error::invalid(format!("GMM needs N >= k, got N={n}, k={k}")));
        }
        if !points.is_finite() {
            return Err(Error::invalid("GMM input contains non-finite values"));
        }

        let mean: Vec<f64> = (0..dim)
            .map(|j| (0..n).map(|i| points[(i, j)]).sum::<f64>() / n as f64)
            .collect();
        let global_std: Vec<f64> = (0..dim)
            .map(|j| {
                let var = (0..n)
                    .map(|i| (points[(i, j)] - mean[j]).powi(2))
                    .sum::<f64>()
                    / n as f64;
                var.sqrt().max(STD_FLOOR)
            })
            .collect();

        let means = if count_distinct_rows(points) >= k {
            let km = KMeans {
                max_iters: 50,
                tol: 1e-6,
            };
            km.fit(points, k, seed)?.dictionary.centroids().clone()
        } else {
            seed_centroids(points, k, seed)
        };
        let mut stds = Matrix::zeros(k, dim);
        for c in 0..k {
            stds.row_mut(c).copy_from_slice(&global_std);
        }
        let mut model = GmmModel {
            weights: vec![1.0 / k as f64; k],
            means,
            stds,
        };

        let mut reseed_rng = stream_rng(seed, 0x6d6d);
        let mut history: Vec<f64> = Vec::new();
        let mut reseeded = 0;
        let mut resp = Matrix::zeros(n, k);

        for _ in 0..self.max_iters {
            // E-step
            let mut ll = 0.0;
            for i in 0..n {
                let lj = model.log_joint(points.row(i));
                let lse = log_sum_exp(&lj);
                ll += lse;
                for (r, l) in resp.row_mut(i).iter_mut().zip(&lj) {
                    *r = (l - lse).exp();
                }
            }
            let prev = history.last().copied();
            history.push(ll);
            if let Some(p) = prev {
                if (ll - p).abs() <= self.tol * p.abs().max(1.0) {
                    break;
                }
            }

            // M-step
            let mass: Vec<f64> = (0..k).map(|c| (0..n).map(|i| resp[(i, c)]).sum()).collect();
            for c in 0..k {
                if mass[c] <= 1e-10 * n as f64 {
                    let pick = reseed_rng.gen_range(0..n);
                    log::warn!("GMM component {c} lost its responsibility mass; re-seeding from point {pick}");
                    model.means.row_mut(c).copy_from_slice(points.row(pick));
                    model.stds.row_mut(c).copy_from_slice(&global_std);
                    model.weights[c] = 1.0 / n as f64;
                    reseeded += 1;
                    continue;
                }
                model.weights[c] = mass[c] / n as f64;
                for j in 0..dim {
                    let m = (0..n).map(|i| resp[(i, c)] * points[(i, j)]).sum::<f64>() / mass[c];
                    let var = (0..n)
                        .map(|i| resp[(i, c)] * (points[(i, j)] - m).powi(2))
                        .sum::<f64>()
                        / mass[c];
                    model.means[(c, j)] = m;
                    model.stds[(c, j)] = var.sqrt().max(STD_FLOOR);
                }
            }
            let total: f64 = model.weights.iter().sum();
            for w in &mut model.weights {
                *w /= total;
            }
        }
        Ok(GmmFit {
            model,
            history,
            reseeded,
        })
    }
}
