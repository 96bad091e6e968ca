use std::ops::Range;
use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::numkit::{rng::stream_rng, Matrix};

/// Nonzero layout of the lower-triangular factor `ω`: the full diagonal plus
/// every pair `(i, j)`, `i > j`, that shares an index batch.
///
/// Slots `0..dim` hold the diagonal as log-values; slot `dim + k` holds the
/// off-diagonal entry of `pairs()[k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    dim: usize,
    d_star: usize,
    batches: Vec<Vec<usize>>,
    pairs: Vec<(usize, usize)>,
}

impl SparsityPattern {
    /// Validates that indices are in range and disjoint across batches, and
    /// that the off-diagonal count stays within `(d*² − d*)/2`.
    pub fn new(dim: usize, d_star: usize, batches: Vec<Vec<usize>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("precision factor needs dimension >= 1"));
        }
        let mut seen = vec![false; dim];
        let mut pairs = Vec::new();
        for batch in &batches {
            if batch.len() > d_star {
                return Err(Error::invalid(format!(
                    "index batch of size {} exceeds d* = {d_star}",
                    batch.len()
                )));
            }
            let mut sorted = batch.clone();
            sorted.sort_unstable();
            for &i in &sorted {
                if i >= dim {
                    return Err(Error::OutOfRange(format!("pattern index {i} >= {dim}")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::invalid(format!("pattern index {i} appears twice")));
                }
            }
            for (a, &i) in sorted.iter().enumerate() {
                for &j in &sorted[..a] {
                    pairs.push((i, j));
                }
            }
        }
        let budget = (d_star * d_star).saturating_sub(d_star) / 2;
        if pairs.len() > budget {
            return Err(Error::invalid(format!(
                "{} off-diagonal slots exceed the (d*^2-d*)/2 = {budget} budget",
                pairs.len()
            )));
        }
        Ok(Self {
            dim,
            d_star,
            batches,
            pairs,
        })
    }

    pub fn diagonal(dim: usize) -> Result<Self> {
        Self::new(dim, 1, Vec::new())
    }

    /// One seeded batch of `d_star` distinct indices, drawn round-robin from
    /// `groups` (one group per stream) so consecutive picks come from
    /// different feature types.
    pub fn sampled(dim: usize, groups: &[Range<usize>], d_star: usize, seed: u64) -> Result<Self> {
        if d_star > dim {
            return Err(Error::invalid(format!("d* = {d_star} exceeds dimension {dim}")));
        }
        if groups.iter().any(|g| g.end > dim || g.start >= g.end) {
            return Err(Error::invalid("pattern groups must be nonempty ranges within the dimension"));
        }
        let mut rng = stream_rng(seed, 0x5041_5454);
        let mut pools: Vec<Vec<usize>> = groups
            .iter()
            .map(|g| {
                let mut v: Vec<usize> = g.clone().collect();
                v.shuffle(&mut rng);
                v
            })
            .collect();
        if pools.is_empty() {
            let mut v: Vec<usize> = (0..dim).collect();
            v.shuffle(&mut rng);
            pools.push(v);
        }
        let mut batch = Vec::with_capacity(d_star);
        let mut g = 0;
        let n_pools = pools.len();
        while batch.len() < d_star {
            if pools.iter().all(|p| p.is_empty()) {
                break;
            }
            if let Some(i) = pools[g % n_pools].pop() {
                batch.push(i);
            }
            g += 1;
        }
        let batches = if batch.len() > 1 { vec![batch] } else { Vec::new() };
        Self::new(dim, d_star.max(1), batches)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn d_star(&self) -> usize {
        self.d_star
    }

    pub fn batches(&self) -> &[Vec<usize>] {
        &self.batches
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn slots(&self) -> usize {
        self.dim + self.pairs.len()
    }

    pub fn max_slots(&self) -> usize {
        (self.d_star * self.d_star).saturating_sub(self.d_star) / 2 + self.dim
    }
}

/// Lower-triangular `ω` with `Ω = ωωᵀ`; diagonal stored as log-values.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionFactor {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

impl PrecisionFactor {
    pub fn new(pattern: Arc<SparsityPattern>, values: Vec<f64>) -> Result<Self> {
        if values.len() != pattern.slots() {
            return Err(Error::dim("precision slots", pattern.slots(), values.len()));
        }
        Ok(Self { pattern, values })
    }

    /// `ω = I`.
    pub fn identity(pattern: Arc<SparsityPattern>) -> Self {
        let values = vec![0.0; pattern.slots()];
        Self { pattern, values }
    }

    pub fn pattern(&self) -> &SparsityPattern {
        &self.pattern
    }

    pub fn raw(&self) -> &[f64] {
        &self.values
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.values[i].exp()
    }

    /// Number of structurally nonzero entries of `ω`.
    pub fn nonzeros(&self) -> usize {
        self.pattern.slots()
    }

    /// `Σ log ω_ii`.
    pub fn log_diag_sum(&self) -> f64 {
        self.values[..self.pattern.dim].iter().sum()
    }

    /// `ωᵀ r`.
    pub fn transpose_mul(&self, r: &[f64]) -> Vec<f64> {
        let dim = self.pattern.dim;
        let mut y: Vec<f64> = (0..dim).map(|i| self.diag(i) * r[i]).collect();
        for (k, &(i, j)) in self.pattern.pairs.iter().enumerate() {
            y[j] += self.values[dim + k] * r[i];
        }
        y
    }

    /// `ω y`.
    pub fn mul(&self, y: &[f64]) -> Vec<f64> {
        let dim = self.pattern.dim;
        let mut out: Vec<f64> = (0..dim).map(|i| self.diag(i) * y[i]).collect();
        for (k, &(i, j)) in self.pattern.pairs.iter().enumerate() {
            out[i] += self.values[dim + k] * y[j];
        }
        out
    }

    pub fn to_dense(&self) -> Matrix {
        let dim = self.pattern.dim;
        let mut m = Matrix::zeros(dim, dim);
        for i in 0..dim {
            m.as_mut_slice()[i * dim + i] = self.diag(i);
        }
        for (k, &(i, j)) in self.pattern.pairs.iter().enumerate() {
            m.as_mut_slice()[i * dim + j] = self.values[dim + k];
        }
        m
    }

    /// Dense `Ω = ωωᵀ`.
    pub fn precision(&self) -> Matrix {
        let w = self.to_dense();
        w.matmul(&w.transpose()).expect("square factor")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyLoss {
    pub loss: f64,
    /// `∂loss/∂ψ̃`.
    pub grad_halluc: Vec<f64>,
    /// `∂loss/∂slot`, diagonal slots taken w.r.t. their log-values.
    pub grad_slots: Vec<f64>,
}

/// `yᵀy − 2κ Σ log ω_ii` with `y = ωᵀ(ψ̃ − ψ′)`, evaluated on the sparse
/// factor.
pub fn uncertainty_loss(
    halluc: &[f64],
    target: &[f64],
    omega: &PrecisionFactor,
    kappa: f64,
) -> Result<UncertaintyLoss> {
    let dim = omega.pattern.dim;
    if halluc.len() != dim {
        return Err(Error::dim("hallucinated features", dim, halluc.len()));
    }
    if target.len() != dim {
        return Err(Error::dim("target features", dim, target.len()));
    }
    let r: Vec<f64> = halluc.iter().zip(target).map(|(h, t)| h - t).collect();
    let y = omega.transpose_mul(&r);
    let loss = y.iter().map(|v| v * v).sum::<f64>() - 2.0 * kappa * omega.log_diag_sum();

    let grad_halluc: Vec<f64> = omega.mul(&y).into_iter().map(|v| 2.0 * v).collect();
    let mut grad_slots = vec![0.0; omega.pattern.slots()];
    for i in 0..dim {
        grad_slots[i] = 2.0 * y[i] * r[i] * omega.diag(i) - 2.0 * kappa;
    }
    for (k, &(i, j)) in omega.pattern.pairs.iter().enumerate() {
        grad_slots[dim + k] = 2.0 * y[j] * r[i];
    }
    Ok(UncertaintyLoss {
        loss,
        grad_halluc,
        grad_slots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_factor() -> PrecisionFactor {
        let pattern = Arc::new(SparsityPattern::new(2, 2, vec![vec![0, 1]]).unwrap());
        PrecisionFactor::new(pattern, vec![2f64.ln(), 0.0, 1.0]).unwrap()
    }

    #[test]
    fn hand_example() {
        let omega = hand_factor();
        let dense = omega.to_dense();
        assert_eq!(dense.as_slice(), &[2.0, 0.0, 1.0, 1.0]);
        let out = uncertainty_loss(&[1.0, 1.0], &[0.0, 0.0], &omega, 1.0).unwrap();
        assert_eq!(omega.transpose_mul(&[1.0, 1.0]), vec![3.0, 1.0]);
        assert!((out.loss - (10.0 - 2.0 * 2f64.ln())).abs() < 1e-12);
        assert!((out.loss - 8.613_705_638_880_11).abs() < 1e-12);
    }

    #[test]
    fn identity_is_squared_error() {
        let p = Arc::new(SparsityPattern::sampled(5, &[0..2, 2..5], 2, 1).unwrap());
        let omega = PrecisionFactor::identity(p);
        let h = [0.5, -1.0, 2.0, 0.0, 0.25];
        let t = [0.0, 1.0, 1.5, -0.5, 0.25];
        let sq: f64 = h.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum();
        let out = uncertainty_loss(&h, &t, &omega, 0.7).unwrap();
        assert_eq!(out.loss, sq);
        assert_eq!(uncertainty_loss(&h, &h, &omega, 0.7).unwrap().loss, 0.0);
    }

    #[test]
    fn sampled_pattern_respects_budget() {
        let groups: Vec<Range<usize>> = (0..8).map(|s| s * 128..(s + 1) * 128).collect();
        let p = SparsityPattern::sampled(1024, &groups, 8, 3).unwrap();
        assert!(p.slots() <= (64 - 8) / 2 + 1024);
        assert_eq!(p.slots(), p.max_slots());
        let batch = &p.batches()[0];
        let mut kinds: Vec<usize> = batch.iter().map(|i| i / 128).collect();
        kinds.sort_unstable();
        assert_eq!(kinds, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn pattern_validation() {
        assert!(SparsityPattern::new(4, 2, vec![vec![0, 1, 2]]).is_err());
        assert!(SparsityPattern::new(4, 3, vec![vec![0, 4]]).is_err());
        assert!(SparsityPattern::new(4, 2, vec![vec![0, 1], vec![1, 2]]).is_err());
        assert!(SparsityPattern::new(4, 2, vec![vec![0, 1], vec![2, 3]]).is_err());
        assert!(SparsityPattern::sampled(3, &[0..3], 4, 0).is_err());
    }

    #[test]
    fn gradient_matches_differences() {
        let omega = hand_factor();
        let h = [0.3, -0.8];
        let t = [1.0, 0.5];
        let out = uncertainty_loss(&h, &t, &omega, 0.4).unwrap();
        let step = 1e-6;
        for k in 0..3 {
            let mut plus = omega.raw().to_vec();
            let mut minus = plus.clone();
            plus[k] += step;
            minus[k] -= step;
            let p = PrecisionFactor::new(omega.pattern.clone(), plus).unwrap();
            let m = PrecisionFactor::new(omega.pattern.clone(), minus).unwrap();
            let fd = (uncertainty_loss(&h, &t, &p, 0.4).unwrap().loss
                - uncertainty_loss(&h, &t, &m, 0.4).unwrap().loss)
                / (2.0 * step);
            assert!((fd - out.grad_slots[k]).abs() < 1e-6, "slot {k}");
        }
        for k in 0..2 {
            let mut hp = h;
            let mut hm = h;
            hp[k] += step;
            hm[k] -= step;
            let fd = (uncertainty_loss(&hp, &t, &omega, 0.4).unwrap().loss
                - uncertainty_loss(&hm, &t, &omega, 0.4).unwrap().loss)
                / (2.0 * step);
            assert!((fd - out.grad_halluc[k]).abs() < 1e-6);
        }
    }
}
