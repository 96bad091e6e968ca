use std::collections::HashSet;

use rand::Rng;

use super::matrix::{sq_dist, Matrix};
use super::rng::seeded;
use crate::error::{Error, Result};

/// A k-means vocabulary: one centroid per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    centroids: Matrix,
}

impl Dictionary {
    pub fn new(centroids: Matrix) -> Result<Self> {
        if centroids.rows() == 0 || centroids.cols() == 0 {
            return Err(Error::invalid("dictionary needs at least one non-empty centroid"));
        }
        if !centroids.is_finite() {
            return Err(Error::invalid("dictionary centroids must be finite"));
        }
        Ok(Self { centroids })
    }

    pub fn centroids(&self) -> &Matrix {
        &self.centroids
    }

    pub fn len(&self) -> usize {
        self.centroids.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    /// Index of the nearest centroid; ties go to the lowest index.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for k in 0..self.len() {
            let d = sq_dist(self.centroids.row(k), x);
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }

    /// Sum of squared distances from each point to its nearest centroid.
    pub fn objective(&self, points: &Matrix) -> f64 {
        (0..points.rows()).map(|i| self.nearest(points.row(i)).1).sum()
    }
}

#[derive(Debug, Clone)]
pub struct KMeans {
    pub max_iters: usize,
    /// Stop once the relative objective decrease falls below this.
    pub tol: f64,
}

impl Default for KMeans {
    fn default() -> Self {
        Self {
            max_iters: 300,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub dictionary: Dictionary,
    pub objective: f64,
    /// Objective after each assignment step.
    pub history: Vec<f64>,
}

pub fn kmeans(points: &Matrix, k: usize, seed: u64) -> Result<Dictionary> {
    KMeans::default().fit(points, k, seed).map(|f| f.dictionary)
}

pub(crate) fn count_distinct_rows(points: &Matrix) -> usize {
    let mut seen = HashSet::new();
    for i in 0..points.rows() {
        let key: Vec<u64> = points
            .row(i)
            .iter()
            .map(|v| if *v == 0.0 { 0 } else { v.to_bits() })
            .collect();
        seen.insert(key);
    }
    seen.len()
}

/// k-means++ seeding: the first centre uniformly, the rest by squared distance.
pub(crate) fn seed_centroids(points: &Matrix, k: usize, seed: u64) -> Matrix {
    let n = points.rows();
    let mut rng = seeded(seed);
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut dist: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, d) in dist.iter().enumerate() {
                if *d > 0.0 && r < *d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            // floating-point drift can land on a zero-mass tail point
            if dist[idx] == 0.0 {
                idx = dist
                    .iter()
                    .enumerate()
                    .fold((0, -1.0), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc })
                    .0;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        chosen.push(pick);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(pick)));
        }
    }
    let rows: Vec<&[f64]> = chosen.iter().map(|&i| points.row(i)).collect();
    Matrix::from_rows(&rows).expect("rows share the point dimension")
}

impl KMeans {
    pub fn fit(&self, points: &Matrix, k: usize, seed: u64) -> Result<KMeansFit> {
        let n = points.rows();
        if k == 0 {
            return Err(Error::invalid("k-means needs k >= 1"));
        }
        if !points.is_finite() {
            return Err(Error::invalid("k-means input contains non-finite values"));
        }
        let distinct = count_distinct_rows(points);
        if n < k || distinct < k {
            return Err(Error::TooFewDistinctPoints {
                k,
                distinct,
                deficit: k - distinct.min(k),
            });
        }
        let dim = points.cols();
        let mut centroids = seed_centroids(points, k, seed);
        let mut assign = vec![usize::MAX; n];
        let mut dists = vec![0.0; n];
        let mut history = Vec::new();

        for _ in 0..self.max_iters {
            let dict = Dictionary {
                centroids: centroids.clone(),
            };
            let mut changed = false;
            for i in 0..n {
                let (a, d) = dict.nearest(points.row(i));
                if assign[i] != a {
                    changed = true;
                    assign[i] = a;
                }
                dists[i] = d;
            }
            // re-home empty clusters on the worst-served points
            let mut counts = vec![0usize; k];
            for &a in &assign {
                counts[a] += 1;
            }
            for c in 0..k {
                if counts[c] > 0 {
                    continue;
                }
                let far = (0..n)
                    .filter(|&i| counts[assign[i]] > 1)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
                if let Some(i) = far {
                    counts[assign[i]] -= 1;
                    assign[i] = c;
                    counts[c] = 1;
                    dists[i] = 0.0;
                    centroids.row_mut(c).copy_from_slice(points.row(i));
                    changed = true;
                }
            }
            let objective: f64 = dists.iter().sum();
            let prev = history.last().copied();
            history.push(objective);

            let mut sums = Matrix::zeros(k, dim);
            for i in 0..n {
                for (s, &v) in sums.row_mut(assign[i]).iter_mut().zip(points.row(i)) {
                    *s += v;
                }
            }
            for c in 0..k {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
            if !changed {
                break;
            }
            if let Some(p) = prev {
                if p - objective <= self.tol * p.max(f64::MIN_POSITIVE) {
                    break;
                }
            }
        }
        let dictionary = Dictionary { centroids };
        let objective = dictionary.objective(points);
        history.push(objective);
        Ok(KMeansFit {
            dictionary,
            objective,
            history,
        })
    }
}
