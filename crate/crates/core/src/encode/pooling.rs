use crate::error::{Error, Result};
use crate::numkit::l2_norm;

pub const POOL_EPS: f64 = 1e-12;

/// `v / (‖v‖₂ + ε)`; the zero vector stays zero.
pub fn l2_normalize(v: &[f64], eps: f64) -> Vec<f64> {
    let n = l2_norm(v);
    if n == 0.0 {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| x / (n + eps)).collect()
}

/// Average pooling followed by ℓ2 normalization.
pub fn pool_avg(features: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = features
        .first()
        .ok_or_else(|| Error::invalid("pool_avg needs at least one feature"))?;
    let dim = first.len();
    let mut acc = vec![0.0; dim];
    for f in features {
        if f.len() != dim {
            return Err(Error::dim("pool_avg feature", dim, f.len()));
        }
        for (a, x) in acc.iter_mut().zip(f) {
            *a += x;
        }
    }
    let inv = 1.0 / features.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(l2_normalize(&acc, POOL_EPS))
}

/// Running sums of per-frame mid-level features, so any frame window can be
/// pooled with one subtraction.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralPool {
    dim: usize,
    // prefix[t + 1] holds the sum over frames 0..=t; prefix[0] is all zeros.
    prefix: Vec<Vec<f64>>,
    epsilon: f64,
}

impl IntegralPool {
    /// `frames[t]` holds the mid-level features of frame `t` (possibly none).
    pub fn new(dim: usize, frames: &[Vec<Vec<f64>>]) -> Result<Self> {
        let mut sums = Vec::with_capacity(frames.len());
        for frame in frames {
            let mut s = vec![0.0; dim];
            for f in frame {
                if f.len() != dim {
                    return Err(Error::dim("IntegralPool feature", dim, f.len()));
                }
                for (a, x) in s.iter_mut().zip(f) {
                    *a += x;
                }
            }
            sums.push(s);
        }
        Self::from_frame_sums(dim, &sums)
    }

    pub fn from_frame_sums(dim: usize, sums: &[Vec<f64>]) -> Result<Self> {
        let mut prefix = Vec::with_capacity(sums.len() + 1);
        prefix.push(vec![0.0; dim]);
        for s in sums {
            if s.len() != dim {
                return Err(Error::dim("IntegralPool frame sum", dim, s.len()));
            }
            let last = prefix.last().expect("prefix starts non-empty");
            let next: Vec<f64> = last.iter().zip(s).map(|(a, b)| a + b).collect();
            prefix.push(next);
        }
        Ok(Self {
            dim,
            prefix,
            epsilon: POOL_EPS,
        })
    }

    pub fn with_epsilon(mut self, eps: f64) -> Self {
        self.epsilon = eps;
        self
    }

    pub fn frames(&self) -> usize {
        self.prefix.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cumulative sum through frame `t`; `t = -1` gives the zero vector.
    pub fn cumulative(&self, t: isize) -> Option<&[f64]> {
        let idx = usize::try_from(t + 1).ok()?;
        self.prefix.get(idx).map(|v| v.as_slice())
    }

    /// ℓ2-normalized sum over frames `s..=t`.
    pub fn pool_subsequence(&self, s: usize, t: usize) -> Result<Vec<f64>> {
        if s > t || t >= self.frames() {
            return Err(Error::OutOfRange(format!(
                "window ({s}, {t}) over {} frames",
                self.frames()
            )));
        }
        let diff: Vec<f64> = self.prefix[t + 1]
            .iter()
            .zip(&self.prefix[s])
            .map(|(a, b)| a - b)
            .collect();
        Ok(l2_normalize(&diff, self.epsilon))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn average_pooling() {
        assert!(close(&pool_avg(&[vec![1.0, 0.0]]).unwrap(), &[1.0, 0.0], 1e-11));
        let h = 1.0 / 2f64.sqrt();
        assert!(close(
            &pool_avg(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            &[h, h],
            1e-12
        ));
        assert_eq!(pool_avg(&[vec![0.0; 3], vec![0.0; 3]]).unwrap(), vec![0.0; 3]);
        assert!(pool_avg(&[]).is_err());
    }

    #[test]
    fn window_by_hand() {
        let frames = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let pool = IntegralPool::from_frame_sums(2, &frames).unwrap();
        let r5 = 5f64.sqrt();
        assert!(close(&pool.pool_subsequence(1, 2).unwrap(), &[1.0 / r5, 2.0 / r5], 1e-12));
        assert_eq!(pool.cumulative(-1).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn full_window_matches_pool_avg() {
        let frames = vec![vec![vec![0.5, 2.0]], vec![vec![1.0, -1.0], vec![3.0, 0.0]]];
        let pool = IntegralPool::new(2, &frames).unwrap();
        let all: Vec<Vec<f64>> = frames.concat();
        assert!(close(
            &pool.pool_subsequence(0, 1).unwrap(),
            &pool_avg(&all).unwrap(),
            1e-12
        ));
    }

    #[test]
    fn out_of_range_windows() {
        let pool = IntegralPool::from_frame_sums(1, &[vec![1.0], vec![2.0]]).unwrap();
        assert!(pool.pool_subsequence(1, 0).is_err());
        assert!(pool.pool_subsequence(0, 2).is_err());
    }
}
