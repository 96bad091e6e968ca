use rand::Rng;

use crate::numkit::rng::stream_rng;

/// Fully connected layer `y = Wx + b`, `W` row-major `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            w: vec![0.0; inputs * outputs],
            b: vec![0.0; outputs],
        }
    }

    /// Weights uniform in `±sqrt(6/(fan_in+fan_out))`, zero bias.
    pub fn xavier(inputs: usize, outputs: usize, seed: u64, stream: u64) -> Self {
        let mut layer = Self::zeros(inputs, outputs);
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let mut rng = stream_rng(seed, stream);
        for w in &mut layer.w {
            *w = rng.gen_range(-limit..=limit);
        }
        layer
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        self.w
            .chunks_exact(self.inputs)
            .zip(&self.b)
            .map(|(row, b)| row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }

    /// Accumulates `∂/∂W`, `∂/∂b` into `gw`, `gb`.
    pub fn backward_params(&self, x: &[f64], gy: &[f64], gw: &mut [f64], gb: &mut [f64]) {
        for ((row, g), gb) in gw.chunks_exact_mut(self.inputs).zip(gy).zip(gb.iter_mut()) {
            *gb += g;
            if *g != 0.0 {
                for (r, x) in row.iter_mut().zip(x) {
                    *r += g * x;
                }
            }
        }
    }

    /// `Wᵀ gy`.
    pub fn backward_input(&self, gy: &[f64]) -> Vec<f64> {
        let mut gx = vec![0.0; self.inputs];
        for (row, g) in self.w.chunks_exact(self.inputs).zip(gy) {
            if *g != 0.0 {
                for (o, w) in gx.iter_mut().zip(row) {
                    *o += g * w;
                }
            }
        }
        gx
    }
}

/// Per-feature normalization with an affine output.
///
/// The forward pass always uses the running statistics, which are refreshed
/// from batch statistics between optimizer steps and held constant when
/// differentiating.
#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub updates: u64,
}

impl Norm {
    pub fn new(dim: usize) -> Self {
        Self {
            scale: vec![1.0; dim],
            shift: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: 0.9,
            eps: 1e-5,
            updates: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    /// Standardized input `ẑ` (before the affine part).
    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.running_mean.iter().zip(&self.running_var))
            .map(|(x, (m, v))| (x - m) / (v + self.eps).sqrt())
            .collect()
    }

    pub fn affine(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.scale.iter().zip(&self.shift))
            .map(|(z, (s, t))| s * z + t)
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.affine(&self.standardize(x))
    }

    pub fn backward_params(&self, z: &[f64], gy: &[f64], gscale: &mut [f64], gshift: &mut [f64]) {
        for i in 0..gy.len() {
            gscale[i] += gy[i] * z[i];
            gshift[i] += gy[i];
        }
    }

    pub fn backward_input(&self, gy: &[f64]) -> Vec<f64> {
        gy.iter()
            .zip(self.scale.iter().zip(&self.running_var))
            .map(|(g, (s, v))| g * s / (v + self.eps).sqrt())
            .collect()
    }

    /// Folds the mean and (biased) variance of `batch` into the running
    /// estimates. The first update copies them.
    pub fn update(&mut self, batch: &[Vec<f64>]) {
        if batch.is_empty() {
            return;
        }
        let n = batch.len() as f64;
        let dim = self.dim();
        let mut mean = vec![0.0; dim];
        for row in batch {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in batch {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        if self.updates == 0 {
            self.running_mean = mean;
            self.running_var = var;
        } else {
            let k = self.momentum;
            for i in 0..dim {
                self.running_mean[i] = k * self.running_mean[i] + (1.0 - k) * mean[i];
                self.running_var[i] = k * self.running_var[i] + (1.0 - k) * var[i];
            }
        }
        self.updates += 1;
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

/// Softmax cross-entropy: returns the loss and `∂loss/∂logits`.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_matches_hand_multiply() {
        let mut l = Dense::zeros(2, 2);
        l.w = vec![1.0, 2.0, 3.0, 4.0];
        l.b = vec![0.5, -0.5];
        assert_eq!(l.forward(&[1.0, -1.0]), vec![-0.5, -1.5]);
        assert_eq!(l.backward_input(&[1.0, 1.0]), vec![4.0, 6.0]);
    }

    #[test]
    fn xavier_is_bounded_and_seeded() {
        let a = Dense::xavier(10, 6, 3, 1);
        let lim = (6.0f64 / 16.0).sqrt();
        assert!(a.w.iter().all(|w| w.abs() <= lim));
        assert_eq!(a, Dense::xavier(10, 6, 3, 1));
        assert_ne!(a, Dense::xavier(10, 6, 3, 2));
        assert!(a.b.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn norm_running_stats() {
        let mut n = Norm::new(1);
        n.update(&[vec![1.0], vec![3.0]]);
        assert_eq!(n.running_mean, vec![2.0]);
        assert_eq!(n.running_var, vec![1.0]);
        n.update(&[vec![12.0], vec![12.0]]);
        assert!((n.running_mean[0] - 3.0).abs() < 1e-12);
        assert!((n.running_var[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_uniform() {
        let (loss, grad) = cross_entropy(&[0.0; 4], 2);
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        assert!((grad[2] + 0.75).abs() < 1e-15);
        let (big, _) = cross_entropy(&[1000.0, 0.0], 0);
        assert!(big.is_finite() && big < 1e-12);
    }
}
