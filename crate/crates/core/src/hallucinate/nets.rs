use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::layers::{relu, Dense, Norm};
use super::precision::{PrecisionFactor, SparsityPattern};

/// What the covariance network reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CeInput {
    Backbone,
    Hallucinated,
}

/// FC → norm → ReLU → FC, emitting one value per slot of the sparsity
/// pattern. The last layer starts at zero, so the initial factor is `I`.
#[derive(Debug, Clone, PartialEq)]
pub struct CeNet {
    pub input: CeInput,
    pub fc1: Dense,
    pub norm: Norm,
    pub fc2: Dense,
    pub pattern: Arc<SparsityPattern>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CeTrace {
    pub hidden: Vec<f64>,
    pub standardized: Vec<f64>,
    pub activated: Vec<f64>,
    pub slots: Vec<f64>,
}

impl CeNet {
    pub fn new(input: CeInput, input_dim: usize, hidden: usize, pattern: Arc<SparsityPattern>, seed: u64, stream: u64) -> Self {
        let slots = pattern.slots();
        Self {
            input,
            fc1: Dense::xavier(input_dim, hidden, seed, stream),
            norm: Norm::new(hidden),
            fc2: Dense::zeros(hidden, slots),
            pattern,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.fc1.inputs
    }

    pub fn trace(&self, u: &[f64]) -> CeTrace {
        let hidden = self.fc1.forward(u);
        let standardized = self.norm.standardize(&hidden);
        let activated = relu(&self.norm.affine(&standardized));
        let slots = self.fc2.forward(&activated);
        CeTrace {
            hidden,
            standardized,
            activated,
            slots,
        }
    }

    pub fn factor(&self, trace: &CeTrace) -> PrecisionFactor {
        PrecisionFactor::new(self.pattern.clone(), trace.slots.clone()).expect("fc2 is sized to the pattern")
    }

    pub fn forward(&self, u: &[f64]) -> PrecisionFactor {
        self.factor(&self.trace(u))
    }

    /// Accumulates parameter gradients into `g` (fc1.w, fc1.b, scale, shift,
    /// fc2.w, fc2.b) and returns `∂/∂u`.
    pub fn backward(&self, u: &[f64], trace: &CeTrace, g_slots: &[f64], g: CeGrads<'_>) -> Vec<f64> {
        self.fc2.backward_params(&trace.activated, g_slots, g.fc2_w, g.fc2_b);
        let mut g_act = self.fc2.backward_input(g_slots);
        for (ga, a) in g_act.iter_mut().zip(&trace.activated) {
            if *a <= 0.0 {
                *ga = 0.0;
            }
        }
        self.norm.backward_params(&trace.standardized, &g_act, g.scale, g.shift);
        let g_hidden = self.norm.backward_input(&g_act);
        self.fc1.backward_params(u, &g_hidden, g.fc1_w, g.fc1_b);
        self.fc1.backward_input(&g_hidden)
    }
}

pub struct CeGrads<'a> {
    pub fc1_w: &'a mut [f64],
    pub fc1_b: &'a mut [f64],
    pub scale: &'a mut [f64],
    pub shift: &'a mut [f64],
    pub fc2_w: &'a mut [f64],
    pub fc2_b: &'a mut [f64],
}

/// Input normalization followed by one FC layer to class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PredNet {
    pub norm: Norm,
    pub fc: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredTrace {
    pub standardized: Vec<f64>,
    pub normalized: Vec<f64>,
    pub logits: Vec<f64>,
}

impl PredNet {
    pub fn new(input_dim: usize, classes: usize, seed: u64, stream: u64) -> Self {
        Self {
            norm: Norm::new(input_dim),
            fc: Dense::xavier(input_dim, classes, seed, stream),
        }
    }

    pub fn trace(&self, x: &[f64]) -> PredTrace {
        let standardized = self.norm.standardize(x);
        let normalized = self.norm.affine(&standardized);
        let logits = self.fc.forward(&normalized);
        PredTrace {
            standardized,
            normalized,
            logits,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).logits
    }

    /// Accumulates parameter gradients and returns `∂/∂x`.
    pub fn backward(&self, trace: &PredTrace, g_logits: &[f64], g: PredGrads<'_>) -> Vec<f64> {
        self.fc.backward_params(&trace.normalized, g_logits, g.fc_w, g.fc_b);
        let g_norm = self.fc.backward_input(g_logits);
        self.norm.backward_params(&trace.standardized, &g_norm, g.scale, g.shift);
        self.norm.backward_input(&g_norm)
    }
}

pub struct PredGrads<'a> {
    pub scale: &'a mut [f64],
    pub shift: &'a mut [f64],
    pub fc_w: &'a mut [f64],
    pub fc_b: &'a mut [f64],
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_cenet_gives_identity() {
        let pattern = Arc::new(SparsityPattern::sampled(6, &[0..3, 3..6], 2, 4).unwrap());
        let net = CeNet::new(CeInput::Backbone, 5, 7, pattern, 1, 9);
        let f = net.forward(&[0.3, -1.0, 2.0, 0.1, 0.0]);
        let omega = f.precision();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(omega[(i, j)], if i == j { 1.0 } else { 0.0 });
            }
        }
    }
}
