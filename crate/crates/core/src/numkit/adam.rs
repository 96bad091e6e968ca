use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// The learning rate halves every this many epochs; 0 disables the schedule.
    pub halving_period: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            halving_period: 10,
        }
    }
}

/// Adam moments for one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub epoch: usize,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Result<Self> {
        if !(config.learning_rate > 0.0) {
            return Err(Error::invalid("Adam learning rate must be positive"));
        }
        Ok(Self {
            config,
            step: 0,
            epoch: 0,
            first: vec![0.0; len],
            second: vec![0.0; len],
        })
    }

    /// Current learning rate after the halving schedule.
    pub fn learning_rate(&self) -> f64 {
        match self.config.halving_period {
            0 => self.config.learning_rate,
            p => self.config.learning_rate * 0.5f64.powi((self.epoch / p) as i32),
        }
    }

    pub fn advance_epoch(&mut self) {
        self.epoch += 1;
    }

    /// One bias-corrected Adam update. `block` names the parameters in errors.
    pub fn step(&mut self, block: &str, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::dim(
                format!("Adam step for `{block}`"),
                self.first.len(),
                grads.len().min(params.len()),
            ));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(block.to_string()));
        }
        self.step += 1;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let lr = self.learning_rate();
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
