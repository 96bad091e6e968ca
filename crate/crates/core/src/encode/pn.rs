use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::l2_norm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PnKind {
    Gamma,
    AsinhE,
    SigmE,
    AxMin,
}

impl PnKind {
    fn name(self) -> &'static str {
        match self {
            PnKind::Gamma => "gamma",
            PnKind::AsinhE => "asinhe",
            PnKind::SigmE => "sigme",
            PnKind::AxMin => "axmin",
        }
    }
}

/// Power Normalization operator.
///
/// Gamma and AsinhE act elementwise. SigmE and AxMin divide by the ℓ2 norm
/// of the whole input vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PnOperator {
    kind: PnKind,
    parameter: f64,
    epsilon: f64,
}

/// Default ε′.
pub const PN_EPS: f64 = 1e-6;

impl PnOperator {
    pub fn new(kind: PnKind, parameter: f64, epsilon: f64) -> Result<Self> {
        if !parameter.is_finite() || !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::invalid(format!(
                "PN parameter {parameter} / epsilon {epsilon} must be finite, epsilon > 0"
            )));
        }
        let ok = match kind {
            PnKind::Gamma => parameter > 0.0 && parameter <= 1.0,
            PnKind::AsinhE => parameter > 0.0,
            PnKind::SigmE => parameter >= 1.0,
            PnKind::AxMin => parameter > 1.0,
        };
        if !ok {
            let range = match kind {
                PnKind::Gamma => "(0, 1]",
                PnKind::AsinhE => "(0, inf)",
                PnKind::SigmE => "[1, inf)",
                PnKind::AxMin => "(1, inf)",
            };
            return Err(Error::invalid(format!(
                "{} parameter {parameter} outside {range}",
                kind.name()
            )));
        }
        Ok(Self {
            kind,
            parameter,
            epsilon,
        })
    }

    pub fn gamma(g: f64) -> Result<Self> {
        Self::new(PnKind::Gamma, g, PN_EPS)
    }

    pub fn asinhe(g: f64) -> Result<Self> {
        Self::new(PnKind::AsinhE, g, PN_EPS)
    }

    pub fn sigme(eta: f64) -> Result<Self> {
        Self::new(PnKind::SigmE, eta, PN_EPS)
    }

    pub fn axmin(eta: f64) -> Result<Self> {
        Self::new(PnKind::AxMin, eta, PN_EPS)
    }

    pub fn kind(&self) -> PnKind {
        self.kind
    }

    pub fn parameter(&self) -> f64 {
        self.parameter
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let p = self.parameter;
        match self.kind {
            PnKind::Gamma => v.iter().map(|&x| x.signum() * x.abs().powf(p)).collect(),
            PnKind::AsinhE => {
                let norm = p.asinh();
                v.iter().map(|&x| (p * x).asinh() / norm).collect()
            }
            PnKind::SigmE => {
                let scale = p / (l2_norm(v) + self.epsilon);
                v.iter()
                    .map(|&x| x.signum() * (2.0 / (1.0 + (-scale * x.abs()).exp()) - 1.0))
                    .collect()
            }
            PnKind::AxMin => {
                let scale = p / (l2_norm(v) + self.epsilon);
                v.iter().map(|&x| x.signum() * (scale * x.abs()).min(1.0)).collect()
            }
        }
    }

    /// Vector-Jacobian product `Jᵀ·upstream` of [`apply`](Self::apply) at `v`.
    ///
    /// Gamma with γ < 1 has an infinite slope at 0; the gradient there is
    /// taken as 0.
    pub fn vjp(&self, v: &[f64], upstream: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), upstream.len());
        let p = self.parameter;
        match self.kind {
            PnKind::Gamma => v
                .iter()
                .zip(upstream)
                .map(|(&x, &u)| {
                    if x == 0.0 {
                        if p == 1.0 {
                            u
                        } else {
                            0.0
                        }
                    } else {
                        u * p * x.abs().powf(p - 1.0)
                    }
                })
                .collect(),
            PnKind::AsinhE => {
                let norm = p.asinh();
                v.iter()
                    .zip(upstream)
                    .map(|(&x, &u)| u * p / ((1.0 + (p * x).powi(2)).sqrt() * norm))
                    .collect()
            }
            PnKind::SigmE => {
                let n = l2_norm(v);
                let denom = n + self.epsilon;
                let scale = p / denom;
                // dg_i/dz_i for z_i = scale * x_i
                let slopes: Vec<f64> = v
                    .iter()
                    .map(|&x| {
                        let s = 1.0 / (1.0 + (-scale * x).exp());
                        2.0 * s * (1.0 - s)
                    })
                    .collect();
                let weighted: Vec<f64> = slopes.iter().zip(upstream).map(|(s, u)| s * u).collect();
                self.norm_scaled_vjp(v, n, denom, &weighted, |_| true)
            }
            PnKind::AxMin => {
                let n = l2_norm(v);
                let denom = n + self.epsilon;
                let scale = p / denom;
                let active = |x: f64| scale * x.abs() < 1.0;
                let weighted: Vec<f64> = v
                    .iter()
                    .zip(upstream)
                    .map(|(&x, &u)| if active(x) { u } else { 0.0 })
                    .collect();
                self.norm_scaled_vjp(v, n, denom, &weighted, active)
            }
        }
    }

    // Jᵀw for z_i = η x_i / (‖x‖ + ε), restricted to coordinates where
    // `keep` holds (w is already zero elsewhere).
    fn norm_scaled_vjp(
        &self,
        v: &[f64],
        n: f64,
        denom: f64,
        weighted: &[f64],
        keep: impl Fn(f64) -> bool,
    ) -> Vec<f64> {
        let p = self.parameter;
        let cross: f64 = v
            .iter()
            .zip(weighted)
            .filter(|(x, _)| keep(**x))
            .map(|(x, w)| x * w)
            .sum();
        let radial = if n > 0.0 { cross / (n * denom * denom) } else { 0.0 };
        v.iter()
            .zip(weighted)
            .map(|(&x, &w)| p * (w / denom - x * radial))
            .collect()
    }
}

impl fmt::Display for PnOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.name(), self.parameter)
    }
}

impl FromStr for PnOperator {
    type Err = Error;

    /// Parses `kind:parameter`, e.g. `asinhe:1.5`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, param) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("PN operator `{s}` is not kind:parameter")))?;
        let kind = match kind.trim().to_ascii_lowercase().as_str() {
            "gamma" => PnKind::Gamma,
            "asinhe" => PnKind::AsinhE,
            "sigme" => PnKind::SigmE,
            "axmin" => PnKind::AxMin,
            other => return Err(Error::invalid(format!("unknown PN kind `{other}`"))),
        };
        let param: f64 = param
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("PN parameter `{param}` is not a number")))?;
        Self::new(kind, param, PN_EPS)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn asinhe_fixed_points() {
        for g in [0.1, 1.0, 7.5] {
            let out = PnOperator::asinhe(g).unwrap().apply(&[0.0, 1.0, -1.0]);
            assert_eq!(out[0], 0.0);
            assert!((out[1] - 1.0).abs() < 1e-15);
            assert!((out[2] + 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sigme_scalar() {
        let out = PnOperator::sigme(1.0).unwrap().apply(&[10.0]);
        // tanh(1/2) evaluated to high precision
        assert!((out[0] - 0.462_117_157_260_009_8).abs() < 1e-6);
    }

    #[test]
    fn axmin_saturates() {
        assert_eq!(PnOperator::axmin(2.0).unwrap().apply(&[3.0, 4.0]), vec![1.0, 1.0]);
        let out = PnOperator::axmin(2.0).unwrap().apply(&[-3.0, 0.5]);
        assert_eq!(out[0], -1.0);
        assert!(out[1] > 0.0 && out[1] < 1.0);
    }

    #[test]
    fn gamma_square_root() {
        let out = PnOperator::gamma(0.5).unwrap().apply(&[4.0, -9.0, 0.0]);
        assert_eq!(out, vec![2.0, -3.0, 0.0]);
    }

    #[test]
    fn parameter_ranges() {
        assert!(PnOperator::gamma(0.0).is_err());
        assert!(PnOperator::gamma(1.5).is_err());
        assert!(PnOperator::gamma(1.0).is_ok());
        assert!(PnOperator::asinhe(0.0).is_err());
        assert!(PnOperator::sigme(0.5).is_err());
        assert!(PnOperator::axmin(1.0).is_err());
        assert!(PnOperator::gamma(f64::NAN).is_err());
    }

    #[test]
    fn parse_round_trip() {
        let op: PnOperator = "AsinhE:1.5".parse().unwrap();
        assert_eq!(op, PnOperator::asinhe(1.5).unwrap());
        assert_eq!(op.to_string().parse::<PnOperator>().unwrap(), op);
        assert!("sigme".parse::<PnOperator>().is_err());
        assert!("foo:1".parse::<PnOperator>().is_err());
    }

    #[test]
    fn zero_vector_is_fixed() {
        for op in [
            PnOperator::gamma(0.3).unwrap(),
            PnOperator::asinhe(2.0).unwrap(),
            PnOperator::sigme(3.0).unwrap(),
            PnOperator::axmin(3.0).unwrap(),
        ] {
            assert_eq!(op.apply(&[0.0; 4]), vec![0.0; 4]);
            assert!(op.vjp(&[0.0; 4], &[1.0; 4]).iter().all(|g| g.is_finite()));
        }
    }
}
