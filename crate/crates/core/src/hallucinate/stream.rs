use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::layers::Dense;
use crate::encode::PnOperator;
use crate::error::{Error, Result};

/// Feature stream identity. ODF and SDF come in numbered variants (up to
/// four detector setups and two saliency sources); `Odf(1)` prints as `odf`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StreamId {
    Bow,
    Fv1,
    Fv2,
    Off,
    Odf(u8),
    Sdf(u8),
    Gsf,
    Af,
    Haf,
}

pub const MAX_ODF_VARIANTS: u8 = 4;
pub const MAX_SDF_VARIANTS: u8 = 2;

impl StreamId {
    pub fn is_haf(self) -> bool {
        self == StreamId::Haf
    }
}

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StreamId::Bow => f.write_str("bow"),
            StreamId::Fv1 => f.write_str("fv1"),
            StreamId::Fv2 => f.write_str("fv2"),
            StreamId::Off => f.write_str("off"),
            StreamId::Odf(1) => f.write_str("odf"),
            StreamId::Odf(k) => write!(f, "odf{k}"),
            StreamId::Sdf(1) => f.write_str("sdf"),
            StreamId::Sdf(k) => write!(f, "sdf{k}"),
            StreamId::Gsf => f.write_str("gsf"),
            StreamId::Af => f.write_str("af"),
            StreamId::Haf => f.write_str("haf"),
        }
    }
}

impl FromStr for StreamId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let fixed = match lower.as_str() {
            "bow" => Some(StreamId::Bow),
            "fv1" => Some(StreamId::Fv1),
            "fv2" => Some(StreamId::Fv2),
            "off" => Some(StreamId::Off),
            "odf" => Some(StreamId::Odf(1)),
            "sdf" => Some(StreamId::Sdf(1)),
            "gsf" => Some(StreamId::Gsf),
            "af" => Some(StreamId::Af),
            "haf" => Some(StreamId::Haf),
            _ => None,
        };
        if let Some(id) = fixed {
            return Ok(id);
        }
        let variant = |prefix: &str, max: u8| -> Option<u8> {
            let k: u8 = lower.strip_prefix(prefix)?.parse().ok()?;
            (1..=max).contains(&k).then_some(k)
        };
        if let Some(k) = variant("odf", MAX_ODF_VARIANTS).or_else(|| variant("det", MAX_ODF_VARIANTS)) {
            return Ok(StreamId::Odf(k));
        }
        if let Some(k) = variant("sdf", MAX_SDF_VARIANTS).or_else(|| variant("sal", MAX_SDF_VARIANTS)) {
            return Ok(StreamId::Sdf(k));
        }
        Err(Error::invalid(format!("unknown stream `{s}`")))
    }
}

/// One fully connected unit from the backbone followed by PN.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamNet {
    pub id: StreamId,
    pub fc: Dense,
    pub pn: PnOperator,
}

/// Values kept from a forward pass for backprop.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamTrace {
    pub pre: Vec<f64>,
    pub out: Vec<f64>,
}

impl StreamNet {
    pub fn new(id: StreamId, backbone_dim: usize, dim: usize, pn: PnOperator, seed: u64, stream: u64) -> Self {
        Self {
            id,
            fc: Dense::xavier(backbone_dim, dim, seed, stream),
            pn,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.fc.inputs
    }

    pub fn output_dim(&self) -> usize {
        self.fc.outputs
    }

    pub fn trace(&self, x: &[f64]) -> StreamTrace {
        let pre = self.fc.forward(x);
        let out = self.pn.apply(&pre);
        StreamTrace { pre, out }
    }

    /// `PN(Wx + b)`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::dim(format!("stream {} input", self.id), self.input_dim(), x.len()));
        }
        Ok(self.trace(x).out)
    }

    /// Accumulates parameter gradients for upstream `g_out` on the output.
    pub fn backward(&self, x: &[f64], trace: &StreamTrace, g_out: &[f64], gw: &mut [f64], gb: &mut [f64]) {
        let g_pre = self.pn.vjp(&trace.pre, g_out);
        self.fc.backward_params(x, &g_pre, gw, gb);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for id in [
            StreamId::Bow,
            StreamId::Fv1,
            StreamId::Fv2,
            StreamId::Off,
            StreamId::Odf(1),
            StreamId::Odf(3),
            StreamId::Sdf(1),
            StreamId::Sdf(2),
            StreamId::Gsf,
            StreamId::Af,
            StreamId::Haf,
        ] {
            assert_eq!(id.to_string().parse::<StreamId>().unwrap(), id);
        }
        assert_eq!("det2".parse::<StreamId>().unwrap(), StreamId::Odf(2));
        assert!("odf5".parse::<StreamId>().is_err());
        assert!("sal0".parse::<StreamId>().is_err());
        assert!("rgb".parse::<StreamId>().is_err());
    }

    #[test]
    fn zero_net_gives_zero() {
        let mut net = StreamNet::new(StreamId::Bow, 3, 2, PnOperator::sigme(2.0).unwrap(), 1, 0);
        net.fc.w.fill(0.0);
        assert_eq!(net.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn asinhe_fixed_point_passthrough() {
        let mut net = StreamNet::new(StreamId::Off, 3, 3, PnOperator::asinhe(2.5).unwrap(), 1, 0);
        net.fc.w = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let out = net.forward(&[1.0, 0.0, 0.0]).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-15 && out[1] == 0.0 && out[2] == 0.0);
    }
}
