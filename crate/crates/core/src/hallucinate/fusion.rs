use serde::{Deserialize, Serialize};

use super::stream::StreamId;
use crate::error::{Error, Result};

/// How stream outputs are combined before the prediction network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionMode {
    /// Convex combination of equally sized stream vectors.
    Weighted,
    /// `[ψ̃; ψ_haf]`, optionally count-sketched.
    Concat,
}

pub const DEFAULT_RHO: f64 = 0.1;

/// `max(w′^β, ρ) / Σ_j max(w′_j^β, ρ)`. An all-zero numerator falls back to
/// uniform weights.
pub fn fusion_weights(raw: &[f64], beta: f64, rho: f64) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::invalid("fusion level has no streams"));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("fusion exponent {beta} must be finite and >= 0")));
    }
    if !(rho >= 0.0) {
        return Err(Error::invalid(format!("fusion floor {rho} must be >= 0")));
    }
    if raw.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::invalid("fusion raw scores must be finite and >= 0"));
    }
    let num: Vec<f64> = raw.iter().map(|w| w.powf(beta).max(rho)).collect();
    let total: f64 = num.iter().sum();
    if total == 0.0 || !total.is_finite() {
        return Ok(vec![1.0 / raw.len() as f64; raw.len()]);
    }
    Ok(num.into_iter().map(|n| n / total).collect())
}

/// Per-stream coefficients of the three-level weighted average: ODF
/// variants are averaged within the detector level, SDF variants within the
/// saliency level, and the resulting groups together with HAF at the top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub beta: f64,
    pub rho: f64,
    /// Top-level groups with their normalized weights, HAF last.
    pub top: Vec<(String, f64)>,
    /// Effective coefficient per hallucination stream (model order).
    pub streams: Vec<f64>,
    pub haf: f64,
}

impl FusionWeights {
    /// `raw[i]` is the score of `ids[i]`; HAF's raw score is
    /// `1/(|groups|+1)`.
    pub fn compute(ids: &[StreamId], raw: &[f64], beta: f64, rho: f64) -> Result<Self> {
        if ids.len() != raw.len() {
            return Err(Error::dim("fusion raw scores", ids.len(), raw.len()));
        }
        let det: Vec<usize> = (0..ids.len()).filter(|&i| matches!(ids[i], StreamId::Odf(_))).collect();
        let sal: Vec<usize> = (0..ids.len()).filter(|&i| matches!(ids[i], StreamId::Sdf(_))).collect();

        // (name, member indices, within-group weights)
        let mut groups: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
        let mut det_done = false;
        let mut sal_done = false;
        for (i, id) in ids.iter().enumerate() {
            match id {
                StreamId::Odf(_) if !det_done => {
                    det_done = true;
                    let r: Vec<f64> = det.iter().map(|&j| raw[j]).collect();
                    groups.push(("det".into(), det.clone(), fusion_weights(&r, beta, rho)?));
                }
                StreamId::Sdf(_) if !sal_done => {
                    sal_done = true;
                    let r: Vec<f64> = sal.iter().map(|&j| raw[j]).collect();
                    groups.push(("sal".into(), sal.clone(), fusion_weights(&r, beta, rho)?));
                }
                StreamId::Odf(_) | StreamId::Sdf(_) => {}
                StreamId::Haf => return Err(Error::invalid("HAF is not a hallucination stream")),
                other => groups.push((other.to_string(), vec![i], vec![1.0])),
            }
        }
        let mut top_raw: Vec<f64> = groups
            .iter()
            .map(|(_, members, _)| members.iter().map(|&j| raw[j]).sum::<f64>() / members.len() as f64)
            .collect();
        top_raw.push(1.0 / (groups.len() + 1) as f64);
        let top_w = fusion_weights(&top_raw, beta, rho)?;

        let mut streams = vec![0.0; ids.len()];
        for ((_, members, within), &g) in groups.iter().zip(&top_w) {
            for (&j, &w) in members.iter().zip(within) {
                streams[j] = g * w;
            }
        }
        let mut top: Vec<(String, f64)> = groups.iter().map(|(n, _, _)| n.clone()).zip(top_w.iter().copied()).collect();
        let haf = *top_w.last().expect("HAF weight");
        top.push(("haf".into(), haf));
        Ok(Self {
            beta,
            rho,
            top,
            streams,
            haf,
        })
    }
}

/// `c_haf ψ_haf + Σ c_i ψ̃_i`.
pub fn fuse_weighted(streams: &[&[f64]], haf: &[f64], weights: &FusionWeights) -> Result<Vec<f64>> {
    if streams.len() != weights.streams.len() {
        return Err(Error::dim("fused streams", weights.streams.len(), streams.len()));
    }
    let d = haf.len();
    let mut out: Vec<f64> = haf.iter().map(|x| x * weights.haf).collect();
    for (s, &c) in streams.iter().zip(&weights.streams) {
        if s.len() != d {
            return Err(Error::dim("weighted fusion stream", d, s.len()));
        }
        for (o, x) in out.iter_mut().zip(s.iter()) {
            *o += c * x;
        }
    }
    Ok(out)
}
