//! Count sketches: seeded signed-hash projections `p(v) = Pv` with one
//! nonzero per column of `P`, plus estimators for the variance of sketched
//! inner products.

use rand::Rng;
use rayon::prelude::*;

use crate::encode::PnOperator;
use crate::error::{Error, Result};
use crate::numkit::{dot, l2_norm, rng::stream_rng};

const PLAN_STREAM: u64 = 0x534b_4554;

/// SplitMix64 finalizer; a bijection on `u64`, used to derive child seeds.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One count sketch. `h` is stored 0-based, so every entry is in `0..d_out`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SketchPlan {
    h: Vec<u32>,
    s: Vec<i8>,
    d_out: usize,
    seed: u64,
}

impl SketchPlan {
    pub fn new(d: usize, d_out: usize, seed: u64) -> Result<Self> {
        if d == 0 || d_out == 0 {
            return Err(Error::invalid(format!("sketch dims must be positive, got {d} -> {d_out}")));
        }
        if d_out > u32::MAX as usize {
            return Err(Error::invalid("sketch output dimension too large"));
        }
        let mut rng = stream_rng(seed, PLAN_STREAM);
        let mut h = Vec::with_capacity(d);
        let mut s = Vec::with_capacity(d);
        for _ in 0..d {
            h.push(rng.gen_range(0..d_out as u32));
            s.push(if rng.gen::<bool>() { 1 } else { -1 });
        }
        Ok(Self { h, s, d_out, seed })
    }

    /// `P = I`: `h` is the identity map and every sign is +1.
    pub fn identity(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("sketch dims must be positive"));
        }
        Ok(Self {
            h: (0..d as u32).collect(),
            s: vec![1; d],
            d_out: d,
            seed: 0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.h.len()
    }

    pub fn output_dim(&self) -> usize {
        self.d_out
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn hashes(&self) -> &[u32] {
        &self.h
    }

    pub fn signs(&self) -> &[i8] {
        &self.s
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.d_out];
        self.apply_into(v, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        if v.len() != self.h.len() {
            return Err(Error::dim("sketch input", self.h.len(), v.len()));
        }
        if out.len() != self.d_out {
            return Err(Error::dim("sketch output", self.d_out, out.len()));
        }
        out.fill(0.0);
        for ((&j, &s), &x) in self.h.iter().zip(&self.s).zip(v) {
            out[j as usize] += f64::from(s) * x;
        }
        Ok(())
    }

    /// `Pᵀu`, the adjoint map from sketch space back to input space.
    pub fn transpose_apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.d_out {
            return Err(Error::dim("sketch adjoint input", self.d_out, u.len()));
        }
        Ok(self
            .h
            .iter()
            .zip(&self.s)
            .map(|(&j, &s)| f64::from(s) * u[j as usize])
            .collect())
    }

    /// Dense `d′ × d` matrix, row-major.
    pub fn to_dense(&self) -> Vec<f64> {
        let d = self.h.len();
        let mut m = vec![0.0; self.d_out * d];
        for (i, (&j, &s)) in self.h.iter().zip(&self.s).enumerate() {
            m[j as usize * d + i] = f64::from(s);
        }
        m
    }
}

/// `k` independent plans sharing input and output sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiSketch {
    plans: Vec<SketchPlan>,
    seed: u64,
}

impl MultiSketch {
    /// Plan `i` uses seed `mix_seed(seed, i)`, so seeds are pairwise distinct.
    pub fn new(d: usize, d_out: usize, k: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("sketch count must be at least 1"));
        }
        let plans = (0..k as u64)
            .map(|i| SketchPlan::new(d, d_out, mix_seed(seed, i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { plans, seed })
    }

    pub fn from_plans(plans: Vec<SketchPlan>) -> Result<Self> {
        let first = plans
            .first()
            .ok_or_else(|| Error::invalid("sketch count must be at least 1"))?;
        let (d, d_out) = (first.input_dim(), first.output_dim());
        for p in &plans {
            if p.input_dim() != d || p.output_dim() != d_out {
                return Err(Error::invalid("plans in a multi-sketch must share dimensions"));
            }
        }
        let seed = first.seed();
        Ok(Self { plans, seed })
    }

    pub fn plans(&self) -> &[SketchPlan] {
        &self.plans
    }

    pub fn count(&self) -> usize {
        self.plans.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.plans[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.plans[0].output_dim()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.plans.iter().map(|p| p.apply(v)).collect()
    }

    /// Serialized record: seed, d, d′ and k as little-endian `u64`s. The plans
    /// themselves are regenerated on load.
    pub fn to_record(&self) -> [u8; SKETCH_RECORD_LEN] {
        let mut out = [0u8; SKETCH_RECORD_LEN];
        let fields = [
            self.seed,
            self.input_dim() as u64,
            self.output_dim() as u64,
            self.count() as u64,
        ];
        for (chunk, f) in out.chunks_exact_mut(8).zip(fields) {
            chunk.copy_from_slice(&f.to_le_bytes());
        }
        out
    }

    pub fn from_record(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != SKETCH_RECORD_LEN {
            return Err(Error::Format {
                format: "sketch record",
                offset: bytes.len().min(SKETCH_RECORD_LEN),
                reason: format!("expected {SKETCH_RECORD_LEN} bytes, got {}", bytes.len()),
            });
        }
        let field = |i: usize| {
            let mut b = [0u8; 8];
            b.copy_from_slice(&bytes[i * 8..i * 8 + 8]);
            u64::from_le_bytes(b)
        };
        let limit = |i: usize, max: u64| -> Result<usize> {
            let v = field(i);
            if v == 0 || v > max {
                return Err(Error::Format {
                    format: "sketch record",
                    offset: i * 8,
                    reason: format!("field value {v} outside 1..={max}"),
                });
            }
            Ok(v as usize)
        };
        let d = limit(1, MAX_RECORD_DIM)?;
        let d_out = limit(2, MAX_RECORD_DIM)?;
        let k = limit(3, MAX_RECORD_COPIES)?;
        if (d as u64) * (k as u64) > MAX_RECORD_DIM {
            return Err(Error::Format {
                format: "sketch record",
                offset: 24,
                reason: format!("{k} copies of dimension {d} exceed {MAX_RECORD_DIM} entries"),
            });
        }
        Self::new(d, d_out, k, field(0))
    }
}

pub const SKETCH_RECORD_LEN: usize = 32;
// Guards against absurd allocations when loading untrusted records.
const MAX_RECORD_DIM: u64 = 1 << 26;
const MAX_RECORD_COPIES: u64 = 1 << 10;

/// `(1/d′)(⟨ψ,ψ′⟩² + ‖ψ‖²‖ψ′‖²)`.
pub fn variance_bound(v: &[f64], w: &[f64], d_out: usize) -> f64 {
    let ip = dot(v, w);
    let (nv, nw) = (l2_norm(v), l2_norm(w));
    (ip * ip + nv * nv * nw * nw) / d_out as f64
}

/// Exact variance of the sketched inner product over random plans:
/// `(1/d′)(‖ψ‖²‖ψ′‖² + ⟨ψ,ψ′⟩² − 2Σψ_i²ψ′_i²)`.
pub fn exact_variance(v: &[f64], w: &[f64], d_out: usize) -> f64 {
    let ip = dot(v, w);
    let (nv, nw) = (l2_norm(v), l2_norm(w));
    let diag: f64 = v.iter().zip(w).map(|(a, b)| a * a * b * b).sum();
    (nv * nv * nw * nw + ip * ip - 2.0 * diag) / d_out as f64
}

/// `2/(⟨ψ,ψ′⟩² + 1)` for the ℓ2-normalized pair.
pub fn kappa_theory(v: &[f64], w: &[f64]) -> f64 {
    let c = dot(v, w) / (l2_norm(v) * l2_norm(w));
    2.0 / (c * c + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceProbe {
    pub true_inner: f64,
    pub mean: f64,
    pub standard_error: f64,
    pub empirical_variance: f64,
    pub bound: f64,
    /// `(2/d′) / V̂`, where `V̂` is the variance normalized by `‖ψ‖²‖ψ′‖²`.
    pub kappa: f64,
}

impl VarianceProbe {
    /// Variance normalized by the squared input norms.
    pub fn normalized_variance(&self, v: &[f64], w: &[f64]) -> f64 {
        let n = l2_norm(v) * l2_norm(w);
        self.empirical_variance / (n * n)
    }
}

pub const MIN_PROBE_TRIALS: usize = 1000;

/// Monte Carlo statistics of `⟨Pψ, Pψ′⟩` over `trials` independent plans.
pub fn variance_probe(
    v: &[f64],
    w: &[f64],
    trials: usize,
    d_out: usize,
    seed: u64,
) -> Result<VarianceProbe> {
    let samples = sketched_inner_products(v, w, trials, d_out, 1, seed)?;
    Ok(summarize(v, w, d_out, &samples))
}

/// Like [`variance_probe`], but each trial averages the inner products of
/// `copies` independent sketches.
pub fn variance_probe_multi(
    v: &[f64],
    w: &[f64],
    trials: usize,
    d_out: usize,
    copies: usize,
    seed: u64,
) -> Result<VarianceProbe> {
    let samples = sketched_inner_products(v, w, trials, d_out, copies, seed)?;
    Ok(summarize(v, w, d_out, &samples))
}

/// Ratio `V^(pn) / V` of normalized sketching variances after and before
/// applying `op` to both vectors; the same plans are used for both.
pub fn pn_variance_ratio(
    v: &[f64],
    w: &[f64],
    op: &PnOperator,
    trials: usize,
    d_out: usize,
    seed: u64,
) -> Result<f64> {
    let base = variance_probe(v, w, trials, d_out, seed)?;
    let (pv, pw) = (op.apply(v), op.apply(w));
    let pn = variance_probe(&pv, &pw, trials, d_out, seed)?;
    Ok(pn.normalized_variance(&pv, &pw) / base.normalized_variance(v, w))
}

fn sketched_inner_products(
    v: &[f64],
    w: &[f64],
    trials: usize,
    d_out: usize,
    copies: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if v.len() != w.len() {
        return Err(Error::dim("variance probe pair", v.len(), w.len()));
    }
    if trials < MIN_PROBE_TRIALS {
        return Err(Error::invalid(format!(
            "variance probe needs at least {MIN_PROBE_TRIALS} trials, got {trials}"
        )));
    }
    if copies == 0 {
        return Err(Error::invalid("sketch count must be at least 1"));
    }
    let d = v.len();
    (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let ms = MultiSketch::new(d, d_out, copies, mix_seed(seed, t))?;
            let mut acc = 0.0;
            let (mut a, mut b) = (vec![0.0; d_out], vec![0.0; d_out]);
            for plan in ms.plans() {
                plan.apply_into(v, &mut a)?;
                plan.apply_into(w, &mut b)?;
                acc += dot(&a, &b);
            }
            Ok(acc / copies as f64)
        })
        .collect()
}

fn summarize(v: &[f64], w: &[f64], d_out: usize, samples: &[f64]) -> VarianceProbe {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let norms = l2_norm(v) * l2_norm(w);
    let normalized = var / (norms * norms);
    VarianceProbe {
        true_inner: dot(v, w),
        mean,
        standard_error: (var / n).sqrt(),
        empirical_variance: var,
        bound: variance_bound(v, w, d_out),
        kappa: (2.0 / d_out as f64) / normalized,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_plan_is_identity() {
        let p = SketchPlan::identity(4).unwrap();
        assert_eq!(p.apply(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![1.0, -2.0, 3.0, 0.5]);
        let dense = p.to_dense();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(dense[i * 4 + j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn one_nonzero_per_column() {
        let p = SketchPlan::new(50, 7, 11).unwrap();
        let dense = p.to_dense();
        for col in 0..50 {
            let nz: Vec<f64> = (0..7).map(|r| dense[r * 50 + col]).filter(|x| *x != 0.0).collect();
            assert_eq!(nz.len(), 1);
            assert_eq!(nz[0].abs(), 1.0);
        }
    }

    #[test]
    fn zero_maps_to_zero() {
        let p = SketchPlan::new(10, 3, 1).unwrap();
        assert_eq!(p.apply(&[0.0; 10]).unwrap(), vec![0.0; 3]);
        assert!(p.apply(&[0.0; 9]).is_err());
    }

    #[test]
    fn transpose_is_adjoint() {
        let p = SketchPlan::new(20, 6, 5).unwrap();
        let v: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let u: Vec<f64> = (0..6).map(|i| (i as f64).cos()).collect();
        let lhs = dot(&p.apply(&v).unwrap(), &u);
        let rhs = dot(&v, &p.transpose_apply(&u).unwrap());
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn plans_are_seeded() {
        assert_eq!(SketchPlan::new(30, 4, 9).unwrap(), SketchPlan::new(30, 4, 9).unwrap());
        assert_ne!(SketchPlan::new(30, 4, 9).unwrap(), SketchPlan::new(30, 4, 10).unwrap());
    }

    #[test]
    fn multi_sketch_seeds_differ() {
        let ms = MultiSketch::new(16, 4, 5, 3).unwrap();
        let mut seeds: Vec<u64> = ms.plans().iter().map(|p| p.seed()).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 5);
        let single = MultiSketch::new(16, 4, 1, 3).unwrap();
        let v: Vec<f64> = (0..16).map(f64::from).collect();
        assert_eq!(single.apply(&v).unwrap()[0], single.plans()[0].apply(&v).unwrap());
    }

    #[test]
    fn forced_identical_copies() {
        let plan = SketchPlan::new(16, 4, 8).unwrap();
        let ms = MultiSketch::from_plans(vec![plan.clone(), plan]).unwrap();
        let v: Vec<f64> = (0..16).map(|i| f64::from(i) * 0.3).collect();
        let out = ms.apply(&v).unwrap();
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn record_round_trip() {
        let ms = MultiSketch::new(100, 16, 3, 42).unwrap();
        let rec = ms.to_record();
        assert_eq!(MultiSketch::from_record(&rec).unwrap(), ms);
        assert!(MultiSketch::from_record(&rec[..31]).is_err());
        let mut bad = rec;
        bad[24..32].copy_from_slice(&0u64.to_le_bytes());
        assert!(MultiSketch::from_record(&bad).is_err());
    }

    #[test]
    fn kappa_endpoints() {
        assert!((kappa_theory(&[1.0, 0.0], &[0.0, 1.0]) - 2.0).abs() < 1e-15);
        assert!((kappa_theory(&[0.6, 0.8], &[0.6, 0.8]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn probe_rejects_few_trials() {
        assert!(variance_probe(&[1.0], &[1.0], 10, 2, 0).is_err());
    }
}
