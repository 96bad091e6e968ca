use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::features::FeatureFile;
use super::manifest::{ClipManifest, Manifest, Split};
use crate::error::{Error, Result};
use crate::hallucinate::{Clip, Dataset, StreamId};
use crate::numkit::rng::stream_rng;
use crate::numkit::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthStream {
    pub id: StreamId,
    pub dim: usize,
    /// Scale of the latent signal relative to the unit noise.
    pub snr: f64,
}

/// Desk-scale stand-in for backbone features and ground-truth targets.
///
/// Each clip has a latent `z = μ_label + N(0, I)` and a quality value
/// `q ~ U(0, 1)`. The backbone is `[A z + σ_b ε; 2q − 1]`. Stream `i` gets
/// `snr_i · M_i z + s(q)·(ρ M_i u + √(1−ρ²) e_i)` where `u` is shared by all
/// streams of a clip and `s(q) = floor + scale·q^p`. A fraction of
/// training labels can be resampled uniformly to mimic annotation noise;
/// targets always follow the true class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub classes: usize,
    pub backbone_dim: usize,
    pub latent_dim: usize,
    /// Standard deviation of the class means.
    pub separation: f64,
    pub backbone_noise: f64,
    pub streams: Vec<SynthStream>,
    pub noise_floor: f64,
    pub noise_scale: f64,
    pub noise_correlation: f64,
    /// Exponent `p` in `s(q) = floor + scale·q^p`.
    pub noise_power: f64,
    /// Fraction of training labels replaced by a uniformly drawn class.
    pub label_noise: f64,
    /// Independently drawn target copies per stream.
    pub copies: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let streams = [StreamId::Bow, StreamId::Odf(1), StreamId::Sdf(1)]
            .into_iter()
            .map(|id| SynthStream { id, dim: 16, snr: 1.0 })
            .collect();
        Self {
            seed: 0,
            classes: 4,
            backbone_dim: 64,
            latent_dim: 8,
            separation: 1.5,
            backbone_noise: 2.0,
            streams,
            noise_floor: 0.1,
            noise_scale: 2.0,
            noise_correlation: 0.5,
            noise_power: 2.0,
            label_noise: 0.0,
            copies: 1,
            train: 800,
            val: 200,
            test: 200,
        }
    }
}

impl SyntheticSpec {
    /// Harder setting for the stream ablation: a wide noisy backbone, noisy
    /// training labels and heavy-tailed target noise tied to clip quality.
    pub fn ablation(seed: u64) -> Self {
        Self {
            seed,
            backbone_dim: 256,
            backbone_noise: 2.0,
            noise_scale: 6.0,
            noise_power: 4.0,
            label_noise: 0.4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("synthetic data needs at least 2 classes"));
        }
        if self.backbone_dim < 2 || self.latent_dim == 0 || self.copies == 0 {
            return Err(Error::invalid("backbone_dim >= 2, latent_dim >= 1 and copies >= 1 required"));
        }
        let nonneg = [self.separation, self.backbone_noise, self.noise_floor, self.noise_scale];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("separation and noise settings must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.noise_correlation) || !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::invalid("noise_correlation and label_noise must lie in [0, 1]"));
        }
        if !(self.noise_power.is_finite() && self.noise_power > 0.0) {
            return Err(Error::invalid("noise_power must be positive"));
        }
        let mut seen = Vec::new();
        for s in &self.streams {
            if s.dim == 0 || !(s.snr.is_finite() && s.snr >= 0.0) {
                return Err(Error::invalid(format!("stream {} needs dim >= 1 and snr >= 0", s.id)));
            }
            if s.id.is_haf() || seen.contains(&s.id) {
                return Err(Error::invalid(format!("stream {} not allowed or repeated", s.id)));
            }
            seen.push(s.id);
        }
        if self.train == 0 {
            return Err(Error::invalid("synthetic training split is empty"));
        }
        Ok(())
    }
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Generates the dataset in memory. Clip `k` of every split belongs to
/// class `k mod C`.
pub fn synth_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let l = spec.latent_dim;
    let mut prng = stream_rng(spec.seed, 0x5359_0001);
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| normals(&mut prng, l).into_iter().map(|x| spec.separation * x).collect())
        .collect();
    let a = normal_matrix(&mut prng, spec.backbone_dim - 1, l, 1.0 / (l as f64).sqrt());
    let maps: Vec<Matrix> = spec
        .streams
        .iter()
        .map(|s| normal_matrix(&mut prng, s.dim, l, 1.0 / (l as f64).sqrt()))
        .collect();
    let rho = spec.noise_correlation;
    let rho_c = (1.0 - rho * rho).sqrt();

    let mut data = Dataset {
        classes: spec.classes,
        ..Dataset::default()
    };
    for (split, count, tag) in [(0u64, spec.train, "train"), (1, spec.val, "val"), (2, spec.test, "test")] {
        let mut rng = stream_rng(spec.seed, 0x5359_1000 + split);
        let mut clips = Vec::with_capacity(count);
        for k in 0..count {
            let label = k % spec.classes;
            let z: Vec<f64> = means[label].iter().zip(normals(&mut rng, l)).map(|(m, e)| m + e).collect();
            let q: f64 = rng.gen();
            let mut backbone = a.mul_vec(&z)?;
            backbone
                .iter_mut()
                .zip(normals(&mut rng, spec.backbone_dim - 1))
                .for_each(|(x, e)| *x += spec.backbone_noise * e);
            backbone.push(2.0 * q - 1.0);
            let s = spec.noise_floor + spec.noise_scale * q.powf(spec.noise_power);
            let mut targets = BTreeMap::new();
            let shared: Vec<Vec<f64>> = (0..spec.copies).map(|_| normals(&mut rng, l)).collect();
            for (st, m) in spec.streams.iter().zip(&maps) {
                let signal = m.mul_vec(&z)?;
                let copies = shared
                    .iter()
                    .map(|u| {
                        let common = m.mul_vec(u)?;
                        Ok(signal
                            .iter()
                            .zip(common)
                            .map(|(sig, c)| st.snr * sig + s * (rho * c + rho_c * rng.sample::<f64, _>(StandardNormal)))
                            .collect())
                    })
                    .collect::<Result<Vec<Vec<f64>>>>()?;
                targets.insert(st.id, copies);
            }
            let flip: f64 = rng.gen();
            let observed = if split == 0 && flip < spec.label_noise {
                rng.gen_range(0..spec.classes)
            } else {
                label
            };
            clips.push(Clip {
                id: format!("{tag}{k:05}"),
                backbone,
                label: observed,
                targets,
            });
        }
        match split {
            0 => data.train = clips,
            1 => data.val = clips,
            _ => data.test = clips,
        }
    }
    Ok(data)
}

/// Writes the dataset under `root` (`features/`, `targets/` and
/// `manifest.json`) and returns the manifest.
pub fn synth_generate(spec: &SyntheticSpec, root: &Path) -> Result<Manifest> {
    let data = synth_dataset(spec)?;
    let mut clips = Vec::new();
    for (split, set) in [(Split::Train, &data.train), (Split::Val, &data.val), (Split::Test, &data.test)] {
        for c in set {
            let backbone = format!("features/{}.hfv", c.id);
            FeatureFile::vector(c.backbone.clone()).write(&root.join(&backbone))?;
            let mut targets = BTreeMap::new();
            for (id, copies) in &c.targets {
                let mut paths = Vec::with_capacity(copies.len());
                for (j, t) in copies.iter().enumerate() {
                    let p = format!("targets/{}.{id}.{j}.hfv", c.id);
                    FeatureFile::vector(t.clone()).write(&root.join(&p))?;
                    paths.push(p);
                }
                targets.insert(id.to_string(), paths);
            }
            clips.push(ClipManifest {
                id: c.id.clone(),
                label: c.label,
                split,
                backbone,
                targets,
                detections: None,
                saliency_spatial: None,
                saliency_temporal: None,
            });
        }
    }
    let manifest = Manifest {
        classes: spec.classes,
        clips,
    };
    manifest.save(&root.join("manifest.json"))?;
    Ok(manifest)
}
