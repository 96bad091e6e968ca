use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::fusion::{FusionMode, DEFAULT_RHO};
use super::layers::{argmax, cross_entropy};
use super::model::{BlockGroup, Clip, LossTerms, Model};
use super::stream::StreamId;
use crate::error::{Error, Result};
use crate::numkit::rng::stream_rng;
use crate::numkit::{AdamConfig, AdamState, GoldenBracket};

/// Version tag written into every metrics record.
pub const METRICS_SCHEMA: u32 = 1;

/// How `ω` is obtained during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OmegaMode {
    /// Predicted by the covariance network.
    Learned,
    /// Frozen at the identity, i.e. plain squared error.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    /// Training clips used to fit each probe.
    pub subset: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            subset: 256,
            iterations: 150,
            learning_rate: 0.05,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub alpha: f64,
    pub kappa: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub beta_bracket: (f64, f64),
    pub warmup_epochs: usize,
    pub rho: f64,
    pub omega: OmegaMode,
    pub probe: ProbeConfig,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            kappa: 0.1,
            epochs: 30,
            batch_size: 32,
            adam: AdamConfig::default(),
            beta_bracket: (0.0, 50.0),
            warmup_epochs: 10,
            rho: DEFAULT_RHO,
            omega: OmegaMode::Learned,
            probe: ProbeConfig::default(),
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::invalid(format!("kappa must be finite and >= 0, got {}", self.kappa)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        let (lo, hi) = self.beta_bracket;
        if !(lo >= 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::invalid(format!("beta bracket [{lo}, {hi}] must satisfy 0 <= lo < hi")));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::invalid("rho must be finite and >= 0"));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.probe.subset == 0 || self.probe.iterations == 0 || !(self.probe.learning_rate > 0.0) {
            return Err(Error::invalid("probe subset, iterations and learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub classes: usize,
    pub train: Vec<Clip>,
    pub val: Vec<Clip>,
    pub test: Vec<Clip>,
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub schema: u32,
    pub epoch: usize,
    pub learning_rate: f64,
    pub loss_uncertainty: f64,
    pub loss_classification: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub beta: f64,
    pub beta_bracket: (f64, f64),
    pub probe_accuracy: BTreeMap<String, f64>,
    pub fusion: Vec<(String, f64)>,
}

/// Multinomial logistic regression on standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    mean: Vec<f64>,
    scale: Vec<f64>,
    classes: usize,
    /// `classes × (dim + 1)`, bias last.
    weights: Vec<f64>,
}

impl LinearProbe {
    pub fn fit(features: &[Vec<f64>], labels: &[usize], classes: usize, cfg: &ProbeConfig) -> Result<Self> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(Error::dim("probe labels", features.len(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::OutOfRange(format!("label {bad} with {classes} classes")));
        }
        let dim = features[0].len();
        if let Some(f) = features.iter().find(|f| f.len() != dim) {
            return Err(Error::dim("probe feature", dim, f.len()));
        }
        let n = features.len() as f64;
        let mut mean = vec![0.0; dim];
        for f in features {
            mean.iter_mut().zip(f).for_each(|(m, x)| *m += x / n);
        }
        let mut var = vec![0.0; dim];
        for f in features {
            var.iter_mut().zip(f.iter().zip(&mean)).for_each(|(v, (x, m))| *v += (x - m) * (x - m) / n);
        }
        let scale: Vec<f64> = var.iter().map(|v| if *v > 1e-16 { 1.0 / v.sqrt() } else { 0.0 }).collect();
        let mut probe = Self {
            mean,
            scale,
            classes,
            weights: vec![0.0; classes * (dim + 1)],
        };
        let z: Vec<Vec<f64>> = features.iter().map(|f| probe.standardize(f)).collect();
        let mut adam = AdamState::new(
            probe.weights.len(),
            AdamConfig {
                learning_rate: cfg.learning_rate,
                halving_period: 0,
                ..AdamConfig::default()
            },
        )?;
        let mut grad = vec![0.0; probe.weights.len()];
        for _ in 0..cfg.iterations {
            grad.iter_mut().zip(&probe.weights).for_each(|(g, w)| *g = cfg.l2 * w);
            for (x, &y) in z.iter().zip(labels) {
                let (_, g_logits) = cross_entropy(&probe.logits_standardized(x), y);
                for (c, gc) in g_logits.iter().enumerate() {
                    let row = &mut grad[c * (dim + 1)..(c + 1) * (dim + 1)];
                    row.iter_mut().zip(x).for_each(|(g, xi)| *g += gc * xi / n);
                    row[dim] += gc / n;
                }
            }
            adam.step("probe", &mut probe.weights, &grad)?;
        }
        Ok(probe)
    }

    fn standardize(&self, f: &[f64]) -> Vec<f64> {
        f.iter().zip(&self.mean).zip(&self.scale).map(|((x, m), s)| (x - m) * s).collect()
    }

    fn logits_standardized(&self, z: &[f64]) -> Vec<f64> {
        let dim = self.mean.len();
        (0..self.classes)
            .map(|c| {
                let row = &self.weights[c * (dim + 1)..(c + 1) * (dim + 1)];
                row[..dim].iter().zip(z).map(|(w, x)| w * x).sum::<f64>() + row[dim]
            })
            .collect()
    }

    pub fn predict(&self, f: &[f64]) -> usize {
        argmax(&self.logits_standardized(&self.standardize(f)))
    }

    pub fn accuracy(&self, features: &[Vec<f64>], labels: &[usize]) -> f64 {
        if features.is_empty() {
            return 0.0;
        }
        let hits = features.iter().zip(labels).filter(|(f, &y)| self.predict(f) == y).count();
        hits as f64 / features.len() as f64
    }
}

/// Squared-difference histogram with fixed-width bins starting at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// Normalized counts; the last bin also holds everything beyond it.
    pub counts: Vec<f64>,
}

impl Histogram {
    pub fn first_bin(&self) -> f64 {
        self.counts.first().copied().unwrap_or(0.0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_start,normalized_count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i as f64 * self.bin_width, c));
        }
        out
    }
}

const HIST_BINS: usize = 100;

/// Histogram of `(ψ̃_j − ψ′_j)²` over every coordinate of `stream` and every
/// clip, normalized by the feature count and the clip count. Targets are
/// taken from the first sketch copy.
pub fn hallucination_histogram(model: &Model, clips: &[Clip], stream: StreamId, bin_width: f64) -> Result<Histogram> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::invalid("histogram bin width must be positive"));
    }
    let idx = model
        .streams
        .iter()
        .position(|s| s.id == stream)
        .ok_or_else(|| Error::invalid(format!("model has no stream {stream}")))?;
    let mut counts = vec![0.0; HIST_BINS];
    let dim = model.streams[idx].output_dim();
    for clip in clips {
        let target = clip
            .targets
            .get(&stream)
            .and_then(|c| c.first())
            .ok_or_else(|| Error::MissingTarget(stream.to_string()))?;
        if target.len() != dim {
            return Err(Error::dim(format!("target for stream {stream}"), dim, target.len()));
        }
        let h = model.streams[idx].forward(&clip.backbone)?;
        for (a, b) in h.iter().zip(target) {
            let sq = (a - b) * (a - b);
            let bin = ((sq / bin_width).floor() as usize).min(HIST_BINS - 1);
            counts[bin] += 1.0;
        }
    }
    let total = (dim * clips.len()) as f64;
    if total > 0.0 {
        counts.iter_mut().for_each(|c| *c /= total);
    }
    Ok(Histogram { bin_width, counts })
}

pub fn train(model: Model, data: &Dataset, cfg: &TrainingConfig) -> Result<(Model, Vec<EpochMetrics>)> {
    train_with_observer(model, data, cfg, |_, _| Ok(()))
}

fn probe_subset(clips: &[Clip], n: usize) -> &[Clip] {
    &clips[..n.min(clips.len())]
}

fn labels(clips: &[Clip]) -> Vec<usize> {
    clips.iter().map(|c| c.label).collect()
}

/// Validation accuracy of a probe fitted on each stream's ground-truth
/// target, in model stream order.
fn stream_probe_scores(model: &Model, data: &Dataset, cfg: &ProbeConfig) -> Result<Vec<f64>> {
    let fit_clips = probe_subset(&data.train, cfg.subset);
    let eval_clips = if data.val.is_empty() { fit_clips } else { &data.val[..] };
    model
        .streams
        .iter()
        .map(|s| {
            let features = |clips: &[Clip]| -> Result<Vec<Vec<f64>>> {
                clips
                    .iter()
                    .map(|c| {
                        c.targets
                            .get(&s.id)
                            .and_then(|t| t.first())
                            .cloned()
                            .ok_or_else(|| Error::MissingTarget(s.id.to_string()))
                    })
                    .collect()
            };
            let probe = LinearProbe::fit(&features(fit_clips)?, &labels(fit_clips), data.classes, cfg)?;
            Ok(probe.accuracy(&features(eval_clips)?, &labels(eval_clips)))
        })
        .collect()
}

/// Validation accuracy of a probe on fused features at exponent `beta`.
fn beta_objective(model: &Model, data: &Dataset, cfg: &TrainingConfig, beta: f64) -> Result<f64> {
    let mut m = model.clone();
    m.set_fusion(model.raw_scores.clone(), beta, cfg.rho)?;
    let fit_clips = probe_subset(&data.train, cfg.probe.subset);
    let eval_clips = if data.val.is_empty() { fit_clips } else { &data.val[..] };
    let fused = |clips: &[Clip]| -> Result<Vec<Vec<f64>>> { clips.iter().map(|c| m.fused(&c.backbone)).collect() };
    let probe = LinearProbe::fit(&fused(fit_clips)?, &labels(fit_clips), data.classes, &cfg.probe)?;
    Ok(probe.accuracy(&fused(eval_clips)?, &labels(eval_clips)))
}

fn accuracy(model: &Model, clips: &[Clip]) -> Result<Option<f64>> {
    if clips.is_empty() {
        return Ok(None);
    }
    let mut hits = 0;
    for c in clips {
        hits += usize::from(model.predict_label(&c.backbone)? == c.label);
    }
    Ok(Some(hits as f64 / clips.len() as f64))
}

fn apply_step(model: &mut Model, opt: &mut [AdamState], names: &[String], groups: &[BlockGroup], grads: &super::model::Gradients, group: BlockGroup, skip_cenet: bool) -> Result<()> {
    let g = grads.blocks();
    for (((params, grad), state), (name, grp)) in model
        .blocks_mut()
        .into_iter()
        .zip(g)
        .zip(opt.iter_mut())
        .zip(names.iter().zip(groups))
    {
        if *grp != group || (skip_cenet && name.starts_with("cenet.")) {
            continue;
        }
        state.step(name, params, grad)?;
    }
    Ok(())
}

/// Alternating optimization. Each batch first updates the streams and the
/// covariance network on the uncertainty term, then HAF and the prediction
/// network on cross-entropy. After the warmup epochs each epoch spends one
/// golden-section evaluation on the fusion exponent `β`. `observe` runs after
/// every epoch.
pub fn train_with_observer<F>(mut model: Model, data: &Dataset, cfg: &TrainingConfig, mut observe: F) -> Result<(Model, Vec<EpochMetrics>)>
where
    F: FnMut(&EpochMetrics, &Model) -> Result<()>,
{
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Ok((model, Vec::new()));
    }
    if data.train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    if data.classes != model.config.classes {
        return Err(Error::dim("dataset classes", model.config.classes, data.classes));
    }

    let blocks = model.blocks();
    let names: Vec<String> = blocks.iter().map(|b| b.0.clone()).collect();
    let groups: Vec<BlockGroup> = blocks.iter().map(|b| b.1).collect();
    let mut opt: Vec<AdamState> = blocks
        .iter()
        .map(|b| AdamState::new(b.2.len(), cfg.adam.clone()))
        .collect::<Result<_>>()?;

    let has_streams = !model.streams.is_empty();
    let searching = has_streams && model.config.fusion == FusionMode::Weighted;
    let mut probe_accuracy = BTreeMap::new();
    if has_streams {
        let raw = stream_probe_scores(&model, data, &cfg.probe)?;
        for (s, a) in model.streams.iter().zip(&raw) {
            probe_accuracy.insert(s.id.to_string(), *a);
        }
        model.set_fusion(raw, 0.0, cfg.rho)?;
    }
    let mut bracket = GoldenBracket::new(cfg.beta_bracket.0, cfg.beta_bracket.1)?;
    let mut beta = 0.0;

    let identity = cfg.omega == OmegaMode::Identity;
    let step_a = LossTerms {
        alpha: cfg.alpha,
        kappa: cfg.kappa,
        identity_omega: identity,
        classification: false,
        grad_uncertainty_group: true,
        grad_classification_group: false,
    };
    let step_b = LossTerms {
        alpha: 0.0,
        kappa: cfg.kappa,
        identity_omega: identity,
        classification: true,
        grad_uncertainty_group: false,
        grad_classification_group: true,
    };

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut stream_rng(cfg.seed, 0x4550_0000 + epoch as u64));
        let mut sum_u = 0.0;
        let mut sum_ce = 0.0;
        let mut correct = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Clip> = chunk.iter().map(|&i| data.train[i].clone()).collect();
            let diverged = |what: &str| Error::Diverged {
                epoch,
                batch: b + 1,
                what: what.to_string(),
            };

            if has_streams && cfg.alpha > 0.0 {
                let (rep, grads, stats) = model.batch_gradients(&batch, &step_a)?;
                if !rep.uncertainty.is_finite() {
                    return Err(diverged("uncertainty loss"));
                }
                apply_step(&mut model, &mut opt, &names, &groups, &grads, BlockGroup::Uncertainty, identity)
                    .map_err(|e| match e {
                        Error::NonFiniteGradient(block) => diverged(&format!("gradient of {block}")),
                        other => other,
                    })?;
                if let Some(c) = model.cenet.as_mut() {
                    if !identity {
                        c.norm.update(&stats.ce_hidden);
                    }
                }
                sum_u += rep.uncertainty * chunk.len() as f64;
            }

            let (rep, grads, stats) = model.batch_gradients(&batch, &step_b)?;
            if !rep.classification.is_finite() {
                return Err(diverged("classification loss"));
            }
            apply_step(&mut model, &mut opt, &names, &groups, &grads, BlockGroup::Classification, false).map_err(
                |e| match e {
                    Error::NonFiniteGradient(block) => diverged(&format!("gradient of {block}")),
                    other => other,
                },
            )?;
            model.prednet.norm.update(&stats.fused);
            sum_ce += rep.classification * chunk.len() as f64;
            correct += rep.correct;
        }
        let learning_rate = opt.first().map_or(cfg.adam.learning_rate, |o| o.learning_rate());
        opt.iter_mut().for_each(AdamState::advance_epoch);

        if searching && epoch > cfg.warmup_epochs {
            let x = bracket.next_point();
            let acc = beta_objective(&model, data, cfg, x)?;
            bracket.report(-acc);
            beta = bracket.best().map_or(x, |(b, _)| b);
            model.set_fusion(model.raw_scores.clone(), beta, cfg.rho)?;
        }

        let n = data.train.len() as f64;
        let m = EpochMetrics {
            schema: METRICS_SCHEMA,
            epoch,
            learning_rate,
            loss_uncertainty: sum_u / n,
            loss_classification: sum_ce / n,
            train_accuracy: correct as f64 / n,
            val_accuracy: accuracy(&model, &data.val)?,
            beta,
            beta_bracket: bracket.bracket(),
            probe_accuracy: probe_accuracy.clone(),
            fusion: model.fusion.top.clone(),
        };
        observe(&m, &model)?;
        metrics.push(m);
    }
    Ok((model, metrics))
}
