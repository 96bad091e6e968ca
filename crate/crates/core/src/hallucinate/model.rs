use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fusion::{fuse_weighted, FusionMode, FusionWeights, DEFAULT_RHO};
use super::layers::{argmax, cross_entropy, Dense, Norm};
use super::nets::{CeGrads, CeInput, CeNet, CeTrace, PredGrads, PredNet, PredTrace};
use super::precision::{uncertainty_loss, PrecisionFactor, SparsityPattern};
use super::stream::{StreamId, StreamNet, StreamTrace};
use crate::encode::PnOperator;
use crate::error::{Error, Result};
use crate::sketch::{mix_seed, SketchPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub id: StreamId,
    pub dim: usize,
    pub pn: PnOperator,
    /// Number of independently sketched target copies (MSK).
    pub copies: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone_dim: usize,
    pub classes: usize,
    pub streams: Vec<StreamSpec>,
    pub haf_dim: usize,
    pub haf_pn: PnOperator,
    pub cenet_hidden: usize,
    pub cenet_input: CeInput,
    /// Index batch size of the sparse factor; defaults to the stream count.
    pub d_star: Option<usize>,
    pub fusion: FusionMode,
    /// Output size of the sketch applied after concatenation, if any.
    pub concat_sketch: Option<usize>,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.backbone_dim == 0 || self.classes < 2 || self.haf_dim == 0 || self.cenet_hidden == 0 {
            return Err(Error::invalid(
                "backbone_dim, haf_dim and cenet_hidden must be >= 1 and classes >= 2",
            ));
        }
        let mut seen = Vec::new();
        for s in &self.streams {
            if s.id.is_haf() {
                return Err(Error::invalid("haf is configured separately from hallucination streams"));
            }
            if seen.contains(&s.id) {
                return Err(Error::invalid(format!("stream {} listed twice", s.id)));
            }
            seen.push(s.id);
            if s.dim == 0 || s.copies == 0 {
                return Err(Error::invalid(format!("stream {} needs dim >= 1 and copies >= 1", s.id)));
            }
            if self.fusion == FusionMode::Weighted && s.dim != self.haf_dim {
                return Err(Error::invalid(format!(
                    "weighted fusion needs every stream at haf_dim {}; {} has {}",
                    self.haf_dim, s.id, s.dim
                )));
            }
        }
        if let Some(d) = self.d_star {
            if d > self.halluc_dim().max(1) {
                return Err(Error::invalid(format!("d* = {d} exceeds hallucinated dimension")));
            }
        }
        if self.concat_sketch == Some(0) {
            return Err(Error::invalid("concat sketch dimension must be >= 1"));
        }
        Ok(())
    }

    /// `d′`, the length of the concatenated hallucinations.
    pub fn halluc_dim(&self) -> usize {
        self.streams.iter().map(|s| s.dim).sum()
    }

    pub fn stream_ranges(&self) -> Vec<Range<usize>> {
        let mut at = 0;
        self.streams
            .iter()
            .map(|s| {
                let r = at..at + s.dim;
                at += s.dim;
                r
            })
            .collect()
    }

    /// Trainable parameter count, or `None` on overflow. Call after
    /// [`ModelConfig::validate`].
    pub fn parameter_count(&self) -> Option<usize> {
        let dense = |i: usize, o: usize| i.checked_mul(o)?.checked_add(o);
        let mut total = 0usize;
        for s in &self.streams {
            total = total.checked_add(dense(self.backbone_dim, s.dim)?)?;
        }
        total = total.checked_add(dense(self.backbone_dim, self.haf_dim)?)?;
        if !self.streams.is_empty() {
            let d_prime = self.halluc_dim();
            let d_star = self.d_star.unwrap_or(self.streams.len()).min(d_prime);
            let slots = d_prime.checked_add(d_star.checked_mul(d_star.saturating_sub(1))? / 2)?;
            let input = match self.cenet_input {
                CeInput::Backbone => self.backbone_dim,
                CeInput::Hallucinated => d_prime,
            };
            total = total
                .checked_add(dense(input, self.cenet_hidden)?)?
                .checked_add(2 * self.cenet_hidden)?
                .checked_add(dense(self.cenet_hidden, slots)?)?;
        }
        let fused = match self.fusion {
            FusionMode::Weighted => self.haf_dim,
            FusionMode::Concat => match self.concat_sketch {
                Some(k) => k,
                None => self.halluc_dim().checked_add(self.haf_dim)?,
            },
        };
        total.checked_add(2 * fused)?.checked_add(dense(fused, self.classes)?)
    }

    pub fn fused_dim(&self) -> usize {
        match self.fusion {
            FusionMode::Weighted => self.haf_dim,
            FusionMode::Concat => self.concat_sketch.unwrap_or(self.halluc_dim() + self.haf_dim),
        }
    }
}

/// One training clip: backbone feature, label and per-stream target copies.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Clip {
    pub id: String,
    pub backbone: Vec<f64>,
    pub label: usize,
    pub targets: BTreeMap<StreamId, Vec<Vec<f64>>>,
}

/// Which parameter set an optimizer step touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockGroup {
    /// Hallucination streams and the covariance network (uncertainty term).
    Uncertainty,
    /// HAF and the prediction network (classification term).
    Classification,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl DenseGrad {
    fn like(d: &Dense) -> Self {
        Self {
            w: vec![0.0; d.w.len()],
            b: vec![0.0; d.b.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormGrad {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl NormGrad {
    fn like(n: &Norm) -> Self {
        Self {
            scale: vec![0.0; n.dim()],
            shift: vec![0.0; n.dim()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CeNetGrad {
    pub fc1: DenseGrad,
    pub norm: NormGrad,
    pub fc2: DenseGrad,
}

/// Gradients laid out like the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub streams: Vec<DenseGrad>,
    pub haf: DenseGrad,
    pub cenet: Option<CeNetGrad>,
    pub pred_norm: NormGrad,
    pub pred_fc: DenseGrad,
}

impl Gradients {
    fn blocks_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for s in &mut self.streams {
            out.push(&mut s.w);
            out.push(&mut s.b);
        }
        out.push(&mut self.haf.w);
        out.push(&mut self.haf.b);
        if let Some(c) = &mut self.cenet {
            out.extend([&mut c.fc1.w, &mut c.fc1.b, &mut c.norm.scale, &mut c.norm.shift, &mut c.fc2.w, &mut c.fc2.b]);
        }
        out.extend([
            &mut self.pred_norm.scale,
            &mut self.pred_norm.shift,
            &mut self.pred_fc.w,
            &mut self.pred_fc.b,
        ]);
        out
    }

    /// Blocks in the same order as [`Model::blocks`].
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for s in &self.streams {
            out.push(&s.w);
            out.push(&s.b);
        }
        out.push(&self.haf.w);
        out.push(&self.haf.b);
        if let Some(c) = &self.cenet {
            out.extend([&c.fc1.w[..], &c.fc1.b, &c.norm.scale, &c.norm.shift, &c.fc2.w, &c.fc2.b]);
        }
        out.extend([&self.pred_norm.scale[..], &self.pred_norm.shift, &self.pred_fc.w, &self.pred_fc.b]);
        out
    }

    fn add(&mut self, other: &Gradients) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, k: f64) {
        for block in self.blocks_mut() {
            block.iter_mut().for_each(|x| *x *= k);
        }
    }
}

/// Which loss terms to evaluate and which parameters to differentiate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    /// Weight `α` of the uncertainty term; 0 skips it.
    pub alpha: f64,
    pub kappa: f64,
    /// Hold `ω = I`, turning the uncertainty term into squared error.
    pub identity_omega: bool,
    pub classification: bool,
    /// Differentiate streams and the covariance network.
    pub grad_uncertainty_group: bool,
    /// Differentiate HAF and the prediction network.
    pub grad_classification_group: bool,
}

impl LossTerms {
    pub fn total(alpha: f64, kappa: f64) -> Self {
        Self {
            alpha,
            kappa,
            identity_omega: false,
            classification: true,
            grad_uncertainty_group: true,
            grad_classification_group: true,
        }
    }
}

/// Per-batch loss values (means over clips).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub total: f64,
    pub uncertainty: f64,
    pub classification: f64,
    pub correct: usize,
    pub clips: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub streams: Vec<StreamNet>,
    pub haf: StreamNet,
    pub cenet: Option<CeNet>,
    pub prednet: PredNet,
    pub tot_plan: Option<SketchPlan>,
    pub fusion: FusionWeights,
    /// Per-stream raw fusion scores `w′`, in stream order.
    pub raw_scores: Vec<f64>,
}

struct ClipTrace {
    streams: Vec<StreamTrace>,
    haf: StreamTrace,
    fused: Vec<f64>,
}

struct ClipOutcome {
    grads: Gradients,
    uncertainty: f64,
    classification: f64,
    correct: bool,
    fused: Vec<f64>,
    ce_hidden: Option<Vec<f64>>,
}

const CHUNK: usize = 16;

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let streams: Vec<StreamNet> = config
            .streams
            .iter()
            .enumerate()
            .map(|(i, s)| StreamNet::new(s.id, config.backbone_dim, s.dim, s.pn, seed, 100 + i as u64))
            .collect();
        let haf = StreamNet::new(StreamId::Haf, config.backbone_dim, config.haf_dim, config.haf_pn, seed, 1);
        let cenet = if streams.is_empty() {
            None
        } else {
            let d_prime = config.halluc_dim();
            let d_star = config.d_star.unwrap_or(streams.len()).min(d_prime);
            let pattern = SparsityPattern::sampled(d_prime, &config.stream_ranges(), d_star, mix_seed(seed, 2))?;
            let input_dim = match config.cenet_input {
                CeInput::Backbone => config.backbone_dim,
                CeInput::Hallucinated => d_prime,
            };
            Some(CeNet::new(config.cenet_input, input_dim, config.cenet_hidden, Arc::new(pattern), seed, 3))
        };
        let tot_plan = match (config.fusion, config.concat_sketch) {
            (FusionMode::Concat, Some(out)) => {
                Some(SketchPlan::new(config.halluc_dim() + config.haf_dim, out, mix_seed(seed, 5))?)
            }
            _ => None,
        };
        let prednet = PredNet::new(config.fused_dim(), config.classes, seed, 4);
        let raw_scores = vec![1.0; streams.len()];
        let ids: Vec<StreamId> = streams.iter().map(|s| s.id).collect();
        let fusion = FusionWeights::compute(&ids, &raw_scores, 0.0, DEFAULT_RHO)?;
        Ok(Self {
            config,
            streams,
            haf,
            cenet,
            prednet,
            tot_plan,
            fusion,
            raw_scores,
        })
    }

    pub fn stream_ids(&self) -> Vec<StreamId> {
        self.streams.iter().map(|s| s.id).collect()
    }

    pub fn set_fusion(&mut self, raw: Vec<f64>, beta: f64, rho: f64) -> Result<()> {
        self.fusion = FusionWeights::compute(&self.stream_ids(), &raw, beta, rho)?;
        self.raw_scores = raw;
        Ok(())
    }

    /// Named parameter blocks with their optimizer group.
    pub fn blocks(&self) -> Vec<(String, BlockGroup, &[f64])> {
        use BlockGroup::*;
        let mut out: Vec<(String, BlockGroup, &[f64])> = Vec::new();
        for s in &self.streams {
            out.push((format!("stream.{}.w", s.id), Uncertainty, &s.fc.w));
            out.push((format!("stream.{}.b", s.id), Uncertainty, &s.fc.b));
        }
        out.push(("haf.w".into(), Classification, &self.haf.fc.w));
        out.push(("haf.b".into(), Classification, &self.haf.fc.b));
        if let Some(c) = &self.cenet {
            out.push(("cenet.fc1.w".into(), Uncertainty, &c.fc1.w));
            out.push(("cenet.fc1.b".into(), Uncertainty, &c.fc1.b));
            out.push(("cenet.norm.scale".into(), Uncertainty, &c.norm.scale));
            out.push(("cenet.norm.shift".into(), Uncertainty, &c.norm.shift));
            out.push(("cenet.fc2.w".into(), Uncertainty, &c.fc2.w));
            out.push(("cenet.fc2.b".into(), Uncertainty, &c.fc2.b));
        }
        out.push(("prednet.norm.scale".into(), Classification, &self.prednet.norm.scale));
        out.push(("prednet.norm.shift".into(), Classification, &self.prednet.norm.shift));
        out.push(("prednet.fc.w".into(), Classification, &self.prednet.fc.w));
        out.push(("prednet.fc.b".into(), Classification, &self.prednet.fc.b));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for s in &mut self.streams {
            out.push(&mut s.fc.w);
            out.push(&mut s.fc.b);
        }
        out.push(&mut self.haf.fc.w);
        out.push(&mut self.haf.fc.b);
        if let Some(c) = &mut self.cenet {
            out.extend([&mut c.fc1.w, &mut c.fc1.b, &mut c.norm.scale, &mut c.norm.shift, &mut c.fc2.w, &mut c.fc2.b]);
        }
        out.extend([
            &mut self.prednet.norm.scale,
            &mut self.prednet.norm.shift,
            &mut self.prednet.fc.w,
            &mut self.prednet.fc.b,
        ]);
        out
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            streams: self.streams.iter().map(|s| DenseGrad::like(&s.fc)).collect(),
            haf: DenseGrad::like(&self.haf.fc),
            cenet: self.cenet.as_ref().map(|c| CeNetGrad {
                fc1: DenseGrad::like(&c.fc1),
                norm: NormGrad::like(&c.norm),
                fc2: DenseGrad::like(&c.fc2),
            }),
            pred_norm: NormGrad::like(&self.prednet.norm),
            pred_fc: DenseGrad::like(&self.prednet.fc),
        }
    }

    fn check_backbone(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.backbone_dim {
            return Err(Error::dim("backbone feature", self.config.backbone_dim, x.len()));
        }
        Ok(())
    }

    fn fuse(&self, streams: &[StreamTrace], haf: &StreamTrace) -> Result<Vec<f64>> {
        match self.config.fusion {
            FusionMode::Weighted => {
                let outs: Vec<&[f64]> = streams.iter().map(|t| t.out.as_slice()).collect();
                fuse_weighted(&outs, &haf.out, &self.fusion)
            }
            FusionMode::Concat => {
                let mut cat: Vec<f64> = streams.iter().flat_map(|t| t.out.iter().copied()).collect();
                cat.extend_from_slice(&haf.out);
                match &self.tot_plan {
                    Some(p) => p.apply(&cat),
                    None => Ok(cat),
                }
            }
        }
    }

    /// Splits `∂/∂fused` into per-stream and HAF output gradients.
    fn unfuse(&self, g_fused: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        match self.config.fusion {
            FusionMode::Weighted => {
                let streams = self
                    .fusion
                    .streams
                    .iter()
                    .map(|c| g_fused.iter().map(|g| c * g).collect())
                    .collect();
                (streams, g_fused.iter().map(|g| self.fusion.haf * g).collect())
            }
            FusionMode::Concat => {
                let full = match &self.tot_plan {
                    Some(p) => p.transpose_apply(g_fused).expect("plan sized to fused vector"),
                    None => g_fused.to_vec(),
                };
                let ranges = self.config.stream_ranges();
                let streams = ranges.iter().map(|r| full[r.clone()].to_vec()).collect();
                let start = self.config.halluc_dim();
                (streams, full[start..].to_vec())
            }
        }
    }

    fn trace(&self, x: &[f64]) -> Result<ClipTrace> {
        self.check_backbone(x)?;
        let streams: Vec<StreamTrace> = self.streams.iter().map(|s| s.trace(x)).collect();
        let haf = self.haf.trace(x);
        let fused = self.fuse(&streams, &haf)?;
        Ok(ClipTrace { streams, haf, fused })
    }

    /// Input of the prediction network for a backbone feature.
    pub fn fused(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(x)?.fused)
    }

    /// Hallucinated features of every stream, in stream order.
    pub fn hallucinate(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_backbone(x)?;
        Ok(self.streams.iter().map(|s| s.trace(x).out).collect())
    }

    /// Class scores from the backbone feature alone.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.prednet.forward(&self.fused(x)?))
    }

    pub fn predict_label(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict(x)?))
    }

    /// `ω` predicted for a clip, or `None` without hallucination streams.
    pub fn precision_factor(&self, x: &[f64]) -> Result<Option<PrecisionFactor>> {
        let Some(cenet) = &self.cenet else {
            return Ok(None);
        };
        let t = self.trace(x)?;
        let input = self.cenet_input(x, &t.streams);
        Ok(Some(cenet.forward(&input)))
    }

    fn cenet_input(&self, x: &[f64], streams: &[StreamTrace]) -> Vec<f64> {
        match self.config.cenet_input {
            CeInput::Backbone => x.to_vec(),
            CeInput::Hallucinated => streams.iter().flat_map(|t| t.out.iter().copied()).collect(),
        }
    }

    /// Checks backbone and target dimensions of every clip against the
    /// model, so shape errors surface before any training work.
    pub fn check_clips(&self, clips: &[Clip]) -> Result<()> {
        for clip in clips {
            if clip.backbone.len() != self.config.backbone_dim {
                return Err(Error::dim("backbone feature", self.config.backbone_dim, clip.backbone.len()));
            }
            for copy in 0..clip.targets.values().map(Vec::len).max().unwrap_or(1).max(1) {
                self.target_copy(clip, copy)?;
            }
        }
        Ok(())
    }

    fn target_copy(&self, clip: &Clip, copy: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.config.halluc_dim());
        for spec in &self.config.streams {
            let copies = clip
                .targets
                .get(&spec.id)
                .filter(|c| !c.is_empty())
                .ok_or_else(|| Error::MissingTarget(spec.id.to_string()))?;
            let t = &copies[copy % copies.len()];
            if t.len() != spec.dim {
                return Err(Error::dim(format!("target for stream {}", spec.id), spec.dim, t.len()));
            }
            out.extend_from_slice(t);
        }
        Ok(out)
    }

    fn clip_pass(&self, clip: &Clip, terms: &LossTerms) -> Result<ClipOutcome> {
        let x = &clip.backbone;
        if clip.label >= self.config.classes {
            return Err(Error::OutOfRange(format!(
                "label {} with {} classes",
                clip.label, self.config.classes
            )));
        }
        let t = self.trace(x)?;
        let mut grads = self.zero_gradients();
        let mut g_streams: Vec<Vec<f64>> = self.streams.iter().map(|s| vec![0.0; s.output_dim()]).collect();
        let mut g_haf = vec![0.0; self.haf.output_dim()];

        let mut classification = 0.0;
        let mut correct = false;
        if terms.classification {
            let pt: PredTrace = self.prednet.trace(&t.fused);
            let (loss, g_logits) = cross_entropy(&pt.logits, clip.label);
            classification = loss;
            correct = argmax(&pt.logits) == clip.label;
            let mut scratch_norm = NormGrad::like(&self.prednet.norm);
            let mut scratch_fc = DenseGrad::like(&self.prednet.fc);
            let (ng, fg) = if terms.grad_classification_group {
                (&mut grads.pred_norm, &mut grads.pred_fc)
            } else {
                (&mut scratch_norm, &mut scratch_fc)
            };
            let g_fused = self.prednet.backward(
                &pt,
                &g_logits,
                PredGrads {
                    scale: &mut ng.scale,
                    shift: &mut ng.shift,
                    fc_w: &mut fg.w,
                    fc_b: &mut fg.b,
                },
            );
            let (gs, gh) = self.unfuse(&g_fused);
            for (acc, g) in g_streams.iter_mut().zip(gs) {
                acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            g_haf.iter_mut().zip(gh).for_each(|(a, b)| *a += b);
        }

        let mut uncertainty = 0.0;
        let mut ce_hidden = None;
        if terms.alpha > 0.0 && !self.streams.is_empty() {
            let halluc: Vec<f64> = t.streams.iter().flat_map(|s| s.out.iter().copied()).collect();
            let cenet = self.cenet.as_ref().expect("streams imply a covariance network");
            let (factor, ce_trace, ce_in): (PrecisionFactor, Option<CeTrace>, Vec<f64>) = if terms.identity_omega {
                (PrecisionFactor::identity(cenet.pattern.clone()), None, Vec::new())
            } else {
                let input = self.cenet_input(x, &t.streams);
                let tr = cenet.trace(&input);
                (cenet.factor(&tr), Some(tr), input)
            };
            let copies = self.config.streams.iter().map(|s| s.copies).max().unwrap_or(1);
            let mut g_halluc = vec![0.0; halluc.len()];
            let mut g_slots = vec![0.0; factor.nonzeros()];
            for c in 0..copies {
                let target = self.target_copy(clip, c)?;
                let u = uncertainty_loss(&halluc, &target, &factor, terms.kappa)?;
                uncertainty += u.loss;
                g_halluc.iter_mut().zip(&u.grad_halluc).for_each(|(a, b)| *a += b);
                g_slots.iter_mut().zip(&u.grad_slots).for_each(|(a, b)| *a += b);
            }
            let k = terms.alpha / copies as f64;
            uncertainty /= copies as f64;
            g_halluc.iter_mut().for_each(|g| *g *= k);
            g_slots.iter_mut().for_each(|g| *g *= k);

            if let (Some(tr), true) = (&ce_trace, terms.grad_uncertainty_group) {
                let cg = grads.cenet.as_mut().expect("gradient mirrors model");
                let g_in = cenet.backward(
                    &ce_in,
                    tr,
                    &g_slots,
                    CeGrads {
                        fc1_w: &mut cg.fc1.w,
                        fc1_b: &mut cg.fc1.b,
                        scale: &mut cg.norm.scale,
                        shift: &mut cg.norm.shift,
                        fc2_w: &mut cg.fc2.w,
                        fc2_b: &mut cg.fc2.b,
                    },
                );
                if self.config.cenet_input == CeInput::Hallucinated {
                    g_halluc.iter_mut().zip(g_in).for_each(|(a, b)| *a += b);
                }
            }
            ce_hidden = ce_trace.map(|tr| tr.hidden);
            for (acc, r) in g_streams.iter_mut().zip(self.config.stream_ranges()) {
                acc.iter_mut().zip(&g_halluc[r]).for_each(|(a, b)| *a += b);
            }
        }

        if terms.grad_uncertainty_group {
            for ((net, tr), (g_out, gd)) in self
                .streams
                .iter()
                .zip(&t.streams)
                .zip(g_streams.iter().zip(grads.streams.iter_mut()))
            {
                net.backward(x, tr, g_out, &mut gd.w, &mut gd.b);
            }
        }
        if terms.grad_classification_group {
            self.haf.backward(x, &t.haf, &g_haf, &mut grads.haf.w, &mut grads.haf.b);
        }

        Ok(ClipOutcome {
            grads,
            uncertainty,
            classification,
            correct,
            fused: t.fused,
            ce_hidden,
        })
    }

    /// Mean loss and gradients over `clips`. Work is split into fixed-size
    /// chunks whose partial sums are combined in order, so the result does
    /// not depend on the thread count.
    pub fn batch_gradients(&self, clips: &[Clip], terms: &LossTerms) -> Result<(LossReport, Gradients, BatchStats)> {
        if clips.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let partials: Vec<(LossReport, Gradients, BatchStats)> = clips
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut report = LossReport::default();
                let mut grads = self.zero_gradients();
                let mut stats = BatchStats::default();
                for clip in chunk {
                    let o = self.clip_pass(clip, terms)?;
                    report.uncertainty += o.uncertainty;
                    report.classification += o.classification;
                    report.correct += usize::from(o.correct);
                    report.clips += 1;
                    grads.add(&o.grads);
                    stats.fused.push(o.fused);
                    if let Some(h) = o.ce_hidden {
                        stats.ce_hidden.push(h);
                    }
                }
                Ok((report, grads, stats))
            })
            .collect::<Result<_>>()?;
        let mut report = LossReport::default();
        let mut grads = self.zero_gradients();
        let mut stats = BatchStats::default();
        for (r, g, s) in partials {
            report.uncertainty += r.uncertainty;
            report.classification += r.classification;
            report.correct += r.correct;
            report.clips += r.clips;
            grads.add(&g);
            stats.fused.extend(s.fused);
            stats.ce_hidden.extend(s.ce_hidden);
        }
        let n = clips.len() as f64;
        report.uncertainty /= n;
        report.classification /= n;
        report.total = terms.alpha * report.uncertainty + report.classification;
        grads.scale(1.0 / n);
        Ok((report, grads, stats))
    }

    /// Mean of `α·U + CE` over `clips` with gradients for every block.
    pub fn total_loss(&self, clips: &[Clip], alpha: f64, kappa: f64) -> Result<(f64, Gradients)> {
        let (report, grads, _) = self.batch_gradients(clips, &LossTerms::total(alpha, kappa))?;
        Ok((report.total, grads))
    }
}

/// Activations gathered during a batch pass for refreshing the running
/// normalization statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchStats {
    pub fused: Vec<Vec<f64>>,
    pub ce_hidden: Vec<Vec<f64>>,
}

/// Worst relative error of one parameter block against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub block: String,
    pub max_relative_error: f64,
}

impl Model {
    /// Compares the analytic gradients of [`Model::total_loss`] with central
    /// differences, block by block. `corrupt` scales the analytic gradient of
    /// the named block, which lets callers confirm the check can fail.
    pub fn gradient_check(
        &self,
        clips: &[Clip],
        alpha: f64,
        kappa: f64,
        step: f64,
        corrupt: Option<(&str, f64)>,
    ) -> Result<Vec<BlockCheck>> {
        let (_, grads) = self.total_loss(clips, alpha, kappa)?;
        let names: Vec<String> = self.blocks().into_iter().map(|b| b.0).collect();
        let analytic: Vec<Vec<f64>> = grads.blocks().into_iter().map(<[f64]>::to_vec).collect();
        let mut out = Vec::with_capacity(names.len());
        for (k, name) in names.iter().enumerate() {
            let mut a = analytic[k].clone();
            if let Some((target, factor)) = corrupt {
                if target == name {
                    a.iter_mut().for_each(|g| *g *= factor);
                }
            }
            let point = self.blocks()[k].2.to_vec();
            let mut probe = self.clone();
            let mut failure = None;
            let err = crate::numkit::grad_check(
                |x| {
                    probe.blocks_mut()[k].copy_from_slice(x);
                    match probe.total_loss(clips, alpha, kappa) {
                        Ok((l, _)) => l,
                        Err(e) => {
                            failure.get_or_insert(e);
                            f64::NAN
                        }
                    }
                },
                &a,
                &point,
                step,
            );
            if let Some(e) = failure {
                return Err(e);
            }
            out.push(BlockCheck {
                block: name.clone(),
                max_relative_error: err,
            });
        }
        Ok(out)
    }
}

/// Small randomized model plus clips for gradient checking. Every parameter
/// block and normalization statistic is drawn at random so that no gradient
/// is identically zero.
pub fn toy_problem(
    seed: u64,
    backbone_dim: usize,
    dim: usize,
    n_streams: usize,
    classes: usize,
    n_clips: usize,
) -> Result<(Model, Vec<Clip>)> {
    use rand::Rng;
    use rand_distr::StandardNormal;

    const IDS: [StreamId; 8] = [
        StreamId::Bow,
        StreamId::Odf(1),
        StreamId::Sdf(1),
        StreamId::Fv1,
        StreamId::Odf(2),
        StreamId::Gsf,
        StreamId::Af,
        StreamId::Off,
    ];
    if n_streams > IDS.len() {
        return Err(Error::invalid(format!("toy problem supports at most {} streams", IDS.len())));
    }
    let streams = IDS[..n_streams]
        .iter()
        .enumerate()
        .map(|(i, &id)| StreamSpec {
            id,
            dim,
            pn: PnOperator::sigme(2.0).expect("valid SigmE"),
            copies: if i == 0 { 2 } else { 1 },
        })
        .collect();
    let config = ModelConfig {
        backbone_dim,
        classes,
        streams,
        haf_dim: dim,
        haf_pn: PnOperator::asinhe(1.5).expect("valid AsinhE"),
        cenet_hidden: dim,
        cenet_input: CeInput::Hallucinated,
        d_star: None,
        fusion: FusionMode::Weighted,
        concat_sketch: None,
        seed,
    };
    let mut model = Model::new(config)?;
    let raw: Vec<f64> = (0..n_streams).map(|i| 0.4 + 0.1 * i as f64).collect();
    model.set_fusion(raw, 1.5, 0.0)?;
    let mut rng = crate::numkit::rng::stream_rng(seed, 0x544f_5900);
    for block in model.blocks_mut() {
        block.iter_mut().for_each(|p| *p = 0.3 * rng.sample::<f64, _>(StandardNormal));
    }
    let mut norms: Vec<&mut Norm> = vec![&mut model.prednet.norm];
    if let Some(c) = model.cenet.as_mut() {
        norms.push(&mut c.norm);
    }
    for n in norms {
        n.running_mean.iter_mut().for_each(|m| *m = 0.1 * rng.sample::<f64, _>(StandardNormal));
        n.running_var.iter_mut().for_each(|v| *v = 0.5 + rng.gen::<f64>());
        n.updates = 1;
    }
    let clips = (0..n_clips)
        .map(|i| {
            let backbone: Vec<f64> = (0..backbone_dim).map(|_| rng.sample(StandardNormal)).collect();
            let targets = model
                .config
                .streams
                .iter()
                .map(|s| {
                    let copies = (0..s.copies)
                        .map(|_| (0..s.dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                        .collect();
                    (s.id, copies)
                })
                .collect();
            Clip {
                id: format!("toy{i}"),
                backbone,
                label: i % classes,
                targets,
            }
        })
        .collect();
    Ok((model, clips))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Model, Vec<Clip>) {
        toy_problem(7, 16, 8, 3, 4, 3).unwrap()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (model, clips) = toy();
        for check in model.gradient_check(&clips, 1.0, 0.1, 1e-5, None).unwrap() {
            assert!(check.max_relative_error < 1e-4, "{check:?}");
        }
    }

    #[test]
    fn concat_mode_gradients_match() {
        let (mut model, clips) = toy();
        model.config.fusion = FusionMode::Concat;
        model.config.concat_sketch = Some(12);
        model.config.cenet_input = CeInput::Backbone;
        let mut cfg = model.config.clone();
        cfg.streams[0].copies = 1;
        let mut fresh = Model::new(cfg).unwrap();
        let mut rng = crate::numkit::rng::stream_rng(3, 3);
        use rand::Rng;
        for b in fresh.blocks_mut() {
            b.iter_mut().for_each(|p| *p = rng.gen_range(-0.5..0.5));
        }
        for check in fresh.gradient_check(&clips, 0.7, 0.2, 1e-5, None).unwrap() {
            assert!(check.max_relative_error < 1e-4, "{check:?}");
        }
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let (model, clips) = toy();
        let checks = model.gradient_check(&clips, 1.0, 0.1, 1e-5, Some(("haf.w", 1.5))).unwrap();
        let bad: Vec<_> = checks.iter().filter(|c| c.max_relative_error >= 1e-4).collect();
        assert_eq!(bad.len(), 1);
        assert_eq!(bad[0].block, "haf.w");
    }

    #[test]
    fn alpha_zero_is_cross_entropy() {
        let (model, clips) = toy();
        let (loss, _) = model.total_loss(&clips, 0.0, 0.1).unwrap();
        let ce: f64 = clips
            .iter()
            .map(|c| cross_entropy(&model.predict(&c.backbone).unwrap(), c.label).0)
            .sum::<f64>()
            / clips.len() as f64;
        assert_eq!(loss, ce);
    }

    #[test]
    fn missing_target_names_stream() {
        let (model, mut clips) = toy();
        clips[1].targets.remove(&StreamId::Sdf(1));
        match model.total_loss(&clips, 1.0, 0.1) {
            Err(Error::MissingTarget(s)) => assert_eq!(s, "sdf"),
            other => panic!("{other:?}"),
        }
        assert!(model.total_loss(&clips, 0.0, 0.1).is_ok());
    }

    #[test]
    fn predict_ignores_targets() {
        let (model, clips) = toy();
        let mut bare = clips[0].clone();
        bare.targets.clear();
        assert_eq!(model.predict(&bare.backbone).unwrap(), model.predict(&clips[0].backbone).unwrap());
    }

    #[test]
    fn batch_result_is_independent_of_chunking() {
        let (model, _) = toy();
        let (_, clips) = toy_problem(7, 16, 8, 3, 4, 40).unwrap();
        let a = model.batch_gradients(&clips, &LossTerms::total(1.0, 0.1)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| model.batch_gradients(&clips, &LossTerms::total(1.0, 0.1)).unwrap());
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn steps_touch_only_their_group() {
        let (model, clips) = toy();
        let only_a = LossTerms {
            classification: false,
            grad_classification_group: false,
            ..LossTerms::total(1.0, 0.1)
        };
        let (_, g, _) = model.batch_gradients(&clips, &only_a).unwrap();
        for ((name, group, _), block) in model.blocks().into_iter().zip(g.blocks()) {
            if group == BlockGroup::Classification {
                assert!(block.iter().all(|&x| x == 0.0), "{name}");
            }
        }
        let only_b = LossTerms {
            alpha: 0.0,
            grad_uncertainty_group: false,
            ..LossTerms::total(1.0, 0.1)
        };
        let (_, g, _) = model.batch_gradients(&clips, &only_b).unwrap();
        for ((name, group, _), block) in model.blocks().into_iter().zip(g.blocks()) {
            if group == BlockGroup::Uncertainty {
                assert!(block.iter().all(|&x| x == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn rejects_mismatched_weighted_dims() {
        let (model, _) = toy();
        let mut cfg = model.config.clone();
        cfg.streams[1].dim = 5;
        assert!(Model::new(cfg).is_err());
    }
}
