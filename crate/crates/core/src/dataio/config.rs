use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::descriptors::{MomentConfig, SignConvention};
use crate::encode::PnOperator;
use crate::error::{Error, Result};
use crate::hallucinate::{
    CeInput, FusionMode, ModelConfig, OmegaMode, ProbeConfig, StreamId, StreamSpec, TrainingConfig,
};
use crate::numkit::AdamConfig;

/// Layout of encoded detections.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdfLayout {
    /// Pivot-embedded box and time features.
    Embedded,
    /// Raw box and time values.
    Plain,
}

/// Every numeric setting of a run, read from `key = value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub alpha: f64,
    pub kappa: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub lr_halving_period: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub warmup_epochs: usize,
    pub rho: f64,
    pub omega: OmegaMode,
    pub probe_subset: usize,
    pub probe_iterations: usize,
    pub probe_learning_rate: f64,
    pub probe_l2: f64,
    pub streams: Vec<StreamId>,
    pub stream_dim: usize,
    pub stream_pn: PnOperator,
    pub haf_dim: usize,
    pub haf_pn: PnOperator,
    pub cenet_hidden: usize,
    pub cenet_input: CeInput,
    pub d_star: Option<usize>,
    pub fusion: FusionMode,
    pub concat_sketch: Option<usize>,
    pub sketch_copies: usize,
    pub gt_pn: PnOperator,
    pub moment_vectors: usize,
    pub sign_convention: SignConvention,
    pub moment_epsilon: f64,
    pub odf_layout: OdfLayout,
    pub hist_bin: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainingConfig::default();
        let m = MomentConfig::default();
        Self {
            seed: t.seed,
            workers: 0,
            alpha: t.alpha,
            kappa: t.kappa,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.adam.learning_rate,
            adam_beta1: t.adam.beta1,
            adam_beta2: t.adam.beta2,
            adam_eps: t.adam.eps,
            lr_halving_period: t.adam.halving_period,
            beta_min: t.beta_bracket.0,
            beta_max: t.beta_bracket.1,
            warmup_epochs: t.warmup_epochs,
            rho: t.rho,
            omega: t.omega,
            probe_subset: t.probe.subset,
            probe_iterations: t.probe.iterations,
            probe_learning_rate: t.probe.learning_rate,
            probe_l2: t.probe.l2,
            streams: Vec::new(),
            stream_dim: 64,
            stream_pn: PnOperator::sigme(1.0).expect("valid"),
            haf_dim: 64,
            haf_pn: PnOperator::sigme(1.0).expect("valid"),
            cenet_hidden: 64,
            cenet_input: CeInput::Backbone,
            d_star: None,
            fusion: FusionMode::Weighted,
            concat_sketch: None,
            sketch_copies: 1,
            gt_pn: PnOperator::sigme(1.0).expect("valid"),
            moment_vectors: m.n_vectors,
            sign_convention: m.sign,
            moment_epsilon: m.epsilon,
            odf_layout: OdfLayout::Embedded,
            hist_bin: 0.01,
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::invalid(format!("{key}: cannot parse `{v}`")))
}

fn optional(key: &str, v: &str) -> Result<Option<usize>> {
    if v.eq_ignore_ascii_case("none") || v.eq_ignore_ascii_case("auto") {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

fn opt_str(v: Option<usize>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

impl RunConfig {
    pub const KEYS: [&'static str; 37] = [
        "seed",
        "workers",
        "alpha",
        "kappa",
        "epochs",
        "batch_size",
        "learning_rate",
        "adam_beta1",
        "adam_beta2",
        "adam_eps",
        "lr_halving_period",
        "beta_min",
        "beta_max",
        "warmup_epochs",
        "rho",
        "omega",
        "probe_subset",
        "probe_iterations",
        "probe_learning_rate",
        "probe_l2",
        "streams",
        "stream_dim",
        "stream_pn",
        "haf_dim",
        "haf_pn",
        "cenet_hidden",
        "cenet_input",
        "d_star",
        "fusion",
        "concat_sketch",
        "sketch_copies",
        "gt_pn",
        "moment_vectors",
        "sign_convention",
        "moment_epsilon",
        "odf_layout",
        "hist_bin",
    ];

    /// Applies one setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key {
            "seed" => self.seed = num(key, v)?,
            "workers" => self.workers = num(key, v)?,
            "alpha" => self.alpha = num(key, v)?,
            "kappa" => self.kappa = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "learning_rate" => self.learning_rate = num(key, v)?,
            "adam_beta1" => self.adam_beta1 = num(key, v)?,
            "adam_beta2" => self.adam_beta2 = num(key, v)?,
            "adam_eps" => self.adam_eps = num(key, v)?,
            "lr_halving_period" => self.lr_halving_period = num(key, v)?,
            "beta_min" => self.beta_min = num(key, v)?,
            "beta_max" => self.beta_max = num(key, v)?,
            "warmup_epochs" => self.warmup_epochs = num(key, v)?,
            "rho" => self.rho = num(key, v)?,
            "omega" => {
                self.omega = match v {
                    "learned" => OmegaMode::Learned,
                    "identity" => OmegaMode::Identity,
                    _ => return Err(Error::invalid(format!("omega: expected learned|identity, got `{v}`"))),
                }
            }
            "probe_subset" => self.probe_subset = num(key, v)?,
            "probe_iterations" => self.probe_iterations = num(key, v)?,
            "probe_learning_rate" => self.probe_learning_rate = num(key, v)?,
            "probe_l2" => self.probe_l2 = num(key, v)?,
            "streams" => {
                self.streams = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "stream_dim" => self.stream_dim = num(key, v)?,
            "stream_pn" => self.stream_pn = v.parse()?,
            "haf_dim" => self.haf_dim = num(key, v)?,
            "haf_pn" => self.haf_pn = v.parse()?,
            "cenet_hidden" => self.cenet_hidden = num(key, v)?,
            "cenet_input" => {
                self.cenet_input = match v {
                    "backbone" => CeInput::Backbone,
                    "hallucinated" => CeInput::Hallucinated,
                    _ => return Err(Error::invalid(format!("cenet_input: expected backbone|hallucinated, got `{v}`"))),
                }
            }
            "d_star" => self.d_star = optional(key, v)?,
            "fusion" => {
                self.fusion = match v {
                    "weighted" => FusionMode::Weighted,
                    "concat" => FusionMode::Concat,
                    _ => return Err(Error::invalid(format!("fusion: expected weighted|concat, got `{v}`"))),
                }
            }
            "concat_sketch" => self.concat_sketch = optional(key, v)?,
            "sketch_copies" => self.sketch_copies = num(key, v)?,
            "gt_pn" => self.gt_pn = v.parse()?,
            "moment_vectors" => self.moment_vectors = num(key, v)?,
            "sign_convention" => {
                self.sign_convention = match v {
                    "largest_positive" => SignConvention::LargestPositive,
                    "raw" => SignConvention::Raw,
                    _ => return Err(Error::invalid(format!("sign_convention: expected largest_positive|raw, got `{v}`"))),
                }
            }
            "moment_epsilon" => self.moment_epsilon = num(key, v)?,
            "odf_layout" => {
                self.odf_layout = match v {
                    "embedded" => OdfLayout::Embedded,
                    "plain" => OdfLayout::Plain,
                    _ => return Err(Error::invalid(format!("odf_layout: expected embedded|plain, got `{v}`"))),
                }
            }
            "hist_bin" => self.hist_bin = num(key, v)?,
            other => return Err(Error::invalid(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Unknown and repeated
    /// keys are errors. The result is fully validated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| Error::Parse { line: i + 1, reason };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got `{line}`")))?;
            let k = k.trim();
            if seen.iter().any(|s| s == k) {
                return Err(err(format!("key `{k}` repeated")));
            }
            cfg.set(k, v).map_err(|e| err(e.to_string()))?;
            seen.push(k.to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.training().validate()?;
        if self.stream_dim == 0 || self.haf_dim == 0 || self.cenet_hidden == 0 {
            return Err(Error::invalid("stream_dim, haf_dim and cenet_hidden must be >= 1"));
        }
        if self.sketch_copies == 0 {
            return Err(Error::invalid("sketch_copies must be >= 1"));
        }
        if !(self.adam_beta1 >= 0.0 && self.adam_beta1 < 1.0 && self.adam_beta2 >= 0.0 && self.adam_beta2 < 1.0) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::invalid("adam_eps must be positive"));
        }
        if !(self.moment_epsilon >= 0.0) {
            return Err(Error::invalid("moment_epsilon must be >= 0"));
        }
        if !(self.hist_bin > 0.0 && self.hist_bin.is_finite()) {
            return Err(Error::invalid("hist_bin must be positive"));
        }
        let mut seen = Vec::new();
        for s in &self.streams {
            if s.is_haf() || seen.contains(s) {
                return Err(Error::invalid(format!("stream list: `{s}` not allowed or repeated")));
            }
            seen.push(*s);
        }
        if self.fusion == FusionMode::Weighted && !self.streams.is_empty() && self.stream_dim != self.haf_dim {
            return Err(Error::invalid("weighted fusion needs stream_dim == haf_dim"));
        }
        if self.concat_sketch == Some(0) {
            return Err(Error::invalid("concat_sketch must be >= 1"));
        }
        Ok(())
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            alpha: self.alpha,
            kappa: self.kappa,
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
                halving_period: self.lr_halving_period,
            },
            beta_bracket: (self.beta_min, self.beta_max),
            warmup_epochs: self.warmup_epochs,
            rho: self.rho,
            omega: self.omega,
            probe: ProbeConfig {
                subset: self.probe_subset,
                iterations: self.probe_iterations,
                learning_rate: self.probe_learning_rate,
                l2: self.probe_l2,
            },
            seed: self.seed,
        }
    }

    pub fn model(&self, backbone_dim: usize, classes: usize) -> ModelConfig {
        ModelConfig {
            backbone_dim,
            classes,
            streams: self
                .streams
                .iter()
                .map(|&id| StreamSpec {
                    id,
                    dim: self.stream_dim,
                    pn: self.stream_pn,
                    copies: self.sketch_copies,
                })
                .collect(),
            haf_dim: self.haf_dim,
            haf_pn: self.haf_pn,
            cenet_hidden: self.cenet_hidden,
            cenet_input: self.cenet_input,
            d_star: self.d_star,
            fusion: self.fusion,
            concat_sketch: self.concat_sketch,
            seed: self.seed,
        }
    }

    pub fn moments(&self) -> MomentConfig {
        MomentConfig {
            n_vectors: self.moment_vectors,
            sign: self.sign_convention,
            epsilon: self.moment_epsilon,
        }
    }

    /// Canonical text form; [`RunConfig::parse`] reads it back unchanged.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("seed", self.seed.to_string());
        put("workers", self.workers.to_string());
        put("alpha", self.alpha.to_string());
        put("kappa", self.kappa.to_string());
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("learning_rate", self.learning_rate.to_string());
        put("adam_beta1", self.adam_beta1.to_string());
        put("adam_beta2", self.adam_beta2.to_string());
        put("adam_eps", self.adam_eps.to_string());
        put("lr_halving_period", self.lr_halving_period.to_string());
        put("beta_min", self.beta_min.to_string());
        put("beta_max", self.beta_max.to_string());
        put("warmup_epochs", self.warmup_epochs.to_string());
        put("rho", self.rho.to_string());
        put(
            "omega",
            match self.omega {
                OmegaMode::Learned => "learned",
                OmegaMode::Identity => "identity",
            }
            .into(),
        );
        put("probe_subset", self.probe_subset.to_string());
        put("probe_iterations", self.probe_iterations.to_string());
        put("probe_learning_rate", self.probe_learning_rate.to_string());
        put("probe_l2", self.probe_l2.to_string());
        put(
            "streams",
            self.streams.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
        );
        put("stream_dim", self.stream_dim.to_string());
        put("stream_pn", self.stream_pn.to_string());
        put("haf_dim", self.haf_dim.to_string());
        put("haf_pn", self.haf_pn.to_string());
        put("cenet_hidden", self.cenet_hidden.to_string());
        put(
            "cenet_input",
            match self.cenet_input {
                CeInput::Backbone => "backbone",
                CeInput::Hallucinated => "hallucinated",
            }
            .into(),
        );
        put("d_star", opt_str(self.d_star));
        put(
            "fusion",
            match self.fusion {
                FusionMode::Weighted => "weighted",
                FusionMode::Concat => "concat",
            }
            .into(),
        );
        put("concat_sketch", opt_str(self.concat_sketch));
        put("sketch_copies", self.sketch_copies.to_string());
        put("gt_pn", self.gt_pn.to_string());
        put("moment_vectors", self.moment_vectors.to_string());
        put(
            "sign_convention",
            match self.sign_convention {
                SignConvention::LargestPositive => "largest_positive",
                SignConvention::Raw => "raw",
            }
            .into(),
        );
        put("moment_epsilon", self.moment_epsilon.to_string());
        put(
            "odf_layout",
            match self.odf_layout {
                OdfLayout::Embedded => "embedded",
                OdfLayout::Plain => "plain",
            }
            .into(),
        );
        put("hist_bin", self.hist_bin.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_an_error() {
        match RunConfig::parse("alpha = 1\nalhpa = 2\n") {
            Err(Error::Parse { line, reason }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("alhpa"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn text_roundtrip() {
        let mut c = RunConfig::default();
        c.streams = vec![StreamId::Bow, StreamId::Odf(2), StreamId::Sdf(1)];
        c.d_star = Some(5);
        c.kappa = 0.25;
        c.stream_pn = PnOperator::axmin(3.0).unwrap();
        c.stream_dim = c.haf_dim;
        let back = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text().lines().count(), RunConfig::KEYS.len());
    }

    #[test]
    fn validation_runs_before_use() {
        assert!(RunConfig::parse("alpha = -1").is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(RunConfig::parse("streams = bow,haf").is_err());
        assert!(RunConfig::parse("# comment\n\nepochs = 3 # trailing\n").unwrap().epochs == 3);
    }
}
