use std::fs;
use std::path::Path;

use halluc_core::dataio::{load_checkpoint, Manifest, Split};
use halluc_core::encode::PnOperator;
use halluc_core::hallucinate::{hallucination_histogram, toy_problem, Clip, Model, StreamId};
use halluc_core::numkit::rng::stream_rng;
use halluc_core::sketch::{kappa_theory, pn_variance_ratio, variance_probe};
use halluc_core::Error;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::Serialize;
use serde_json::json;

use crate::metrics::{accuracy, mean_average_precision, mean_per_class_accuracy, one_hot_targets};
use crate::{CliError, CliResult, EvalArgs, GradcheckArgs, HistArgs, SketchStatsArgs, SplitArg};

/// Gradient check threshold on the relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const GRADCHECK_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub split: &'static str,
    pub clips: usize,
    pub classes: usize,
    pub accuracy: f64,
    pub mean_per_class_accuracy: f64,
    pub map: f64,
}

fn split_of(s: SplitArg) -> (Split, &'static str) {
    match s {
        SplitArg::Train => (Split::Train, "train"),
        SplitArg::Val => (Split::Val, "val"),
        SplitArg::Test => (Split::Test, "test"),
    }
}

fn load_split(root: &Path, manifest: &Path, split: Split, streams: Option<&[StreamId]>) -> CliResult<(Manifest, Vec<Clip>)> {
    let manifest = Manifest::load(&root.join(manifest), root)?;
    let clips = manifest
        .clips
        .iter()
        .filter(|c| c.split == split)
        .map(|c| c.load(root, streams))
        .collect::<halluc_core::Result<Vec<_>>>()?;
    Ok((manifest, clips))
}

pub fn evaluate(root: &Path, args: &EvalArgs) -> CliResult<EvalReport> {
    let model = load_checkpoint(&root.join(&args.checkpoint))?;
    let (split, name) = split_of(args.split);
    let (manifest, clips) = load_split(root, &args.manifest, split, Some(&[]))?;
    let classes = model.config.classes;
    if manifest.classes != classes {
        return Err(Error::DimensionMismatch {
            context: "manifest classes vs checkpoint".into(),
            expected: classes,
            got: manifest.classes,
        }
        .into());
    }
    let scores = clips
        .iter()
        .map(|c| model.predict(&c.backbone))
        .collect::<halluc_core::Result<Vec<_>>>()?;
    let labels: Vec<usize> = clips.iter().map(|c| c.label).collect();
    Ok(EvalReport {
        split: name,
        clips: clips.len(),
        classes,
        accuracy: accuracy(&scores, &labels, classes)?,
        mean_per_class_accuracy: mean_per_class_accuracy(&scores, &labels, classes)?,
        map: mean_average_precision(&scores, &one_hot_targets(&labels, classes)?, classes)?,
    })
}

pub(crate) fn sketch_stats(args: &SketchStatsArgs) -> CliResult<()> {
    let mut rng = stream_rng(args.seed, 0x5353_0001);
    let v: Vec<f64> = (0..args.dim).map(|_| rng.sample(StandardNormal)).collect();
    let w: Vec<f64> = v.iter().map(|x| 0.5 * x + rng.sample::<f64, _>(StandardNormal)).collect();
    let probe = variance_probe(&v, &w, args.trials, args.sketch_dim, args.seed)?;
    let n = args.trials as f64;
    let unbiased = (probe.mean - probe.true_inner).abs() <= 3.0 * probe.standard_error;
    // Standard error of a sample variance, with a kurtosis allowance of 3.
    let var_slack = 3.0 * probe.empirical_variance * (3.0 / (n - 1.0)).sqrt();
    let within_bound = probe.empirical_variance <= probe.bound + var_slack;
    let kappa_expected = kappa_theory(&v, &w);
    let mut report = json!({
        "dim": args.dim,
        "sketch_dim": args.sketch_dim,
        "trials": args.trials,
        "true_inner": probe.true_inner,
        "mean": probe.mean,
        "standard_error": probe.standard_error,
        "unbiased": unbiased,
        "empirical_variance": probe.empirical_variance,
        "variance_bound": probe.bound,
        "within_bound": within_bound,
        "kappa": probe.kappa,
        "kappa_theory": kappa_expected,
        "pass": unbiased && within_bound,
    });
    if let Some(g) = args.gamma {
        let op = PnOperator::gamma(g)?;
        let a: Vec<f64> = (0..args.dim).map(|_| rng.sample(Exp1)).collect();
        let b: Vec<f64> = (0..args.dim).map(|_| rng.sample(Exp1)).collect();
        report["pn_gamma"] = json!(g);
        report["pn_kappa"] = json!(pn_variance_ratio(&a, &b, &op, args.trials, args.sketch_dim, args.seed ^ 1)?);
    }
    println!("{report}");
    Ok(())
}

pub(crate) fn gradcheck(args: &GradcheckArgs) -> CliResult<()> {
    let (model, clips) = toy_problem(args.seed, args.backbone_dim, args.dim, args.streams, args.classes, args.clips)?;
    let corrupt = args.corrupt.as_deref().map(|b| (b, 1.5));
    if let Some((name, _)) = corrupt {
        if !model.blocks().iter().any(|(n, _, _)| n == name) {
            return Err(Error::InvalidParameter(format!("unknown parameter block `{name}`")).into());
        }
    }
    let checks = model.gradient_check(&clips, args.alpha, args.kappa, GRADCHECK_STEP, corrupt)?;
    for c in &checks {
        println!("{}", json!({"block": c.block, "max_relative_error": c.max_relative_error}));
    }
    let worst = checks
        .iter()
        .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error));
    match worst {
        Some(w) if !(w.max_relative_error < GRADCHECK_TOLERANCE) => Err(CliError::CheckFailed(format!(
            "gradient check failed in block `{}`: relative error {:e}",
            w.block, w.max_relative_error
        ))),
        _ => Ok(()),
    }
}

/// Histogram of `(hallucinated − target)²` for one stream of a checkpoint.
pub fn histogram_csv(model: &Model, clips: &[Clip], stream: StreamId, bin_width: f64) -> halluc_core::Result<String> {
    Ok(hallucination_histogram(model, clips, stream, bin_width)?.to_csv())
}

pub(crate) fn hist(root: &Path, args: &HistArgs) -> CliResult<()> {
    let stream: StreamId = args.stream.parse()?;
    let model = load_checkpoint(&root.join(&args.checkpoint))?;
    let (split, _) = split_of(args.split);
    let (_, clips) = load_split(root, &args.manifest, split, Some(&[stream]))?;
    let csv = histogram_csv(&model, &clips, stream, args.bin_width)?;
    match &args.out {
        Some(p) => {
            let path = root.join(p);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir)?;
            }
            fs::write(path, csv)?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}
