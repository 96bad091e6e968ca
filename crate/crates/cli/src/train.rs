use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use halluc_core::dataio::{save_checkpoint, synth_generate, Manifest, SyntheticSpec};
use halluc_core::hallucinate::{train_with_observer, Model};
use halluc_core::Error;
use serde_json::json;

use crate::{load_config, worker_pool, CliResult, Preset, SynthArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "checkpoint.hkt";
pub const METRICS_FILE: &str = "metrics.jsonl";

/// Writes through a temporary file so an interrupted save never replaces
/// the previous checkpoint with a partial one.
fn save_atomic(path: &Path, model: &Model) -> halluc_core::Result<()> {
    let tmp = path.with_extension("hkt.tmp");
    save_checkpoint(&tmp, model)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub(crate) fn train(root: &Path, args: &TrainArgs) -> CliResult<()> {
    let cfg = load_config(&root.join(&args.config))?;
    let manifest = Manifest::load(&root.join(&args.manifest), root)?;
    let data = manifest.dataset(root, Some(&cfg.streams))?;
    let backbone_dim = data
        .train
        .first()
        .map(|c| c.backbone.len())
        .ok_or_else(|| Error::InvalidParameter("manifest has no training clips".into()))?;
    let model = Model::new(cfg.model(backbone_dim, manifest.classes))?;
    let training = cfg.training();
    training.validate()?;
    for split in [&data.train, &data.val, &data.test] {
        model.check_clips(split)?;
    }

    let out = root.join(&args.out);
    fs::create_dir_all(&out)?;
    let ckpt = out.join(CHECKPOINT_FILE);
    save_atomic(&ckpt, &model)?;
    let mut metrics = BufWriter::new(File::create(out.join(METRICS_FILE))?);

    let pool = worker_pool(cfg.workers)?;
    let result = pool.install(|| {
        train_with_observer(model, &data, &training, |m, model| {
            serde_json::to_writer(&mut metrics, m)?;
            metrics.write_all(b"\n")?;
            metrics.flush()?;
            save_atomic(&ckpt, model)
        })
    });
    metrics.flush()?;
    let (model, history) = result?;
    save_atomic(&ckpt, &model)?;

    let test_accuracy = if data.test.is_empty() {
        None
    } else {
        let hits = data
            .test
            .iter()
            .map(|c| model.predict_label(&c.backbone).map(|p| usize::from(p == c.label)))
            .sum::<halluc_core::Result<usize>>()?;
        Some(hits as f64 / data.test.len() as f64)
    };
    let last = history.last();
    println!(
        "{}",
        json!({
            "epochs": history.len(),
            "train_accuracy": last.map(|m| m.train_accuracy),
            "val_accuracy": last.and_then(|m| m.val_accuracy),
            "test_accuracy": test_accuracy,
            "beta": model.fusion.beta,
            "checkpoint": ckpt.strip_prefix(root).unwrap_or(&ckpt),
        })
    );
    Ok(())
}

pub(crate) fn synth(root: &Path, args: &SynthArgs) -> CliResult<()> {
    let mut spec = match args.preset {
        Preset::Default => SyntheticSpec {
            seed: args.seed,
            ..SyntheticSpec::default()
        },
        Preset::Ablation => SyntheticSpec::ablation(args.seed),
    };
    if let Some(c) = args.classes {
        spec.classes = c;
    }
    for (dst, src) in [(&mut spec.train, args.train), (&mut spec.val, args.val), (&mut spec.test, args.test)] {
        if let Some(n) = src {
            *dst = n;
        }
    }
    let manifest = synth_generate(&spec, &root.join(&args.out))?;
    println!(
        "{}",
        json!({
            "clips": manifest.clips.len(),
            "classes": manifest.classes,
            "backbone_dim": spec.backbone_dim,
            "streams": spec.streams.iter().map(|s| s.id.to_string()).collect::<Vec<_>>(),
        })
    );
    Ok(())
}
