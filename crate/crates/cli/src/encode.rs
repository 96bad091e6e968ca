use std::collections::BTreeMap;
use std::path::Path;

use halluc_core::dataio::{load_detections, load_saliency, resolve, ClipManifest, FeatureFile, Manifest, OdfLayout, RunConfig};
use halluc_core::descriptors::{
    odf_descriptor, sdf_descriptor, SaliencySource, SdfEncoder, ODF_EMBED_DIM, ODF_PIVOTS, ODF_PLAIN_DIM, ODF_SIGMA,
};
use halluc_core::encode::{bow_encode, fv_encode_split, pool_avg, PivotSet};
use halluc_core::hallucinate::StreamId;
use halluc_core::numkit::{Dictionary, GmmModel};
use halluc_core::sketch::{mix_seed, MultiSketch};
use halluc_core::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::{load_config, load_dictionary, load_gmm, worker_pool, CliError, CliResult, EncodeArgs};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamSummary {
    pub pre_sketch_dim: usize,
    pub dim: usize,
    pub copies: usize,
    pub encoded: usize,
    pub skipped: usize,
    /// 32-byte sketch record, relative to the root.
    pub sketch: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EncodeSummary {
    pub clips: usize,
    pub streams: BTreeMap<String, StreamSummary>,
}

fn stream_code(id: StreamId) -> u64 {
    match id {
        StreamId::Bow => 1,
        StreamId::Fv1 => 2,
        StreamId::Fv2 => 3,
        StreamId::Off => 4,
        StreamId::Gsf => 5,
        StreamId::Af => 6,
        StreamId::Haf => 7,
        StreamId::Odf(k) => 16 + u64::from(k),
        StreamId::Sdf(k) => 32 + u64::from(k),
    }
}

/// The sketches that compress stream `id` from `pre_dim` to the configured
/// stream dimension, one per target copy.
pub fn stream_sketch(cfg: &RunConfig, id: StreamId, pre_dim: usize) -> Result<MultiSketch> {
    MultiSketch::new(
        pre_dim,
        cfg.stream_dim,
        cfg.sketch_copies,
        mix_seed(cfg.seed, 0x4754_0000 + stream_code(id)),
    )
}

/// Everything a stream needs besides the clip itself.
struct Encoders {
    dict: Option<Dictionary>,
    gmm: Option<GmmModel>,
    pivots: Option<PivotSet>,
    sdf: SdfEncoder,
}

impl Encoders {
    fn pre_dim(&self, cfg: &RunConfig, id: StreamId) -> Option<usize> {
        let moments = 4 + cfg.moment_vectors;
        match id {
            StreamId::Bow => self.dict.as_ref().map(Dictionary::len),
            StreamId::Fv1 | StreamId::Fv2 => self.gmm.as_ref().map(|g| g.components() * g.dim()),
            StreamId::Odf(1) => Some(moments * if self.pivots.is_some() { ODF_EMBED_DIM } else { ODF_PLAIN_DIM }),
            StreamId::Sdf(1 | 2) => Some(moments * self.sdf.output_dim()),
            _ => None,
        }
    }
}

enum Outcome {
    Encoded(Vec<Vec<f64>>),
    Skipped(String),
}

fn local_descriptors(root: &Path, dir: &Path, clip: &ClipManifest) -> Result<Vec<Vec<f64>>> {
    let path = resolve(root, &dir.join(format!("{}.hfv", clip.id)).to_string_lossy());
    if !path.is_file() {
        return Ok(Vec::new());
    }
    FeatureFile::read(&path)?.rows()
}

fn descriptor(
    root: &Path,
    args: &EncodeArgs,
    cfg: &RunConfig,
    enc: &Encoders,
    clip: &ClipManifest,
    id: StreamId,
) -> Result<std::result::Result<Vec<f64>, String>> {
    let missing = |what: &str| Ok(Err(format!("clip {} has no {what}", clip.id)));
    match id {
        StreamId::Bow => {
            let dict = enc.dict.as_ref().expect("checked before encoding");
            let words = local_descriptors(root, &args.descriptors, clip)?
                .iter()
                .map(|x| bow_encode(x, dict))
                .collect::<Result<Vec<_>>>()?;
            if words.is_empty() {
                return missing("local descriptors");
            }
            pool_avg(&words).map(Ok)
        }
        StreamId::Fv1 | StreamId::Fv2 => {
            let gmm = enc.gmm.as_ref().expect("checked before encoding");
            let parts = local_descriptors(root, &args.descriptors, clip)?
                .iter()
                .map(|x| fv_encode_split(x, gmm).map(|(a, b)| if id == StreamId::Fv1 { a } else { b }))
                .collect::<Result<Vec<_>>>()?;
            if parts.is_empty() {
                return missing("local descriptors");
            }
            pool_avg(&parts).map(Ok)
        }
        StreamId::Odf(1) => {
            let Some(p) = &clip.detections else {
                return missing("detections");
            };
            let records = load_detections(&resolve(root, p))?;
            if records.is_empty() {
                log::info!("clip {}: no detections, ODF target is all zeros", clip.id);
            }
            Ok(Ok(odf_descriptor(&records, enc.pivots.as_ref(), &cfg.moments())?.to_vec()))
        }
        StreamId::Sdf(k @ (1 | 2)) => {
            let (path, source) = if k == 1 {
                (&clip.saliency_spatial, SaliencySource::Spatial)
            } else {
                (&clip.saliency_temporal, SaliencySource::Temporal)
            };
            let Some(p) = path else {
                return missing(if k == 1 { "spatial saliency" } else { "temporal saliency" });
            };
            let frames = load_saliency(&resolve(root, p), source)?;
            if frames.is_empty() {
                return missing("saliency frames");
            }
            Ok(Ok(sdf_descriptor(&frames, &enc.sdf, &cfg.moments())?.to_vec()))
        }
        other => Ok(Err(format!("stream {other} has no raw-input encoder"))),
    }
}

fn encode_clip(
    root: &Path,
    args: &EncodeArgs,
    cfg: &RunConfig,
    enc: &Encoders,
    sketches: &BTreeMap<StreamId, MultiSketch>,
    clip: &ClipManifest,
    id: StreamId,
) -> Result<Outcome> {
    Ok(match descriptor(root, args, cfg, enc, clip, id)? {
        Ok(desc) => Outcome::Encoded(sketches[&id].apply(&cfg.gt_pn.apply(&desc))?),
        Err(reason) => Outcome::Skipped(reason),
    })
}

pub(crate) fn encode_gt(root: &Path, args: &EncodeArgs) -> CliResult<()> {
    let cfg = load_config(&root.join(&args.config))?;
    if cfg.streams.is_empty() {
        return Err(Error::InvalidParameter("config lists no streams to encode".into()).into());
    }
    let mut manifest = Manifest::load(&root.join(&args.manifest), root)?;
    let enc = Encoders {
        dict: args.dict.as_ref().map(|p| load_dictionary(&root.join(p))).transpose()?,
        gmm: args.gmm.as_ref().map(|p| load_gmm(&root.join(p))).transpose()?,
        pivots: match cfg.odf_layout {
            OdfLayout::Embedded => Some(PivotSet::even(ODF_PIVOTS, ODF_SIGMA)?),
            OdfLayout::Plain => None,
        },
        sdf: SdfEncoder::default(),
    };
    let mut sketches = BTreeMap::new();
    let mut summary = EncodeSummary {
        clips: manifest.clips.len(),
        streams: BTreeMap::new(),
    };
    let mut active = Vec::new();
    for &id in &cfg.streams {
        let needs = match id {
            StreamId::Bow if enc.dict.is_none() => Some("--dict"),
            StreamId::Fv1 | StreamId::Fv2 if enc.gmm.is_none() => Some("--gmm"),
            _ => None,
        };
        if let Some(flag) = needs {
            return Err(Error::InvalidParameter(format!("stream {id} needs {flag}")).into());
        }
        match enc.pre_dim(&cfg, id) {
            Some(pre) => {
                sketches.insert(id, stream_sketch(&cfg, id, pre)?);
                summary.streams.insert(
                    id.to_string(),
                    StreamSummary {
                        pre_sketch_dim: pre,
                        dim: cfg.stream_dim,
                        copies: cfg.sketch_copies,
                        encoded: 0,
                        skipped: 0,
                        sketch: args.out.join(format!("sketches/{id}.msk")).to_string_lossy().into_owned(),
                    },
                );
                active.push(id);
            }
            None => log::warn!("stream {id}: targets are precomputed, not encoded here"),
        }
    }

    let jobs: Vec<(usize, StreamId)> = (0..manifest.clips.len())
        .flat_map(|c| active.iter().map(move |&id| (c, id)))
        .collect();
    let pool = worker_pool(cfg.workers)?;
    let results: Vec<Result<Outcome>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, id)| encode_clip(root, args, &cfg, &enc, &sketches, &manifest.clips[c], id))
            .collect()
    });

    let out_dir = root.join(&args.out);
    for (&(c, id), outcome) in jobs.iter().zip(results) {
        let entry = summary.streams.get_mut(&id.to_string()).expect("active stream");
        let clip = &mut manifest.clips[c];
        match outcome? {
            Outcome::Encoded(copies) => {
                let mut paths = Vec::with_capacity(copies.len());
                for (j, t) in copies.into_iter().enumerate() {
                    let rel = args.out.join(format!("targets/{}.{id}.{j}.hfv", clip.id));
                    FeatureFile::vector(t).write(&root.join(&rel))?;
                    paths.push(rel.to_string_lossy().into_owned());
                }
                clip.targets.insert(id.to_string(), paths);
                entry.encoded += 1;
            }
            Outcome::Skipped(reason) => {
                log::warn!("skipping {id} for clip {}: {reason}", clip.id);
                entry.skipped += 1;
            }
        }
    }
    std::fs::create_dir_all(out_dir.join("sketches"))?;
    for (id, ms) in &sketches {
        std::fs::write(root.join(&summary.streams[&id.to_string()].sketch), ms.to_record())?;
    }
    manifest.save(&out_dir.join("manifest.json"))?;
    let text = serde_json::to_string_pretty(&summary)?;
    std::fs::write(out_dir.join("summary.json"), format!("{text}\n"))?;
    println!("{}", serde_json::to_string(&summary)?);
    if !jobs.is_empty() && summary.streams.values().all(|s| s.encoded == 0) {
        return Err(CliError::Core(Error::InvalidParameter("every clip was skipped".into())));
    }
    Ok(())
}
