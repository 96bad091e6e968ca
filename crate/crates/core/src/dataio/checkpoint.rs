use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bytes::Reader;
use crate::error::{Error, Result};
use crate::hallucinate::{Model, ModelConfig, Norm};

const MAGIC: &[u8; 4] = b"HKT1";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_META: u64 = 1 << 24;

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    config: ModelConfig,
    raw_scores: Vec<f64>,
    beta: f64,
    rho: f64,
    norm_updates: Vec<u64>,
    blocks: Vec<(String, usize)>,
}

fn norms(model: &Model) -> Vec<(&'static str, &Norm)> {
    let mut out = vec![("prednet.norm", &model.prednet.norm)];
    if let Some(c) = &model.cenet {
        out.push(("cenet.norm", &c.norm));
    }
    out
}

fn norms_mut(model: &mut Model) -> Vec<&mut Norm> {
    let mut out = vec![&mut model.prednet.norm];
    if let Some(c) = model.cenet.as_mut() {
        out.push(&mut c.norm);
    }
    out
}

/// Serializes every parameter block, the normalization statistics, the
/// fusion state and the configuration (which fixes all sketch and pattern
/// seeds).
///
/// Layout: magic, `u32` version, `u64` metadata length, metadata JSON, then
/// the blocks listed in the metadata as little-endian `f64`.
pub fn encode_checkpoint(model: &Model) -> Result<Vec<u8>> {
    let mut blocks: Vec<(String, &[f64])> = model.blocks().into_iter().map(|(n, _, b)| (n, b)).collect();
    for (name, n) in norms(model) {
        blocks.push((format!("{name}.running_mean"), &n.running_mean));
        blocks.push((format!("{name}.running_var"), &n.running_var));
    }
    let meta = Meta {
        config: model.config.clone(),
        raw_scores: model.raw_scores.clone(),
        beta: model.fusion.beta,
        rho: model.fusion.rho,
        norm_updates: norms(model).iter().map(|(_, n)| n.updates).collect(),
        blocks: blocks.iter().map(|(n, b)| (n.clone(), b.len())).collect(),
    };
    let json = serde_json::to_vec(&meta)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * blocks.iter().map(|b| b.1.len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, b) in blocks {
        for x in b {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader::new(bytes, "HKT1");
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.error(format!("unsupported version {version}")));
    }
    let len = r.u64()?;
    if len > MAX_META {
        return Err(r.error(format!("metadata length {len} too large")));
    }
    let at = r.offset();
    let meta: Meta = serde_json::from_slice(r.take(len as usize)?).map_err(|e| Error::Format {
        format: "HKT1",
        offset: at,
        reason: format!("metadata: {e}"),
    })?;
    let payload = r.remaining() / 8;
    meta.config.validate().map_err(|e| r.error(e.to_string()))?;
    match meta.config.parameter_count() {
        Some(n) if n <= payload => {}
        _ => return Err(r.error("configuration needs more parameters than the payload holds")),
    }
    let mut model = Model::new(meta.config).map_err(|e| r.error(e.to_string()))?;
    model
        .set_fusion(meta.raw_scores, meta.beta, meta.rho)
        .map_err(|e| r.error(e.to_string()))?;

    let mut expected: Vec<(String, usize)> = model.blocks().into_iter().map(|(n, _, b)| (n, b.len())).collect();
    for (name, n) in norms(&model) {
        expected.push((format!("{name}.running_mean"), n.dim()));
        expected.push((format!("{name}.running_var"), n.dim()));
    }
    if meta.blocks != expected {
        return Err(r.error("block table does not match the configuration"));
    }
    if meta.norm_updates.len() != norms(&model).len() {
        return Err(r.error("normalization table does not match the configuration"));
    }
    let read_block = |r: &mut Reader, len: usize| -> Result<Vec<f64>> { (0..len).map(|_| r.f64()).collect() };
    let params = model.blocks_mut().len();
    for k in 0..params {
        let v = read_block(&mut r, expected[k].1)?;
        model.blocks_mut()[k].copy_from_slice(&v);
    }
    let mut k = params;
    for (n, updates) in norms_mut(&mut model).into_iter().zip(&meta.norm_updates) {
        n.running_mean = read_block(&mut r, expected[k].1)?;
        n.running_var = read_block(&mut r, expected[k + 1].1)?;
        n.updates = *updates;
        if n.running_var.iter().any(|v| !(*v >= 0.0)) {
            return Err(r.error("negative running variance"));
        }
        k += 2;
    }
    r.finish()?;
    Ok(model)
}

pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    decode_checkpoint(&fs::read(path)?)
}
