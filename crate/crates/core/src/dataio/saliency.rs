use std::fs;
use std::path::Path;

use super::bytes::Reader;
use crate::descriptors::{SaliencyFrame, SaliencySource};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HSG1";
/// Values this far outside `[0, 1]` are clamped instead of rejected.
pub const SALIENCY_SLACK: f64 = 1e-6;
const MAX_CELLS: u64 = 1 << 28;

/// Decodes `HSG1`: magic, `u32` frame count, `u32` width, `u32` height, then
/// each frame's row-major `f32` grid.
pub fn decode_saliency(bytes: &[u8], source: SaliencySource) -> Result<Vec<SaliencyFrame>> {
    let mut r = Reader::new(bytes, "HSG1");
    r.magic(MAGIC)?;
    let frames = r.u32()? as u64;
    let w = r.u32()? as u64;
    let h = r.u32()? as u64;
    if frames.saturating_mul(w).saturating_mul(h) > MAX_CELLS {
        return Err(r.error("grid too large"));
    }
    let (w, h) = (w as usize, h as usize);
    let cells = w * h;
    let mut out = Vec::with_capacity((frames as usize).min(r.remaining() / cells.saturating_mul(4).max(1)));
    for _ in 0..frames {
        let mut data = Vec::with_capacity(cells.min(r.remaining() / 4));
        for _ in 0..cells {
            let at = r.offset();
            let v = f64::from(r.f32()?);
            if !(-SALIENCY_SLACK..=1.0 + SALIENCY_SLACK).contains(&v) {
                return Err(Error::Format {
                    format: "HSG1",
                    offset: at,
                    reason: format!("saliency value {v} outside [0, 1]"),
                });
            }
            data.push(v.clamp(0.0, 1.0));
        }
        out.push(SaliencyFrame::new(w, h, data, source).map_err(|e| r.error(e.to_string()))?);
    }
    r.finish()?;
    Ok(out)
}

pub fn encode_saliency(frames: &[SaliencyFrame]) -> Result<Vec<u8>> {
    let (w, h) = frames.first().map_or((0, 0), |f| (f.width(), f.height()));
    if frames.iter().any(|f| f.width() != w || f.height() != h) {
        return Err(Error::invalid("saliency frames must share one grid size"));
    }
    let mut out = Vec::with_capacity(16 + frames.len() * w * h * 4);
    out.extend_from_slice(MAGIC);
    for n in [frames.len(), w, h] {
        out.extend_from_slice(&u32::try_from(n).map_err(|_| Error::invalid("saliency size exceeds u32"))?.to_le_bytes());
    }
    for f in frames {
        for &v in f.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn load_saliency(path: &Path, source: SaliencySource) -> Result<Vec<SaliencyFrame>> {
    decode_saliency(&fs::read(path)?, source)
}

pub fn save_saliency(path: &Path, frames: &[SaliencyFrame]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode_saliency(frames)?)?;
    Ok(())
}
