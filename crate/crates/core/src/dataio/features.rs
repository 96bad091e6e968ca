use std::fs;
use std::path::Path;

use super::bytes::Reader;
use crate::error::{Error, Result};
use crate::numkit::Matrix;

const MAGIC: &[u8; 4] = b"HFV1";
const MAX_DIMS: usize = 8;
const MAX_ELEMENTS: usize = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u32 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Dense row-major array with an `HFV1` header.
///
/// Layout: magic, `u32` dtype (0 = f32, 1 = f64), `u32` rank, `u64` per
/// dimension, then the payload. All little-endian.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub dtype: Dtype,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl FeatureFile {
    pub fn new(dtype: Dtype, dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n = element_count(&dims).ok_or_else(|| Error::invalid("feature dims overflow"))?;
        if dims.is_empty() || dims.len() > MAX_DIMS {
            return Err(Error::invalid(format!("feature rank must be 1..={MAX_DIMS}")));
        }
        if n != data.len() {
            return Err(Error::dim("feature payload", n, data.len()));
        }
        Ok(Self { dtype, dims, data })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            dtype: Dtype::F64,
            dims: vec![data.len()],
            data,
        }
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self {
            dtype: Dtype::F64,
            dims: vec![m.rows(), m.cols()],
            data: m.as_slice().to_vec(),
        }
    }

    pub fn to_matrix(&self) -> Result<Matrix> {
        match self.dims[..] {
            [r, c] => Matrix::from_vec(r, c, self.data.clone()),
            [n] => Matrix::from_vec(1, n, self.data.clone()),
            _ => Err(Error::invalid(format!("expected a rank-2 feature file, got rank {}", self.dims.len()))),
        }
    }

    /// Rows of a rank-2 file, or the single row of a rank-1 file.
    pub fn rows(&self) -> Result<Vec<Vec<f64>>> {
        let m = self.to_matrix()?;
        Ok((0..m.rows()).map(|r| m.row(r).to_vec()).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.dims.len() + self.data.len() * self.dtype.size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.dtype.code().to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in &self.data {
            match self.dtype {
                Dtype::F32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
                Dtype::F64 => out.extend_from_slice(&x.to_le_bytes()),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "HFV1");
        r.magic(MAGIC)?;
        let dtype = match r.u32()? {
            0 => Dtype::F32,
            1 => Dtype::F64,
            other => return Err(r.error(format!("unknown dtype code {other}"))),
        };
        let rank = r.u32()? as usize;
        if rank == 0 || rank > MAX_DIMS {
            return Err(r.error(format!("rank {rank} outside 1..={MAX_DIMS}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = r.u64()?;
            dims.push(usize::try_from(d).map_err(|_| r.error("dimension overflows usize"))?);
        }
        let n = element_count(&dims)
            .filter(|&n| n <= MAX_ELEMENTS)
            .ok_or_else(|| r.error("element count too large"))?;
        if r.remaining() != n * dtype.size() {
            return Err(r.error(format!(
                "payload is {} bytes, dims need {}",
                r.remaining(),
                n * dtype.size()
            )));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(match dtype {
                Dtype::F32 => f64::from(r.f32()?),
                Dtype::F64 => r.f64()?,
            });
        }
        r.finish()?;
        Ok(Self { dtype, dims, data })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

fn element_count(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}
