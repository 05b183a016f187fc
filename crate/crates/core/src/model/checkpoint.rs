//! Binary checkpoint container.
//!
//! Layout (all integers little-endian `u32`):
//! `"SGCN"`, version, config length, config JSON, tensor count, then per
//! tensor: name length, name, rank, dims, `f32` payload in row-major order.

use std::collections::BTreeMap;
use std::path::Path;

use super::{ArchConfig, ModelParams};
use crate::autodiff::Tensor;
use crate::error::{CheckpointError, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"SGCN";

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("checkpoint field exceeds u32").to_le_bytes());
}

/// Serialises parameters at 32-bit precision.
pub fn write_checkpoint(params: &ModelParams) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(params.config())?;
    put_u32(&mut out, cfg.len());
    out.extend_from_slice(&cfg);
    put_u32(&mut out, params.tensors().len());
    for (name, t) in params.tensors() {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rank());
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(CheckpointError::Truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<usize, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        let mut m = [0u8; 4];
        m.copy_from_slice(magic);
        return Err(CheckpointError::BadMagic(m).into());
    }
    let version = r.u32("version")? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version { found: version, expected: CHECKPOINT_VERSION }.into());
    }
    let len = r.u32("config length")?;
    let cfg_bytes = r.take(len, "config")?;
    let config: ArchConfig = serde_json::from_slice(cfg_bytes).map_err(|e| CheckpointError::Config(e.to_string()))?;
    config.validate().map_err(|e| CheckpointError::Config(e.to_string()))?;
    let count = r.u32("tensor count")?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let nlen = r.u32("tensor name length")?;
        let name = String::from_utf8(r.take(nlen, "tensor name")?.to_vec())
            .map_err(|_| CheckpointError::Config("tensor name is not UTF-8".into()))?;
        let rank = r.u32("tensor rank")?;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("tensor dims")?);
        }
        let n: usize = shape.iter().product();
        let payload = r.take(n.checked_mul(4).ok_or(CheckpointError::Truncated("tensor payload"))?, "tensor payload")?;
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        let t = Tensor::new(shape.clone(), data).map_err(|_| CheckpointError::ShapeMismatch {
            name: name.clone(),
            found: shape,
            expected: Vec::new(),
        })?;
        tensors.insert(name, t);
    }
    ModelParams::from_tensors(config, tensors)
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    std::fs::write(path, write_checkpoint(params)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    read_checkpoint(&std::fs::read(path)?)
}
