//! Binary parameter files.
//!
//! Layout (little-endian): `IGDH1`, then per parameter `u32` name length,
//! UTF-8 name, four `u32` dims, `f32` payload; finally a `u64` FNV-1a hash of
//! every preceding byte.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

use super::config::ModelConfig;
use super::params::{param_specs, ParamStore};

pub const MAGIC: &[u8; 5] = b"IGDH1";

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn encode(params: &ParamStore<f32>) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        for d in t.shape().0 {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decodes a checkpoint without checking it against a configuration.
pub fn decode(bytes: &[u8]) -> Result<ParamStore<f32>> {
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if fnv1a(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
        return Err(Error::Format("checkpoint checksum mismatch".into()));
    }
    let mut cur = Cursor { bytes: body, pos: MAGIC.len() };
    let mut store = ParamStore::new();
    while cur.pos < body.len() {
        let len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = cur.u32()? as usize;
        }
        let shape = Shape(dims);
        let raw = cur.take(shape.numel().checked_mul(4).ok_or_else(|| Error::Format(format!("{name}: shape overflow")))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        store.insert(name, Tensor::from_vec(shape, data)?);
    }
    Ok(store)
}

pub fn save(path: &Path, params: &ParamStore<f32>) -> Result<()> {
    std::fs::write(path, encode(params))?;
    Ok(())
}

/// Loads a checkpoint and verifies every name and shape against `cfg`.
pub fn load(path: &Path, cfg: &ModelConfig) -> Result<ParamStore<f32>> {
    let bytes = std::fs::read(path)?;
    let store = decode(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    store.check_against(&param_specs(cfg))?;
    Ok(store)
}
