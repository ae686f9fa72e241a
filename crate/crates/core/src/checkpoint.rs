//! Binary model snapshots.
//!
//! Layout, little-endian: magic `IOCCKPT\0`, `u32` version, `u32` header
//! length, JSON header, `u32` tensor count, then per tensor a `u16` name
//! length, the name, a `u8` rank, `u32` extents and `f64` values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::write_atomic;
use crate::error::{Error, Result};
use crate::model::{IocFormer, ModelConfig};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"IOCCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub step: u64,
    pub val_mae: Option<f64>,
}

pub fn encode(model: &IocFormer, step: u64, val_mae: Option<f64>) -> Vec<u8> {
    let header = CheckpointHeader {
        model: model.config().clone(),
        step,
        val_mae,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for (_, name, t) in model.params().iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    context: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.err(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn err(&self, message: String) -> Error {
        Error::Parse {
            context: self.context.to_string(),
            message,
        }
    }
}

pub fn decode(bytes: &[u8], context: &str) -> Result<(IocFormer, CheckpointHeader)> {
    let mut r = Reader { buf: bytes, pos: 0, context };
    if r.take(8)? != MAGIC {
        return Err(r.err("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let len = r.u32()? as usize;
    let header: CheckpointHeader = serde_json::from_slice(r.take(len)?).map_err(|e| r.err(format!("header: {e}")))?;
    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let n = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|e| r.err(format!("tensor name: {e}")))?
            .to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        store.add(name, Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let model = IocFormer::from_params(header.model.clone(), store)?;
    Ok((model, header))
}

pub fn save(model: &IocFormer, step: u64, val_mae: Option<f64>, path: &Path) -> Result<()> {
    write_atomic(path, &encode(model, step, val_mae))
}

pub fn load(path: &Path) -> Result<(IocFormer, CheckpointHeader)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    fn tiny() -> ModelConfig {
        ModelConfig {
            layers: 2,
            queries: 8,
            decoder_layers: 1,
            ..ModelConfig::desk()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = IocFormer::new(tiny(), 3).unwrap();
        let (back, h) = decode(&encode(&m, 17, Some(1.5)), "mem").unwrap();
        assert_eq!(h.step, 17);
        assert_eq!(h.val_mae, Some(1.5));
        assert_eq!(back.config(), m.config());
        for ((_, na, a), (_, nb, b)) in m.params().iter().zip(back.params().iter()) {
            assert_eq!(na, nb);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rejects_corruption() {
        let m = IocFormer::new(tiny().with_variant(Variant::DensityOnly), 3).unwrap();
        let bytes = encode(&m, 0, None);
        assert!(decode(&bytes[..bytes.len() - 1], "x").is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad, "x").is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra, "x").is_err());
    }

    #[test]
    fn config_mismatch_is_reported() {
        let m = IocFormer::new(tiny(), 3).unwrap();
        let mut bytes = encode(&m, 0, None);
        // Swap the header for one describing a deeper encoder.
        let header = CheckpointHeader {
            model: ModelConfig { layers: 4, ..tiny() },
            step: 0,
            val_mae: None,
        };
        let json = serde_json::to_vec(&header).unwrap();
        let old_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let mut patched = bytes[..12].to_vec();
        patched.extend_from_slice(&(json.len() as u32).to_le_bytes());
        patched.extend_from_slice(&json);
        patched.extend_from_slice(&bytes.split_off(16 + old_len));
        assert!(matches!(decode(&patched, "x"), Err(Error::Config(_))));
    }
}
