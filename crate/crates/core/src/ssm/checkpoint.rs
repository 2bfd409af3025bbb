//! Binary checkpoint format.
//!
//! ```text
//! "LSCK" | version u32 | config hash u64 | n_classes u32
//! | config JSON (u32 length + bytes) | tensor count u32
//! | per tensor: name (u32 length + utf8) | ndim u32 | dims u32… | f32 values
//! ```
//!
//! All integers and floats little-endian. Parameters are stored as f32, so a
//! round trip returns the f32-rounded model and re-saving reproduces the file
//! byte for byte.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::params::ModelParams;
use super::tensor::ParamSet;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LSCK";
const VERSION: u32 = 1;

pub fn encode_checkpoint(m: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&m.config.hash().to_le_bytes());
    out.extend_from_slice(&(m.config.n_classes as u32).to_le_bytes());
    let json = serde_json::to_vec(&m.config).expect("config serializes");
    put_bytes(&mut out, &json);
    let named = m.named_tensors();
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        put_bytes(&mut out, name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Checkpoint("truncated".into()));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hash = r.u64()?;
    let n_classes = r.u32()? as usize;
    let config: ModelConfig =
        serde_json::from_slice(r.bytes()?).map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
    config.validate()?;
    if config.hash() != hash {
        return Err(Error::Checkpoint("config hash mismatch".into()));
    }
    if config.n_classes != n_classes {
        return Err(Error::Checkpoint("class count mismatch".into()));
    }
    let mut m = ModelParams::zeros(&config);
    let expected: Vec<(String, Vec<usize>)> = m
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(Error::Checkpoint(format!(
            "{count} tensors, config needs {}",
            expected.len()
        )));
    }
    for ((name, shape), t) in expected.iter().zip(m.tensors_mut()) {
        let got = std::str::from_utf8(r.bytes()?).map_err(|_| Error::Checkpoint("tensor name not utf-8".into()))?;
        if got != name {
            return Err(Error::Checkpoint(format!("expected tensor {name}, found {got}")));
        }
        let ndim = r.u32()? as usize;
        let dims = (0..ndim)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if &dims != shape {
            return Err(Error::Checkpoint(format!("{name}: shape {dims:?}, expected {shape:?}")));
        }
        let raw = r.take(t.len() * 4)?;
        for (v, b) in t.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(b.try_into().unwrap()) as f64;
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    if !m.all_finite() {
        return Err(Error::NonFinite("checkpoint"));
    }
    Ok(m)
}

pub fn save_checkpoint(path: impl AsRef<Path>, m: &ModelParams) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(m)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&buf)
}

/// Lower-case hex SHA-256 of a file.
pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&buf)))
}
