//! Per-recording feature cache: `b"LSFB"`, version, T, n_mels (u32 LE each),
//! then T·n_mels little-endian f32 values, row-major.

use std::io::{Read, Write};
use std::path::Path;

use super::FbankMatrix;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LSFB";
const VERSION: u32 = 1;

pub fn write_fbank_cache(path: impl AsRef<Path>, fbank: &FbankMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(16 + fbank.values().len() * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(fbank.frames() as u32).to_le_bytes());
    bytes.extend_from_slice(&(fbank.n_mels() as u32).to_le_bytes());
    for &v in fbank.values() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Reads a cached matrix; frame start times are rebuilt from `frame_shift`.
pub fn read_fbank_cache(path: impl AsRef<Path>, frame_shift: f64) -> Result<FbankMatrix> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::InvalidInput(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return Err(bad("not a feature cache file"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if word(4) != VERSION {
        return Err(bad("unsupported feature cache version"));
    }
    let (frames, n_mels) = (word(8) as usize, word(12) as usize);
    if bytes.len() != 16 + frames * n_mels * 4 {
        return Err(bad("feature cache length does not match its header"));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let times = (0..frames).map(|t| t as f64 * frame_shift).collect();
    FbankMatrix::new(values, n_mels, times)
}
