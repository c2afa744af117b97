//! Checkpoint persistence: a small versioned binary format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  b"ENCCKPT\n"
//! version u32      currently 1
//! method  u16 len + UTF-8 bytes
//! seed    u64
//! n_dims  u32, then layer_dims as u32 each (input dim first)
//! head    u8 flag, then (hidden u32, out u32) when set
//! params  u64 count, then count f64 values in flatten order
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::encoder::{EncoderConfig, EncoderModel};
use crate::train::Checkpoint;

const MAGIC: &[u8; 8] = b"ENCCKPT\n";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

pub fn checkpoint_to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let method = ckpt.method.as_bytes();
    out.extend_from_slice(&(method.len() as u16).to_le_bytes());
    out.extend_from_slice(method);
    out.extend_from_slice(&ckpt.seed.to_le_bytes());
    let dims = ckpt.model.layer_dims();
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in &dims {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    match ckpt.model.head_dims() {
        Some((h, o)) => {
            out.push(1);
            out.extend_from_slice(&(h as u32).to_le_bytes());
            out.extend_from_slice(&(o as u32).to_le_bytes());
        }
        None => out.push(0),
    }
    let params = ckpt.model.flat_params();
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in &params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint, PersistError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(PersistError::BadMagic);
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(PersistError::BadVersion(version));
    }
    let method_len = cur.u16()? as usize;
    let method = String::from_utf8(cur.take(method_len)?.to_vec())
        .map_err(|_| PersistError::Corrupt("method tag is not UTF-8".into()))?;
    let seed = cur.u64()?;
    let n_dims = cur.u32()? as usize;
    if n_dims < 2 {
        return Err(PersistError::Corrupt("fewer than two layer dims".into()));
    }
    let mut layer_dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        layer_dims.push(cur.u32()? as usize);
    }
    let head_dims = match cur.u8()? {
        0 => None,
        1 => Some((cur.u32()? as usize, cur.u32()? as usize)),
        other => {
            return Err(PersistError::Corrupt(format!("bad head flag {other}")));
        }
    };
    let n_params = cur.u64()? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        params.push(f64::from_le_bytes(cur.take(8)?.try_into().unwrap()));
    }
    if cur.pos != bytes.len() {
        return Err(PersistError::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }

    let cfg = EncoderConfig {
        layer_dims,
        head_dims,
    };
    let mut model = EncoderModel::new(&cfg, 0)
        .map_err(|e| PersistError::Corrupt(format!("bad architecture: {e}")))?;
    if model.num_params() != n_params {
        return Err(PersistError::Corrupt(format!(
            "parameter count {} does not match architecture ({} expected)",
            n_params,
            model.num_params()
        )));
    }
    model
        .set_flat_params(&params)
        .map_err(|e| PersistError::Corrupt(e.to_string()))?;
    Ok(Checkpoint {
        model,
        method,
        seed,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), PersistError> {
    fs::write(path, checkpoint_to_bytes(ckpt)).map_err(|source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, PersistError> {
    let bytes = fs::read(path).map_err(|source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    checkpoint_from_bytes(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PersistError> {
        if self.pos + n > self.bytes.len() {
            return Err(PersistError::Corrupt("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, PersistError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, PersistError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, PersistError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, PersistError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;

    fn sample_checkpoint() -> Checkpoint {
        let cfg = EncoderConfig {
            layer_dims: vec![4, 6, 3],
            head_dims: Some((3, 2)),
        };
        Checkpoint {
            model: EncoderModel::new(&cfg, 77).unwrap(),
            method: "mulsupcon".into(),
            seed: 12345,
        }
    }

    #[test]
    fn byte_round_trip_is_exact() {
        let ckpt = sample_checkpoint();
        let bytes = checkpoint_to_bytes(&ckpt);
        let loaded = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(loaded.method, "mulsupcon");
        assert_eq!(loaded.seed, 12345);
        assert_eq!(loaded.model.flat_params(), ckpt.model.flat_params());
        assert_eq!(loaded.model.layer_dims(), ckpt.model.layer_dims());
        assert_eq!(loaded.model.head_dims(), ckpt.model.head_dims());
        // Serialization itself is deterministic.
        assert_eq!(bytes, checkpoint_to_bytes(&loaded));
    }

    #[test]
    fn bad_magic_is_rejected() {
        assert!(matches!(
            checkpoint_from_bytes(b"NOTCKPT\n rest"),
            Err(PersistError::BadMagic)
        ));
    }

    #[test]
    fn truncation_is_rejected() {
        let bytes = checkpoint_to_bytes(&sample_checkpoint());
        assert!(matches!(
            checkpoint_from_bytes(&bytes[..bytes.len() - 3]),
            Err(PersistError::Corrupt(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = sample_checkpoint();
        save_checkpoint(&ckpt, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.model.flat_params(), ckpt.model.flat_params());
    }
}
