//! Parameter archives.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic   b"DSCK"
//! version u16 (= 1)
//! count   u32
//! count × { name_len u32, name utf-8, rows u32, cols u32, rows·cols × f32 }
//! ```
//!
//! A JSON sidecar carries training metadata.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

const MAGIC: &[u8; 4] = b"DSCK";
const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: String,
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Model hyperparameters, so a loader can rebuild the architecture.
    pub config: serde_json::Value,
}

pub fn write_params<T: Real, W: Write>(store: &ParamStore<T>, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, t) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rows() as u32).to_le_bytes())?;
        w.write_all(&(t.cols() as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_params<T: Real, R: Read>(mut r: R) -> Result<ParamStore<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::MalformedCheckpoint("bad magic".into()));
    }
    let mut v = [0u8; 2];
    r.read_exact(&mut v)?;
    let version = u16::from_le_bytes(v);
    if version != VERSION {
        return Err(NnError::MalformedCheckpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| NnError::MalformedCheckpoint("parameter name is not utf-8".into()))?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut raw = vec![0u8; rows * cols * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::from_f32(f32::from_le_bytes([c[0], c[1], c[2], c[3]])).expect("f32 converts"))
            .collect();
        if store.id_of(&name).is_some() {
            return Err(NnError::MalformedCheckpoint(format!("duplicate parameter {name}")));
        }
        store.add(name, Tensor::from_vec(rows, cols, data)?);
    }
    Ok(store)
}

/// Paths of the binary archive and its JSON sidecar for a checkpoint stem.
pub fn checkpoint_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("ckpt"), stem.with_extension("json"))
}

pub fn save<T: Real>(stem: &Path, store: &ParamStore<T>, meta: &CheckpointMeta) -> Result<()> {
    let (bin, json) = checkpoint_paths(stem);
    let mut buf = Vec::new();
    write_params(store, &mut buf)?;
    fs::write(bin, buf)?;
    fs::write(json, serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

pub fn load<T: Real>(stem: &Path) -> Result<(ParamStore<T>, CheckpointMeta)> {
    let (bin, json) = checkpoint_paths(stem);
    let store = read_params(fs::read(bin)?.as_slice())?;
    let meta = serde_json::from_slice(&fs::read(json)?)?;
    Ok((store, meta))
}
