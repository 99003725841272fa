//! Checkpoint directories: `manifest.json` plus a blob of named tensors.
//!
//! Blob layout, all little-endian: per tensor a store tag byte (0 main,
//! 1 causal), `u32` name length, UTF-8 name, `u32` rank, `u64` extents,
//! then the `f64` payload.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, Variant};
use crate::autodiff::{ParamStore, Tensor};
use crate::error::{DsrError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const BLOB: &str = "tensors.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub variant: Variant,
    pub d_z: usize,
    pub d_zhat: usize,
    pub d_eps: usize,
    pub config: ModelConfig,
    pub iteration: usize,
    pub seed: u64,
    pub tensors: Vec<String>,
}

pub fn checkpoint_dir(root: &Path, iteration: usize) -> PathBuf {
    root.join(format!("ckpt_{iteration}"))
}

fn encode(stores: &[&ParamStore]) -> (Vec<u8>, Vec<String>) {
    let mut out = Vec::new();
    let mut names = Vec::new();
    for (tag, store) in stores.iter().enumerate() {
        for (_, p) in store.iter() {
            out.push(tag as u8);
            out.extend((p.name.len() as u32).to_le_bytes());
            out.extend(p.name.as_bytes());
            out.extend((p.value.ndim() as u32).to_le_bytes());
            for &e in p.value.shape() {
                out.extend((e as u64).to_le_bytes());
            }
            out.extend(crate::fsio::f64s_to_le_bytes(p.value.data()));
            names.push(p.name.clone());
        }
    }
    (out, names)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(DsrError::Format {
                path: self.path.to_path_buf(),
                reason: format!("truncated at byte {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize)
    }
}

fn decode(bytes: &[u8], path: &Path) -> Result<Vec<(u8, String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0, path };
    let mut out = Vec::new();
    let bad = |reason: String| DsrError::Format {
        path: path.to_path_buf(),
        reason,
    };
    while r.pos < bytes.len() {
        let tag = r.take(1)?[0];
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| bad(e.to_string()))?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = crate::fsio::le_bytes_to_f64s(r.take(8 * n)?, path)?;
        out.push((tag, name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

/// Writes `root/ckpt_{iteration}` atomically (staging directory + rename).
pub fn save_checkpoint(root: &Path, model: &Model, iteration: usize, seed: u64) -> Result<PathBuf> {
    let dir = checkpoint_dir(root, iteration);
    let staging = root.join(format!(".ckpt_{iteration}.tmp"));
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(&staging)?;
    let (blob, tensors) = encode(&[&model.params, &model.causal]);
    let c = &model.config;
    let manifest = CheckpointManifest {
        variant: c.variant,
        d_z: c.d_z,
        d_zhat: c.d_zhat,
        d_eps: c.d_eps,
        config: c.clone(),
        iteration,
        seed,
        tensors,
    };
    fs::write(staging.join(BLOB), blob)?;
    fs::write(staging.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::rename(&staging, &dir)?;
    Ok(dir)
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model, CheckpointManifest)> {
    let mpath = dir.join(MANIFEST);
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(&mpath)?)?;
    let bpath = dir.join(BLOB);
    let entries = decode(&fs::read(&bpath)?, &bpath)?;
    let mut model = Model::new(manifest.config.clone(), manifest.seed)?;
    let (mut main, mut causal) = (ParamStore::new(), ParamStore::new());
    for (tag, name, t) in entries {
        match tag {
            0 => main.insert(name, t),
            1 => causal.insert(name, t),
            other => {
                return Err(DsrError::Format {
                    path: bpath,
                    reason: format!("unknown store tag {other}"),
                })
            }
        };
    }
    if main.len() != model.params.len() || causal.len() != model.causal.len() {
        return Err(DsrError::Format {
            path: bpath,
            reason: "parameter set does not match the manifest configuration".into(),
        });
    }
    model.params.load_values(&main)?;
    model.causal.load_values(&causal)?;
    Ok((model, manifest))
}

/// Iterations of every `ckpt_*` directory under `root`, ascending.
pub fn list_checkpoints(root: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    if !root.exists() {
        return Ok(out);
    }
    for entry in fs::read_dir(root)? {
        let path = entry?.path();
        let it = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("ckpt_"))
            .and_then(|n| n.parse::<usize>().ok());
        if let (Some(it), true) = (it, path.join(MANIFEST).exists()) {
            out.push((it, path));
        }
    }
    out.sort();
    Ok(out)
}
