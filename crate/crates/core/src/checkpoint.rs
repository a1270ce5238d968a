//! Checkpoint container.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "AVCK" | u32 version | u32 metadata_len | metadata (UTF-8 JSON)
//! u32 param_count
//! per param: u32 name_len | name | u8 stage | u32 rows | u32 cols | f64 payload
//! ```
//!
//! Parameters are written in store order. A `<file>.params.json` listing
//! names, stages and shapes is written next to every checkpoint.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use avcoh_grad::{Matrix, ParamStore, Stage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Aggregation, LossConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"AVCK";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointStage {
    Pretrained,
    Finetuned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: CheckpointStage,
    pub config_hash: String,
    pub seed: u64,
    pub steps: usize,
    /// Loss toggles the backbone was pre-trained with.
    pub loss: Option<LossConfig>,
    /// SHA-256 of the pre-trained checkpoint this one was fine-tuned from.
    pub pretrained_sha256: Option<String>,
    pub aggregation: Option<Aggregation>,
    pub auxiliary_heads: Option<bool>,
    pub code_version: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointParam {
    pub name: String,
    pub stage: Stage,
    pub value: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Vec<CheckpointParam>,
}

#[derive(Serialize)]
struct ParamListing<'a> {
    name: &'a str,
    stage: &'static str,
    shape: [usize; 2],
}

impl Checkpoint {
    /// Captures parameters whose stage is in `stages`.
    pub fn from_store(store: &ParamStore, stages: &[Stage], meta: CheckpointMeta) -> Self {
        let params = store
            .entries()
            .iter()
            .filter(|e| stages.contains(&e.stage))
            .map(|e| CheckpointParam { name: e.name.clone(), stage: e.stage, value: e.value.clone() })
            .collect();
        Self { meta, params }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.push(p.stage.tag());
            out.extend_from_slice(&(p.value.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(p.value.cols() as u32).to_le_bytes());
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = read_u32(&mut r)? as usize;
        let meta_bytes = take(&mut r, meta_len)?;
        let meta: CheckpointMeta =
            serde_json::from_slice(meta_bytes).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        let count = read_u32(&mut r)? as usize;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let name = String::from_utf8(take(&mut r, name_len)?.to_vec()).map_err(|_| bad("parameter name is not UTF-8"))?;
            let tag = take(&mut r, 1)?[0];
            let stage = Stage::from_tag(tag).ok_or_else(|| Error::Checkpoint(format!("{name}: unknown stage tag {tag}")))?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let n = rows.checked_mul(cols).ok_or_else(|| bad("parameter shape overflows"))?;
            let payload = take(&mut r, n.checked_mul(8).ok_or_else(|| bad("parameter shape overflows"))?)?;
            let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            params.push(CheckpointParam { name, stage, value: Matrix::from_vec(rows, cols, data) });
        }
        if !r.is_empty() {
            return Err(bad("trailing bytes after parameters"));
        }
        Ok(Self { meta, params })
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    /// Writes the checkpoint and its `.params.json` listing.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))?;
        let listing: Vec<ParamListing> = self
            .params
            .iter()
            .map(|p| ParamListing { name: &p.name, stage: p.stage.name(), shape: [p.value.rows(), p.value.cols()] })
            .collect();
        let lp = listing_path(path);
        let text = serde_json::to_string_pretty(&listing).expect("listing serializes");
        std::fs::write(&lp, text + "\n").map_err(|e| Error::io(&lp, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Copies every checkpoint parameter whose stage is in `stages` into
    /// `store` by name. Returns how many were copied.
    pub fn apply(&self, store: &mut ParamStore, stages: &[Stage]) -> Result<usize> {
        let mut n = 0;
        for p in self.params.iter().filter(|p| stages.contains(&p.stage)) {
            let id = store
                .id(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("parameter {} is not part of this model", p.name)))?;
            let dst = store.value_mut(id);
            if dst.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {}: checkpoint shape {:?}, model shape {:?}",
                    p.name,
                    p.value.shape(),
                    dst.shape()
                )));
            }
            *dst = p.value.clone();
            n += 1;
        }
        Ok(n)
    }
}

/// Loads externally trained encoder weights. `rename` maps each source
/// parameter name to a model parameter name, or `None` to skip it; shapes
/// must match. Returns the number of parameters loaded.
pub fn import_weights(
    store: &mut ParamStore,
    source: &[(String, Matrix)],
    rename: impl Fn(&str) -> Option<String>,
) -> Result<usize> {
    let mut n = 0;
    for (name, value) in source {
        let Some(target) = rename(name) else { continue };
        let id = store.id(&target).ok_or_else(|| Error::Checkpoint(format!("{name} maps to unknown parameter {target}")))?;
        let dst = store.value_mut(id);
        if dst.shape() != value.shape() {
            return Err(Error::Checkpoint(format!("{name}: shape {:?} does not fit {target} {:?}", value.shape(), dst.shape())));
        }
        *dst = value.clone();
        n += 1;
    }
    Ok(n)
}

pub fn listing_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".params.json");
    PathBuf::from(s)
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let b = take(r, 4)?;
    Ok(u32::from_le_bytes(b.try_into().unwrap()))
}

fn take<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if r.len() < n {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}
