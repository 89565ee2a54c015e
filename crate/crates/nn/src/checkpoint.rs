//! Model checkpoints: a JSON manifest next to a binary parameter payload.
//!
//! Payload layout, little-endian:
//! "GPP1" | u8 dtype | u32 count | count × (u32 name_len | name | u8 kind |
//! 5 × u32 shape | values)

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{Gae, GaeConfig, Segmentor, SegmentorConfig};
use crate::params::{Kind, ParamStore};
use crate::real::Real;

pub const MAGIC: &[u8; 4] = b"GPP1";
pub const MANIFEST_FILE: &str = "model.json";
pub const PARAMS_FILE: &str = "params.gpp";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    /// `"segmentor"` or `"gae"`.
    pub model: String,
    pub dtype: u8,
    pub config: serde_json::Value,
    pub seed: u64,
    /// Optimizer steps behind these parameters.
    pub step: u64,
    pub num_params: usize,
    pub params_file: String,
    pub params_sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode_params<T: Real>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(T::DTYPE);
    out.extend_from_slice(&(store.entries().len() as u32).to_le_bytes());
    for e in store.entries() {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(match e.kind {
            Kind::Param => 0,
            Kind::Buffer => 1,
        });
        for d in e.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in e.value.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated parameter payload".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

/// Overwrite the values of `store` from a payload with the same layout.
pub fn decode_params_into<T: Real>(store: &mut ParamStore<T>, bytes: &[u8]) -> Result<()> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a parameter payload".into()));
    }
    let dtype = r.take(1)?[0];
    if dtype != T::DTYPE {
        return Err(Error::Format(format!("payload dtype {dtype}, model dtype {}", T::DTYPE)));
    }
    let count = r.u32()?;
    if count != store.entries().len() {
        return Err(Error::Format(format!("{count} tensors in payload, model has {}", store.entries().len())));
    }
    for e in store.entries_mut() {
        let n = r.u32()?;
        let name = r.take(n)?;
        if name != e.name.as_bytes() {
            return Err(Error::Format(format!("expected {}, found {}", e.name, String::from_utf8_lossy(name))));
        }
        let kind = r.take(1)?[0];
        let expected = if e.kind == Kind::Param { 0 } else { 1 };
        let mut shape = [0usize; 5];
        for d in &mut shape {
            *d = r.u32()?;
        }
        if kind != expected || shape != e.value.shape() {
            return Err(Error::Format(format!("{}: kind {kind} shape {shape:?} does not match the model", e.name)));
        }
        let raw = r.take(e.value.len() * T::BYTES)?;
        for (v, c) in e.value.data_mut().iter_mut().zip(raw.chunks_exact(T::BYTES)) {
            *v = T::read_le(c);
        }
    }
    if r.at != bytes.len() {
        return Err(Error::Format("trailing bytes after parameters".into()));
    }
    Ok(())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::io(path, source)
}

fn save<T: Real>(dir: &Path, model: &str, config: serde_json::Value, seed: u64, store: &ParamStore<T>) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let payload = encode_params(store);
    let params = dir.join(PARAMS_FILE);
    fs::write(&params, &payload).map_err(io_err(&params))?;
    let manifest = CheckpointManifest {
        model: model.to_string(),
        dtype: T::DTYPE,
        config,
        seed,
        step: store.step,
        num_params: store.num_params(),
        params_file: PARAMS_FILE.to_string(),
        params_sha256: sha256_hex(&payload),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|source| Error::json(&path, source))
}

fn load<T: Real, C: DeserializeOwned>(dir: &Path, model: &str) -> Result<(CheckpointManifest, C, Vec<u8>)> {
    let m = read_manifest(dir)?;
    if m.model != model {
        return Err(Error::Format(format!("{} holds a {}, not a {model}", dir.display(), m.model)));
    }
    let cfg = serde_json::from_value(m.config.clone()).map_err(|source| Error::json(dir.join(MANIFEST_FILE), source))?;
    let path = dir.join(&m.params_file);
    let payload = fs::read(&path).map_err(io_err(&path))?;
    if sha256_hex(&payload) != m.params_sha256 {
        return Err(Error::Format(format!("{} does not match its manifest hash", path.display())));
    }
    Ok((m, cfg, payload))
}

impl<T: Real> Segmentor<T> {
    pub fn save(&self, dir: &Path) -> Result<CheckpointManifest> {
        save(dir, "segmentor", serde_json::to_value(self.cfg).expect("config serializes"), self.seed, &self.store)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (m, cfg, payload) = load::<T, SegmentorConfig>(dir, "segmentor")?;
        let mut model = Segmentor::new(cfg, m.seed)?;
        decode_params_into(&mut model.store, &payload)?;
        model.store.step = m.step;
        Ok(model)
    }
}

impl<T: Real> Gae<T> {
    pub fn save(&self, dir: &Path) -> Result<CheckpointManifest> {
        save(dir, "gae", serde_json::to_value(self.cfg).expect("config serializes"), self.seed, &self.store)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (m, cfg, payload) = load::<T, GaeConfig>(dir, "gae")?;
        let mut model = Gae::new(cfg, m.seed)?;
        decode_params_into(&mut model.store, &payload)?;
        model.store.step = m.step;
        Ok(model)
    }
}
