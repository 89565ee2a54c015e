//! GPV1 binary volume files.
//!
//! ```text
//! "GPV1" | u32 nx | u32 ny | u32 nz | u32 nchannels | f32 sx | f32 sy | f32 sz | u8 dtype | payload
//! ```
//!
//! All fields are little-endian. The payload is laid out x-fastest, then y, z
//! and channel. dtype 0 is `f32`, dtype 1 is `u8`. Channel role names of a
//! [`MultiChannelMap`] live in a UTF-8 JSON sidecar `<file>.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Dims, Grid, LabelMap, Mask, MultiChannelMap, Spacing, Volume};

pub const MAGIC: &[u8; 4] = b"GPV1";
const HEADER_LEN: usize = 4 + 4 * 4 + 3 * 4 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Dtype {
    F32 = 0,
    U8 = 1,
}

impl Dtype {
    pub fn from_code(code: u8) -> Result<Dtype> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::U8),
            other => Err(Error::UnsupportedDtype(other)),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

/// A decoded GPV1 file before it is interpreted as a concrete container.
#[derive(Debug, Clone, PartialEq)]
pub struct RawVolume {
    pub dims: Dims,
    pub nchannels: usize,
    pub spacing: Spacing,
    pub payload: Payload,
}

impl RawVolume {
    pub fn encode(&self) -> Vec<u8> {
        let n = self.dims.len() * self.nchannels;
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * n);
        out.extend_from_slice(MAGIC);
        for v in [self.dims.nx, self.dims.ny, self.dims.nz, self.nchannels] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for s in self.spacing.as_array() {
            out.extend_from_slice(&(s as f32).to_le_bytes());
        }
        match &self.payload {
            Payload::F32(v) => {
                out.push(Dtype::F32 as u8);
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            Payload::U8(v) => {
                out.push(Dtype::U8 as u8);
                out.extend_from_slice(v);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<RawVolume> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
        }
        let u = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let f = |i: usize| f32::from_le_bytes(bytes[20 + 4 * i..24 + 4 * i].try_into().unwrap()) as f64;
        let dims = Dims::new(u(0), u(1), u(2));
        let nchannels = u(3);
        let spacing = Spacing::new(f(0), f(1), f(2)).map_err(|e| Error::Format(e.to_string()))?;
        let dtype = Dtype::from_code(bytes[HEADER_LEN - 1])?;
        let body = &bytes[HEADER_LEN..];
        let n = dims.len() * nchannels;
        if body.len() != n * dtype.width() {
            return Err(Error::DimsMismatch(format!(
                "payload of {} bytes does not match {}x{}x{}x{} {:?}",
                body.len(),
                dims.nx,
                dims.ny,
                dims.nz,
                nchannels,
                dtype
            )));
        }
        let payload = match dtype {
            Dtype::F32 => Payload::F32(
                body.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            Dtype::U8 => Payload::U8(body.to_vec()),
        };
        Ok(RawVolume {
            dims,
            nchannels,
            spacing,
            payload,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<RawVolume> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        RawVolume::decode(&bytes)
    }
}

/// Containers that persist as GPV1.
pub trait Gpv1: Sized {
    fn to_raw(&self) -> RawVolume;
    fn from_raw(raw: RawVolume, path: &Path) -> Result<Self>;

    fn save(&self, path: &Path) -> Result<()> {
        self.to_raw().write(path)
    }

    fn load(path: &Path) -> Result<Self> {
        Self::from_raw(RawVolume::read(path)?, path)
    }
}

/// Writes any GPV1 container.
pub fn save_volume<V: Gpv1>(v: &V, path: impl AsRef<Path>) -> Result<()> {
    v.save(path.as_ref())
}

/// Reads any GPV1 container.
pub fn load_volume<V: Gpv1>(path: impl AsRef<Path>) -> Result<V> {
    V::load(path.as_ref())
}

fn expect_single(raw: &RawVolume) -> Result<()> {
    if raw.nchannels != 1 {
        return Err(Error::Format(format!("expected 1 channel, found {}", raw.nchannels)));
    }
    Ok(())
}

impl Gpv1 for Volume {
    fn to_raw(&self) -> RawVolume {
        RawVolume {
            dims: self.dims(),
            nchannels: 1,
            spacing: self.spacing(),
            payload: Payload::F32(self.data().to_vec()),
        }
    }

    fn from_raw(raw: RawVolume, _path: &Path) -> Result<Self> {
        expect_single(&raw)?;
        match raw.payload {
            Payload::F32(v) => Volume::finite(raw.dims, raw.spacing, v),
            Payload::U8(_) => Err(Error::Format("expected an f32 payload".into())),
        }
    }
}

impl Gpv1 for LabelMap {
    fn to_raw(&self) -> RawVolume {
        RawVolume {
            dims: self.dims(),
            nchannels: 1,
            spacing: self.spacing(),
            payload: Payload::U8(self.data().to_vec()),
        }
    }

    fn from_raw(raw: RawVolume, _path: &Path) -> Result<Self> {
        expect_single(&raw)?;
        match raw.payload {
            Payload::U8(v) => LabelMap::new(Grid::from_vec(raw.dims, raw.spacing, v)?),
            Payload::F32(_) => Err(Error::Format("expected a u8 payload".into())),
        }
    }
}

impl Gpv1 for Mask {
    fn to_raw(&self) -> RawVolume {
        RawVolume {
            dims: self.dims(),
            nchannels: 1,
            spacing: self.spacing(),
            payload: Payload::U8(self.data().iter().map(|&b| b as u8).collect()),
        }
    }

    fn from_raw(raw: RawVolume, _path: &Path) -> Result<Self> {
        expect_single(&raw)?;
        match raw.payload {
            Payload::U8(v) => {
                if let Some(i) = v.iter().position(|&b| b > 1) {
                    return Err(Error::Format(format!("mask value {} at {i}", v[i])));
                }
                Grid::from_vec(raw.dims, raw.spacing, v.into_iter().map(|b| b == 1).collect())
            }
            Payload::F32(_) => Err(Error::Format("expected a u8 payload".into())),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    roles: Vec<String>,
}

/// Path of the JSON sidecar carrying channel roles.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl Gpv1 for MultiChannelMap {
    fn to_raw(&self) -> RawVolume {
        RawVolume {
            dims: self.dims(),
            nchannels: self.len(),
            spacing: self.spacing(),
            payload: Payload::F32(self.flat()),
        }
    }

    fn from_raw(raw: RawVolume, path: &Path) -> Result<Self> {
        let Payload::F32(v) = raw.payload else {
            return Err(Error::Format("expected an f32 payload".into()));
        };
        let n = raw.dims.len();
        let channels = v
            .chunks_exact(n.max(1))
            .take(raw.nchannels)
            .map(|c| Volume::finite(raw.dims, raw.spacing, c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let side = sidecar_path(path);
        let roles = if side.exists() {
            let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            let s: Sidecar = serde_json::from_str(&text).map_err(|e| Error::json(&side, e))?;
            s.roles
        } else {
            (0..raw.nchannels).map(|i| format!("c{i}")).collect()
        };
        MultiChannelMap::new(channels, roles)
    }

    fn save(&self, path: &Path) -> Result<()> {
        self.to_raw().write(path)?;
        let side = sidecar_path(path);
        let text = serde_json::to_string_pretty(&Sidecar {
            roles: self.roles().to_vec(),
        })
        .map_err(|e| Error::json(&side, e))?;
        fs::write(&side, text).map_err(|e| Error::io(&side, e))
    }
}
