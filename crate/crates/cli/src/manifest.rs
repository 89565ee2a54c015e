//! Stage manifests: what a stage was run with and a content hash of what it
//! wrote, so downstream stages can detect missing or stale inputs.

use std::fs;
use std::path::{Path, PathBuf};

use geoprior_core::synth::{dataset_hash, hash_files, DatasetManifest, DATASET_MANIFEST};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const VERSION: u32 = 1;

/// An upstream artifact as seen when the stage ran.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Input {
    pub stage: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub version: u32,
    pub stage: String,
    pub seed: Option<u64>,
    pub config: Value,
    pub inputs: Vec<Input>,
    /// Output files relative to the stage directory, hashed in this order.
    pub files: Vec<String>,
    pub sha256: String,
}

impl StageManifest {
    pub fn new(stage: &str, seed: Option<u64>, config: Value, inputs: Vec<Input>) -> Self {
        StageManifest {
            version: VERSION,
            stage: stage.to_string(),
            seed,
            config,
            inputs,
            files: Vec::new(),
            sha256: String::new(),
        }
    }

    pub fn input(&self, stage: &str) -> Option<&Input> {
        self.inputs.iter().find(|i| i.stage == stage)
    }

    fn content_hash(&self, dir: &Path) -> Result<String> {
        let files: Vec<PathBuf> = self.files.iter().map(PathBuf::from).collect();
        Ok(hash_files(dir, &files)?)
    }

    /// Hash the listed files and write the manifest last, so a directory
    /// with a manifest is always complete.
    pub fn write(mut self, dir: &Path, files: Vec<String>) -> Result<Self> {
        self.files = files;
        self.sha256 = self.content_hash(dir)?;
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&self).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(self)
    }

    /// True if `dir` already holds an intact run of this stage with the same
    /// seed, config and inputs.
    pub fn is_cached(&self, dir: &Path) -> bool {
        match read(dir) {
            Ok(Some(old)) => {
                old.stage == self.stage
                    && old.seed == self.seed
                    && old.config == self.config
                    && old.inputs == self.inputs
                    && old.content_hash(dir).is_ok_and(|h| h == old.sha256)
            }
            _ => false,
        }
    }

    pub fn as_input(&self, dir: &Path) -> Input {
        Input {
            stage: self.stage.clone(),
            path: dir.to_string_lossy().into_owned(),
            sha256: self.sha256.clone(),
        }
    }
}

fn read(dir: &Path) -> Result<Option<StageManifest>> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(Some(serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?))
}

/// Load the manifest of an upstream `stage` and check its outputs still
/// hash to what it recorded.
pub fn load_stage(dir: &Path, stage: &'static str) -> Result<StageManifest> {
    let m = read(dir)?.ok_or_else(|| Error::MissingStage {
        stage,
        detail: format!("no {MANIFEST} in {} (run `geoprior {stage}` first)", dir.display()),
    })?;
    if m.stage != stage {
        return Err(Error::MissingStage {
            stage,
            detail: format!("{} holds the output of `{}`, not `{stage}`", dir.display(), m.stage),
        });
    }
    if m.version != VERSION {
        return Err(Error::Config(format!("{} has manifest version {}", dir.display(), m.version)));
    }
    let now = m.content_hash(dir).map_err(|_| Error::Stale(format!("files listed in {} are missing", dir.join(MANIFEST).display())))?;
    if now != m.sha256 {
        return Err(Error::Stale(format!("{} changed after `{stage}` wrote it", dir.display())));
    }
    Ok(m)
}

/// The dataset manifest and its content hash as an input record.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Input)> {
    if !dir.join(DATASET_MANIFEST).is_file() {
        return Err(Error::MissingStage {
            stage: "synth",
            detail: format!("no dataset in {} (run `geoprior synth` first)", dir.display()),
        });
    }
    let m = DatasetManifest::load(dir)?;
    let sha256 = dataset_hash(dir, &m).map_err(|_| Error::Stale(format!("dataset files in {} are missing", dir.display())))?;
    let input = Input {
        stage: "synth".into(),
        path: dir.to_string_lossy().into_owned(),
        sha256,
    };
    Ok((m, input))
}

/// Fail unless `recorded` (what an upstream stage saw) matches `current`.
pub fn require_same(recorded: Option<&Input>, current: &Input, consumer: &str) -> Result<()> {
    match recorded {
        Some(r) if r.sha256 == current.sha256 => Ok(()),
        Some(r) => Err(Error::Stale(format!(
            "{consumer} was built from `{}` output {} with hash {}, which now hashes to {}; rerun the downstream stages",
            r.stage,
            r.path,
            short(&r.sha256),
            short(&current.sha256)
        ))),
        None => Err(Error::Config(format!("{consumer} does not record a `{}` input", current.stage))),
    }
}

fn short(h: &str) -> &str {
    &h[..h.len().min(12)]
}
