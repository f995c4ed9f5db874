use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::seeds::digest_hex;

pub const MANIFEST_FILE: &str = "manifest.json";

/// A file written by a stage, relative to the run directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Digest of the config hash and the stage's input artifacts.
    pub key: String,
    pub seeds: BTreeMap<String, u64>,
    pub artifacts: BTreeMap<String, ArtifactRef>,
    pub completed_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub created_unix: u64,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(config_hash: String, seed: u64) -> Self {
        RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            seed,
            created_unix: now_unix(),
            stages: BTreeMap::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = fs::read(&path)
            .map_err(|e| PipelineError::ManifestCorrupt(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| PipelineError::ManifestCorrupt(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }

    pub fn stage(&self, name: &str) -> Result<&StageRecord, PipelineError> {
        self.stages
            .get(name)
            .ok_or_else(|| PipelineError::MissingStage(name.to_string()))
    }

    /// Path of a stage artifact after checking it exists and still matches
    /// its recorded digest.
    pub fn artifact(
        &self,
        dir: &Path,
        stage: &str,
        name: &str,
    ) -> Result<(PathBuf, Vec<u8>), PipelineError> {
        let rec = self.stage(stage)?;
        let a = rec.artifacts.get(name).ok_or_else(|| {
            PipelineError::ManifestCorrupt(format!("stage {stage} lists no artifact {name}"))
        })?;
        let path = dir.join(&a.path);
        let bytes = fs::read(&path)
            .map_err(|e| PipelineError::ManifestCorrupt(format!("{}: {e}", a.path)))?;
        if digest_hex(&bytes) != a.sha256 {
            return Err(PipelineError::ManifestCorrupt(format!(
                "{}: digest mismatch",
                a.path
            )));
        }
        Ok((path, bytes))
    }

    pub fn read_artifact<T: DeserializeOwned>(
        &self,
        dir: &Path,
        stage: &str,
        name: &str,
    ) -> Result<T, PipelineError> {
        let (_, bytes) = self.artifact(dir, stage, name)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| PipelineError::ManifestCorrupt(format!("{stage}/{name}: {e}")))
    }

    /// True when every artifact of the stage is present and intact.
    pub fn stage_intact(&self, dir: &Path, stage: &str) -> bool {
        match self.stages.get(stage) {
            Some(rec) => rec
                .artifacts
                .keys()
                .all(|n| self.artifact(dir, stage, n).is_ok()),
            None => false,
        }
    }
}

/// Writes to a temporary sibling file, then renames over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let io = |e| PipelineError::Io {
        path: path.display().to_string(),
        source: e,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("artifact");
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("artifact serializes");
    v.push(b'\n');
    v
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    write_atomic(path, &to_json_bytes(value))
}

/// Collects a stage's outputs while they are written.
#[derive(Debug)]
pub struct StageWriter<'a> {
    dir: &'a Path,
    pub artifacts: BTreeMap<String, ArtifactRef>,
    pub seeds: BTreeMap<String, u64>,
}

impl<'a> StageWriter<'a> {
    pub fn new(dir: &'a Path) -> Self {
        StageWriter {
            dir,
            artifacts: BTreeMap::new(),
            seeds: BTreeMap::new(),
        }
    }

    pub fn write_bytes(
        &mut self,
        name: &str,
        rel: &str,
        bytes: &[u8],
    ) -> Result<(), PipelineError> {
        write_atomic(&self.dir.join(rel), bytes)?;
        self.artifacts.insert(
            name.to_string(),
            ArtifactRef {
                path: rel.to_string(),
                sha256: digest_hex(bytes),
            },
        );
        Ok(())
    }

    pub fn write_json<T: Serialize>(
        &mut self,
        name: &str,
        rel: &str,
        value: &T,
    ) -> Result<(), PipelineError> {
        self.write_bytes(name, rel, &to_json_bytes(value))
    }

    pub fn finish(self, key: String) -> StageRecord {
        StageRecord {
            key,
            seeds: self.seeds,
            artifacts: self.artifacts,
            completed_unix: now_unix(),
        }
    }
}
