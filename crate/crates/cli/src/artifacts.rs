//! Artifact staging, atomic writes and run manifests.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{sha256_hex, value_hash};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Manifest {
    pub stage: String,
    pub tool_version: String,
    pub inputs: Vec<FileDigest>,
    pub parameters: Value,
    pub parameter_hash: String,
    pub artifacts: Vec<FileDigest>,
}

impl Manifest {
    pub fn file_name(stage: &str) -> String {
        format!("manifest_{stage}.json")
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so readers see either the old file or the complete new one.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// Artifacts of one stage, held in memory until the stage has succeeded.
#[derive(Debug)]
pub struct StageOutput {
    stage: String,
    inputs: Vec<FileDigest>,
    files: Vec<(String, Vec<u8>)>,
}

impl StageOutput {
    pub fn new(stage: &str) -> Self {
        Self { stage: stage.to_string(), inputs: Vec::new(), files: Vec::new() }
    }

    /// Records an input file under the name shown in the manifest.
    pub fn input(&mut self, shown: &str, bytes: &[u8]) {
        self.inputs.push(FileDigest { path: shown.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
    }

    pub fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut text = serde_json::to_string_pretty(value).expect("serializable artifact");
        text.push('\n');
        self.add(name, text);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    /// Writes every artifact, then the manifest last.
    pub fn commit(self, out_dir: &Path, parameters: Value) -> Result<Manifest> {
        std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
        let mut artifacts = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            write_atomic(&out_dir.join(name), bytes)?;
            artifacts.push(FileDigest { path: name.clone(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        }
        let manifest = Manifest {
            parameter_hash: value_hash(&parameters),
            stage: self.stage,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: self.inputs,
            parameters,
            artifacts,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("serializable manifest");
        text.push('\n');
        write_atomic(&out_dir.join(Manifest::file_name(&manifest.stage)), text.as_bytes())?;
        Ok(manifest)
    }
}

/// Reads a file, reporting absence as a missing artifact of `stage`.
pub fn read_artifact(path: &Path, stage: &str) -> Result<Vec<u8>> {
    match std::fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(CliError::MissingArtifact { path: PathBuf::from(path), hint: format!("run `{stage}` first") })
        }
        Err(e) => Err(CliError::io(path, e)),
    }
}
