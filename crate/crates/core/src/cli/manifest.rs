//! Run manifests: one machine-readable record per command invocation.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geodata::io::{sha256_hex, write_json};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Succeeded,
    Failed,
}

/// A file or directory with its content checksum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

impl Artifact {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            sha256: artifact_sha256(path)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunError {
    pub code: i32,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub toolkit_version: String,
    pub argv: Vec<String>,
    /// Effective configuration after flag > file > default resolution.
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    /// Command-specific results (training logs, headline metrics).
    pub summary: serde_json::Value,
    pub started_unix_s: u64,
    pub duration_s: f64,
    pub status: RunStatus,
    pub error: Option<RunError>,
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>) -> Self {
        Self {
            command: command.into(),
            toolkit_version: env!("CARGO_PKG_VERSION").into(),
            argv,
            config: serde_json::Value::Null,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            summary: serde_json::Value::Null,
            started_unix_s: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            duration_s: 0.0,
            status: RunStatus::Running,
            error: None,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(Artifact::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(Artifact::of(path)?);
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        crate::geodata::io::read_json(path)
    }
}

/// Where the manifest of a run writing to `out` lives: inside an output
/// directory, or next to an output file.
pub fn manifest_path(out: &Path, out_is_dir: bool) -> PathBuf {
    if out_is_dir {
        out.join(MANIFEST_FILE)
    } else {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        out.with_file_name(name)
    }
}

/// Runs `body`, then writes the manifest whatever the outcome. On failure
/// the manifest keeps every output recorded so far.
pub fn with_manifest<F>(mut manifest: RunManifest, path: &Path, body: F) -> Result<RunManifest>
where
    F: FnOnce(&mut RunManifest) -> Result<()>,
{
    let t0 = Instant::now();
    let outcome = body(&mut manifest);
    manifest.duration_s = t0.elapsed().as_secs_f64();
    match &outcome {
        Ok(()) => manifest.status = RunStatus::Succeeded,
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.error = Some(RunError {
                code: e.code(),
                message: e.to_string(),
            });
        }
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_json(path, &manifest)?;
    outcome.map(|()| manifest)
}

/// Content checksum of a file, or of a directory tree (sorted relative
/// paths and file contents; a top-level manifest is excluded).
pub fn artifact_sha256(path: &Path) -> Result<String> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_file() {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        return Ok(sha256_hex(&bytes));
    }
    let mut files = Vec::new();
    collect_files(path, path, &mut files)?;
    files.retain(|rel| rel != Path::new(MANIFEST_FILE));
    files.sort();
    let mut hasher = Sha256::new();
    for rel in files {
        let bytes = fs::read(path.join(&rel)).map_err(|e| Error::io(path.join(&rel), e))?;
        // forward slashes keep the digest platform-independent
        let name = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
        hasher.update(sha256_hex(&bytes).as_bytes());
        hasher.update([b'\n']);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("walk stays under root").to_path_buf());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_sits_inside_directories_and_beside_files() {
        assert_eq!(
            manifest_path(Path::new("runs/a"), true),
            PathBuf::from("runs/a/manifest.json")
        );
        assert_eq!(
            manifest_path(Path::new("runs/rem.ckpt"), false),
            PathBuf::from("runs/rem.ckpt.manifest.json")
        );
    }

    #[test]
    fn tree_checksum_ignores_the_manifest_and_order() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        fs::create_dir_all(a.path().join("x")).unwrap();
        fs::create_dir_all(b.path().join("x")).unwrap();
        fs::write(a.path().join("x/1"), b"one").unwrap();
        fs::write(a.path().join("2"), b"two").unwrap();
        fs::write(b.path().join("2"), b"two").unwrap();
        fs::write(b.path().join("x/1"), b"one").unwrap();
        fs::write(b.path().join(MANIFEST_FILE), b"{}").unwrap();
        assert_eq!(artifact_sha256(a.path()).unwrap(), artifact_sha256(b.path()).unwrap());
        fs::write(b.path().join("x/1"), b"uno").unwrap();
        assert_ne!(artifact_sha256(a.path()).unwrap(), artifact_sha256(b.path()).unwrap());
    }

    #[test]
    fn failed_runs_keep_a_partial_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let path = manifest_path(&out, true);
        let err = with_manifest(RunManifest::new("demo", vec![]), &path, |m| {
            fs::create_dir_all(&out).unwrap();
            fs::write(out.join("first"), b"done").unwrap();
            m.output(&out.join("first"))?;
            Err(Error::EmptyDataset("nothing left".into()))
        })
        .unwrap_err();
        assert_eq!(err.code(), 10);
        let m = RunManifest::read(&path).unwrap();
        assert_eq!(m.status, RunStatus::Failed);
        assert_eq!(m.outputs.len(), 1);
        assert_eq!(m.error.unwrap().code, 10);
    }
}
