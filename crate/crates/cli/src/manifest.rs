//! Run manifests: the materialized configuration plus a SHA-256 checksum per
//! emitted file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the manifest's directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

/// Body of the top-level `manifest.json` of a pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub config: RunConfig,
    pub files: Vec<FileEntry>,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| fossa::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl Manifest {
    /// Checksums of `files` (relative to `dir`), in the given order.
    pub fn checksums(dir: &Path, files: &[String]) -> CliResult<Vec<FileEntry>> {
        files
            .iter()
            .map(|f| {
                Ok(FileEntry {
                    path: f.clone(),
                    sha256: sha256_file(&dir.join(f))?,
                })
            })
            .collect()
    }

    /// Every regular file below `dir` except `skip`, sorted by path.
    pub fn scan(dir: &Path, skip: &str) -> CliResult<Vec<FileEntry>> {
        let mut files = Vec::new();
        collect(dir, "", &mut files)?;
        files.retain(|f| f != skip);
        files.sort();
        Self::checksums(dir, &files)
    }

    pub fn verify(dir: &Path, files: &[FileEntry]) -> CliResult<()> {
        for f in files {
            let actual = sha256_file(&dir.join(&f.path))?;
            if actual != f.sha256 {
                return Err(CliError::config(format!(
                    "{}: checksum mismatch with {}",
                    dir.join(&f.path).display(),
                    dir.join("manifest.json").display()
                )));
            }
        }
        Ok(())
    }
}

fn collect(dir: &Path, prefix: &str, out: &mut Vec<String>) -> CliResult<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| fossa::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    for entry in entries {
        let entry = entry.map_err(|e| fossa::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let rel = if prefix.is_empty() { name } else { format!("{prefix}/{name}") };
        let path = entry.path();
        if path.is_dir() {
            collect(&path, &rel, out)?;
        } else {
            out.push(rel);
        }
    }
    Ok(())
}
