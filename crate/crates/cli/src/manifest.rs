//! The run manifest: what was run, with which configuration, producing which
//! artifacts. Contains no timestamps so identical runs produce identical
//! manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use codetext::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::commands::Outcome;
use crate::config::RunConfig;

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config_sha256: String,
    seed: u64,
    versions: BTreeMap<String, String>,
    artifacts: BTreeMap<String, Artifact>,
    config: &'a RunConfig,
}

#[derive(Serialize)]
struct Artifact {
    path: String,
    sha256: String,
}

/// Digest of a file, or of a directory's files (relative path and content)
/// in sorted order.
pub fn digest(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        files.sort();
        for rel in files {
            hasher.update(rel.to_string_lossy().as_bytes());
            hasher.update([0]);
            let full = path.join(&rel);
            hasher.update(fs::read(&full).map_err(|e| Error::io(&full, e))?);
        }
    } else {
        hasher.update(fs::read(path).map_err(|e| Error::io(path, e))?);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

/// Writes `run-manifest-<command>.json` into the output directory.
pub fn write(command: &str, cfg: &RunConfig, outcome: &Outcome) -> Result<PathBuf> {
    let mut versions = outcome.versions.clone();
    versions.insert("codetext".into(), env!("CARGO_PKG_VERSION").into());
    let artifacts = outcome
        .artifacts
        .iter()
        .map(|(role, path)| {
            Ok((
                role.clone(),
                Artifact {
                    path: path.display().to_string(),
                    sha256: digest(path)?,
                },
            ))
        })
        .collect::<Result<_>>()?;
    let manifest = RunManifest {
        command,
        config_sha256: cfg.hash(),
        seed: cfg.seed,
        versions,
        artifacts,
        config: cfg,
    };
    let path = cfg.out().join(format!("run-manifest-{command}.json"));
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
