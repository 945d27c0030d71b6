//! Run directories: everything a run produced, content-hashed.
//!
//! Layout of one run directory:
//!
//! ```text
//! config.toml            effective config (overrides applied)
//! scene.toml             scene snapshot
//! iter_<k>/d_actor.jsonl
//! iter_<k>/d_critic.jsonl
//! iter_<k>/trajectories.jsonl
//! metrics.jsonl          one line per iteration, iteration 0 first
//! report.txt             the same metrics as tables
//! manifest.json          sha256 of every file above
//! ```
//!
//! Nothing time-dependent is written, so two runs of one config hash equal.
//! Existing directories are never touched: a second run gets a `-2` suffix.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::runner::{Experiment, MetricsReport, RunArtifacts};
use crate::schema::{self, SCHEMA_VERSION};
use crate::{report, runner};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const SCENE_FILE: &str = "scene.toml";
pub const REPORT_FILE: &str = "report.txt";

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    Missing(String),
    #[error("{path}: hash mismatch (manifest {expected}, file {actual})")]
    HashMismatch { path: String, expected: String, actual: String },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ManifestError + '_ {
    move |source| ManifestError::Io { path: path.display().to_string(), source }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema_version: u32,
    pub variant: runner::Variant,
    pub seed: u64,
    pub iterations: u32,
    /// Relative path -> sha256, sorted.
    pub files: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Self, ManifestError> {
        let path = run_dir.join(MANIFEST_FILE);
        if !path.is_file() {
            return Err(ManifestError::Missing(format!("no {MANIFEST_FILE} in {}", run_dir.display())));
        }
        let text = fs::read_to_string(&path).map_err(io(&path))?;
        serde_json::from_str(&text)
            .map_err(|e| ManifestError::Parse { path: path.display().to_string(), message: e.to_string() })
    }

    /// Re-hashes every listed file.
    pub fn verify(&self, run_dir: &Path) -> Result<(), ManifestError> {
        for (rel, expected) in &self.files {
            let path = run_dir.join(rel);
            let bytes = fs::read(&path).map_err(io(&path))?;
            let actual = sha256_hex(&bytes);
            if &actual != expected {
                return Err(ManifestError::HashMismatch { path: rel.clone(), expected: expected.clone(), actual });
            }
        }
        Ok(())
    }

    /// Hash of the manifest document itself; equal for equal runs.
    pub fn digest(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serialises");
        s.push('\n');
        s
    }

    /// Iterations that have dataset files, ascending.
    pub fn dataset_iterations(&self) -> Vec<u32> {
        let mut its: Vec<u32> = self
            .files
            .keys()
            .filter_map(|k| k.strip_prefix("iter_")?.strip_suffix("/d_actor.jsonl")?.parse().ok())
            .collect();
        its.sort_unstable();
        its
    }
}

pub fn iter_dir(k: u32) -> String {
    format!("iter_{k}")
}

/// First free directory among `base`, `base-2`, `base-3`, ...
pub fn fresh_dir(parent: &Path, base: &str) -> PathBuf {
    let first = parent.join(base);
    if !first.exists() {
        return first;
    }
    (2..)
        .map(|n| parent.join(format!("{base}-{n}")))
        .find(|p| !p.exists())
        .expect("unbounded suffixes")
}

pub fn run_dir_name(exp: &Experiment) -> String {
    format!("{}-seed{}", exp.config.variant, exp.config.seed)
}

/// Writes a new run directory under `out_dir` and returns its path.
pub fn write_run(out_dir: &Path, exp: &Experiment, run: &RunArtifacts) -> Result<(PathBuf, RunManifest), ManifestError> {
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let dir = fresh_dir(out_dir, &run_dir_name(exp));
    fs::create_dir(&dir).map_err(io(&dir))?;

    let mut files = BTreeMap::new();
    let mut put = |rel: String, contents: &str| -> Result<(), ManifestError> {
        let path = dir.join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io(parent))?;
        }
        fs::write(&path, contents).map_err(io(&path))?;
        files.insert(rel, sha256_hex(contents.as_bytes()));
        Ok(())
    };

    put(CONFIG_FILE.into(), &exp.config.to_toml())?;
    put(SCENE_FILE.into(), &exp.scene.to_toml())?;
    for it in &run.iterations {
        let d = iter_dir(it.iteration);
        put(format!("{d}/d_actor.jsonl"), &schema::actor_jsonl(&it.d_actor))?;
        put(format!("{d}/d_critic.jsonl"), &schema::critic_jsonl(&it.d_critic))?;
        put(format!("{d}/trajectories.jsonl"), &schema::trajectory_jsonl(&it.trajectories))?;
    }
    put(METRICS_FILE.into(), &run.report.to_jsonl())?;
    put(REPORT_FILE.into(), &report::render_table(&run.report))?;

    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        variant: exp.config.variant,
        seed: exp.config.seed,
        iterations: run.iterations.len() as u32,
        files,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json()).map_err(io(&path))?;
    tracing::info!(dir = %dir.display(), digest = %manifest.digest(), "run manifest written");
    Ok((dir, manifest))
}

/// Reads `metrics.jsonl` from a run directory.
pub fn read_metrics(run_dir: &Path) -> Result<MetricsReport, ManifestError> {
    let path = run_dir.join(METRICS_FILE);
    if !path.is_file() {
        return Err(ManifestError::Missing(format!("no metrics in {}", run_dir.display())));
    }
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    if text.trim().is_empty() {
        return Err(ManifestError::Missing(format!("no metrics in {}", run_dir.display())));
    }
    MetricsReport::from_jsonl(&text).map_err(|message| ManifestError::Parse { path: path.display().to_string(), message })
}

/// Reads a file listed in the manifest, checking its hash.
pub fn read_listed(run_dir: &Path, manifest: &RunManifest, rel: &str) -> Result<String, ManifestError> {
    let expected = manifest
        .files
        .get(rel)
        .ok_or_else(|| ManifestError::Missing(format!("{rel} is not part of the run in {}", run_dir.display())))?;
    let path = run_dir.join(rel);
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    let actual = sha256_hex(text.as_bytes());
    if &actual != expected {
        return Err(ManifestError::HashMismatch { path: rel.into(), expected: expected.clone(), actual });
    }
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_dir_appends_suffixes() {
        let tmp = tempfile::tempdir().unwrap();
        assert_eq!(fresh_dir(tmp.path(), "run"), tmp.path().join("run"));
        fs::create_dir(tmp.path().join("run")).unwrap();
        assert_eq!(fresh_dir(tmp.path(), "run"), tmp.path().join("run-2"));
        fs::create_dir(tmp.path().join("run-2")).unwrap();
        assert_eq!(fresh_dir(tmp.path(), "run"), tmp.path().join("run-3"));
    }

    #[test]
    fn dataset_iterations_from_file_list() {
        let mut files = BTreeMap::new();
        for k in ["iter_2/d_actor.jsonl", "iter_1/d_actor.jsonl", "iter_1/d_critic.jsonl", "metrics.jsonl"] {
            files.insert(k.to_string(), String::new());
        }
        let m = RunManifest { schema_version: 1, variant: runner::Variant::Selu, seed: 0, iterations: 2, files };
        assert_eq!(m.dataset_iterations(), vec![1, 2]);
    }

    #[test]
    fn missing_manifest_is_reported() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(RunManifest::load(tmp.path()), Err(ManifestError::Missing(_))));
        assert!(matches!(read_metrics(tmp.path()), Err(ManifestError::Missing(_))));
    }
}
