//! Run-directory plumbing: layout, manifest, locking, and artifact I/O.
//!
//! A run directory is named by the run id — a content hash over everything
//! that determines pipeline outputs — so re-running an unchanged
//! configuration lands in the same directory and any semantic change opens
//! a fresh one. Stage artifacts live in fixed subdirectories:
//!
//! ```text
//! <run_root>/<run_id>/
//!   manifest.json      identity, fingerprints, stage timings
//!   transcripts/       full generation dialogues, one file per story
//!   generated/         parsed criteria as generated
//!   polished/          criteria after the reward loop
//!   reports/           evaluation outputs; no timestamps, byte-stable
//! ```
//!
//! All JSON is written atomically (temp file + rename) and serialized from
//! ordered maps, so identical content always produces identical bytes.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use acgen_core::generation::Ablation;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, CliError};

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

/// Derives the run id from the canonical identity value.
pub fn run_id_for(identity: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(identity).expect("identity value serializes");
    sha256_hex(canonical.as_bytes())[..16].to_owned()
}

/// Maps an arbitrary document id to a safe, collision-free file stem:
/// alphanumerics, `-`, `_` and `.` pass through, everything else becomes
/// `%XX`.
pub fn file_stem_for(id: &str) -> String {
    let mut out = String::with_capacity(id.len());
    for byte in id.bytes() {
        match byte {
            b'a'..=b'z' | b'A'..=b'Z' | b'0'..=b'9' | b'-' | b'_' | b'.' => {
                out.push(byte as char);
            }
            other => out.push_str(&format!("%{other:02X}")),
        }
    }
    out
}

/// The fixed layout of one run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    root: PathBuf,
}

impl RunPaths {
    pub fn new(run_root: &Path, run_id: &str) -> Self {
        RunPaths { root: run_root.join(run_id) }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn lock(&self) -> PathBuf {
        self.root.join(".lock")
    }

    pub fn transcripts(&self) -> PathBuf {
        self.root.join("transcripts")
    }

    pub fn generated(&self) -> PathBuf {
        self.root.join("generated")
    }

    pub fn polished(&self) -> PathBuf {
        self.root.join("polished")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn transcript_file(&self, story_id: &str) -> PathBuf {
        self.transcripts().join(format!("{}.json", file_stem_for(story_id)))
    }

    pub fn generated_file(&self, story_id: &str) -> PathBuf {
        self.generated().join(format!("{}.json", file_stem_for(story_id)))
    }

    pub fn polished_file(&self, story_id: &str) -> PathBuf {
        self.polished().join(format!("{}.json", file_stem_for(story_id)))
    }

    pub fn retrieval_report(&self) -> PathBuf {
        self.reports().join("retrieval.json")
    }

    pub fn acs_report(&self) -> PathBuf {
        self.reports().join("acs.json")
    }

    pub fn consolidated_report(&self) -> PathBuf {
        self.reports().join("report.json")
    }

    pub fn text_report(&self) -> PathBuf {
        self.reports().join("report.txt")
    }

    /// Creates the run directory tree.
    pub fn ensure_layout(&self) -> Result<(), CliError> {
        for dir in
            [&self.root, &self.transcripts(), &self.generated(), &self.polished(), &self.reports()]
        {
            std::fs::create_dir_all(dir).map_err(io_err(dir.clone()))?;
        }
        Ok(())
    }
}

/// Exclusive hold on a run directory for the duration of one command.
///
/// Creation fails if the lock file already exists; the file is removed on
/// drop. A file left behind by a killed process must be deleted by hand —
/// the error message names it.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(paths: &RunPaths) -> Result<Self, CliError> {
        let path = paths.lock();
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CliError::Locked { path })
            }
            Err(source) => Err(CliError::Io { path, source }),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// The run's identity and audit record.
///
/// Everything here except `stage_wall_ms` is fully determined by the
/// configuration, the dataset, and the replay cache; the timings are the
/// one place wall-clock time is allowed to appear, which is why reports
/// never embed the manifest but only its deterministic fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    /// The full effective configuration, for the human record.
    pub config: serde_json::Value,
    pub dataset_fingerprint: String,
    /// Role label -> backend fingerprint.
    pub provider_fingerprints: BTreeMap<String, String>,
    pub ablation: Ablation,
    /// SHA-256 of each story's generation transcript file.
    #[serde(default)]
    pub transcript_hashes: BTreeMap<String, String>,
    /// Stage name -> wall-clock duration of its last completed execution.
    /// Key presence doubles as the stage-completion record.
    #[serde(default)]
    pub stage_wall_ms: BTreeMap<String, u128>,
}

/// Serializes `value` as pretty JSON with a trailing newline and writes it
/// atomically.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, body.as_bytes()).map_err(io_err(tmp.clone()))?;
    std::fs::rename(&tmp, path).map_err(io_err(path.to_path_buf()))?;
    Ok(())
}

/// Reads and deserializes one JSON artifact.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = std::fs::read(path).map_err(io_err(path.to_path_buf()))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// All `*.json` files directly inside `dir`, sorted by file name. An
/// absent directory reads as empty.
pub fn json_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    let entries = match std::fs::read_dir(dir) {
        Ok(entries) => entries,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(source) => return Err(CliError::Io { path: dir.to_path_buf(), source }),
    };
    for entry in entries {
        let entry = entry.map_err(io_err(dir.to_path_buf()))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads the manifest, applies `update`, and writes it back atomically.
pub fn update_manifest(
    paths: &RunPaths,
    update: impl FnOnce(&mut RunManifest),
) -> Result<RunManifest, CliError> {
    let mut manifest: RunManifest = read_json(&paths.manifest())?;
    update(&mut manifest);
    write_json_atomic(&paths.manifest(), &manifest)?;
    Ok(manifest)
}
