//! Run manifest: a self-contained record of what a run did, written
//! atomically so interrupted runs never leave a half manifest behind.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gateway::UsageRecord;

use super::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestTask {
    pub index: usize,
    pub task_id: String,
    /// Transcript path relative to the manifest's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    pub calls: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Snapshot of the configuration the run executed.
    pub config: ExperimentConfig,
    /// Content hash of the template set in effect, when the method renders
    /// templates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_hash: Option<String>,
    pub tasks: Vec<ManifestTask>,
    pub usage: UsageRecord,
    /// Elapsed time. Deliberately absent for mock-backed runs so replaying
    /// the same config byte-compares equal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_ms: Option<u64>,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> std::io::Result<RunManifest> {
        let bytes = std::fs::read(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Write via a sibling temp file and rename, so readers only ever see
/// complete files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "file".to_string());
    let tmp: PathBuf = dir.join(format!(".{}.tmp-{}", file_name, std::process::id()));
    std::fs::write(&tmp, bytes)?;
    match std::fs::rename(&tmp, path) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(e)
        }
    }
}
