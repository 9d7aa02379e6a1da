//! Content-addressed response cache: one file per request digest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{CacheKey, GatewayError};

#[derive(Debug, Clone)]
pub struct DiskCache {
    dir: PathBuf,
}

impl DiskCache {
    pub fn open(dir: &Path) -> Result<Self, GatewayError> {
        fs::create_dir_all(dir).map_err(|e| GatewayError::Cache {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(DiskCache {
            dir: dir.to_path_buf(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{key}.txt"))
    }

    /// Unreadable or missing entries are treated as misses.
    pub fn get(&self, key: &CacheKey) -> Option<String> {
        fs::read_to_string(self.entry_path(key)).ok()
    }

    /// Write-then-rename so concurrent readers never observe a torn entry.
    pub fn put(&self, key: &CacheKey, text: &str) -> Result<(), GatewayError> {
        let final_path = self.entry_path(key);
        let tmp_path = self.dir.join(format!(".{key}.{}.tmp", std::process::id()));
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp_path)?;
            f.write_all(text.as_bytes())?;
            f.sync_all()?;
            fs::rename(&tmp_path, &final_path)
        };
        write().map_err(|e| {
            let _ = fs::remove_file(&tmp_path);
            GatewayError::Cache {
                path: final_path.display().to_string(),
                message: e.to_string(),
            }
        })
    }
}
