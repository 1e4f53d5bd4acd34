use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ChatRequest, Completion, GatewayError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct CacheEntry {
    pub request: ChatRequest,
    pub completion: Completion,
    pub latency_ms: u64,
}

/// Content-addressed response store: one `<hash>.json` file per request.
/// Writes go to a temp file in the same directory and are renamed into place.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)
            .map_err(|e| GatewayError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(ResponseCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.path(key).is_file()
    }

    pub(crate) fn get(&self, key: &str) -> Result<Option<CacheEntry>, GatewayError> {
        let path = self.path(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GatewayError::Cache(format!("{}: {e}", path.display()))),
        };
        serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| GatewayError::Cache(format!("{}: {e}", path.display())))
    }

    pub(crate) fn put(
        &self,
        key: &str,
        request: &ChatRequest,
        completion: &Completion,
        latency_ms: u64,
    ) -> Result<(), GatewayError> {
        let entry = CacheEntry {
            request: request.clone(),
            completion: completion.clone(),
            latency_ms,
        };
        let err = |e: &dyn std::fmt::Display| GatewayError::Cache(format!("{key}: {e}"));
        let body = serde_json::to_vec_pretty(&entry).map_err(|e| err(&e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| err(&e))?;
        tmp.write_all(&body).map_err(|e| err(&e))?;
        tmp.persist(self.path(key)).map_err(|e| err(&e))?;
        Ok(())
    }
}
