use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{BackendConfig, CompletionRequest, GatewayError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedRequest {
    pub model: String,
    pub temperature: f64,
    pub system_prompt: String,
    pub user_prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request_hash: String,
    pub request: CachedRequest,
    pub response: String,
    /// Seconds since the Unix epoch at insertion.
    pub timestamp: u64,
}

impl CacheEntry {
    pub fn new(config: &BackendConfig, request: &CompletionRequest, response: String) -> Self {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            request_hash: request.request_hash.clone(),
            request: CachedRequest {
                model: config.model_name.clone(),
                temperature: config.temperature,
                system_prompt: request.system_prompt.clone(),
                user_prompt: request.user_prompt.clone(),
            },
            response,
            timestamp,
        }
    }
}

/// Content-addressed store laid out as `<root>/<backend>/<hash[..2]>/<hash>.json`.
#[derive(Debug, Clone)]
pub struct DiskCache {
    root: PathBuf,
}

impl DiskCache {
    pub fn new(root: PathBuf) -> Self {
        Self { root }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, backend: &str, hash: &str) -> PathBuf {
        let shard = hash.get(..2).unwrap_or(hash);
        self.root
            .join(backend)
            .join(shard)
            .join(format!("{hash}.json"))
    }

    pub fn get(&self, backend: &str, hash: &str) -> Result<Option<CacheEntry>, GatewayError> {
        let path = self.path_for(backend, hash);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(cache_err(&path, e)),
        };
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(entry) if entry.request_hash == hash => Ok(Some(entry)),
            Ok(_) => {
                log::warn!("cache entry {} has a mismatched hash, ignoring", path.display());
                Ok(None)
            }
            Err(e) => {
                log::warn!("unreadable cache entry {}: {e}", path.display());
                Ok(None)
            }
        }
    }

    /// Writes atomically: temp file in the shard directory, then rename.
    pub fn put(&self, backend: &str, entry: &CacheEntry) -> Result<(), GatewayError> {
        let path = self.path_for(backend, &entry.request_hash);
        let dir = path.parent().expect("shard dir");
        fs::create_dir_all(dir).map_err(|e| cache_err(dir, e))?;
        let tmp = dir.join(format!(
            ".{}.{}.tmp",
            entry.request_hash,
            std::process::id()
        ));
        let body = serde_json::to_vec_pretty(entry).map_err(|e| GatewayError::Cache {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        fs::write(&tmp, body).map_err(|e| cache_err(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| cache_err(&path, e))
    }
}

fn cache_err(path: &Path, e: std::io::Error) -> GatewayError {
    GatewayError::Cache {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}
