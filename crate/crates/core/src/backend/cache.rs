use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{cache_key, Backend, BackendError, Completion, CompletionRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    Off,
    /// Read through the cache; misses go to the inner backend and are stored.
    Record,
    /// Serve from the cache only; misses are errors.
    Replay,
}

/// Content-addressed completion store: `<root>/<first 2 hex chars>/<digest>.json`.
#[derive(Debug, Clone)]
pub struct CacheStore {
    root: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    request: CompletionRequest,
    completions: Vec<Completion>,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl CacheStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, digest: &str) -> PathBuf {
        let shard = digest.get(..2).unwrap_or("__");
        self.root.join(shard).join(format!("{digest}.json"))
    }

    pub fn get(&self, digest: &str) -> Result<Option<Vec<Completion>>, BackendError> {
        let path = self.path_for(digest);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(cache_err(&path, e)),
        };
        let entry: CacheEntry = serde_json::from_str(&text).map_err(|e| cache_err(&path, e))?;
        Ok(Some(entry.completions))
    }

    /// Writes via a uniquely named temp file and an atomic rename, so readers
    /// never observe a partial entry and concurrent writers of one digest
    /// resolve to one complete file.
    pub fn put(
        &self,
        digest: &str,
        request: &CompletionRequest,
        completions: &[Completion],
    ) -> Result<(), BackendError> {
        let path = self.path_for(digest);
        let dir = path.parent().expect("cache path has a shard directory");
        fs::create_dir_all(dir).map_err(|e| cache_err(dir, e))?;
        let entry = CacheEntry {
            key: digest.to_string(),
            request: request.clone(),
            completions: completions.to_vec(),
        };
        let mut bytes = serde_json::to_vec_pretty(&entry).map_err(|e| cache_err(&path, e))?;
        bytes.push(b'\n');
        let tmp = dir.join(format!(
            ".{digest}.{}.{}.tmp",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        fs::write(&tmp, &bytes).map_err(|e| cache_err(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| cache_err(&path, e))
    }

    /// Deletes every cache entry (and emptied shard directories). Files that
    /// do not follow the cache layout are left alone. Returns the number of
    /// entries removed.
    pub fn purge(&self) -> std::io::Result<usize> {
        let mut removed = 0;
        let shards = match fs::read_dir(&self.root) {
            Ok(s) => s,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(0),
            Err(e) => return Err(e),
        };
        for shard in shards {
            let shard = shard?;
            let name = shard.file_name();
            let name = name.to_string_lossy();
            if !shard.file_type()?.is_dir() || name.len() != 2 {
                continue;
            }
            for file in fs::read_dir(shard.path())? {
                let file = file?;
                let fname = file.file_name();
                let fname = fname.to_string_lossy();
                let is_entry = fname.starts_with(name.as_ref()) && fname.ends_with(".json");
                let is_tmp = fname.starts_with('.') && fname.ends_with(".tmp");
                if file.file_type()?.is_file() && (is_entry || is_tmp) {
                    fs::remove_file(file.path())?;
                    removed += usize::from(is_entry);
                }
            }
            if fs::read_dir(shard.path())?.next().is_none() {
                fs::remove_dir(shard.path())?;
            }
        }
        Ok(removed)
    }
}

fn cache_err(path: &Path, e: impl std::fmt::Display) -> BackendError {
    BackendError::Cache(format!("{}: {e}", path.display()))
}

/// Record/replay wrapper around another backend.
pub struct CachedBackend {
    inner: Option<Arc<dyn Backend>>,
    store: CacheStore,
    mode: CacheMode,
}

impl CachedBackend {
    pub fn record(inner: Arc<dyn Backend>, store: CacheStore) -> Self {
        Self {
            inner: Some(inner),
            store,
            mode: CacheMode::Record,
        }
    }

    /// Replay needs no inner backend; it never leaves the cache.
    pub fn replay(store: CacheStore) -> Self {
        Self {
            inner: None,
            store,
            mode: CacheMode::Replay,
        }
    }

    pub fn mode(&self) -> CacheMode {
        self.mode
    }

    pub fn store(&self) -> &CacheStore {
        &self.store
    }
}

impl Backend for CachedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<Completion>, BackendError> {
        request.validate()?;
        let digest = cache_key(request);
        if let Some(hit) = self.store.get(&digest)? {
            if hit.len() == request.n_samples as usize {
                return Ok(hit);
            }
            return Err(BackendError::Cache(format!(
                "entry {digest} holds {} completions, expected {}",
                hit.len(),
                request.n_samples
            )));
        }
        match (self.mode, &self.inner) {
            (CacheMode::Record, Some(inner)) | (CacheMode::Off, Some(inner)) => {
                let out = inner.complete(request)?;
                if self.mode == CacheMode::Record {
                    self.store.put(&digest, request, &out)?;
                }
                Ok(out)
            }
            _ => Err(BackendError::CacheMiss(digest)),
        }
    }

    fn kind(&self) -> &str {
        match &self.inner {
            Some(inner) => inner.kind(),
            None => "replay",
        }
    }
}
