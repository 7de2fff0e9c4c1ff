use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;
use std::time::Duration;

use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ResolveError {
    #[error("no image found for `{0}`")]
    NotFound(String),
    #[error("image search failed: {0}")]
    Transport(String),
}

/// Maps a proper-noun key to a representative image reference.
pub trait PnImageResolver: Send + Sync {
    fn resolve(&self, pn_key: &str) -> Result<String, ResolveError>;
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "webp"];

/// `<dir>/<pn_key>.<ext>`, first extension that exists.
#[derive(Debug, Clone)]
pub struct FixtureResolver {
    dir: PathBuf,
}

impl FixtureResolver {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl PnImageResolver for FixtureResolver {
    fn resolve(&self, pn_key: &str) -> Result<String, ResolveError> {
        IMAGE_EXTENSIONS
            .iter()
            .map(|ext| self.dir.join(format!("{pn_key}.{ext}")))
            .find(|p| p.is_file())
            .map(|p| p.to_string_lossy().into_owned())
            .ok_or_else(|| ResolveError::NotFound(pn_key.to_string()))
    }
}

/// `GET <endpoint>?q=<key>` answering `{"url": ...}` or
/// `{"results": [{"url": ...}, ...]}`.
#[derive(Debug, Clone)]
pub struct SearchResolver {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl SearchResolver {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, ResolveError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ResolveError::Transport(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            client,
        })
    }
}

fn first_url(v: &Value) -> Option<String> {
    v.get("url")
        .or_else(|| v.get("results")?.as_array()?.first()?.get("url"))
        .and_then(Value::as_str)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
}

impl PnImageResolver for SearchResolver {
    fn resolve(&self, pn_key: &str) -> Result<String, ResolveError> {
        let query = pn_key.replace('-', " ");
        let response = self
            .client
            .get(&self.endpoint)
            .query(&[("q", query.as_str())])
            .send()
            .map_err(|e| ResolveError::Transport(e.to_string()))?;
        if response.status() == reqwest::StatusCode::NOT_FOUND {
            return Err(ResolveError::NotFound(pn_key.to_string()));
        }
        if !response.status().is_success() {
            return Err(ResolveError::Transport(format!("HTTP {}", response.status().as_u16())));
        }
        let body: Value = response.json().map_err(|e| ResolveError::Transport(e.to_string()))?;
        first_url(&body).ok_or_else(|| ResolveError::NotFound(pn_key.to_string()))
    }
}

/// Remembers successful lookups; a cached key is never fetched again.
pub struct CachedResolver<R> {
    inner: R,
    cache: RwLock<HashMap<String, String>>,
    fetches: AtomicU64,
}

impl<R: PnImageResolver> CachedResolver<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            cache: RwLock::new(HashMap::new()),
            fetches: AtomicU64::new(0),
        }
    }

    /// Calls that reached the inner resolver.
    pub fn fetches(&self) -> u64 {
        self.fetches.load(Ordering::Relaxed)
    }
}

impl<R: PnImageResolver> PnImageResolver for CachedResolver<R> {
    fn resolve(&self, pn_key: &str) -> Result<String, ResolveError> {
        if let Some(hit) = self.cache.read().unwrap_or_else(|e| e.into_inner()).get(pn_key) {
            return Ok(hit.clone());
        }
        let mut cache = self.cache.write().unwrap_or_else(|e| e.into_inner());
        // another writer may have filled it meanwhile
        if let Some(hit) = cache.get(pn_key) {
            return Ok(hit.clone());
        }
        self.fetches.fetch_add(1, Ordering::Relaxed);
        let found = self.inner.resolve(pn_key)?;
        cache.insert(pn_key.to_string(), found.clone());
        Ok(found)
    }
}
