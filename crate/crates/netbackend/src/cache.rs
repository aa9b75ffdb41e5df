//! Content-addressed response cache: in-memory LRU with an optional on-disk
//! spill directory.

use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use lru::LruCache;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_CACHE_ENTRIES: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Score,
    CountTokens,
    Entail,
}

/// Identifies a request by content. Equal keys imply byte-equal
/// (endpoint, model, prompt, continuations).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub endpoint: Endpoint,
    pub model: String,
    pub prompt_digest: [u8; 32],
    pub continuations_digest: [u8; 32],
}

impl CacheKey {
    pub fn new(endpoint: Endpoint, model: &str, prompt: &str, continuations: &[&str]) -> Self {
        let prompt_digest: [u8; 32] = Sha256::digest(prompt.as_bytes()).into();
        let mut h = Sha256::new();
        // Length prefixes keep ["ab","c"] and ["a","bc"] apart.
        h.update((continuations.len() as u64).to_le_bytes());
        for c in continuations {
            h.update((c.len() as u64).to_le_bytes());
            h.update(c.as_bytes());
        }
        Self {
            endpoint,
            model: model.to_string(),
            prompt_digest,
            continuations_digest: h.finalize().into(),
        }
    }

    fn file_name(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.endpoint).expect("endpoint serializes"));
        h.update((self.model.len() as u64).to_le_bytes());
        h.update(self.model.as_bytes());
        h.update(self.prompt_digest);
        h.update(self.continuations_digest);
        format!("{}.json", hex::encode(h.finalize()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CachedValue {
    Logprobs(Vec<f64>),
    Count(usize),
    Entail(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub entries: usize,
}

pub struct ResponseCache {
    inner: Mutex<(LruCache<CacheKey, CachedValue>, CacheStats)>,
    spill_dir: Option<PathBuf>,
}

impl ResponseCache {
    pub fn new(max_entries: usize, spill_dir: Option<PathBuf>) -> Self {
        let cap = NonZeroUsize::new(max_entries.max(1)).expect("non-zero");
        Self {
            inner: Mutex::new((LruCache::new(cap), CacheStats::default())),
            spill_dir,
        }
    }

    pub fn get(&self, key: &CacheKey) -> Option<CachedValue> {
        {
            let mut guard = self.inner.lock();
            let (lru, stats) = &mut *guard;
            if let Some(v) = lru.get(key) {
                let v = v.clone();
                stats.hits += 1;
                return Some(v);
            }
        }
        let from_disk = self.spill_dir.as_deref().and_then(|dir| read_spill(dir, key));
        let mut guard = self.inner.lock();
        let (lru, stats) = &mut *guard;
        match from_disk {
            Some(v) => {
                stats.hits += 1;
                lru.put(key.clone(), v.clone());
                stats.entries = lru.len();
                Some(v)
            }
            None => {
                stats.misses += 1;
                None
            }
        }
    }

    pub fn insert(&self, key: CacheKey, value: CachedValue) {
        if let Some(dir) = &self.spill_dir {
            if let Err(e) = write_spill(dir, &key, &value) {
                log::warn!("cache spill to {} failed: {e}", dir.display());
            }
        }
        let mut guard = self.inner.lock();
        let (lru, stats) = &mut *guard;
        lru.put(key, value);
        stats.entries = lru.len();
    }

    pub fn stats(&self) -> CacheStats {
        self.inner.lock().1
    }
}

fn read_spill(dir: &Path, key: &CacheKey) -> Option<CachedValue> {
    let bytes = std::fs::read(dir.join(key.file_name())).ok()?;
    serde_json::from_slice(&bytes).ok()
}

fn write_spill(dir: &Path, key: &CacheKey, value: &CachedValue) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!("{}.tmp{}", key.file_name(), std::process::id()));
    std::fs::write(&tmp, serde_json::to_vec(value)?)?;
    std::fs::rename(tmp, dir.join(key.file_name()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_separate_fields() {
        let a = CacheKey::new(Endpoint::Entail, "m", "premise", &["hypothesis"]);
        let b = CacheKey::new(Endpoint::Entail, "m", "hypothesis", &["premise"]);
        assert_ne!(a, b);
        assert_ne!(
            CacheKey::new(Endpoint::Score, "m", "p", &["ab", "c"]),
            CacheKey::new(Endpoint::Score, "m", "p", &["a", "bc"])
        );
        assert_ne!(
            CacheKey::new(Endpoint::Score, "m", "p", &[]),
            CacheKey::new(Endpoint::CountTokens, "m", "p", &[])
        );
        assert_eq!(a, CacheKey::new(Endpoint::Entail, "m", "premise", &["hypothesis"]));
    }

    #[test]
    fn lru_eviction() {
        let c = ResponseCache::new(2, None);
        let k = |p: &str| CacheKey::new(Endpoint::CountTokens, "m", p, &[]);
        c.insert(k("a"), CachedValue::Count(1));
        c.insert(k("b"), CachedValue::Count(2));
        assert_eq!(c.get(&k("a")), Some(CachedValue::Count(1)));
        c.insert(k("c"), CachedValue::Count(3));
        assert_eq!(c.get(&k("b")), None);
        assert_eq!(c.get(&k("a")), Some(CachedValue::Count(1)));
        assert_eq!(c.stats().entries, 2);
    }

    #[test]
    fn spill_survives_a_new_cache() {
        let dir = tempfile::tempdir().unwrap();
        let key = CacheKey::new(Endpoint::Score, "m", "p", &["true", "false"]);
        let v = CachedValue::Logprobs(vec![-0.1, -2.5]);
        ResponseCache::new(10, Some(dir.path().to_path_buf())).insert(key.clone(), v.clone());
        let fresh = ResponseCache::new(10, Some(dir.path().to_path_buf()));
        assert_eq!(fresh.get(&key), Some(v));
        assert_eq!(fresh.stats().hits, 1);
    }
}
