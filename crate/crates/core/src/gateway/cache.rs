use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{CacheKey, ModelRequest, RequestKind};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct CacheEntry {
    pub key: CacheKey,
    pub kind: RequestKind,
    pub model: String,
    pub response: String,
    pub retries: u32,
}

/// Content-addressed response store laid out as
/// `<root>/<model>/<first two hex chars>/<digest>.json`.
#[derive(Debug)]
pub struct ResponseCache {
    root: PathBuf,
    tmp_counter: AtomicU64,
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            tmp_counter: AtomicU64::new(0),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &CacheKey, model: &str) -> PathBuf {
        let digest = key.as_str();
        self.root
            .join(sanitize_model(model))
            .join(&digest[..2])
            .join(format!("{digest}.json"))
    }

    pub(crate) fn get(&self, key: &CacheKey, model: &str) -> Option<CacheEntry> {
        let path = self.path_for(key, model);
        let bytes = fs::read(&path).ok()?;
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(entry) if &entry.key == key => Some(entry),
            Ok(_) => {
                log::warn!("cache entry {} has a mismatched key, ignoring", path.display());
                None
            }
            Err(e) => {
                log::warn!("unreadable cache entry {}: {e}", path.display());
                None
            }
        }
    }

    /// Atomic write: temp file in the target directory, then rename.
    pub(crate) fn put(&self, key: &CacheKey, request: &ModelRequest, response: &str, retries: u32) -> io::Result<()> {
        let path = self.path_for(key, &request.model);
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir)?;
        let entry = CacheEntry {
            key: key.clone(),
            kind: request.kind,
            model: request.model.clone(),
            response: response.to_string(),
            retries,
        };
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = dir.join(format!(".{}.{}.{n}.tmp", key.as_str(), std::process::id()));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&serde_json::to_vec(&entry)?)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)
    }
}

/// Model ids may contain `/`, `:` and the like; keep them filesystem-safe.
fn sanitize_model(model: &str) -> String {
    let s: String = model
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    if s.is_empty() || s.chars().all(|c| c == '.') {
        "_".to_string()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_matches_model_prefix_digest() {
        let cache = ResponseCache::new("/tmp/c");
        let req = ModelRequest::completion("anthropic/claude:v1", "hi");
        let key = req.key();
        let p = cache.path_for(&key, &req.model);
        let digest = key.as_str();
        assert_eq!(
            p,
            PathBuf::from(format!("/tmp/c/anthropic_claude_v1/{}/{digest}.json", &digest[..2]))
        );
    }

    #[test]
    fn stored_bytes_come_back_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        let req = ModelRequest::completion("m", "p");
        let text = "line one\n  ünïcødé \"quoted\"\t";
        cache.put(&req.key(), &req, text, 1).unwrap();
        let hit = cache.get(&req.key(), "m").unwrap();
        assert_eq!(hit.response, text);
        assert_eq!(hit.retries, 1);
    }

    #[test]
    fn corrupt_entries_are_misses() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        let req = ModelRequest::completion("m", "p");
        let path = cache.path_for(&req.key(), "m");
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, b"{not json").unwrap();
        assert!(cache.get(&req.key(), "m").is_none());
    }

    #[test]
    fn model_names_are_sanitized() {
        assert_eq!(sanitize_model(".."), "_");
        assert_eq!(sanitize_model("a/b"), "a_b");
    }
}
