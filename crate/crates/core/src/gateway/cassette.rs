use std::collections::HashMap;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{CacheKey, FinishReason, Message, ModelParams};

/// One recorded request/response pair, stored as `<digest>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub digest: CacheKey,
    pub model_name: String,
    pub params: ModelParams,
    pub messages: Vec<Message>,
    pub response_text: String,
    pub finish_reason: FinishReason,
}

/// Content-addressed directory of cassette entries.
#[derive(Debug)]
pub struct CassetteStore {
    dir: PathBuf,
    loaded: Mutex<HashMap<CacheKey, CassetteEntry>>,
}

impl CassetteStore {
    /// Opens `dir`, creating it if needed.
    pub fn open(dir: impl AsRef<Path>) -> io::Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        Ok(CassetteStore {
            dir,
            loaded: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{}.json", key.as_str()))
    }

    pub fn get(&self, key: &CacheKey) -> io::Result<Option<CassetteEntry>> {
        let mut loaded = self.loaded.lock().expect("cassette lock poisoned");
        if let Some(entry) = loaded.get(key) {
            return Ok(Some(entry.clone()));
        }
        let path = self.path_for(key);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e),
        };
        let entry: CassetteEntry = serde_json::from_slice(&bytes)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
        if &entry.digest != key {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}: digest field does not match file name", path.display()),
            ));
        }
        loaded.insert(key.clone(), entry.clone());
        Ok(Some(entry))
    }

    pub fn put(&self, entry: &CassetteEntry) -> io::Result<()> {
        let mut loaded = self.loaded.lock().expect("cassette lock poisoned");
        let path = self.path_for(&entry.digest);
        let tmp = path.with_extension("json.tmp");
        let mut body = serde_json::to_string_pretty(entry).map_err(io::Error::other)?;
        body.push('\n');
        std::fs::write(&tmp, body)?;
        std::fs::rename(&tmp, &path)?;
        loaded.insert(entry.digest.clone(), entry.clone());
        Ok(())
    }

    /// Number of entries on disk.
    pub fn len(&self) -> io::Result<usize> {
        Ok(std::fs::read_dir(&self.dir)?
            .filter_map(Result::ok)
            .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
            .count())
    }

    pub fn is_empty(&self) -> io::Result<bool> {
        self.len().map(|n| n == 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_then_get_from_fresh_store() {
        let dir = tempfile::tempdir().unwrap();
        let params = ModelParams::default();
        let messages = vec![Message::user("q")];
        let entry = CassetteEntry {
            digest: CacheKey::compute(&params, &messages),
            model_name: params.model_name.clone(),
            params,
            messages,
            response_text: "{\"Score\": 0.25}".into(),
            finish_reason: FinishReason::Stop,
        };
        CassetteStore::open(dir.path()).unwrap().put(&entry).unwrap();
        let store = CassetteStore::open(dir.path()).unwrap();
        assert_eq!(store.get(&entry.digest).unwrap(), Some(entry.clone()));
        assert_eq!(store.len().unwrap(), 1);
        let raw: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join(format!("{}.json", entry.digest))).unwrap()).unwrap();
        for field in ["digest", "model_name", "params", "messages", "response_text", "finish_reason"] {
            assert!(raw.get(field).is_some(), "missing {field}");
        }
    }

    #[test]
    fn mismatched_digest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let store = CassetteStore::open(dir.path()).unwrap();
        let key = CacheKey::from_hex("ab".repeat(32));
        let body = serde_json::json!({
            "digest": "cd".repeat(32), "model_name": "m",
            "params": ModelParams::default(), "messages": [],
            "response_text": "x", "finish_reason": "Stop"
        });
        std::fs::write(dir.path().join(format!("{key}.json")), body.to_string()).unwrap();
        assert!(store.get(&key).is_err());
    }
}
