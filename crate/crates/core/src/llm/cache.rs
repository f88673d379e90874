use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::LlmError;

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    text: String,
}

/// Request-hash to completion map, optionally persisted as an append-only JSONL file.
///
/// A torn final line (from an interrupted append) is ignored on load.
pub struct ResponseCache {
    entries: Mutex<HashMap<String, String>>,
    file: Option<(PathBuf, Mutex<File>)>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self {
            entries: Mutex::new(HashMap::new()),
            file: None,
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        if path.exists() {
            let f = File::open(&path).map_err(|e| LlmError::Cache(format!("{}: {e}", path.display())))?;
            for line in BufReader::new(f).lines() {
                let line = line.map_err(|e| LlmError::Cache(e.to_string()))?;
                if let Ok(entry) = serde_json::from_str::<CacheLine>(&line) {
                    entries.insert(entry.key, entry.text);
                }
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| LlmError::Cache(format!("{}: {e}", path.display())))?;
        let torn = std::fs::read(&path)
            .map(|b| b.last().is_some_and(|&c| c != b'\n'))
            .unwrap_or(false);
        if torn {
            file.write_all(b"\n")
                .map_err(|e| LlmError::Cache(format!("{}: {e}", path.display())))?;
        }
        Ok(Self {
            entries: Mutex::new(entries),
            file: Some((path, Mutex::new(file))),
        })
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(key)
            .cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&self, key: &str, text: &str) -> Result<(), LlmError> {
        let fresh = self
            .entries
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key.to_string(), text.to_string())
            .is_none();
        if let (true, Some((path, file))) = (fresh, &self.file) {
            let mut line = serde_json::to_string(&CacheLine {
                key: key.to_string(),
                text: text.to_string(),
            })
            .map_err(|e| LlmError::Cache(e.to_string()))?;
            line.push('\n');
            let mut f = file.lock().unwrap_or_else(|e| e.into_inner());
            // One write per line keeps concurrent appends from interleaving.
            f.write_all(line.as_bytes())
                .and_then(|_| f.flush())
                .map_err(|e| LlmError::Cache(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let c = ResponseCache::open(&path).unwrap();
            c.insert("k1", "one").unwrap();
            c.insert("k2", "two\nlines").unwrap();
        }
        // simulate a torn append
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"key\":\"k3\",\"te").unwrap();
        drop(f);
        let c = ResponseCache::open(&path).unwrap();
        assert_eq!(c.get("k1").as_deref(), Some("one"));
        assert_eq!(c.get("k2").as_deref(), Some("two\nlines"));
        assert_eq!(c.get("k3"), None);
        assert_eq!(c.len(), 2);
    }
}
