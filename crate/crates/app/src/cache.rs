//! Disk-backed cache in front of a zero-shot classifier, keyed by the text
//! hash and the candidate label set, so reruns never repeat a remote call.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use depsev_core::labeling::{LabelingError, ZeroShotClassifier, ZeroShotRequest, ZeroShotResponse};

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    response: ZeroShotResponse,
}

pub fn cache_key(request: &ZeroShotRequest) -> String {
    let digest = hex::encode(Sha256::digest(request.text.as_bytes()));
    format!("{digest}|{}", request.candidate_labels.join(","))
}

pub struct CachedClassifier<C> {
    inner: C,
    path: Option<PathBuf>,
    entries: Mutex<HashMap<String, ZeroShotResponse>>,
}

impl<C: ZeroShotClassifier> CachedClassifier<C> {
    /// Loads existing entries from `path` when it exists. A torn last line
    /// is skipped; later lines for the same key win.
    pub fn open(inner: C, path: Option<&Path>) -> std::io::Result<Self> {
        let mut entries = HashMap::new();
        if let Some(p) = path.filter(|p| p.exists()) {
            let bytes = std::fs::read(p)?;
            if bytes.last().is_some_and(|b| *b != b'\n') {
                OpenOptions::new().append(true).open(p)?.write_all(b"\n")?;
            }
            for (n, line) in BufReader::new(File::open(p)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheLine>(&line) {
                    Ok(entry) => {
                        entries.insert(entry.key, entry.response);
                    }
                    Err(e) => warn!(
                        "skipping zero-shot cache line {} in {}: {e}",
                        n + 1,
                        p.display()
                    ),
                }
            }
        }
        Ok(Self {
            inner,
            path: path.map(Path::to_path_buf),
            entries: Mutex::new(entries),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn persist(&self, key: &str, response: &ZeroShotResponse) -> std::io::Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut line = serde_json::to_string(&CacheLine {
            key: key.to_string(),
            response: response.clone(),
        })
        .map_err(std::io::Error::other)?;
        line.push('\n');
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        file.write_all(line.as_bytes())?;
        file.flush()
    }
}

impl<C: ZeroShotClassifier> ZeroShotClassifier for CachedClassifier<C> {
    fn classify(&self, request: &ZeroShotRequest) -> Result<ZeroShotResponse, LabelingError> {
        let key = cache_key(request);
        if let Some(hit) = self.entries.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let response = self.inner.classify(request)?;
        let mut entries = self.entries.lock().expect("cache lock");
        if let Entry::Vacant(slot) = entries.entry(key) {
            if let Err(e) = self.persist(slot.key(), &response) {
                warn!("cannot persist zero-shot cache entry: {e}");
            }
            slot.insert(response.clone());
        }
        Ok(response)
    }
}
