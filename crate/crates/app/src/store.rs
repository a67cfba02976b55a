//! Durable annotation state: a single append-only JSON-lines log plus a
//! snapshot that is rewritten atomically during compaction.
//!
//! Every record is written, flushed and synced before the caller is
//! acknowledged. On open the snapshot is loaded and the log replayed on top;
//! a torn final line (a crash mid-append) is truncated away, while an
//! unreadable complete line is reported with its byte offset.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use depsev_core::labeling::{
    record_expert_label, Acknowledgment, AnnotationStore, ExpertAnnotation, FusedLabel,
    LabelingError, MemoryAnnotationStore,
};

pub const LOG_FILE: &str = "annotations.log";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const DEFAULT_SNAPSHOT_EVERY: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{} is corrupt at byte {offset}: {reason}", path.display())]
    Corrupt {
        path: PathBuf,
        offset: u64,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Annotation {
        seq: u64,
        annotation: ExpertAnnotation,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        blind_mode: Option<bool>,
    },
    Fused {
        fused: FusedLabel,
    },
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Snapshot {
    next_seq: u64,
    records: Vec<LogRecord>,
}

pub struct DurableStore {
    dir: PathBuf,
    log: File,
    memory: MemoryAnnotationStore,
    blind_modes: BTreeMap<u64, bool>,
    fused: BTreeMap<String, FusedLabel>,
    since_snapshot: usize,
    snapshot_every: usize,
    next_blind_mode: Option<bool>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl DurableStore {
    /// Opens or creates the store in `dir`, restricted to `documents`.
    pub fn open<I, S>(dir: &Path, documents: I) -> Result<Self, StoreError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::open_with(dir, documents, DEFAULT_SNAPSHOT_EVERY)
    }

    pub fn open_with<I, S>(
        dir: &Path,
        documents: I,
        snapshot_every: usize,
    ) -> Result<Self, StoreError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let log_path = dir.join(LOG_FILE);
        let snapshot_path = dir.join(SNAPSHOT_FILE);

        let snapshot = if snapshot_path.exists() {
            let bytes = fs::read(&snapshot_path).map_err(io_err(&snapshot_path))?;
            serde_json::from_slice::<Snapshot>(&bytes).map_err(|e| StoreError::Corrupt {
                path: snapshot_path.clone(),
                offset: 0,
                reason: e.to_string(),
            })?
        } else {
            Snapshot::default()
        };

        let mut store = Self {
            dir: dir.to_path_buf(),
            log: OpenOptions::new()
                .create(true)
                .read(true)
                .append(true)
                .open(&log_path)
                .map_err(io_err(&log_path))?,
            memory: MemoryAnnotationStore::new(documents),
            blind_modes: BTreeMap::new(),
            fused: BTreeMap::new(),
            since_snapshot: 0,
            snapshot_every: snapshot_every.max(1),
            next_blind_mode: None,
        };
        let snapshot_next = snapshot.next_seq;
        for record in snapshot.records {
            store.apply(record);
        }
        if store.memory.next_sequence() != snapshot_next {
            return Err(StoreError::Corrupt {
                path: snapshot_path,
                offset: 0,
                reason: format!(
                    "next_seq {snapshot_next} disagrees with its records ({})",
                    store.memory.next_sequence()
                ),
            });
        }

        let replayed = store.replay_log(&log_path, snapshot_next)?;
        if replayed > 0 {
            info!("replayed {replayed} records from {}", log_path.display());
            store.compact()?;
        }
        Ok(store)
    }

    fn apply(&mut self, record: LogRecord) {
        match record {
            LogRecord::Annotation {
                seq,
                annotation,
                blind_mode,
            } => {
                if let Some(b) = blind_mode {
                    self.blind_modes.insert(seq, b);
                }
                self.memory.apply(seq, annotation);
            }
            LogRecord::Fused { fused } => {
                self.fused.insert(fused.doc_id.clone(), fused);
            }
        }
    }

    /// Replays the log and returns the number of records applied.
    fn replay_log(&mut self, path: &Path, snapshot_next: u64) -> Result<usize, StoreError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let mut offset = 0usize;
        let mut applied = 0;
        while offset < bytes.len() {
            let rest = &bytes[offset..];
            let (line, complete) = match rest.iter().position(|&b| b == b'\n') {
                Some(end) => (&rest[..end], true),
                None => (rest, false),
            };
            if line.iter().all(u8::is_ascii_whitespace) {
                offset += line.len() + usize::from(complete);
                continue;
            }
            match serde_json::from_slice::<LogRecord>(line) {
                Ok(record) => {
                    let stale = matches!(&record, LogRecord::Annotation { seq, .. } if *seq < snapshot_next);
                    if !stale {
                        self.apply(record);
                        applied += 1;
                    }
                    if !complete {
                        self.log.write_all(b"\n").map_err(io_err(path))?;
                        self.log.sync_data().map_err(io_err(path))?;
                    }
                }
                Err(e) if !complete => {
                    warn!(
                        "truncating torn record at byte {offset} of {} ({} bytes): {e}",
                        path.display(),
                        line.len()
                    );
                    self.log.set_len(offset as u64).map_err(io_err(path))?;
                    self.log.sync_data().map_err(io_err(path))?;
                }
                Err(e) => {
                    return Err(StoreError::Corrupt {
                        path: path.to_path_buf(),
                        offset: offset as u64,
                        reason: e.to_string(),
                    })
                }
            }
            offset += line.len() + usize::from(complete);
        }
        Ok(applied)
    }

    fn write_record(&mut self, record: &LogRecord) -> Result<(), StoreError> {
        let path = self.dir.join(LOG_FILE);
        let mut line = serde_json::to_vec(record).expect("records serialize");
        line.push(b'\n');
        self.log.write_all(&line).map_err(io_err(&path))?;
        self.log.flush().map_err(io_err(&path))?;
        self.log.sync_data().map_err(io_err(&path))?;
        self.since_snapshot += 1;
        Ok(())
    }

    fn maybe_compact(&mut self) -> Result<(), StoreError> {
        if self.since_snapshot >= self.snapshot_every {
            self.compact()?;
        }
        Ok(())
    }

    /// Writes the full state to a new snapshot and empties the log. The log
    /// is truncated only after the snapshot rename is durable.
    pub fn compact(&mut self) -> Result<(), StoreError> {
        let mut records: Vec<LogRecord> = self
            .memory
            .all_history()
            .into_iter()
            .map(|(seq, annotation)| LogRecord::Annotation {
                seq,
                annotation,
                blind_mode: self.blind_modes.get(&seq).copied(),
            })
            .collect();
        records.extend(
            self.fused
                .values()
                .cloned()
                .map(|fused| LogRecord::Fused { fused }),
        );
        let snapshot = Snapshot {
            next_seq: self.memory.next_sequence(),
            records,
        };

        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let target = self.dir.join(SNAPSHOT_FILE);
        {
            let mut file = File::create(&tmp).map_err(io_err(&tmp))?;
            serde_json::to_writer(&mut file, &snapshot).map_err(|e| StoreError::Io {
                path: tmp.clone(),
                source: e.into(),
            })?;
            file.sync_all().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, &target).map_err(io_err(&target))?;
        File::open(&self.dir)
            .and_then(|d| d.sync_all())
            .map_err(io_err(&self.dir))?;

        let log_path = self.dir.join(LOG_FILE);
        self.log.set_len(0).map_err(io_err(&log_path))?;
        self.log.sync_all().map_err(io_err(&log_path))?;
        self.since_snapshot = 0;
        Ok(())
    }

    /// Records an expert label together with the session's blind-mode flag.
    pub fn record(
        &mut self,
        annotation: ExpertAnnotation,
        blind_mode: Option<bool>,
    ) -> Result<Acknowledgment, LabelingError> {
        self.next_blind_mode = blind_mode;
        let result = record_expert_label(annotation, self);
        self.next_blind_mode = None;
        result
    }

    pub fn record_fused(&mut self, fused: FusedLabel) -> Result<(), StoreError> {
        let record = LogRecord::Fused { fused };
        self.write_record(&record)?;
        self.apply(record);
        self.maybe_compact()
    }

    pub fn memory(&self) -> &MemoryAnnotationStore {
        &self.memory
    }

    pub fn fused(&self, doc_id: &str) -> Option<&FusedLabel> {
        self.fused.get(doc_id)
    }

    pub fn fused_all(&self) -> impl Iterator<Item = &FusedLabel> {
        self.fused.values()
    }

    pub fn blind_mode_of(&self, seq: u64) -> Option<bool> {
        self.blind_modes.get(&seq).copied()
    }
}

impl AnnotationStore for DurableStore {
    fn has_document(&self, doc_id: &str) -> bool {
        self.memory.has_document(doc_id)
    }

    fn append(&mut self, annotation: ExpertAnnotation) -> Result<u64, LabelingError> {
        let seq = self.memory.next_sequence();
        let record = LogRecord::Annotation {
            seq,
            annotation,
            blind_mode: self.next_blind_mode,
        };
        self.write_record(&record)
            .map_err(|e| LabelingError::Store(e.to_string()))?;
        self.apply(record);
        self.maybe_compact()
            .map_err(|e| LabelingError::Store(e.to_string()))?;
        Ok(seq)
    }

    fn history(&self, doc_id: &str) -> Vec<(u64, ExpertAnnotation)> {
        self.memory.history(doc_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use depsev_core::SeverityLabel;

    fn docs() -> Vec<String> {
        (0..5).map(|i| format!("d{i}")).collect()
    }

    fn ann(doc: &str, label: SeverityLabel, at: i64) -> ExpertAnnotation {
        ExpertAnnotation {
            doc_id: doc.into(),
            annotator_id: "psy".into(),
            label,
            submitted_at: at,
        }
    }

    #[test]
    fn survives_reopen_without_compaction() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = DurableStore::open(dir.path(), docs()).unwrap();
            s.record(ann("d1", SeverityLabel::Mild, 1), Some(true))
                .unwrap();
            s.record(ann("d2", SeverityLabel::Severe, 2), None).unwrap();
        }
        let s = DurableStore::open(dir.path(), docs()).unwrap();
        assert_eq!(s.memory().labeled_count(), 2);
        assert_eq!(s.effective("d2").unwrap().label, SeverityLabel::Severe);
        assert_eq!(s.blind_mode_of(0), Some(true));
        assert_eq!(s.memory().next_sequence(), 2);
    }

    #[test]
    fn snapshots_keep_everything() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = DurableStore::open_with(dir.path(), docs(), 3).unwrap();
            for i in 0..7 {
                s.record(
                    ann(&format!("d{}", i % 5), SeverityLabel::ALL[i % 6], i as i64),
                    None,
                )
                .unwrap();
            }
        }
        assert!(dir.path().join(SNAPSHOT_FILE).exists());
        let s = DurableStore::open(dir.path(), docs()).unwrap();
        assert_eq!(s.memory().all_history().len(), 7);
        assert_eq!(s.memory().next_sequence(), 7);
        // d0 was labeled at i = 0 and i = 5; the later one wins.
        assert_eq!(s.effective("d0").unwrap().label, SeverityLabel::Extreme);
    }

    #[test]
    fn stale_log_after_snapshot_is_not_doubled() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = DurableStore::open(dir.path(), docs()).unwrap();
            s.record(ann("d1", SeverityLabel::Mild, 1), None).unwrap();
        }
        DurableStore::open(dir.path(), docs()).unwrap();
        let log = fs::read(dir.path().join(LOG_FILE)).unwrap();
        assert!(log.is_empty(), "reopen compacts");
        // A crash between snapshot rename and log truncation leaves both.
        let line = serde_json::to_vec(&LogRecord::Annotation {
            seq: 0,
            annotation: ann("d1", SeverityLabel::Mild, 1),
            blind_mode: None,
        })
        .unwrap();
        fs::write(dir.path().join(LOG_FILE), [line, b"\n".to_vec()].concat()).unwrap();
        let s = DurableStore::open(dir.path(), docs()).unwrap();
        assert_eq!(s.memory().all_history().len(), 1);
    }

    #[test]
    fn duplicate_submission_writes_once() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = DurableStore::open(dir.path(), docs()).unwrap();
        let a = s.record(ann("d3", SeverityLabel::Mild, 5), None).unwrap();
        let b = s.record(ann("d3", SeverityLabel::Mild, 5), None).unwrap();
        assert!(b.duplicate);
        assert_eq!(a.sequence, b.sequence);
        assert_eq!(s.memory().all_history().len(), 1);
    }

    #[test]
    fn unknown_document_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = DurableStore::open(dir.path(), docs()).unwrap();
        assert!(matches!(
            s.record(ann("zz", SeverityLabel::Mild, 1), None),
            Err(LabelingError::UnknownDocument(_))
        ));
    }
}
