use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetError, DatasetSplits, LabeledId};
use crate::corpus::CleanDocument;
use crate::labeling::CoarseLabel;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub id: String,
    pub language: String,
    pub text: String,
    pub label: CoarseLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub language: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smote_k: Option<usize>,
    pub counts: BTreeMap<String, BTreeMap<CoarseLabel, usize>>,
}

const PARTS: [&str; 3] = ["train", "validation", "test"];

/// Writes `train.jsonl`, `validation.jsonl`, `test.jsonl` and `manifest.json`
/// into `dir`. Every id is resolved before anything is written.
pub fn export_dataset(
    splits: &DatasetSplits,
    documents: &HashMap<String, CleanDocument>,
    dir: &Path,
    smote_k: Option<usize>,
) -> Result<ExportManifest, DatasetError> {
    let parts: [&[LabeledId]; 3] = [&splits.train, &splits.validation, &splits.test];
    let mut resolved = Vec::with_capacity(3);
    for part in parts {
        let records = part
            .iter()
            .map(|item| {
                let doc = documents
                    .get(&item.doc_id)
                    .ok_or_else(|| DatasetError::UnknownDocument(item.doc_id.clone()))?;
                Ok(ExportRecord {
                    id: item.doc_id.clone(),
                    language: doc.language.clone(),
                    text: doc.text.clone(),
                    label: item.label,
                })
            })
            .collect::<Result<Vec<_>, DatasetError>>()?;
        resolved.push(records);
    }

    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DatasetError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, records) in PARTS.iter().zip(&resolved) {
        let path = dir.join(format!("{name}.jsonl"));
        let write = || -> std::io::Result<()> {
            let mut out = BufWriter::new(fs::File::create(&path)?);
            for r in records {
                serde_json::to_writer(&mut out, r)?;
                out.write_all(b"\n")?;
            }
            out.flush()
        };
        write().map_err(io_err(&path))?;
    }

    let manifest = ExportManifest {
        language: splits.language.clone(),
        seed: splits.seed,
        smote_k,
        counts: PARTS
            .iter()
            .zip(parts)
            .map(|(name, part)| (name.to_string(), DatasetSplits::counts(part)))
            .collect(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(manifest)
}
