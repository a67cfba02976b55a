//! Arithmetic checks over published per-class metric tables.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use depsev_core::evaluation::{validate_report_consistency, ReportRow};

pub const DEFAULT_TOLERANCE: f64 = 0.02;

/// One `language,class,model,precision,recall,f1` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub language: String,
    pub class: String,
    pub model: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedRow {
    #[serde(flatten)]
    pub row: TableRow,
    pub attainable: (f64, f64),
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableValidation {
    pub rows: usize,
    pub consistent: usize,
    pub tolerance: f64,
    pub flagged: Vec<FlaggedRow>,
}

impl TableValidation {
    pub fn consistent_fraction(&self) -> f64 {
        if self.rows == 0 {
            0.0
        } else {
            self.consistent as f64 / self.rows as f64
        }
    }
}

pub fn read_table(path: &Path) -> Result<Vec<TableRow>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?
        .deserialize()
        .collect::<Result<Vec<TableRow>, _>>()
        .with_context(|| format!("malformed table {}", path.display()))
}

pub fn validate_table(rows: &[TableRow], tolerance: f64) -> TableValidation {
    let report_rows: Vec<ReportRow> = rows
        .iter()
        .map(|r| ReportRow {
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
        })
        .collect();
    let flags = validate_report_consistency(&report_rows, tolerance);
    TableValidation {
        rows: rows.len(),
        consistent: rows.len() - flags.len(),
        tolerance,
        flagged: flags
            .into_iter()
            .map(|f| FlaggedRow {
                row: rows[f.index].clone(),
                attainable: f.attainable,
                gap: f.gap,
            })
            .collect(),
    }
}
