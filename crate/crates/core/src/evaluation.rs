//! Confusion matrices, per-class precision/recall/F1, accuracy, and report
//! rendering.
//!
//! Any metric whose denominator is zero is reported as 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::labeling::CoarseLabel;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("{truth} true labels but {predicted} predictions")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("cannot evaluate zero samples")]
    Empty,
    #[error("label {0} is not in the class list")]
    UnknownLabel(CoarseLabel),
    #[error("reports use different class lists: {0}")]
    InconsistentClasses(String),
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<CoarseLabel>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Number of samples whose true label is class `i`.
    pub fn support(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn predicted(&self, i: usize) -> u64 {
        self.counts.iter().map(|row| row[i]).sum()
    }
}

pub fn confusion(
    y_true: &[CoarseLabel],
    y_pred: &[CoarseLabel],
    classes: &[CoarseLabel],
) -> Result<ConfusionMatrix, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch {
            truth: y_true.len(),
            predicted: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(EvalError::Empty);
    }
    let position = |l: &CoarseLabel| {
        classes
            .iter()
            .position(|c| c == l)
            .ok_or(EvalError::UnknownLabel(*l))
    };
    let mut counts = vec![vec![0u64; classes.len()]; classes.len()];
    for (t, p) in y_true.iter().zip(y_pred) {
        counts[position(t)?][position(p)?] += 1;
    }
    Ok(ConfusionMatrix {
        classes: classes.to_vec(),
        counts,
    })
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: CoarseLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub language: String,
    pub samples: u64,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

impl EvalReport {
    pub fn classes(&self) -> Vec<CoarseLabel> {
        self.per_class.iter().map(|m| m.class).collect()
    }
}

pub fn metrics(cm: &ConfusionMatrix, model: &str, language: &str) -> EvalReport {
    let per_class: Vec<ClassMetrics> = cm
        .classes
        .iter()
        .enumerate()
        .map(|(i, &class)| {
            let tp = cm.counts[i][i] as f64;
            let precision = ratio(tp, cm.predicted(i) as f64);
            let recall = ratio(tp, cm.support(i) as f64);
            ClassMetrics {
                class,
                precision,
                recall,
                f1: f1_score(precision, recall),
                support: cm.support(i),
            }
        })
        .collect();
    let k = per_class.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| ratio(per_class.iter().map(f).sum(), k);
    EvalReport {
        model: model.to_string(),
        language: language.to_string(),
        samples: cm.total(),
        accuracy: ratio(cm.trace() as f64, cm.total() as f64),
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        per_class,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Text,
    Machine,
}

#[derive(Serialize)]
struct ClassRecord<'a> {
    model: &'a str,
    language: &'a str,
    class: CoarseLabel,
    precision: f64,
    recall: f64,
    f1: f64,
    support: u64,
}

#[derive(Serialize)]
struct AccuracyRecord<'a> {
    model: &'a str,
    language: &'a str,
    accuracy: f64,
    samples: u64,
    macro_precision: f64,
    macro_recall: f64,
    macro_f1: f64,
}

/// Text: one column per model, class x metric rows, accuracy last, two
/// decimals. Machine: one JSON object per line at full precision.
pub fn render_report(reports: &[EvalReport], format: ReportFormat) -> Result<String, EvalError> {
    let Some(first) = reports.first() else {
        return Ok(String::new());
    };
    let classes = first.classes();
    if let Some(other) = reports.iter().find(|r| r.classes() != classes) {
        return Err(EvalError::InconsistentClasses(format!(
            "{} has {:?}, {} has {:?}",
            first.model,
            classes,
            other.model,
            other.classes()
        )));
    }
    let mut out = String::new();
    match format {
        ReportFormat::Machine => {
            for r in reports {
                for m in &r.per_class {
                    let record = ClassRecord {
                        model: &r.model,
                        language: &r.language,
                        class: m.class,
                        precision: m.precision,
                        recall: m.recall,
                        f1: m.f1,
                        support: m.support,
                    };
                    out.push_str(&serde_json::to_string(&record).expect("record serializes"));
                    out.push('\n');
                }
                let record = AccuracyRecord {
                    model: &r.model,
                    language: &r.language,
                    accuracy: r.accuracy,
                    samples: r.samples,
                    macro_precision: r.macro_precision,
                    macro_recall: r.macro_recall,
                    macro_f1: r.macro_f1,
                };
                out.push_str(&serde_json::to_string(&record).expect("record serializes"));
                out.push('\n');
            }
        }
        ReportFormat::Text => {
            let width = reports
                .iter()
                .map(|r| r.model.len())
                .max()
                .unwrap_or(0)
                .max(6);
            let rule = "-".repeat(22 + reports.len() * (width + 2));
            let mut line = format!("{:<10}{:<12}", "Class", "Metric");
            for r in reports {
                let _ = write!(line, "{:>w$}  ", r.model, w = width);
            }
            out.push_str(line.trim_end());
            out.push('\n');
            out.push_str(&rule);
            out.push('\n');
            let metrics: [(&str, MetricGetter); 3] = [
                ("Precision", |m| m.precision),
                ("Recall", |m| m.recall),
                ("F-1", |m| m.f1),
            ];
            for (i, class) in classes.iter().enumerate() {
                for (j, (name, get)) in metrics.iter().enumerate() {
                    let label = if j == 0 { class.title() } else { "" };
                    let mut line = format!("{label:<10}{name:<12}");
                    for r in reports {
                        let _ = write!(line, "{:>w$.2}  ", get(&r.per_class[i]), w = width);
                    }
                    out.push_str(line.trim_end());
                    out.push('\n');
                }
                out.push_str(&rule);
                out.push('\n');
            }
            let mut line = format!("{:<22}", "Accuracy");
            for r in reports {
                let _ = write!(line, "{:>w$.2}  ", r.accuracy, w = width);
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
    }
    Ok(out)
}

/// A published (precision, recall, F1) triple, each rounded to two decimals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyFlag {
    pub index: usize,
    pub row: ReportRow,
    /// Range of F1 reachable from any precision and recall that round to the
    /// printed values.
    pub attainable: (f64, f64),
    /// Distance between that range and the range of the printed F1.
    pub gap: f64,
}

const ROUNDING: f64 = 0.005;

/// Flags rows whose printed F1 cannot be the harmonic mean of the printed
/// precision and recall, allowing for rounding of all three values plus
/// `tolerance`. F1 is increasing in both arguments, so the reachable range
/// is spanned by the corners of the rounding box.
pub fn validate_report_consistency(rows: &[ReportRow], tolerance: f64) -> Vec<ConsistencyFlag> {
    let widen = |v: f64| ((v - ROUNDING).max(0.0), (v + ROUNDING).min(1.0));
    rows.iter()
        .enumerate()
        .filter_map(|(index, row)| {
            let (p_lo, p_hi) = widen(row.precision);
            let (r_lo, r_hi) = widen(row.recall);
            let (f_lo, f_hi) = widen(row.f1);
            let attainable = (f1_score(p_lo, r_lo), f1_score(p_hi, r_hi));
            let gap = (attainable.0 - f_hi).max(f_lo - attainable.1).max(0.0);
            (gap > tolerance).then_some(ConsistencyFlag {
                index,
                row: *row,
                attainable,
                gap,
            })
        })
        .collect()
}

type MetricGetter = fn(&ClassMetrics) -> f64;
