use depsev_core::evaluation::{confusion, metrics, validate_report_consistency, ReportRow};
use depsev_core::labeling::CoarseLabel;
use proptest::prelude::*;
use serde::Deserialize;

fn labels(n: usize) -> impl Strategy<Value = Vec<CoarseLabel>> {
    prop::collection::vec(prop::sample::select(CoarseLabel::ALL.to_vec()), n)
}

proptest! {
    #[test]
    fn metrics_are_well_formed(
        (truth, pred) in (1usize..60).prop_flat_map(|n| (labels(n), labels(n))),
    ) {
        let cm = confusion(&truth, &pred, &CoarseLabel::ALL).unwrap();
        prop_assert_eq!(cm.total(), truth.len() as u64);
        let report = metrics(&cm, "M", "en");
        let correct = truth.iter().zip(&pred).filter(|(t, p)| t == p).count();
        prop_assert!((report.accuracy - correct as f64 / truth.len() as f64).abs() < 1e-15);
        for (i, m) in report.per_class.iter().enumerate() {
            for v in [m.precision, m.recall, m.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let support = truth.iter().filter(|t| **t == m.class).count() as u64;
            prop_assert_eq!(cm.support(i), support);
            prop_assert_eq!(m.support, support);
            if m.precision + m.recall > 0.0 {
                let identity = 2.0 * m.precision * m.recall / (m.precision + m.recall);
                prop_assert!((m.f1 - identity).abs() < 1e-12);
            } else {
                prop_assert_eq!(m.f1, 0.0);
            }
        }
    }
}

#[derive(Deserialize)]
struct TableRow {
    language: String,
    class: String,
    model: String,
    precision: f64,
    recall: f64,
    f1: f64,
}

fn reference_rows() -> Vec<TableRow> {
    let path = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/fixtures/reference_tables.csv"
    );
    csv::Reader::from_path(path)
        .unwrap()
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap()
}

#[test]
fn reference_tables_are_mostly_consistent() {
    let rows = reference_rows();
    assert_eq!(rows.len(), 40);
    let triples: Vec<ReportRow> = rows
        .iter()
        .map(|r| ReportRow {
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
        })
        .collect();
    let flags = validate_report_consistency(&triples, 0.02);
    let passing = rows.len() - flags.len();
    assert!(
        passing * 5 >= rows.len() * 4,
        "only {passing}/{} rows consistent",
        rows.len()
    );
    let flagged: Vec<(&str, &str, &str)> = flags
        .iter()
        .map(|f| {
            let r = &rows[f.index];
            (r.language.as_str(), r.class.as_str(), r.model.as_str())
        })
        .collect();
    assert!(flagged.contains(&("en", "normal", "SVM")), "{flagged:?}");
}

#[test]
fn quoted_rows_check_out() {
    let ok = |p, r, f| {
        validate_report_consistency(
            &[ReportRow {
                precision: p,
                recall: r,
                f1: f,
            }],
            0.02,
        )
        .is_empty()
    };
    assert!(ok(0.44, 0.79, 0.56));
    assert!(ok(0.69, 0.79, 0.73));
    assert!(!ok(0.10, 0.50, 0.67));
}
