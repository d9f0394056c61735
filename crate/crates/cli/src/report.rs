//! Human-readable tables and machine-readable records of metric reports.

use std::fmt::Write as _;

use segse_core::metrics::{MetricsReport, Score, METRIC_NAMES};

/// Column headers of the per-class table.
const HEADERS: [&str; 5] = ["DC", "PPV", "Sens", "HD95", "ASSD"];

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

/// Per-class means (over defined entries) and their mean over foreground
/// classes, one row per class.
pub fn table(report: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<8}", "class");
    for h in HEADERS {
        let _ = write!(s, " {h:>8}");
    }
    s.push('\n');
    for class in 1..report.classes {
        let _ = write!(s, "{class:<8}");
        for m in 0..METRIC_NAMES.len() {
            let _ = write!(s, " {:>8}", cell(report.class_mean(class, m)));
        }
        s.push('\n');
    }
    let _ = write!(s, "{:<8}", "mean");
    for m in 0..METRIC_NAMES.len() {
        let _ = write!(s, " {:>8}", cell(report.mean(m)));
    }
    s.push('\n');
    s
}

fn status(score: Score) -> (&'static str, f64) {
    match score {
        Score::Value(v) => ("value", v),
        Score::Vacuous(v) => ("vacuous", v),
        Score::Undefined => ("undefined", f64::NAN),
    }
}

/// Tab-separated `sample class metric value status` rows. Values use the
/// shortest round-tripping decimal form; undefined entries read `NaN`.
pub fn record(report: &MetricsReport, sample_ids: &[u64]) -> String {
    let mut s = String::from("sample\tclass\tmetric\tvalue\tstatus\n");
    for (row, id) in report.samples.iter().zip(sample_ids) {
        for (k, metrics) in row.iter().enumerate() {
            for (name, score) in METRIC_NAMES.iter().zip(metrics.scores()) {
                let (st, v) = status(score);
                let _ = writeln!(s, "{id}\t{}\t{name}\t{v:?}\t{st}", k + 1);
            }
        }
    }
    s
}
