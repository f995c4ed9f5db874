//! Human-readable tables for a report.

use std::fmt::Write;

use super::evaluate::{ComparisonRow, EvaluationReport};
use crate::featuremap::MetricKind;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `comparison,r,p_value,auc_prc`, one row per map compared with the twin.
pub fn online_table(report: &EvaluationReport, metric: MetricKind) -> String {
    let mut out = String::from("comparison,r,p_value,auc_prc,n_cells\n");
    for r in report.online.iter().filter(|r| r.metric == metric.slug()) {
        writeln!(
            out,
            "{} vs {},{},{},{},{}",
            r.label,
            r.reference,
            opt(r.pearson_r),
            opt(r.pearson_p),
            opt(r.auc_prc),
            r.n_cells
        )
        .unwrap();
    }
    out
}

/// `comparison,wasserstein,wilcoxon_p,n_samples`.
pub fn offline_table(report: &EvaluationReport) -> String {
    let mut out = String::from("comparison,wasserstein,wilcoxon_p,n_samples\n");
    for r in &report.offline {
        writeln!(
            out,
            "{} vs {},{},{},{}",
            r.label,
            r.reference,
            opt(r.distance),
            opt(r.wilcoxon_p),
            r.n_samples
        )
        .unwrap();
    }
    out
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into())
}

fn text_row(r: &ComparisonRow) -> String {
    format!(
        "  {:<14} r={:<7} p={:<7} auc={:<7} cells={}",
        format!("{} vs {}", r.label, r.reference),
        fmt_cell(r.pearson_r),
        fmt_cell(r.pearson_p),
        fmt_cell(r.auc_prc),
        r.n_cells
    )
}

/// Plain-text summary for the terminal.
pub fn summary(report: &EvaluationReport) -> String {
    let mut s = String::new();
    for m in MetricKind::ALL {
        writeln!(s, "{}:", m.slug()).unwrap();
        for r in report.online.iter().filter(|r| r.metric == m.slug()) {
            writeln!(s, "{}", text_row(r)).unwrap();
        }
    }
    writeln!(s, "offline steering error:").unwrap();
    for r in &report.offline {
        writeln!(
            s,
            "  {:<14} wasserstein={} wilcoxon_p={}",
            format!("{} vs {}", r.label, r.reference),
            fmt_cell(r.distance),
            fmt_cell(r.wilcoxon_p)
        )
        .unwrap();
    }
    s
}
