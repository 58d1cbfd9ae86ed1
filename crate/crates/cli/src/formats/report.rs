//! Metric reports.
//!
//! Two serializations of the same report:
//! - flat key-value text (`name value` per line, `name -` for metrics that
//!   do not apply), human-facing, parseable back for round trips
//! - one CSV row per (model, split), appendable into a shared table with
//!   header `model,split,<metric columns>,n_clicked,n_impressions`
//!
//! Floats use Rust's shortest round-trip decimal formatting.

use std::fs;
use std::path::Path;

use cvrkit_core::metrics::MetricReport;

use super::parse_err;
use crate::error::CliError;

pub fn report_to_text(model: &str, split: &str, report: &MetricReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("model {model}\n"));
    out.push_str(&format!("split {split}\n"));
    out.push_str(&format!("n_clicked {}\n", report.n_clicked));
    out.push_str(&format!("n_impressions {}\n", report.n_impressions));
    for (name, value) in report.fields() {
        match value {
            Some(v) => out.push_str(&format!("{name} {v}\n")),
            None => out.push_str(&format!("{name} -\n")),
        }
    }
    out
}

pub fn write_report_text(
    model: &str,
    split: &str,
    report: &MetricReport,
    path: &Path,
) -> Result<(), CliError> {
    fs::write(path, report_to_text(model, split, report))?;
    Ok(())
}

/// Parse a flat key-value report back; returns (model, split, report).
pub fn load_report_text(path: &Path) -> Result<(String, String, MetricReport), CliError> {
    let text = fs::read_to_string(path)?;
    let p = path.display().to_string();
    let mut model = None;
    let mut split = None;
    let mut report = MetricReport::default();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| parse_err(&p, lineno, "expected `key value`"))?;
        let metric = if value == "-" {
            None
        } else if key == "model" || key == "split" || key == "n_clicked" || key == "n_impressions" {
            None
        } else {
            Some(
                value
                    .parse::<f64>()
                    .map_err(|_| parse_err(&p, lineno, format!("bad number {value:?}")))?,
            )
        };
        match key {
            "model" => model = Some(value.to_string()),
            "split" => split = Some(value.to_string()),
            "n_clicked" => {
                report.n_clicked = value
                    .parse()
                    .map_err(|_| parse_err(&p, lineno, "bad n_clicked"))?
            }
            "n_impressions" => {
                report.n_impressions = value
                    .parse()
                    .map_err(|_| parse_err(&p, lineno, "bad n_impressions"))?
            }
            "auc_cvr" => report.auc_cvr = metric,
            "nll_cvr" => report.nll_cvr = metric,
            "d_auc_cvr" => report.d_auc_cvr = metric,
            "d_nll_cvr" => report.d_nll_cvr = metric,
            "auc_ctcvr" => report.auc_ctcvr = metric,
            "nll_ctcvr" => report.nll_ctcvr = metric,
            "oracle_auc_cvr_entire_space" => report.oracle_auc_cvr_entire_space = metric,
            other => return Err(parse_err(&p, lineno, format!("unknown key {other:?}"))),
        }
    }
    let model = model.ok_or_else(|| parse_err(&p, 0, "missing model line"))?;
    let split = split.ok_or_else(|| parse_err(&p, 0, "missing split line"))?;
    Ok((model, split, report))
}

pub fn report_csv_header() -> String {
    let metrics = MetricReport::metric_names().join(",");
    format!("model,split,{metrics},n_clicked,n_impressions")
}

/// One CSV row; absent metrics serialize as empty fields.
pub fn report_csv_row(model: &str, split: &str, report: &MetricReport) -> String {
    let mut row = format!("{model},{split}");
    for (_, value) in report.fields() {
        row.push(',');
        if let Some(v) = value {
            row.push_str(&v.to_string());
        }
    }
    row.push_str(&format!(",{},{}", report.n_clicked, report.n_impressions));
    row
}

/// Write header plus one row per (model, split, report) triple.
pub fn write_report_csv(
    rows: &[(String, String, MetricReport)],
    path: &Path,
) -> Result<(), CliError> {
    let mut out = report_csv_header();
    out.push('\n');
    for (model, split, report) in rows {
        out.push_str(&report_csv_row(model, split, report));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> MetricReport {
        MetricReport {
            auc_cvr: Some(0.7123456789),
            nll_cvr: Some(0.35),
            d_auc_cvr: Some(0.71),
            d_nll_cvr: None,
            auc_ctcvr: Some(0.81),
            nll_ctcvr: Some(0.05),
            oracle_auc_cvr_entire_space: None,
            n_clicked: 120,
            n_impressions: 1000,
        }
    }

    #[test]
    fn text_round_trip() {
        let report = sample_report();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.txt");
        write_report_text("joint", "test", &report, &path).unwrap();
        let (model, split, loaded) = load_report_text(&path).unwrap();
        assert_eq!(model, "joint");
        assert_eq!(split, "test");
        assert_eq!(loaded, report);
    }

    #[test]
    fn csv_row_leaves_absent_metrics_empty() {
        let report = sample_report();
        let header = report_csv_header();
        let row = report_csv_row("ukd", "test", &report);
        assert_eq!(
            header.split(',').count(),
            row.split(',').count(),
            "row must match header width"
        );
        // d_nll_cvr and oracle AUC are absent: adjacent commas
        let cells: Vec<&str> = row.split(',').collect();
        let names: Vec<&str> = header.split(',').collect();
        let d_nll_idx = names.iter().position(|n| *n == "d_nll_cvr").unwrap();
        assert_eq!(cells[d_nll_idx], "");
        assert_eq!(cells[0], "ukd");
    }
}
