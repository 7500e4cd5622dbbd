//! Result tables in markdown, CSV and JSON.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::EntityClass;
use crate::scoring::format_failure_percent;

use super::ExperimentError;

/// One model (or baseline) x prompt variant x matching setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model_id: String,
    pub variant_label: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iteration_time_s: f64,
    pub matching_enabled: bool,
    pub json_errors: usize,
    pub total_iterations: usize,
    pub failure_percent: f64,
    #[serde(default)]
    pub baseline: bool,
}

/// Structuring failures of one model summed over every variant and repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuringRow {
    pub model_id: String,
    pub json_errors: usize,
    pub iterations: usize,
    pub failure_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub entity_class: EntityClass,
    pub article_count: usize,
    pub repetitions: u32,
    pub concurrent_articles: usize,
    pub rows: Vec<ReportRow>,
    pub structuring: Vec<StructuringRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [
        ReportFormat::Markdown,
        ReportFormat::Csv,
        ReportFormat::Json,
    ];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Markdown => "md",
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

impl RunReport {
    /// Timing columns are only comparable when articles ran one at a time.
    pub fn timing_comparable(&self) -> bool {
        self.concurrent_articles <= 1
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn markdown(report: &RunReport) -> String {
    let title = match report.entity_class {
        EntityClass::Individual => "Individual identification results",
        EntityClass::Organization => "Organization identification results",
    };
    let mut out = format!(
        "# {title}\n\n{} articles, {} repetition(s) per row.\n",
        report.article_count, report.repetitions
    );
    if !report.timing_comparable() {
        let _ = writeln!(
            out,
            "\nArticles ran {} at a time; execution times are not comparable with sequential runs.",
            report.concurrent_articles
        );
    }
    out.push_str(
        "\n| Base model | Accuracy | Precision | Recall | F1 Score | Execution Time (Sec) | Prompt Additions | Matching |\n\
         |---|---|---|---|---|---|---|---|\n",
    );
    for r in &report.rows {
        let _ = writeln!(
            out,
            "| {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.1} | {} | {} |",
            r.model_id,
            r.accuracy,
            r.precision,
            r.recall,
            r.f1,
            r.iteration_time_s,
            r.variant_label,
            yes_no(r.matching_enabled)
        );
    }
    if !report.structuring.is_empty() {
        out.push_str(
            "\n## Structuring\n\n| Base model | Json errors | Iterations | Failure percent |\n|---|---|---|---|\n",
        );
        for s in &report.structuring {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                s.model_id,
                s.json_errors,
                s.iterations,
                format_failure_percent(s.failure_percent)
            );
        }
    }
    out
}

fn csv_rows(report: &RunReport) -> Result<String, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &report.rows {
        w.serialize(row)
            .map_err(|e| ExperimentError::Report(e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| ExperimentError::Report(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Parses the CSV form back into rows.
pub fn parse_csv_rows(raw: &str) -> Result<Vec<ReportRow>, ExperimentError> {
    csv::Reader::from_reader(raw.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| ExperimentError::Report(e.to_string()))
}

/// Renders a report. Markdown follows the published table layout.
pub fn render_report(report: &RunReport, format: ReportFormat) -> Result<String, ExperimentError> {
    if report.rows.is_empty() {
        return Err(ExperimentError::Report("report has no rows".into()));
    }
    match format {
        ReportFormat::Markdown => Ok(markdown(report)),
        ReportFormat::Csv => csv_rows(report),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            Ok(s)
        }
    }
}

/// Writes `report.<ext>` into `dir` and returns the path.
pub fn emit_report(
    report: &RunReport,
    format: ReportFormat,
    dir: &Path,
) -> Result<std::path::PathBuf, ExperimentError> {
    let body = render_report(report, format)?;
    let path = dir.join(format!("report.{}", format.extension()));
    std::fs::write(&path, body).map_err(|e| ExperimentError::io(&path, e))?;
    Ok(path)
}
