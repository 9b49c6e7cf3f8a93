use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FrapError, Result};
use crate::harness::batch::SummaryRow;
use crate::pipeline::RunRecord;

const HEADERS: [&str; 16] = [
    "prompt_id",
    "seed",
    "variant",
    "status",
    "prompt",
    "final_total",
    "final_presence",
    "final_binding",
    "proxy_presence_mean",
    "proxy_presence_min",
    "proxy_binding_mean",
    "proxy_final_total_loss",
    "weighting_steps",
    "call_count",
    "wall_ms",
    "error",
];

fn malformed(err: &csv::Error) -> FrapError {
    let line = err.position().map_or(0, |p| p.line());
    let message = match err.kind() {
        csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
        _ => err.to_string(),
    };
    FrapError::MalformedCsv { line, message }
}

/// Parses a summary CSV, reporting the offending line on failure.
pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let text = fs::read_to_string(path).map_err(|e| FrapError::io(path, e))?;
    parse_summary_csv(&text)
}

pub fn parse_summary_csv(text: &str) -> Result<Vec<SummaryRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| malformed(&e))?.clone();
    if headers.iter().ne(HEADERS) {
        return Err(FrapError::MalformedCsv {
            line: 1,
            message: format!("unexpected header `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    reader.deserialize().map(|r| r.map_err(|e| malformed(&e))).collect()
}

fn cell(v: Option<f64>) -> String {
    match v {
        None => "-".into(),
        Some(x) if x.fract() == 0.0 && x.abs() < 1e9 => format!("{x:.0}"),
        Some(x) => format!("{x:.4}"),
    }
}

/// Aligned plain-text table of the main columns.
pub fn render_table(rows: &[SummaryRow]) -> String {
    let header = [
        "prompt_id",
        "seed",
        "variant",
        "status",
        "final_total",
        "proxy_presence_mean",
        "proxy_presence_min",
        "proxy_binding_mean",
        "steps",
        "calls",
        "wall_ms",
    ];
    let mut table: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for r in rows {
        table.push(vec![
            r.prompt_id.clone(),
            r.seed.map_or("-".into(), |s| s.to_string()),
            r.variant.clone(),
            r.status.clone(),
            cell(r.final_total),
            cell(r.proxy_presence_mean),
            cell(r.proxy_presence_min),
            cell(r.proxy_binding_mean),
            cell(r.weighting_steps),
            cell(r.call_count),
            r.wall_ms.map_or("-".into(), |w| format!("{w:.1}")),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| table.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &table {
        let line: Vec<String> = row.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// One monitored step of a run, for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub total: f64,
    pub presence: f64,
    pub binding: f64,
    /// Mean weight over the object tokens.
    pub mean_phi_objects: f64,
}

pub fn trajectory(record: &RunRecord) -> Vec<TrajectoryRow> {
    let objects = record.prompt.objects();
    record
        .steps
        .iter()
        .zip(&record.losses)
        .zip(&record.phi)
        .map(|((&step, loss), phi)| TrajectoryRow {
            step,
            total: loss.total,
            presence: loss.presence,
            binding: loss.binding,
            mean_phi_objects: objects.iter().map(|&s| phi[s]).sum::<f64>() / objects.len() as f64,
        })
        .collect()
}

pub fn write_trajectory(path: &Path, record: &RunRecord) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in trajectory(record) {
        writer.serialize(row)?;
    }
    writer.flush().map_err(|e| FrapError::io(path, e))
}
