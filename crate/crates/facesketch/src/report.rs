//! Comparison tables and qualitative grids.
//!
//! Two table layouts are chosen from the input:
//!
//! * every report carries slices: one row per report,
//!   `model,metric,overall,<17 slice columns>`;
//! * every report is overall-only: one row per model, one column per metric
//!   in first-seen order.
//!
//! Numbers print with three decimals; empty slices print `n/a`.

use std::collections::BTreeSet;
use std::path::Path;

use facesketch_core::attributes::SLICE_KEYS;
use facesketch_core::image::Image;
use facesketch_core::metrics::MetricReport;

use crate::error::{Error, Result};
use crate::imageio::{resize, write_png};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::Usage(format!("unknown report format {other:?}"))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

fn num(v: f64) -> String {
    format!("{v:.3}")
}

fn render(header: &[String], rows: &[Vec<String>], format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(Vec::new());
            w.write_record(header).expect("in-memory write");
            for r in rows {
                w.write_record(r).expect("in-memory write");
            }
            out = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells");
        }
        ReportFormat::Markdown => {
            let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
            out.push_str(&line(header));
            let rule: Vec<String> = header
                .iter()
                .enumerate()
                .map(|(i, _)| if i == 0 { ":--".into() } else { "--:".into() })
                .collect();
            out.push_str(&line(&rule));
            for r in rows {
                out.push_str(&line(r));
            }
        }
    }
    out
}

fn slices_table(reports: &[MetricReport], format: ReportFormat) -> Result<String> {
    let keys: BTreeSet<&String> = reports[0].slices.keys().collect();
    for r in reports {
        if r.slices.keys().collect::<BTreeSet<_>>() != keys {
            return Err(Error::Usage(format!(
                "report {}/{} has different slice keys",
                r.model, r.metric
            )));
        }
    }
    let columns: Vec<&str> = SLICE_KEYS
        .iter()
        .copied()
        .filter(|k| keys.contains(&k.to_string()))
        .collect();
    if columns.len() != keys.len() {
        return Err(Error::Usage("reports carry unknown slice keys".into()));
    }
    let mut header: Vec<String> = vec!["model".into(), "metric".into(), "overall".into()];
    header.extend(columns.iter().map(|k| k.to_string()));
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut row = vec![r.model.clone(), r.metric.clone(), num(r.overall)];
            row.extend(columns.iter().map(|k| match r.slice(k) {
                Some(s) if s.count > 0 => num(s.mean),
                _ => "n/a".into(),
            }));
            row
        })
        .collect();
    Ok(render(&header, &rows, format))
}

fn overall_table(reports: &[MetricReport], format: ReportFormat) -> Result<String> {
    let mut metrics: Vec<&str> = Vec::new();
    let mut models: Vec<&str> = Vec::new();
    for r in reports {
        if !metrics.contains(&r.metric.as_str()) {
            metrics.push(&r.metric);
        }
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    let mut header = vec!["model".to_string()];
    header.extend(metrics.iter().map(|m| m.to_string()));
    let mut rows = Vec::with_capacity(models.len());
    for model in &models {
        let mut row = vec![model.to_string()];
        for metric in &metrics {
            let hits: Vec<&MetricReport> = reports
                .iter()
                .filter(|r| r.model == *model && r.metric == *metric)
                .collect();
            match hits.as_slice() {
                [r] => row.push(num(r.overall)),
                [] => return Err(Error::Usage(format!("model {model} has no {metric} result"))),
                _ => return Err(Error::Usage(format!("model {model} has several {metric} results"))),
            }
        }
        rows.push(row);
    }
    Ok(render(&header, &rows, format))
}

/// Render `reports` as a table. Output bytes depend only on the input.
pub fn emit_report(reports: &[MetricReport], format: ReportFormat) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::Usage("no reports to render".into()));
    }
    let sliced = reports.iter().filter(|r| !r.slices.is_empty()).count();
    if sliced == reports.len() {
        slices_table(reports, format)
    } else if sliced == 0 {
        overall_table(reports, format)
    } else {
        Err(Error::Usage("cannot mix sliced and overall-only reports".into()))
    }
}

pub fn read_report(path: &Path) -> Result<MetricReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema {
        field: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn write_report(path: &Path, report: &MetricReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

const GAP: usize = 2;

/// Write a grid with one row per triplet: input, reference, prediction.
/// Every cell is resized to the first input's size and shown in colour.
pub fn gallery(inputs: &[Image<u8>], references: &[Image<u8>], predictions: &[Image<u8>], out: &Path) -> Result<()> {
    if inputs.len() != references.len() || inputs.len() != predictions.len() {
        return Err(Error::Usage(format!(
            "gallery lists differ in length: {} inputs, {} references, {} predictions",
            inputs.len(),
            references.len(),
            predictions.len()
        )));
    }
    let first = inputs
        .first()
        .ok_or_else(|| Error::Usage("gallery needs at least one triplet".into()))?;
    let (h, w) = first.dims();
    let rows = inputs.len();
    let mut grid = Image::filled(3, rows * h + (rows + 1) * GAP, 3 * w + 4 * GAP, 255u8);
    for (r, cells) in inputs.iter().zip(references).zip(predictions).enumerate() {
        let ((a, b), c) = cells;
        for (col, img) in [a, b, c].into_iter().enumerate() {
            let img = if img.dims() == (h, w) {
                img.clone()
            } else {
                resize(img, h, w)
            };
            let img = match img.channels() {
                3 => img,
                1 => img.repeat_channels(3),
                n => return Err(Error::Usage(format!("gallery cell with {n} channels"))),
            };
            grid.paste(&img, GAP + col * (w + GAP), GAP + r * (h + GAP))?;
        }
    }
    write_png(out, &grid)
}
