//! Rendering of traffic reports as a side-by-side table and as CSV.

use std::fmt::Write as _;
use std::io::Write;

use lmhead::cost::{CostReport, DtypeSpec};
use lmhead::Dims;

use crate::sweep::csv_writer;

pub const COST_CSV_HEADER: [&str; 8] = [
    "strategy",
    "stage",
    "bytes_read",
    "bytes_written",
    "logit_bytes_read",
    "logit_bytes_written",
    "peak_activation_bytes",
    "saved_state_bytes",
];

/// Decimal units, matching how the large figures are usually quoted.
pub fn human_bytes(bytes: u64) -> String {
    const UNITS: [(&str, f64); 4] = [("TB", 1e12), ("GB", 1e9), ("MB", 1e6), ("kB", 1e3)];
    for (unit, scale) in UNITS {
        if bytes as f64 >= scale {
            return format!("{:.2} {unit}", bytes as f64 / scale);
        }
    }
    format!("{bytes} B")
}

fn cell(bytes: u64) -> String {
    if bytes >= 1000 {
        format!("{bytes} ({})", human_bytes(bytes))
    } else {
        bytes.to_string()
    }
}

/// Largest logit write of any single stage; for eager this is the full
/// `B*S*V` tensor produced by the GEMM.
pub fn logit_tensor_bytes(report: &CostReport) -> u64 {
    report
        .stages
        .iter()
        .map(|s| s.logit_bytes_written)
        .max()
        .unwrap_or(0)
}

type Row = (&'static str, fn(&CostReport) -> String);

pub fn render_table(dims: Dims, dt: DtypeSpec, reports: &[CostReport]) -> String {
    let rows: [Row; 7] = [
        ("stages", |r| r.stages.len().to_string()),
        ("bytes read", |r| cell(r.total_read())),
        ("bytes written", |r| cell(r.total_written())),
        ("max logit write", |r| cell(logit_tensor_bytes(r))),
        ("logit traffic (r+w)", |r| cell(r.logit_traffic())),
        ("peak activation", |r| cell(r.peak_activation_bytes)),
        ("saved state", |r| cell(r.saved_state_bytes)),
    ];
    let mut grid: Vec<Vec<String>> = vec![std::iter::once("".to_string())
        .chain(reports.iter().map(|r| r.strategy.name().to_string()))
        .collect()];
    for (label, f) in rows {
        grid.push(
            std::iter::once(label.to_string())
                .chain(reports.iter().map(f))
                .collect(),
        );
    }
    let widths: Vec<usize> = (0..grid[0].len())
        .map(|c| grid.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();

    let mut out = format!(
        "dims {dims}, {}-byte activations, {}-byte indices\n",
        dt.activation_bytes(),
        dt.index_bytes()
    );
    for row in &grid {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (s, &w))| {
                if i == 0 {
                    format!("{s:<w$}")
                } else {
                    format!("{s:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

/// One row per stage, with the report-level peak and saved bytes repeated.
pub fn write_cost_csv<W: Write>(out: W, reports: &[CostReport]) -> anyhow::Result<()> {
    let mut w = csv_writer(out);
    w.write_record(COST_CSV_HEADER)?;
    for r in reports {
        for s in &r.stages {
            w.write_record([
                r.strategy.name().to_string(),
                s.label.to_string(),
                s.bytes_read.to_string(),
                s.bytes_written.to_string(),
                s.logit_bytes_read.to_string(),
                s.logit_bytes_written.to_string(),
                r.peak_activation_bytes.to_string(),
                r.saved_state_bytes.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
