//! CSV serialization for metrics, spectra, loss histories, correlation
//! maps, and rollout comparisons. Numbers are written with Rust's
//! shortest round-trip formatting, so read → write reproduces the bytes.

use std::fmt::Write as _;

use crate::analysis::{CorrelationMap, MetricsReport, SpectrumReport};
use crate::error::{Error, Result};
use crate::rollout::RolloutResult;

/// One `time,d_mse,d_fro,d_spe,d_max` row per entry.
pub fn metrics_csv(rows: &[(f64, MetricsReport)]) -> String {
    let mut out = String::from("time,d_mse,d_fro,d_spe,d_max\n");
    for (time, m) in rows {
        let _ = writeln!(out, "{},{},{},{},{}", time, m.d_mse, m.d_fro, m.d_spe, m.d_max);
    }
    out
}

/// One `k,energy` row per shell, annotated with the isotropic limit.
pub fn spectrum_csv(report: &SpectrumReport) -> String {
    let mut out = format!(
        "# convention: {}\n# isotropic_limit: {}\nk,energy\n",
        report.convention, report.isotropic_limit
    );
    for (k, e) in report.energies.iter().enumerate() {
        let _ = writeln!(out, "{},{}", k, e);
    }
    out
}

/// One `epoch,loss` row per training epoch.
pub fn loss_csv(epoch_losses: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (epoch, loss) in epoch_losses.iter().enumerate() {
        let _ = writeln!(out, "{},{}", epoch, loss);
    }
    out
}

/// One `i,j,value,defined` row per grid cell.
pub fn correlation_csv(map: &CorrelationMap) -> String {
    let mut out = format!(
        "# x_c: {},{}\n# samples: {}\ni,j,value,defined\n",
        map.x_c.0, map.x_c.1, map.samples
    );
    for ((i, j), v) in map.values.indexed_iter() {
        let _ = writeln!(out, "{},{},{},{}", i, j, v, u8::from(map.defined[[i, j]]));
    }
    out
}

/// One `time,d_fro` row per error record of a rollout.
pub fn rollout_csv(result: &RolloutResult) -> String {
    let mut out = String::from("time,d_fro\n");
    for (t, e) in result.times.iter().zip(result.omega_error.iter()) {
        let _ = writeln!(out, "{},{}", t, e);
    }
    out
}

/// Cost/error comparison across rollout settings, one row per run.
pub fn settings_csv(rows: &[(String, &RolloutResult)]) -> String {
    let mut out = String::from(
        "setting,closure_source,samples_drawn,sampling_seconds,total_seconds,generated_d_fro,terminal_d_fro\n",
    );
    for (setting, r) in rows {
        let generated = r
            .generated_error
            .map(|e| e.to_string())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            setting,
            r.closure_source,
            r.samples_drawn,
            r.sampling_seconds,
            r.total_seconds,
            generated,
            r.terminal_error
        );
    }
    out
}

/// Parse a CSV produced by this module: `#` lines are skipped, the first
/// remaining line is the header, every later cell must be numeric (empty
/// cells read as NaN).
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty CSV".into()))?
        .split(',')
        .map(str::to_string)
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    for line in lines {
        let mut row = Vec::with_capacity(header.len());
        for cell in line.split(',') {
            if cell.is_empty() {
                row.push(f64::NAN);
            } else {
                row.push(cell.parse().map_err(|_| {
                    Error::Format(format!("non-numeric CSV cell '{cell}'"))
                })?);
            }
        }
        if row.len() != header.len() {
            return Err(Error::Format(format!(
                "CSV row has {} cells, header has {}",
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// Index of a named column in a parsed header.
pub fn column(header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Format(format!("CSV has no '{name}' column")))
}
