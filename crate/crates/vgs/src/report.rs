//! Report emission: `report.json` (machine readable, lossless) and
//! `report.txt` (aligned Open/Closed/Overall/Δ table).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use vgs_core::eval::EvalReport;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no reports to emit")]
    Empty,
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing report: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Text,
}

impl ReportFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Json => "report.json",
            ReportFormat::Text => "report.txt",
        }
    }
}

pub fn to_json(reports: &[EvalReport]) -> String {
    let mut s = serde_json::to_string_pretty(reports).expect("reports serialize");
    s.push('\n');
    s
}

pub fn from_json(text: &str) -> Result<Vec<EvalReport>, ReportError> {
    Ok(serde_json::from_str(text)?)
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn signed_pct(x: f64) -> String {
    format!("{:+.2}", 100.0 * x)
}

/// Renders the summary table. Metrics are percentages; the baseline row
/// shows `--` in the Δ column.
pub fn to_text(reports: &[EvalReport]) -> String {
    let header = ["Method", "Open", "Closed", "Overall", "Δ"];
    let rows: Vec<[String; 5]> = reports
        .iter()
        .map(|r| {
            [
                r.label.clone(),
                pct(r.open_recall),
                pct(r.closed_acc),
                pct(r.overall),
                r.delta_vs_baseline
                    .map_or_else(|| "--".to_string(), signed_pct),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[&str]| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(widths).enumerate() {
            let pad = w - cell.chars().count();
            if i == 0 {
                s.push_str(cell);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str("  ");
                s.push_str(&" ".repeat(pad));
                s.push_str(cell);
            }
        }
        s.trim_end().to_string()
    };

    let mut out = String::new();
    out.push_str(&line(&header));
    out.push('\n');
    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for row in &rows {
        let cells: Vec<&str> = row.iter().map(String::as_str).collect();
        out.push_str(&line(&cells));
        out.push('\n');
    }

    out.push('\n');
    for r in reports {
        let _ = write!(
            out,
            "{}: n_open={} n_closed={} failed={} excluded={}",
            r.label, r.n_open, r.n_closed, r.n_failed, r.n_excluded
        );
        if let Some(sig) = &r.significance {
            let _ = write!(
                out,
                " mcnemar_p={:.4} (b={}, c={})",
                sig.mcnemar_exact_p, sig.closed_baseline_only, sig.closed_candidate_only
            );
            if let Some(b) = &sig.overall_bootstrap {
                let _ = write!(
                    out,
                    " overall_ci=[{}, {}] bootstrap_p={:.4}",
                    signed_pct(b.ci_low),
                    signed_pct(b.ci_high),
                    b.p_value
                );
            }
        }
        out.push('\n');
    }
    out
}

/// Writes the requested formats into `dir`, creating it if needed.
pub fn emit_report(
    reports: &[EvalReport],
    dir: &Path,
    formats: &[ReportFormat],
) -> Result<Vec<PathBuf>, ReportError> {
    if reports.is_empty() {
        return Err(ReportError::Empty);
    }
    std::fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    formats
        .iter()
        .map(|&f| {
            let path = dir.join(f.file_name());
            let body = match f {
                ReportFormat::Json => to_json(reports),
                ReportFormat::Text => to_text(reports),
            };
            std::fs::write(&path, body).map_err(|source| ReportError::Io {
                path: path.clone(),
                source,
            })?;
            Ok(path)
        })
        .collect()
}
