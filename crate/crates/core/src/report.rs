//! CSV and markdown rendering of experiment reports.

use std::fmt;
use std::str::FromStr;

use crate::error::{OpeError, Result};
use crate::estimators::ModelTag;
use crate::experiment::ExperimentReport;

pub const CSV_HEADER: [&str; 7] = [
    "estimator",
    "rmse_mean",
    "rmse_std",
    "n_trials",
    "bias_bound",
    "variance_bound",
    "minimax_lower_bound",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = OpeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(OpeError::Config(format!("unknown report format '{other}'"))),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Csv => "csv",
            Self::Markdown => "markdown",
        })
    }
}

pub fn emit_report(report: &ExperimentReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => emit_csv(report),
        ReportFormat::Markdown => Ok(emit_markdown(report)),
    }
}

/// One row per estimator. Bound columns are filled for estimators built on
/// the robust regressor and left empty otherwise. Numbers use the shortest
/// representation that parses back to the same `f64`.
fn emit_csv(report: &ExperimentReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| OpeError::Format(e.to_string());
    w.write_record(CSV_HEADER).map_err(io)?;
    for s in &report.summaries {
        let bounds = match (s.estimator.model(), report.diagnostics) {
            (Some(ModelTag::Robust), Some(d)) => [
                d.bias_bound.to_string(),
                d.variance_bound.to_string(),
                d.minimax_lower_bound.to_string(),
            ],
            _ => Default::default(),
        };
        let mut row = vec![
            s.estimator.name().to_string(),
            s.rmse.to_string(),
            s.std.to_string(),
            s.n_trials.to_string(),
        ];
        row.extend(bounds);
        w.write_record(&row).map_err(io)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| OpeError::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| OpeError::Format(e.to_string()))
}

fn emit_markdown(report: &ExperimentReport) -> String {
    let cfg = &report.config;
    let mut out = String::new();
    let source = cfg
        .dataset
        .as_ref()
        .and_then(|d| d.path.as_ref())
        .and_then(|p| p.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "synthetic".into());
    out.push_str(&format!(
        "RMSE mean (std) over {} trials, {} logging, dataset {}\n\n",
        cfg.experiment.trials, cfg.logging.mode, source
    ));
    out.push_str("| estimator | rmse (std) |\n|---|---|\n");
    for s in &report.summaries {
        out.push_str(&format!(
            "| {} | {} |\n",
            s.estimator,
            rmse_cell(s.rmse, s.std)
        ));
    }
    if let Some(d) = report.diagnostics {
        out.push_str(&format!(
            "\nBounds for the robust estimators, up to unspecified constants (mean over {} trials): \
             bias {}, variance {}, minimax lower {}\n",
            d.trials,
            sig2(d.bias_bound),
            sig2(d.variance_bound),
            sig2(d.minimax_lower_bound)
        ));
    }
    out
}

/// `"0.026 (0.023)"`.
pub fn rmse_cell(rmse: f64, std: f64) -> String {
    format!("{} ({})", sig2(rmse), sig2(std))
}

/// Two significant figures, switching to scientific notation for very small
/// or very large magnitudes.
pub fn sig2(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-4..6).contains(&exp) {
        return format!("{v:.1e}");
    }
    // rounding can carry into the next decade, e.g. 0.0996 -> 0.10
    let decimals = (1 - exp).max(0) as usize;
    let rounded: f64 = format!("{v:.decimals$}").parse().unwrap_or(v);
    let exp2 = rounded.abs().log10().floor() as i32;
    let decimals = (1 - exp2).max(0) as usize;
    format!("{rounded:.decimals$}")
}
