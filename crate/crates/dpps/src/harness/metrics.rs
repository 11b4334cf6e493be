//! Per-round metrics rows, the CSV emitter, and the run summary.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::harness::HarnessError;

/// Fixed header of `metrics.csv`.
pub const METRICS_HEADER: &str = "round,esti_sensitivity,real_sensitivity,mean_eps_l1,\
mean_noise_l1,loss_mean,delta_l,delta_sbar,ras_running,epsilon_per_round,synced";

/// One logged round. Optional fields are written as empty cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: u64,
    pub esti_sensitivity: f64,
    pub real_sensitivity: f64,
    pub mean_eps_l1: f64,
    pub mean_noise_l1: f64,
    pub loss_mean: f64,
    pub delta_l: Option<f64>,
    pub delta_sbar: Option<f64>,
    /// Running mean of `real_sensitivity` up to this round.
    pub ras_running: f64,
    /// `b / gamma_n` when the privacy mechanism is on.
    pub epsilon_per_round: Option<f64>,
    pub synced: bool,
}

/// 17 significant digits, enough to round-trip any f64.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn format_opt(x: Option<f64>) -> String {
    x.map(format_f64).unwrap_or_default()
}

impl RoundMetrics {
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.round,
            format_f64(self.esti_sensitivity),
            format_f64(self.real_sensitivity),
            format_f64(self.mean_eps_l1),
            format_f64(self.mean_noise_l1),
            format_f64(self.loss_mean),
            format_opt(self.delta_l),
            format_opt(self.delta_sbar),
            format_f64(self.ras_running),
            format_opt(self.epsilon_per_round),
            self.synced
        )
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| HarnessError::OutputIo {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        }
    }
    fs::write(path, text).map_err(|e| HarnessError::OutputIo {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Write the rows as CSV with the fixed header; overwrites idempotently.
pub fn emit_metrics(rows: &[RoundMetrics], path: &Path) -> Result<(), HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::EmptyMetrics);
    }
    let mut text = String::with_capacity(rows.len() * 160 + METRICS_HEADER.len() + 1);
    text.push_str(METRICS_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&row.csv_row());
        text.push('\n');
    }
    write_text(path, &text)
}

/// Run-level summary written next to the metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub final_acc: f64,
    /// Arithmetic mean of the logged real sensitivities.
    pub ras: f64,
    /// Maximum logged real sensitivity.
    pub peak_sensitivity: f64,
    pub total_rounds: u64,
    pub wall_time_seconds: f64,
}

pub fn write_summary(summary: &RunSummary, path: &Path) -> Result<(), HarnessError> {
    let json = serde_json::to_string_pretty(summary).expect("summary serialization cannot fail");
    write_text(path, &json)
}
