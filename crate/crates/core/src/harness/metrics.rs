//! Per-round CSV metrics.

use std::fmt::Write as _;
use std::path::Path;

use crate::engine::Trajectory;
use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "round,tau,K,loss,accuracy,cum_delay_s,cum_energy_J,seed";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub round: usize,
    pub tau: usize,
    pub k: usize,
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub cum_delay_s: f64,
    pub cum_energy_j: f64,
    pub seed: u64,
}

/// One record per completed aggregation.
pub fn records_from_trajectory(trajectory: &Trajectory, seed: u64) -> Vec<MetricsRecord> {
    trajectory
        .rounds
        .iter()
        .map(|r| MetricsRecord {
            round: r.round,
            tau: trajectory.schedule.tau,
            k: trajectory.schedule.k,
            loss: r.loss,
            accuracy: r.accuracy,
            cum_delay_s: r.cum_delay_s,
            cum_energy_j: r.cum_energy_j,
            seed,
        })
        .collect()
}

/// Nine significant digits; fixed notation for moderate magnitudes,
/// scientific otherwise.
pub fn format_sig(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.8e}");
    let exp: i32 = sci
        .rsplit_once('e')
        .and_then(|(_, e)| e.parse().ok())
        .unwrap_or(0);
    if (-5..9).contains(&exp) {
        format!("{:.*}", (8 - exp) as usize, x)
    } else {
        sci
    }
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in records {
        let acc = r.accuracy.map(format_sig).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.round,
            r.tau,
            r.k,
            format_sig(r.loss),
            acc,
            format_sig(r.cum_delay_s),
            format_sig(r.cum_energy_j),
            r.seed
        );
    }
    out
}

pub fn emit_metrics(records: &[MetricsRecord], path: &Path) -> Result<()> {
    write_text(path, &metrics_csv(records))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
