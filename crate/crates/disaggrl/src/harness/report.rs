//! Aggregation of per-seed metrics runs into a capacity-table-style report.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::metrics::read_metrics;

use super::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table2 {
    /// Mean over seeds of the final ADR fraction ("ADR Inc.").
    pub adr_increase: f64,
    /// Fraction of seeds whose final ADR fraction reached 1 ("% Full ADR").
    pub pct_full_adr: f64,
    /// Mean final success rate over the seeds that reached the terminal
    /// range; 0 when none did (report-zero convention).
    pub sr_at_terminal: f64,
    pub seeds: usize,
}

const TERMINAL_EPS: f64 = 1e-6;

/// Aggregate final (adr_fraction, sr) pairs, one per seed.
pub fn table2_from_finals(finals: &[(f64, f64)]) -> Result<Table2, HarnessError> {
    if finals.is_empty() {
        return Err(HarnessError::Usage("no metrics runs supplied".into()));
    }
    let n = finals.len() as f64;
    let adr_increase = finals.iter().map(|(f, _)| f).sum::<f64>() / n;
    let terminal: Vec<&(f64, f64)> = finals
        .iter()
        .filter(|(f, _)| *f >= 1.0 - TERMINAL_EPS)
        .collect();
    let pct_full_adr = terminal.len() as f64 / n;
    let sr_at_terminal = if terminal.is_empty() {
        0.0
    } else {
        terminal.iter().map(|(_, sr)| sr).sum::<f64>() / terminal.len() as f64
    };
    Ok(Table2 {
        adr_increase,
        pct_full_adr,
        sr_at_terminal,
        seeds: finals.len(),
    })
}

/// Parse each run's metrics JSONL and aggregate its final record.
pub fn report_table2(metric_paths: &[&Path]) -> Result<Table2, HarnessError> {
    if metric_paths.is_empty() {
        return Err(HarnessError::Usage("no metrics files supplied".into()));
    }
    let mut finals = Vec::new();
    for p in metric_paths {
        let records = read_metrics(p)?;
        let last = records.last().ok_or_else(|| {
            HarnessError::Usage(format!("{}: empty metrics file", p.display()))
        })?;
        finals.push((last.adr_fraction, last.sr));
    }
    table2_from_finals(&finals)
}
