//! Per-iteration records and their CSV form.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RECORDS_HEADER: &str = "iteration,n_accepted,error_pct,train_size";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub n_accepted: usize,
    /// Aggregate test-set count error of the model trained in this
    /// iteration, in percent.
    pub error_pct: f64,
    /// Training pairs after this iteration's accepts, counted in augmented
    /// units (72 per accepted image).
    pub train_size: usize,
}

pub fn records_csv(records: &[IterationRecord]) -> String {
    let mut s = format!("{RECORDS_HEADER}\n");
    for r in records {
        let _ = writeln!(s, "{},{},{},{}", r.iteration, r.n_accepted, r.error_pct, r.train_size);
    }
    s
}

/// Parse records; the `train_size` column is optional (0 when absent).
pub fn parse_records_csv(text: &str) -> Result<Vec<IterationRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("iteration") {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let err = |what: &str| Error::invalid(format!("records line {}: bad {what}", n + 1));
        if cols.len() < 3 {
            return Err(err("column count"));
        }
        out.push(IterationRecord {
            iteration: cols[0].parse().map_err(|_| err("iteration"))?,
            n_accepted: cols[1].parse().map_err(|_| err("n_accepted"))?,
            error_pct: cols[2].parse().map_err(|_| err("error_pct"))?,
            train_size: match cols.get(3) {
                Some(v) if !v.is_empty() => v.parse().map_err(|_| err("train_size"))?,
                _ => 0,
            },
        });
    }
    Ok(out)
}

/// Compare replayed records with expected ones: iteration and accepted
/// counts exactly, error rates after rounding to `decimals`, train sizes
/// only where the expectation gives one. Returns one line per mismatch.
pub fn compare_records(got: &[IterationRecord], expected: &[IterationRecord], decimals: usize) -> Vec<String> {
    let mut issues = Vec::new();
    if got.len() != expected.len() {
        issues.push(format!("expected {} records, replay produced {}", expected.len(), got.len()));
    }
    for (g, e) in got.iter().zip(expected) {
        let (gs, es) = (
            format!("{:.*}", decimals, g.error_pct),
            format!("{:.*}", decimals, e.error_pct),
        );
        if g.iteration != e.iteration || g.n_accepted != e.n_accepted || gs != es {
            issues.push(format!(
                "iteration {}: got ({}, {gs}%), expected iteration {} ({}, {es}%)",
                g.iteration, g.n_accepted, e.iteration, e.n_accepted
            ));
        }
        if e.train_size != 0 && g.train_size != e.train_size {
            issues.push(format!(
                "iteration {}: train size {} != expected {}",
                g.iteration, g.train_size, e.train_size
            ));
        }
    }
    issues
}
