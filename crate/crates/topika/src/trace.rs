//! Per-iteration training trace and its CSV form.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Log-likelihood (ML, VB), log joint (MAP); absent for collapsed
    /// learners.
    pub objective: Option<f64>,
    pub max_change: Option<f64>,
    pub validation_perplexity: Option<f64>,
    pub alpha: f64,
    pub eta: f64,
    /// Cumulative training time, excluding validation.
    pub seconds: f64,
    /// Count merges in this sweep (parallel CVB0 only).
    pub merges: Option<usize>,
}

/// Settings logged on every row of a parallel run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelInfo {
    pub workers: usize,
    pub sync_every: usize,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_trace_csv<W: Write>(
    records: &[TraceRecord],
    parallel: Option<ParallelInfo>,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "iteration",
        "objective",
        "max_change",
        "validation_perplexity",
        "alpha",
        "eta",
        "seconds",
    ];
    if parallel.is_some() {
        header.extend(["workers", "sync_every", "merges"]);
    }
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.iteration.to_string(),
            opt(r.objective),
            opt(r.max_change),
            opt(r.validation_perplexity),
            r.alpha.to_string(),
            r.eta.to_string(),
            format!("{:.6}", r.seconds),
        ];
        if let Some(p) = parallel {
            row.push(p.workers.to_string());
            row.push(p.sync_every.to_string());
            row.push(opt(r.merges));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
