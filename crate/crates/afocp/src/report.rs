//! Event logs, per-run summaries and cross-seed aggregates.

use std::fmt::Write as _;
use std::path::Path;

use afocp_core::calibration::{EventRecord, Method};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Result};
use crate::fsutil::write_atomic;

pub const EVENT_HEADER: &str = "t,method,alpha_t,score,quantile,err,mean_interval_length";

/// Shortest round-trip decimal; infinities print as `inf` / `-inf`.
pub fn format_float(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

pub fn events_csv(events: &[EventRecord]) -> String {
    let mut out = String::with_capacity(64 * (events.len() + 1));
    out.push_str(EVENT_HEADER);
    out.push('\n');
    for e in events {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e.t,
            e.method,
            format_float(e.alpha_t),
            format_float(e.score),
            format_float(e.quantile),
            e.err,
            format_float(e.mean_interval_length)
        );
    }
    out
}

pub fn write_events(path: &Path, events: &[EventRecord]) -> Result<()> {
    write_atomic(path, events_csv(events).as_bytes())
}

/// Parses an event log written by [`write_events`].
pub fn read_events(path: &Path) -> Result<Vec<EventRecord>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for rec in rdr.deserialize::<(u64, String, String, String, String, u8, String)>() {
        let (t, method, alpha, score, quantile, err, len) = rec?;
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| {
                crate::AppError::Config(format!("{}: bad number {s:?} at t = {t}", path.display()))
            })
        };
        out.push(EventRecord {
            t,
            method: method.parse()?,
            alpha_t: num(&alpha)?,
            score: num(&score)?,
            quantile: num(&quantile)?,
            err,
            mean_interval_length: num(&len)?,
        });
    }
    Ok(out)
}

/// Final metrics of one (method, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: Method,
    pub dataset: String,
    pub alpha: f64,
    #[serde(rename = "L")]
    pub window: usize,
    #[serde(rename = "D")]
    pub feature_dim: usize,
    pub seed: u64,
    #[serde(rename = "T")]
    pub steps: u64,
    pub coverage: f64,
    /// Fraction of steps whose interval contains the target.
    #[serde(default)]
    pub interval_coverage: f64,
    /// Mean over steps with a finite interval; `null` if there were none.
    pub mean_length: Option<f64>,
    pub inf_length_steps: u64,
    pub theorem1_bound_lhs: f64,
    pub theorem1_bound_rhs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_var: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_value: Option<f64>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std })
    }
}

/// Cross-seed statistics for one method at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_var: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_value: Option<f64>,
    pub seeds: Vec<u64>,
    pub coverage: MeanStd,
    pub mean_length: Option<MeanStd>,
}

/// Groups summaries by (dataset, sweep value, method), in first-seen order.
pub fn aggregate(summaries: &[Summary]) -> Vec<AggregateRow> {
    let mut rows: Vec<(AggregateRow, Vec<f64>, Vec<f64>)> = Vec::new();
    for s in summaries {
        let pos = rows.iter().position(|(r, _, _)| {
            r.method == s.method
                && r.dataset == s.dataset
                && r.sweep_var == s.sweep_var
                && r.sweep_value.map(f64::to_bits) == s.sweep_value.map(f64::to_bits)
        });
        let idx = pos.unwrap_or_else(|| {
            rows.push((
                AggregateRow {
                    method: s.method,
                    dataset: s.dataset.clone(),
                    sweep_var: s.sweep_var.clone(),
                    sweep_value: s.sweep_value,
                    seeds: Vec::new(),
                    coverage: MeanStd {
                        mean: 0.0,
                        std: 0.0,
                    },
                    mean_length: None,
                },
                Vec::new(),
                Vec::new(),
            ));
            rows.len() - 1
        });
        let (row, cov, len) = &mut rows[idx];
        row.seeds.push(s.seed);
        cov.push(s.coverage);
        if let Some(l) = s.mean_length {
            len.push(l);
        }
    }
    rows.into_iter()
        .map(|(mut row, cov, len)| {
            row.coverage = MeanStd::of(&cov).expect("group has at least one summary");
            row.mean_length = MeanStd::of(&len);
            row
        })
        .collect()
}
