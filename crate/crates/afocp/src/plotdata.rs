//! Collects summary files into one long-format CSV.

use std::path::Path;

use walkdir::WalkDir;

use crate::error::{AppError, Result};
use crate::report::{read_summary, Summary};

pub const PLOTDATA_HEADER: &str = "dataset,method,seed,sweep_var,sweep_value,coverage,mean_length";

/// `v` with 9 significant digits, trailing zeros removed.
pub fn sig9(v: f64) -> String {
    if !v.is_finite() {
        return crate::report::format_float(v);
    }
    if v == 0.0 {
        return "0".into();
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-5..=15).contains(&exp) {
        return format!("{v:.8e}");
    }
    let decimals = (8 - exp).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    } else {
        s
    }
}

/// Every `*.json` summary below `dir`, sorted by path.
pub fn collect_summaries(dir: &Path) -> Result<Vec<Summary>> {
    if !dir.is_dir() {
        return Err(AppError::Config(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let mut paths: Vec<_> = WalkDir::new(dir)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file() && e.path().extension().is_some_and(|x| x == "json"))
        .map(|e| e.into_path())
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        // Aggregates and other JSON files live beside summaries; skip them.
        match read_summary(&p) {
            Ok(s) => out.push(s),
            Err(AppError::Json(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    if out.is_empty() {
        return Err(AppError::Config(format!(
            "no summaries found under {}",
            dir.display()
        )));
    }
    Ok(out)
}

/// Tidy rows, one per summary. Summaries without a finite mean length are
/// left out with a warning on standard error.
pub fn plotdata_csv(summaries: &[Summary]) -> String {
    let mut out = String::from(PLOTDATA_HEADER);
    out.push('\n');
    for s in summaries {
        let Some(len) = s.mean_length else {
            eprintln!(
                "[afocp] warning: {} {} seed {} has no finite interval length; row omitted",
                s.dataset, s.method, s.seed
            );
            continue;
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.dataset,
            s.method,
            s.seed,
            s.sweep_var.as_deref().unwrap_or(""),
            s.sweep_value.map(sig9).unwrap_or_default(),
            sig9(s.coverage),
            sig9(len)
        ));
    }
    out
}

/// Reads `dir` and returns the CSV text. Warns about (sweep point, method)
/// groups whose seed sets differ from the rest, which marks failed cells.
pub fn emit_plotdata(dir: &Path) -> Result<String> {
    let summaries = collect_summaries(dir)?;
    let mut seeds: Vec<u64> = summaries.iter().map(|s| s.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    for row in crate::report::aggregate(&summaries) {
        if row.seeds.len() < seeds.len() {
            eprintln!(
                "[afocp] warning: {} {}{} has {} of {} seeds; missing cells omitted",
                row.dataset,
                row.method,
                row.sweep_value
                    .map(|v| format!(" at {v}"))
                    .unwrap_or_default(),
                row.seeds.len(),
                seeds.len()
            );
        }
    }
    Ok(plotdata_csv(&summaries))
}
