//! CSV tables, dataset presets and the conversion into core datasets.

use std::path::{Path, PathBuf};

use afocp_core::data::{alternate_columns, generate_synthetic, SyntheticConfig, TimeSeriesDataset};
use afocp_core::rng::derive_seed;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, AppError, Result};

/// Raw cells of a CSV file with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(io_err(path))?;
        Self::from_reader(file)
    }

    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(rec?.iter().map(str::to_owned).collect());
        }
        Ok(Self { headers, rows })
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| AppError::MissingColumn(name.to_owned()))
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "N/A" | "NaN" | "nan" | "null" | "NULL")
}

/// Sixteen-point compass rose, clockwise from north.
const COMPASS: [&str; 16] = [
    "N", "NNE", "NE", "ENE", "E", "ESE", "SE", "SSE", "S", "SSW", "SW", "WSW", "W", "WNW", "NW",
    "NNW",
];

fn compass_degrees(cell: &str) -> Option<f64> {
    let upper = cell.to_ascii_uppercase();
    if upper == "CV" {
        // Calm and variable: no direction.
        return None;
    }
    COMPASS
        .iter()
        .position(|c| *c == upper)
        .map(|i| i as f64 * 22.5)
}

/// How one named column becomes model inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnEncoding {
    #[default]
    Numeric,
    /// Numeric, min-max scaled to `[−1, 1]` over the loaded rows.
    MinMax,
    /// Angle in degrees, expanded to `(sin, cos)`.
    Degrees,
    /// Compass label such as `NNW`, expanded to `(sin, cos)`; `CV` maps to
    /// `(0, 0)`.
    Compass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputColumn {
    pub name: String,
    #[serde(default)]
    pub encoding: ColumnEncoding,
}

/// Target that switches between two columns over random segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternateTarget {
    pub column_a: String,
    pub column_b: String,
    pub segment_min: usize,
    pub segment_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFilter {
    pub column: String,
    pub min: f64,
    pub max: f64,
}

/// Names the columns of one benchmark CSV and how to turn them into
/// `(inputs, targets)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub inputs: Vec<InputColumn>,
    #[serde(default)]
    pub targets: Vec<String>,
    /// Replaces `targets` with a single alternating column.
    #[serde(default)]
    pub alternate: Option<AlternateTarget>,
    /// Keeps rows whose value in `column` lies in `[min, max]`.
    #[serde(default)]
    pub filter: Option<RowFilter>,
    /// Columns whose previous `lags` values are appended to the inputs.
    #[serde(default)]
    pub lag_columns: Vec<String>,
    #[serde(default)]
    pub lags: usize,
    /// Predict the target this many rows ahead.
    #[serde(default)]
    pub horizon: usize,
    /// Drops leading rows while the target still equals its first value.
    #[serde(default)]
    pub trim_constant_prefix: bool,
}

const BUILTIN: [(&str, &str); 4] = [
    ("air_quality", include_str!("../presets/air_quality.toml")),
    ("electricity", include_str!("../presets/electricity.toml")),
    ("bike_sharing", include_str!("../presets/bike_sharing.toml")),
    ("wind", include_str!("../presets/wind.toml")),
];

impl Preset {
    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN.iter().map(|(n, _)| *n)
    }

    pub fn builtin(name: &str) -> Option<Self> {
        BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| toml::from_str(text).expect("bundled preset parses"))
    }

    /// A bundled name, or a path to a TOML preset file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if let Some(p) = Self::builtin(name_or_path) {
            return Ok(p);
        }
        let path = Path::new(name_or_path);
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            return Ok(toml::from_str(&text)?);
        }
        Err(AppError::Config(format!(
            "unknown preset {name_or_path:?}; bundled presets: {}",
            Self::builtin_names().collect::<Vec<_>>().join(", ")
        )))
    }

    fn required_columns(&self) -> Vec<&str> {
        let mut cols: Vec<&str> = self.inputs.iter().map(|c| c.name.as_str()).collect();
        match &self.alternate {
            Some(a) => cols.extend([a.column_a.as_str(), a.column_b.as_str()]),
            None => cols.extend(self.targets.iter().map(String::as_str)),
        }
        if let Some(f) = &self.filter {
            cols.push(&f.column);
        }
        cols.extend(self.lag_columns.iter().map(String::as_str));
        cols.sort_unstable();
        cols.dedup();
        cols
    }
}

/// A loaded dataset plus bookkeeping for the log.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub dataset: TimeSeriesDataset,
    pub dropped_rows: usize,
}

fn parse_cell(row: usize, column: &str, cell: &str) -> Result<f64> {
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| AppError::NonNumeric {
            row,
            column: column.to_owned(),
            value: cell.to_owned(),
        })
}

/// Applies a preset to a table. Rows with a missing cell in any used column
/// are dropped and counted. Row numbers in errors are 1-based data rows.
pub fn apply_preset(table: &Table, preset: &Preset, seed: u64) -> Result<Loaded> {
    if preset.inputs.is_empty() {
        return Err(AppError::Config(format!(
            "preset {:?} lists no input columns",
            preset.name
        )));
    }
    if preset.alternate.is_none() && preset.targets.is_empty() {
        return Err(AppError::Config(format!(
            "preset {:?} lists no target columns",
            preset.name
        )));
    }
    let used = preset.required_columns();
    let used_idx = used
        .iter()
        .map(|c| table.column_index(c))
        .collect::<Result<Vec<_>>>()?;

    // (1-based row number in the file, cells)
    let mut kept: Vec<(usize, &Vec<String>)> = Vec::with_capacity(table.rows.len());
    let mut dropped = 0usize;
    for (r, row) in table.rows.iter().enumerate() {
        if used_idx
            .iter()
            .any(|&i| row.get(i).is_none_or(|c| is_missing(c)))
        {
            dropped += 1;
        } else {
            kept.push((r + 1, row));
        }
    }

    let numeric = |kept: &[(usize, &Vec<String>)], name: &str| -> Result<Vec<f64>> {
        let i = table.column_index(name)?;
        kept.iter()
            .map(|(r, row)| parse_cell(*r, name, &row[i]))
            .collect()
    };

    if let Some(f) = &preset.filter {
        let vals = numeric(&kept, &f.column)?;
        let before = kept.len();
        kept = kept
            .into_iter()
            .zip(&vals)
            .filter(|(_, v)| (f.min..=f.max).contains(*v))
            .map(|(r, _)| r)
            .collect();
        dropped += before - kept.len();
    }

    let mut columns: Vec<Vec<f64>> = Vec::new();
    for col in &preset.inputs {
        match col.encoding {
            ColumnEncoding::Numeric => columns.push(numeric(&kept, &col.name)?),
            ColumnEncoding::MinMax => {
                let v = numeric(&kept, &col.name)?;
                let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let span = hi - lo;
                columns.push(
                    v.into_iter()
                        .map(|x| {
                            if span > 0.0 {
                                2.0 * (x - lo) / span - 1.0
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                );
            }
            ColumnEncoding::Degrees => {
                let v = numeric(&kept, &col.name)?;
                columns.push(v.iter().map(|d| d.to_radians().sin()).collect());
                columns.push(v.iter().map(|d| d.to_radians().cos()).collect());
            }
            ColumnEncoding::Compass => {
                let i = table.column_index(&col.name)?;
                let mut s = Vec::with_capacity(kept.len());
                let mut c = Vec::with_capacity(kept.len());
                for (r, row) in &kept {
                    let cell = &row[i];
                    if cell.eq_ignore_ascii_case("CV") {
                        s.push(0.0);
                        c.push(0.0);
                        continue;
                    }
                    let deg = compass_degrees(cell).ok_or_else(|| AppError::NonNumeric {
                        row: *r,
                        column: col.name.clone(),
                        value: cell.clone(),
                    })?;
                    s.push(deg.to_radians().sin());
                    c.push(deg.to_radians().cos());
                }
                columns.push(s);
                columns.push(c);
            }
        }
    }

    let target_columns: Vec<Vec<f64>> = match &preset.alternate {
        Some(a) => {
            let (t, _) = alternate_columns(
                &numeric(&kept, &a.column_a)?,
                &numeric(&kept, &a.column_b)?,
                (a.segment_min, a.segment_max),
                derive_seed(seed, "alternate-targets"),
            )?;
            vec![t]
        }
        None => preset
            .targets
            .iter()
            .map(|t| numeric(&kept, t))
            .collect::<Result<_>>()?,
    };
    let lag_sources: Vec<Vec<f64>> = preset
        .lag_columns
        .iter()
        .map(|c| numeric(&kept, c))
        .collect::<Result<_>>()?;

    let n = kept.len();
    let mut first = preset.lags;
    let last = n.saturating_sub(preset.horizon);
    if preset.trim_constant_prefix && first < last {
        let target_at = |t: usize| {
            target_columns
                .iter()
                .map(|c| c[t + preset.horizon])
                .collect::<Vec<_>>()
        };
        let initial = target_at(first);
        while first < last && target_at(first) == initial {
            first += 1;
        }
    }
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for t in first..last {
        let mut x: Vec<f64> = columns.iter().map(|c| c[t]).collect();
        for src in &lag_sources {
            x.extend((1..=preset.lags).map(|k| src[t - k]));
        }
        inputs.push(x);
        targets.push(
            target_columns
                .iter()
                .map(|c| c[t + preset.horizon])
                .collect(),
        );
    }
    if inputs.is_empty() {
        return Err(AppError::Config(format!(
            "preset {:?}: no usable rows",
            preset.name
        )));
    }
    Ok(Loaded {
        dataset: TimeSeriesDataset::new(preset.name.clone(), inputs, targets)?,
        dropped_rows: dropped,
    })
}

/// Where the rows of an experiment come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    /// The generator seed is replaced by one derived from each run's seed.
    Synthetic(SyntheticConfig),
    Csv {
        preset: String,
        path: PathBuf,
    },
}

impl DatasetSource {
    pub fn name(&self) -> String {
        match self {
            DatasetSource::Synthetic(_) => "synthetic".into(),
            DatasetSource::Csv { preset, .. } => Path::new(preset)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| preset.clone()),
        }
    }

    pub fn load(&self, seed: u64) -> Result<Loaded> {
        match self {
            DatasetSource::Synthetic(cfg) => {
                let cfg = SyntheticConfig {
                    seed: derive_seed(seed, "synthetic"),
                    ..*cfg
                };
                Ok(Loaded {
                    dataset: generate_synthetic(&cfg)?.dataset,
                    dropped_rows: 0,
                })
            }
            DatasetSource::Csv { preset, path } => {
                let preset = Preset::resolve(preset)?;
                apply_preset(&Table::read(path)?, &preset, seed)
            }
        }
    }
}
