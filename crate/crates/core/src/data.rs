//! Time-series datasets: the regime-switching synthetic generator, ordered
//! downsampling, prefix/suffix splitting and train-only standardization.
//!
//! Nothing in this module reorders rows.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::calibration::PredictionInterval;
use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::rng::{derive_seed, SeedStream};

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub name: String,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl TimeSeriesDataset {
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            inputs,
            targets,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("target rows", self.inputs.len(), self.targets.len())?;
        if self.inputs.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        let (din, dout) = (self.input_dim(), self.output_dim());
        for (x, y) in self.inputs.iter().zip(&self.targets) {
            check_dim("input row", din, x.len())?;
            check_dim("target row", dout, y.len())?;
            crate::error::check_finite("dataset row", x)?;
            crate::error::check_finite("dataset row", y)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn output_dim(&self) -> usize {
        self.targets.first().map_or(0, Vec::len)
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i].clone()).collect(),
        }
    }

    fn slice(&self, range: core::ops::Range<usize>) -> Self {
        Self {
            name: self.name.clone(),
            inputs: self.inputs[range.clone()].to_vec(),
            targets: self.targets[range].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// Constant low input, Gaussian noise.
    A,
    /// Constant high input, uniform noise.
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    pub regime: Regime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub length: usize,
    pub dim: usize,
    pub segment_min: usize,
    pub segment_max: usize,
    pub level_a: f64,
    pub level_b: f64,
    pub offset: f64,
    pub seed: u64,
    /// Draws noise when true; off only to test the noiseless identity.
    pub noise: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            length: 1500,
            dim: 50,
            segment_min: 40,
            segment_max: 80,
            level_a: 3.0,
            level_b: 21.0,
            offset: 10.0,
            seed: 0,
            noise: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSeries {
    pub dataset: TimeSeriesDataset,
    /// The mixing matrix `W`.
    pub mixing: Matrix,
    pub segments: Vec<Segment>,
    /// `ε_t`, kept for inspection.
    pub noise: Vec<Vec<f64>>,
}

/// `Y_t = offset + W X_t + ε_t` over alternating segments, starting in
/// regime A. In regime A every input entry is `level_a` and `ε_t` is
/// Gaussian with per-coordinate variance `level_a / 2`; in regime B every
/// entry is `level_b` and `ε_t` is uniform on `(−level_b, level_b)`.
/// `W` has i.i.d. `N(0, 1/dim)` entries.
///
/// Mixing matrix, segment lengths and noise come from independent streams
/// derived from `cfg.seed`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticSeries> {
    if cfg.length == 0 || cfg.dim == 0 {
        return Err(Error::InvalidConfig(
            "synthetic length and dimension must be positive".into(),
        ));
    }
    if cfg.segment_min == 0 || cfg.segment_min > cfg.segment_max {
        return Err(Error::InvalidConfig(
            "segment range must be nonempty and positive".into(),
        ));
    }
    let mut mixing_rng = SeedStream::new(derive_seed(cfg.seed, "synthetic-mixing"));
    let mut segment_rng = SeedStream::new(derive_seed(cfg.seed, "synthetic-segments"));
    let mut noise_rng = SeedStream::new(derive_seed(cfg.seed, "synthetic-noise"));

    let std_w = libm::sqrt(1.0 / cfg.dim as f64);
    let mixing = Matrix::from_fn(cfg.dim, cfg.dim, |_, _| {
        std_w * mixing_rng.standard_normal()
    });

    let mut segments = Vec::new();
    let mut start = 0;
    let mut regime = Regime::A;
    while start < cfg.length {
        let len = segment_rng.int_inclusive(cfg.segment_min, cfg.segment_max);
        segments.push(Segment { start, len, regime });
        start += len;
        regime = match regime {
            Regime::A => Regime::B,
            Regime::B => Regime::A,
        };
    }

    let mut inputs = Vec::with_capacity(cfg.length);
    let mut targets = Vec::with_capacity(cfg.length);
    let mut noise = Vec::with_capacity(cfg.length);
    for seg in &segments {
        let level = match seg.regime {
            Regime::A => cfg.level_a,
            Regime::B => cfg.level_b,
        };
        let gaussian_std = libm::sqrt(level / 2.0);
        for _ in seg.start..(seg.start + seg.len).min(cfg.length) {
            let x = vec![level; cfg.dim];
            let eps: Vec<f64> = (0..cfg.dim)
                .map(|_| match (cfg.noise, seg.regime) {
                    (false, _) => 0.0,
                    (true, Regime::A) => gaussian_std * noise_rng.standard_normal(),
                    (true, Regime::B) => noise_rng.symmetric_open(level),
                })
                .collect();
            let y: Vec<f64> = mixing
                .matvec(&x)
                .iter()
                .zip(&eps)
                .map(|(wx, e)| cfg.offset + wx + e)
                .collect();
            inputs.push(x);
            targets.push(y);
            noise.push(eps);
        }
    }
    if let Some(last) = segments.last_mut() {
        last.len = cfg.length - last.start;
    }

    Ok(SyntheticSeries {
        dataset: TimeSeriesDataset::new("synthetic", inputs, targets)?,
        mixing,
        segments,
        noise,
    })
}

/// Chooses between two sources per contiguous segment, starting with `a`.
/// Segment lengths are uniform on the inclusive `segment_range`.
pub fn alternate_columns(
    a: &[f64],
    b: &[f64],
    segment_range: (usize, usize),
    seed: u64,
) -> Result<(Vec<f64>, Vec<Segment>)> {
    check_dim("alternating sources", a.len(), b.len())?;
    let (lo, hi) = segment_range;
    if lo == 0 || lo > hi {
        return Err(Error::InvalidConfig(
            "segment range must be nonempty and positive".into(),
        ));
    }
    let mut rng = SeedStream::new(derive_seed(seed, "alternate-targets"));
    let mut out = Vec::with_capacity(a.len());
    let mut segments = Vec::new();
    let mut regime = Regime::A;
    while out.len() < a.len() {
        let start = out.len();
        let len = rng.int_inclusive(lo, hi).min(a.len() - start);
        let source = if regime == Regime::A { a } else { b };
        out.extend_from_slice(&source[start..start + len]);
        segments.push(Segment { start, len, regime });
        regime = if regime == Regime::A {
            Regime::B
        } else {
            Regime::A
        };
    }
    Ok((out, segments))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub max_points: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.85,
            max_points: 2000,
        }
    }
}

/// `round(i (T − 1) / (max − 1))` for `i < max`, or all indices when
/// `T ≤ max`.
pub fn downsample_indices(len: usize, max_points: usize) -> Vec<usize> {
    if len <= max_points {
        return (0..len).collect();
    }
    if max_points <= 1 {
        return vec![0; max_points.min(1)];
    }
    let num = (len - 1) as u128;
    let den = (max_points - 1) as u128;
    (0..max_points as u128)
        .map(|i| ((2 * i * num + den) / (2 * den)) as usize)
        .collect()
}

/// Ordered downsampling, then a prefix of `⌊train_fraction · T⌋` rows for
/// training and the remaining later rows for the online stream. The
/// training part must exceed `window` rows and the stream must be nonempty.
pub fn split_and_downsample(
    ds: &TimeSeriesDataset,
    spec: &SplitSpec,
    window: usize,
) -> Result<(TimeSeriesDataset, TimeSeriesDataset)> {
    if ds.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidConfig(alloc::format!(
            "train fraction {} not in (0, 1)",
            spec.train_fraction
        )));
    }
    if spec.max_points == 0 {
        return Err(Error::InvalidConfig("max_points must be positive".into()));
    }
    let kept = ds.select(&downsample_indices(ds.len(), spec.max_points));
    let n = kept.len();
    let n_train = libm::floor(spec.train_fraction * n as f64) as usize;
    if n_train <= window || n_train >= n {
        return Err(Error::InvalidConfig(alloc::format!(
            "{n} points leave {n_train} for training and {} for testing; \
             need more than L = {window} training points and at least one test point \
             (use a smaller window)",
            n - n_train.min(n)
        )));
    }
    Ok((kept.slice(0..n_train), kept.slice(n_train..n)))
}

/// Per-column affine standardization fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Columns with zero spread keep scale 1.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("standardization rows"))?;
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            check_dim("standardization row", d, r.len())?;
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = libm::sqrt(s / n);
                if sd > 1e-12 * (1.0 + mean.iter().map(|m| m.abs()).fold(0.0, f64::max)) {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn transform_all(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.transform(r)).collect()
    }

    pub fn inverse(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    /// Maps an interval from standardized units back to original units.
    pub fn inverse_interval(&self, interval: &PredictionInterval) -> PredictionInterval {
        interval.rescale(&self.scale, &self.mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_identity() {
        let cfg = SyntheticConfig {
            length: 300,
            dim: 8,
            noise: false,
            seed: 4,
            ..SyntheticConfig::default()
        };
        let s = generate_synthetic(&cfg).unwrap();
        for (x, y) in s.dataset.inputs.iter().zip(&s.dataset.targets) {
            let wx = s.mixing.matvec(x);
            for (yi, wxi) in y.iter().zip(&wx) {
                assert_eq!(yi - (10.0 + wxi), 0.0);
            }
        }
    }

    #[test]
    fn segments_alternate_and_cover() {
        let s = generate_synthetic(&SyntheticConfig {
            seed: 9,
            ..SyntheticConfig::default()
        })
        .unwrap();
        assert_eq!(s.dataset.len(), 1500);
        let total: usize = s.segments.iter().map(|g| g.len).sum();
        assert_eq!(total, 1500);
        for pair in s.segments.windows(2) {
            assert_ne!(pair[0].regime, pair[1].regime);
            assert_eq!(pair[0].start + pair[0].len, pair[1].start);
        }
        // The final segment may be truncated by the series end.
        for g in &s.segments[..s.segments.len() - 1] {
            assert!((40..=80).contains(&g.len));
        }
    }

    #[test]
    fn synthetic_is_reproducible() {
        let cfg = SyntheticConfig {
            length: 200,
            dim: 5,
            seed: 3,
            ..SyntheticConfig::default()
        };
        assert_eq!(
            generate_synthetic(&cfg).unwrap(),
            generate_synthetic(&cfg).unwrap()
        );
    }

    #[test]
    fn no_downsampling_at_limit() {
        assert_eq!(
            downsample_indices(2000, 2000),
            (0..2000).collect::<Vec<_>>()
        );
    }

    #[test]
    fn downsampling_matches_formula() {
        let idx = downsample_indices(4000, 2000);
        assert_eq!(idx.len(), 2000);
        assert_eq!(idx[0], 0);
        assert_eq!(idx[1999], 3999);
        for (i, &k) in idx.iter().enumerate() {
            let expected = (i as f64 * 3999.0 / 1999.0).round() as usize;
            assert_eq!(k, expected);
        }
        assert!(idx.windows(2).all(|w| w[1] - w[0] == 2 || w[1] - w[0] == 3));
    }

    #[test]
    fn split_sizes() {
        let ds = TimeSeriesDataset::new(
            "toy",
            (0..100).map(|i| vec![i as f64]).collect(),
            (0..100).map(|i| vec![-(i as f64)]).collect(),
        )
        .unwrap();
        let (train, test) = split_and_downsample(&ds, &SplitSpec::default(), 10).unwrap();
        assert_eq!((train.len(), test.len()), (85, 15));
        assert_eq!(test.inputs[0], vec![85.0]);
        assert!(split_and_downsample(&ds, &SplitSpec::default(), 85).is_err());
    }

    #[test]
    fn alternate_degenerate_range() {
        let a: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..50).map(|i| -(i as f64)).collect();
        let (out, segs) = alternate_columns(&a, &b, (50, 50), 1).unwrap();
        assert_eq!(out, a);
        assert_eq!(segs.len(), 1);
    }

    #[test]
    fn alternate_values_come_from_sources() {
        let a: Vec<f64> = (0..300).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..300).map(|i| 1000.0 + i as f64).collect();
        let (out, segs) = alternate_columns(&a, &b, (40, 80), 7).unwrap();
        for (i, v) in out.iter().enumerate() {
            assert!(*v == a[i] || *v == b[i]);
        }
        assert_eq!(alternate_columns(&a, &b, (40, 80), 7).unwrap().1, segs);
    }

    #[test]
    fn standardizer_round_trip() {
        let rows = vec![vec![1.0, 5.0], vec![3.0, 5.0], vec![5.0, 5.0]];
        let s = Standardizer::fit(&rows).unwrap();
        assert_eq!(s.scale[1], 1.0);
        let z = s.transform(&rows[2]);
        assert!((z[0] - (2.0 / libm::sqrt(8.0 / 3.0))).abs() < 1e-12);
        let back = s.inverse(&z);
        assert!((back[0] - 5.0).abs() < 1e-12);
    }
}
