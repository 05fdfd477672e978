//! Interval bound propagation through a two-layer head.
//!
//! The feature ball `‖U − c‖₂ ≤ r` is enclosed in the box `[c − r, c + r]^D`
//! and pushed through each affine layer in midpoint–radius form and through
//! ReLU by clamping. Every affine step widens its radius by a bound on the
//! floating-point rounding of the midpoint, so the box encloses what a
//! forward pass computes at any point of the ball.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::Matrix;
use crate::neuralnet::{Activation, MlpParams};

/// Per-dimension bounds; infinite bounds mean an unbounded set.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionInterval {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Score quantile the interval was built from.
    pub quantile: f64,
}

impl PredictionInterval {
    pub fn unbounded(dim: usize, quantile: f64) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
            quantile,
        }
    }

    /// Zero-width interval at `center`. Also stands in for the empty set
    /// (quantile `−∞`), which has length zero.
    pub fn point(center: Vec<f64>, quantile: f64) -> Self {
        Self {
            lower: center.clone(),
            upper: center,
            quantile,
        }
    }

    /// `[center_i − radius, center_i + radius]`
    pub fn around(center: &[f64], radius: f64, quantile: f64) -> Self {
        if radius == f64::INFINITY {
            return Self::unbounded(center.len(), quantile);
        }
        Self {
            lower: center.iter().map(|c| c - radius).collect(),
            upper: center.iter().map(|c| c + radius).collect(),
            quantile,
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .collect()
    }

    /// Mean width across dimensions; `+∞` if any bound is infinite.
    pub fn mean_width(&self) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        self.widths().iter().sum::<f64>() / self.dim() as f64
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        y.len() == self.dim()
            && y.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.dim() == other.dim()
            && (0..self.dim())
                .all(|i| other.lower[i] <= self.lower[i] && self.upper[i] <= other.upper[i])
    }

    /// Applies `v ↦ v · scale_i + offset_i` per dimension (`scale_i > 0`).
    pub fn rescale(&self, scale: &[f64], offset: &[f64]) -> Self {
        let map = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .zip(scale.iter().zip(offset))
                .map(|(x, (s, o))| x * s + o)
                .collect()
        };
        Self {
            lower: map(&self.lower),
            upper: map(&self.upper),
            quantile: self.quantile,
        }
    }
}

struct Boxed {
    mid: Vec<f64>,
    rad: Vec<f64>,
}

fn affine(weights: &Matrix, bias: &[f64], input: &Boxed) -> Boxed {
    let n = weights.cols() as f64;
    // Rounding of an n-term dot product plus bias, doubled for the sample side.
    let gamma = 2.0 * (n + 2.0) * f64::EPSILON;
    let mut mid = Vec::with_capacity(weights.rows());
    let mut rad = Vec::with_capacity(weights.rows());
    for (i, b) in bias.iter().enumerate() {
        let row = weights.row(i);
        let mut m = 0.0;
        let mut r = 0.0;
        let mut magnitude = b.abs();
        for ((w, c), s) in row.iter().zip(&input.mid).zip(&input.rad) {
            m += w * c;
            r += w.abs() * s;
            magnitude += w.abs() * (c.abs() + s);
        }
        mid.push(m + b);
        rad.push(r + gamma * magnitude);
    }
    Boxed { mid, rad }
}

fn relu(input: Boxed) -> Boxed {
    let mut out = Boxed {
        mid: Vec::with_capacity(input.mid.len()),
        rad: Vec::with_capacity(input.mid.len()),
    };
    for (m, r) in input.mid.iter().zip(&input.rad) {
        let lo = (m - r).max(0.0);
        let hi = (m + r).max(0.0);
        out.mid.push(0.5 * (lo + hi));
        out.rad.push(0.5 * (hi - lo));
    }
    out
}

/// Certified box around `head(B)` for the feature ball `B` of `radius`
/// around `center`.
pub fn interval_ibp(head: &MlpParams, center: &[f64], radius: f64) -> Result<PredictionInterval> {
    check_dim("interval center", head.input_dim(), center.len())?;
    check_finite("interval center", center)?;
    if radius.is_nan() || radius < 0.0 {
        return Err(Error::InvalidConfig(alloc::format!(
            "interval radius {radius} must be nonnegative"
        )));
    }
    if radius == f64::INFINITY {
        return Ok(PredictionInterval::unbounded(head.output_dim(), radius));
    }
    if radius == 0.0 {
        return Ok(PredictionInterval::point(head.forward(center)?, radius));
    }

    let input = Boxed {
        mid: center.to_vec(),
        rad: vec![radius; center.len()],
    };
    let mut hidden = affine(&head.layer1_weights, &head.layer1_bias, &input);
    if head.activation == Activation::Relu {
        hidden = relu(hidden);
    }
    let out = affine(&head.layer2_weights, &head.layer2_bias, &hidden);
    Ok(PredictionInterval {
        lower: out.mid.iter().zip(&out.rad).map(|(m, r)| m - r).collect(),
        upper: out.mid.iter().zip(&out.rad).map(|(m, r)| m + r).collect(),
        quantile: radius,
    })
}
