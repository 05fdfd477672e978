//! Linear-relaxation bounds for a two-layer head over an L2 feature ball.
//!
//! Pre-activation bounds of the first layer are exact for the ball:
//! `z_k ∈ z_k(c) ± r ‖W1_k‖₂`. Each unstable ReLU is enclosed between a
//! lower line through the origin and the chord from `(l, 0)` to `(u, u)`.
//! Picking, per output and per neuron, the line that bounds `W2_jk σ(z_k)`
//! in the required direction gives an affine bound `λᵀ z + μ`, whose
//! extremum over the ball is `λᵀ z(c) ± r ‖W1ᵀ λ‖₂ + μ`. The result is
//! intersected with interval propagation from the same pre-activation
//! bounds and with plain box propagation. Bounds of our own are widened by
//! a rounding allowance.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::ibp::{interval_ibp, PredictionInterval};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::norm;
use crate::neuralnet::{Activation, MlpParams};

/// How a feature-space ball is turned into an output interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandEstimator {
    /// Box enclosure of the ball pushed through interval arithmetic.
    IntervalPropagation,
    /// Ball-exact first layer with linear ReLU relaxation.
    #[default]
    LinearRelaxation,
}

impl BandEstimator {
    pub fn interval(
        self,
        head: &MlpParams,
        center: &[f64],
        radius: f64,
    ) -> Result<PredictionInterval> {
        match self {
            BandEstimator::IntervalPropagation => interval_ibp(head, center, radius),
            BandEstimator::LinearRelaxation => interval_linear_relaxation(head, center, radius),
        }
    }
}

/// `(lower slope, lower intercept, upper slope, upper intercept)` of lines
/// enclosing the activation on `[l, u]`.
fn relaxation(activation: Activation, l: f64, u: f64) -> (f64, f64, f64, f64) {
    match activation {
        Activation::Identity => (1.0, 0.0, 1.0, 0.0),
        Activation::Relu if l >= 0.0 => (1.0, 0.0, 1.0, 0.0),
        Activation::Relu if u <= 0.0 => (0.0, 0.0, 0.0, 0.0),
        Activation::Relu => {
            let s = u / (u - l);
            let lower = if u >= -l { 1.0 } else { 0.0 };
            (lower, 0.0, s, -s * l)
        }
    }
}

/// Certified box around `head(B)` for the ball `B` of `radius` around
/// `center`; never wider than [`interval_ibp`].
pub fn interval_linear_relaxation(
    head: &MlpParams,
    center: &[f64],
    radius: f64,
) -> Result<PredictionInterval> {
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

    let w1 = &head.layer1_weights;
    let w2 = &head.layer2_weights;
    let (d, h) = (w1.cols(), w1.rows());
    let gamma1 = 2.0 * (d as f64 + 2.0) * f64::EPSILON;
    let gamma2 = 2.0 * (2.0 * h as f64 + d as f64 + 4.0) * f64::EPSILON;

    let zc = w1.matvec(center);
    let mut zc_b = Vec::with_capacity(h);
    let mut lo = Vec::with_capacity(h);
    let mut hi = Vec::with_capacity(h);
    for k in 0..h {
        let row = w1.row(k);
        let z = zc[k] + head.layer1_bias[k];
        let spread = radius * norm(row);
        let magnitude = head.layer1_bias[k].abs()
            + row
                .iter()
                .zip(center)
                .map(|(w, c)| (w * c).abs())
                .sum::<f64>()
            + spread;
        let slack = gamma1 * magnitude;
        zc_b.push(z);
        lo.push(z - spread - slack);
        hi.push(z + spread + slack);
    }
    let relax: Vec<_> = lo
        .iter()
        .zip(&hi)
        .map(|(&l, &u)| relaxation(head.activation, l, u))
        .collect();
    let ibp_hidden: Vec<(f64, f64)> = lo
        .iter()
        .zip(&hi)
        .map(|(&l, &u)| match head.activation {
            Activation::Identity => (l, u),
            Activation::Relu => (l.max(0.0), u.max(0.0)),
        })
        .collect();

    // The box enclosure is also sound; keeping it makes the result never
    // wider than plain interval propagation, even after rounding slack.
    let boxed = interval_ibp(head, center, radius)?;
    let out = w2.rows();
    let mut lower = Vec::with_capacity(out);
    let mut upper = Vec::with_capacity(out);
    let mut lam = alloc::vec![0.0; h];
    for j in 0..out {
        let row = w2.row(j);
        let b2 = head.layer2_bias[j];

        // Upper bound: the upper line where W2_jk ≥ 0, the lower one otherwise.
        let mut bounds = [0.0f64; 2];
        for (side, sign) in [(0usize, 1.0f64), (1, -1.0)] {
            let mut mu = b2;
            let mut magnitude = b2.abs();
            for k in 0..h {
                let (ls, li, us, ui) = relax[k];
                let w = row[k];
                let (s, i) = if w * sign >= 0.0 { (us, ui) } else { (ls, li) };
                lam[k] = w * s;
                mu += w * i;
                magnitude += (w * i).abs() + (lam[k] * zc_b[k]).abs();
            }
            let lin: f64 = lam.iter().zip(&zc_b).map(|(a, z)| a * z).sum();
            let back = w1.matvec_t(&lam);
            let spread = radius * norm(&back);
            let slack = gamma2 * (magnitude + spread);
            bounds[side] = lin + mu + sign * (spread + slack);
        }

        let (mut ib_lo, mut ib_hi) = (b2, b2);
        let mut magnitude = b2.abs();
        for (w, (l, u)) in row.iter().zip(&ibp_hidden) {
            let (a, b) = (w * l, w * u);
            ib_lo += a.min(b);
            ib_hi += a.max(b);
            magnitude += a.abs().max(b.abs());
        }
        let slack = gamma2 * magnitude;
        upper.push(bounds[0].min(ib_hi + slack).min(boxed.upper[j]));
        lower.push(bounds[1].max(ib_lo - slack).max(boxed.lower[j]));
    }
    Ok(PredictionInterval {
        lower,
        upper,
        quantile: radius,
    })
}

/// Smallest radius `r` (to a relative tolerance of `1e-9`) whose band around
/// `center` contains `y`; `+∞` when no radius up to `1e12` does. The radius
/// returned is always one whose band was checked to contain `y`.
pub fn band_radius(
    band: BandEstimator,
    head: &MlpParams,
    center: &[f64],
    y: &[f64],
) -> Result<f64> {
    check_dim("band target", head.output_dim(), y.len())?;
    check_finite("band target", y)?;
    let contains = |r: f64| -> Result<bool> { Ok(band.interval(head, center, r)?.contains(y)) };
    if contains(0.0)? {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    if contains(hi)? {
        // Shrink towards the smallest containing power of two.
        for _ in 0..60 {
            let half = hi / 2.0;
            if contains(half)? {
                hi = half;
            } else {
                lo = half;
                break;
            }
        }
    } else {
        loop {
            lo = hi;
            hi *= 2.0;
            if hi > 1e12 {
                return Ok(f64::INFINITY);
            }
            if contains(hi)? {
                break;
            }
        }
    }
    while hi - lo > 1e-9 * hi {
        let mid = 0.5 * (lo + hi);
        if contains(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::rng::SeedStream;
    use alloc::vec;

    #[test]
    fn affine_head_is_exact_image_of_ball() {
        // g(v) = A v + b; the image of the ball has half-widths r ‖A_j‖₂.
        let a = Matrix::from_vec(2, 3, vec![1.0, -2.0, 0.5, 0.0, 3.0, -4.0]).unwrap();
        let head = MlpParams::new(
            Matrix::identity(3),
            vec![0.0; 3],
            a,
            vec![0.3, -0.7],
            Activation::Identity,
        )
        .unwrap();
        let iv = interval_linear_relaxation(&head, &[0.2, 0.1, -0.3], 0.5).unwrap();
        let w = iv.widths();
        assert!((w[0] - 2.0 * 0.5 * 5.25f64.sqrt()).abs() < 1e-12);
        assert!((w[1] - 2.0 * 0.5 * 5.0).abs() < 1e-12);
    }

    #[test]
    fn never_wider_than_ibp() {
        let mut rng = SeedStream::new(11);
        for _ in 0..20 {
            let head = MlpParams::init(6, 8, 3, Activation::Relu, &mut rng);
            let c: Vec<f64> = (0..6).map(|_| rng.standard_normal()).collect();
            let r = rng.uniform_range(0.01, 2.0);
            let tight = interval_linear_relaxation(&head, &c, r).unwrap();
            let coarse = interval_ibp(&head, &c, r).unwrap();
            assert!(tight.is_subset_of(&coarse));
        }
    }

    #[test]
    fn band_radius_of_affine_head() {
        // Identity head: the band at radius r is the box c ± r, so the
        // radius is the largest coordinate gap.
        let head = MlpParams::new(
            Matrix::identity(3),
            vec![0.0; 3],
            Matrix::identity(3),
            vec![0.0; 3],
            Activation::Identity,
        )
        .unwrap();
        let c = [0.5, -1.0, 2.0];
        let y = [0.9, -3.5, 2.1];
        for band in [
            BandEstimator::IntervalPropagation,
            BandEstimator::LinearRelaxation,
        ] {
            let r = band_radius(band, &head, &c, &y).unwrap();
            assert!((r - 2.5).abs() < 1e-8, "{band:?}: {r}");
            assert!(band.interval(&head, &c, r).unwrap().contains(&y));
        }
        assert_eq!(
            band_radius(BandEstimator::LinearRelaxation, &head, &c, &c).unwrap(),
            0.0
        );
    }

    #[test]
    fn unreachable_target_is_infinite() {
        // Output ReLU-clamped: g(v) = relu(v) cannot be negative.
        let head = MlpParams::new(
            Matrix::identity(1),
            vec![0.0],
            Matrix::identity(1),
            vec![0.0],
            Activation::Relu,
        )
        .unwrap();
        assert_eq!(
            band_radius(BandEstimator::LinearRelaxation, &head, &[0.0], &[-1.0]).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn degenerate_radii() {
        let mut rng = SeedStream::new(12);
        let head = MlpParams::init(3, 3, 2, Activation::Relu, &mut rng);
        let c = [0.5, -0.5, 0.1];
        let p = interval_linear_relaxation(&head, &c, 0.0).unwrap();
        assert_eq!(p.lower, head.forward(&c).unwrap());
        assert_eq!(
            interval_linear_relaxation(&head, &c, f64::INFINITY)
                .unwrap()
                .mean_width(),
            f64::INFINITY
        );
        assert!(interval_linear_relaxation(&head, &c, -0.1).is_err());
    }
}
