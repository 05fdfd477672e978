//! Time-averaged coverage and interval length, plus diagnostics for the
//! length-comparison assumptions.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::calibration::{interval_ibp, PredictionInterval, WeightedScoreDistribution};
use crate::error::{check_dim, Error, Result};
use crate::neuralnet::MlpParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: u64,
    pub running_coverage: f64,
    /// Mean over finite-length steps so far; NaN until one exists.
    pub running_length: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsAccumulator {
    steps: u64,
    covered: u64,
    finite_steps: u64,
    length_sum: f64,
    infinite_steps: u64,
    lengths: Vec<f64>,
    trajectory: Vec<TrajectoryPoint>,
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Coverage counts `1 − err`; length is the interval's mean width.
    pub fn record(&mut self, y: &[f64], interval: &PredictionInterval, err: bool) -> Result<()> {
        check_dim("interval dimension", y.len(), interval.dim())?;
        let length = interval.mean_width();
        self.steps += 1;
        if !err {
            self.covered += 1;
        }
        if length.is_finite() {
            self.finite_steps += 1;
            self.length_sum += length;
        } else {
            self.infinite_steps += 1;
        }
        self.lengths.push(length);
        self.trajectory.push(TrajectoryPoint {
            t: self.steps,
            running_coverage: self.coverage(),
            running_length: self.mean_length(),
        });
        Ok(())
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn covered(&self) -> u64 {
        self.covered
    }

    pub fn coverage(&self) -> f64 {
        if self.steps == 0 {
            return f64::NAN;
        }
        self.covered as f64 / self.steps as f64
    }

    /// Mean per-step length over steps with finite intervals.
    pub fn mean_length(&self) -> f64 {
        if self.finite_steps == 0 {
            return f64::NAN;
        }
        self.length_sum / self.finite_steps as f64
    }

    pub fn infinite_steps(&self) -> u64 {
        self.infinite_steps
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn trajectory(&self) -> &[TrajectoryPoint] {
        &self.trajectory
    }
}

/// Certified upper estimate of the output-space length of
/// `{g(U) : ‖U − feature‖ ≤ M/2}`: mean width of the propagated box.
pub fn h_operator(head: &MlpParams, diameter: f64, feature: &[f64]) -> Result<f64> {
    if diameter.is_nan() || diameter < 0.0 {
        return Err(Error::InvalidConfig(alloc::format!(
            "diameter {diameter} must be nonnegative"
        )));
    }
    Ok(interval_ibp(head, feature, diameter / 2.0)?.mean_width())
}

/// Logged state of one step of a paired feature-space / output-space run
/// over the same stream.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticStep {
    pub feature_alpha: f64,
    /// Window weights of the feature-space run (`L` atoms then `+∞`).
    pub feature_weights: Vec<f64>,
    pub output_alpha: f64,
    pub output_weights: Vec<f64>,
    /// Feature scores `s^f` over the window, oldest first.
    pub feature_scores: Vec<f64>,
    /// Output scores `s` over the same window.
    pub output_scores: Vec<f64>,
    pub window_features: Vec<Vec<f64>>,
    pub test_feature: Vec<f64>,
}

/// Time-averaged sides of each assumption inequality. `R`, `ε`, `C` are
/// unknown, so only the raw sides are reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// Steps with finite quantiles that entered the averages.
    pub steps_used: usize,
    pub steps_skipped: usize,
    pub holder_exponent: f64,
    /// Mean of `Q(H(M^f, X))` over time.
    pub length_preservation_lhs: f64,
    /// Mean of `Q(M)` over time.
    pub length_preservation_rhs: f64,
    /// Mean of `𝕄|Q(M^f) − M^f|^β`, before the factor `R`.
    pub expansion_lhs: f64,
    /// Mean of `𝕄[Q(H(M^f, X)) − H(M^f, X)]`, before subtracting slack terms.
    pub expansion_rhs: f64,
    /// Mean of `|H(Q(M^f), X_t) − 𝕄 H(Q(M^f), X_window)|`.
    pub quantile_stability_lhs: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Evaluates the three assumption statistics over a logged paired run.
pub fn assumption_diagnostics(
    steps: &[DiagnosticStep],
    head: &MlpParams,
    holder_exponent: f64,
) -> Result<AssumptionReport> {
    if steps.is_empty() {
        return Err(Error::Empty("diagnostic log"));
    }
    let mut used = 0usize;
    let mut skipped = 0usize;
    let (mut lp_l, mut lp_r, mut ex_l, mut ex_r, mut qs) = (0.0, 0.0, 0.0, 0.0, 0.0);

    for step in steps {
        let l = step.feature_scores.len();
        check_dim("window output scores", l, step.output_scores.len())?;
        check_dim("window features", l, step.window_features.len())?;
        if l == 0 {
            return Err(Error::Empty("diagnostic window"));
        }

        let feature_lengths: Vec<f64> = step.feature_scores.iter().map(|s| 2.0 * s).collect();
        let output_lengths: Vec<f64> = step.output_scores.iter().map(|s| 2.0 * s).collect();
        let h_lengths = feature_lengths
            .iter()
            .zip(&step.window_features)
            .map(|(m, f)| h_operator(head, *m, f))
            .collect::<Result<Vec<f64>>>()?;

        let level_f = 1.0 - step.feature_alpha;
        let q_feature =
            WeightedScoreDistribution::from_scores(&feature_lengths, &step.feature_weights)?
                .quantile(level_f);
        let q_h = WeightedScoreDistribution::from_scores(&h_lengths, &step.feature_weights)?
            .quantile(level_f);
        let q_output =
            WeightedScoreDistribution::from_scores(&output_lengths, &step.output_weights)?
                .quantile(1.0 - step.output_alpha);
        if !(q_feature.is_finite() && q_h.is_finite() && q_output.is_finite()) {
            skipped += 1;
            continue;
        }

        let h_at_quantile = step
            .window_features
            .iter()
            .map(|f| h_operator(head, q_feature, f))
            .collect::<Result<Vec<f64>>>()?;
        let h_test = h_operator(head, q_feature, &step.test_feature)?;

        lp_l += q_h;
        lp_r += q_output;
        ex_l += mean(
            &feature_lengths
                .iter()
                .map(|m| libm::pow((q_feature - m).abs(), holder_exponent))
                .collect::<Vec<_>>(),
        );
        ex_r += mean(&h_lengths.iter().map(|h| q_h - h).collect::<Vec<_>>());
        qs += (h_test - mean(&h_at_quantile)).abs();
        used += 1;
    }

    let n = used as f64;
    let avg = |s: f64| if used == 0 { f64::NAN } else { s / n };
    Ok(AssumptionReport {
        steps_used: used,
        steps_skipped: skipped,
        holder_exponent,
        length_preservation_lhs: avg(lp_l),
        length_preservation_rhs: avg(lp_r),
        expansion_lhs: avg(ex_l),
        expansion_rhs: avg(ex_r),
        quantile_stability_lhs: avg(qs),
    })
}
