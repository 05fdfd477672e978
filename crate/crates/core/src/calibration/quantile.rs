use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Point masses at finite scores plus a mass at `+∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedScoreDistribution {
    atoms: Vec<(f64, f64)>,
    infinity_weight: f64,
}

/// Total weight may miss one by at most this much.
pub const WEIGHT_TOLERANCE: f64 = 1e-9;

impl WeightedScoreDistribution {
    pub fn new(atoms: Vec<(f64, f64)>, infinity_weight: f64) -> Result<Self> {
        let mut total = infinity_weight;
        if !(infinity_weight >= 0.0 && infinity_weight.is_finite()) {
            return Err(Error::InvalidConfig(
                "infinity weight must be finite and nonnegative".into(),
            ));
        }
        for &(score, weight) in &atoms {
            if !score.is_finite() || score < 0.0 {
                return Err(Error::InvalidConfig(alloc::format!(
                    "invalid score atom {score}"
                )));
            }
            if !(weight >= 0.0 && weight.is_finite()) {
                return Err(Error::InvalidConfig(alloc::format!(
                    "invalid atom weight {weight}"
                )));
            }
            total += weight;
        }
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::InvalidConfig(alloc::format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(Self {
            atoms,
            infinity_weight,
        })
    }

    /// Scores `s_l` with weights `w_l`; the `+∞` atom takes the final weight.
    pub fn from_scores(scores: &[f64], calibration_weights: &[f64]) -> Result<Self> {
        crate::error::check_dim(
            "calibration weights",
            scores.len() + 1,
            calibration_weights.len(),
        )?;
        let atoms = scores
            .iter()
            .copied()
            .zip(calibration_weights.iter().copied())
            .collect();
        Self::new(atoms, calibration_weights[scores.len()])
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn infinity_weight(&self) -> f64 {
        self.infinity_weight
    }

    pub fn total_weight(&self) -> f64 {
        self.infinity_weight + self.atoms.iter().map(|a| a.1).sum::<f64>()
    }

    /// Smallest atom `q` whose cumulative weight reaches `level`, with `+∞`
    /// as the largest atom. Levels below 0 give `−∞`, above 1 give `+∞`;
    /// level 0 gives the smallest atom.
    pub fn quantile(&self, level: f64) -> f64 {
        if level < 0.0 {
            return f64::NEG_INFINITY;
        }
        if level > 1.0 || level.is_nan() {
            return f64::INFINITY;
        }
        let mut sorted = self.atoms.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cumulative = 0.0;
        let mut i = 0;
        while i < sorted.len() {
            let value = sorted[i].0;
            while i < sorted.len() && sorted[i].0 == value {
                cumulative += sorted[i].1;
                i += 1;
            }
            if cumulative >= level {
                return value;
            }
        }
        f64::INFINITY
    }
}
