//! Nonconformity scores in output space and feature space.
//!
//! The feature-space score is the distance from the model feature `f(x)` to
//! the nearest preimage of `y` under the head. It is approximated by running
//! plain gradient descent on `‖g(V) − y‖²` from `V = f(x)` for a fixed
//! number of steps and measuring how far the iterate moved.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::{distance, norm, sub};
use crate::neuralnet::{MlpParams, TwoStageModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    OutputSpace,
    FeatureSpace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    pub step_size: f64,
    pub num_steps: usize,
}

pub const DEFAULT_INVERSION_STEPS: usize = 100;

impl InversionConfig {
    pub fn new(step_size: f64, num_steps: usize) -> Result<Self> {
        let cfg = Self {
            step_size,
            num_steps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!(
                "inversion step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.num_steps == 0 {
            return Err(Error::InvalidConfig(
                "inversion needs at least one step".into(),
            ));
        }
        Ok(())
    }

    /// `η = 0.1 / (1 + ‖W1‖_F · ‖W2‖_F)` with [`DEFAULT_INVERSION_STEPS`] steps.
    pub fn for_head(head: &MlpParams) -> Self {
        let scale = head.layer1_weights.frobenius_norm() * head.layer2_weights.frobenius_norm();
        Self {
            step_size: 0.1 / (1.0 + scale),
            num_steps: DEFAULT_INVERSION_STEPS,
        }
    }
}

/// Result of running gradient descent through the head.
#[derive(Debug, Clone, PartialEq)]
pub struct Inversion {
    /// Final iterate `V̄`.
    pub feature: Vec<f64>,
    /// `‖g(V̄) − y‖`; zero only when `V̄` is an exact preimage.
    pub residual: f64,
    /// Step size that produced `V̄` (smaller than requested after a retry).
    pub step_size: f64,
}

/// `‖y − mu(x)‖₂`
pub fn output_score(model: &TwoStageModel, x: &[f64], y: &[f64]) -> Result<f64> {
    let pred = model.predict(x)?;
    output_score_from_prediction(&pred, y)
}

pub fn output_score_from_prediction(prediction: &[f64], y: &[f64]) -> Result<f64> {
    check_dim("label", prediction.len(), y.len())?;
    Ok(distance(prediction, y))
}

/// Exactly `cfg.num_steps` steps of `V ← V − η ∇_V ‖g(V) − y‖²`.
pub fn invert_head(
    head: &MlpParams,
    v_init: &[f64],
    y: &[f64],
    cfg: &InversionConfig,
) -> Result<Inversion> {
    cfg.validate()?;
    check_dim("inversion start", head.input_dim(), v_init.len())?;
    check_dim("inversion target", head.output_dim(), y.len())?;
    check_finite("inversion target", y)?;

    let mut v = v_init.to_vec();
    for step in 0..cfg.num_steps {
        let residual = sub(&head.forward(&v)?, y);
        let upstream: Vec<f64> = residual.iter().map(|r| 2.0 * r).collect();
        let grad = head.backward(&v, &upstream)?.input;
        for (vi, gi) in v.iter_mut().zip(&grad) {
            *vi -= cfg.step_size * gi;
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::InversionDiverged { step });
        }
    }
    let residual = norm(&sub(&head.forward(&v)?, y));
    Ok(Inversion {
        feature: v,
        residual,
        step_size: cfg.step_size,
    })
}

/// Inversion with a single retry at a tenth of the step size on divergence.
pub fn invert_head_with_retry(
    head: &MlpParams,
    v_init: &[f64],
    y: &[f64],
    cfg: &InversionConfig,
) -> Result<Inversion> {
    match invert_head(head, v_init, y, cfg) {
        Err(Error::InversionDiverged { .. }) => {
            let smaller = InversionConfig {
                step_size: cfg.step_size / 10.0,
                ..*cfg
            };
            invert_head(head, v_init, y, &smaller)
        }
        other => other,
    }
}

/// Feature-space score given a precomputed model feature `f(x)`.
pub fn feature_score_from_feature(
    head: &MlpParams,
    feature: &[f64],
    y: &[f64],
    cfg: &InversionConfig,
) -> Result<f64> {
    let inv = invert_head_with_retry(head, feature, y, cfg)?;
    Ok(distance(&inv.feature, feature))
}

/// `‖V̄ − f(x)‖₂`
pub fn feature_score(
    model: &TwoStageModel,
    x: &[f64],
    y: &[f64],
    cfg: &InversionConfig,
) -> Result<f64> {
    let feature = model.feature(x)?;
    feature_score_from_feature(&model.head, &feature, y, cfg)
}

impl ScoreKind {
    /// Score of `(x, y)` given the already-computed feature `f(x)`.
    pub fn score_with_feature(
        self,
        model: &TwoStageModel,
        feature: &[f64],
        y: &[f64],
        cfg: &InversionConfig,
    ) -> Result<f64> {
        match self {
            ScoreKind::OutputSpace => {
                output_score_from_prediction(&model.head.forward(feature)?, y)
            }
            ScoreKind::FeatureSpace => feature_score_from_feature(&model.head, feature, y, cfg),
        }
    }

    pub fn score(
        self,
        model: &TwoStageModel,
        x: &[f64],
        y: &[f64],
        cfg: &InversionConfig,
    ) -> Result<f64> {
        self.score_with_feature(model, &model.feature(x)?, y, cfg)
    }
}
