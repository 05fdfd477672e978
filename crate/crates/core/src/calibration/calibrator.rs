use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;
use serde::{Deserialize, Serialize};

use super::alpha::{AlphaTracker, CoverageBound};
use super::ibp::PredictionInterval;
use super::quantile::WeightedScoreDistribution;
use super::relax::{band_radius, BandEstimator};
use crate::attention::{
    attention_weights, online_update_attention, AttentionExample, AttentionParams, AttentionWeights,
};
use crate::error::{check_dim, Error, Result};
use crate::neuralnet::{AdamConfig, AdamState, TwoStageModel};
use crate::scores::{InversionConfig, ScoreKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "OCP")]
    Ocp,
    #[serde(rename = "FOCP")]
    Focp,
    #[serde(rename = "AOCP")]
    Aocp,
    #[serde(rename = "AFOCP")]
    Afocp,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ocp, Method::Focp, Method::Aocp, Method::Afocp];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ocp => "OCP",
            Method::Focp => "FOCP",
            Method::Aocp => "AOCP",
            Method::Afocp => "AFOCP",
        }
    }

    pub fn score_kind(self) -> ScoreKind {
        match self {
            Method::Ocp | Method::Aocp => ScoreKind::OutputSpace,
            Method::Focp | Method::Afocp => ScoreKind::FeatureSpace,
        }
    }

    pub fn uses_attention(self) -> bool {
        matches!(self, Method::Aocp | Method::Afocp)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidConfig(alloc::format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibratorConfig {
    pub method: Method,
    /// Window length `L`.
    pub window: usize,
    pub target_alpha: f64,
    /// `λ` in the level update.
    pub step_size: f64,
    pub inversion: InversionConfig,
    /// Band estimator of the feature-space methods.
    pub band: BandEstimator,
    pub feature_score: FeatureScore,
    /// Fine-tune attention after every observation.
    pub online_attention: bool,
    pub attention_adam: AdamConfig,
}

impl CalibratorConfig {
    pub const DEFAULT_ALPHA: f64 = 0.1;
    pub const DEFAULT_STEP_SIZE: f64 = 0.005;

    pub fn new(method: Method, window: usize, inversion: InversionConfig) -> Self {
        Self {
            method,
            window,
            target_alpha: Self::DEFAULT_ALPHA,
            step_size: Self::DEFAULT_STEP_SIZE,
            inversion,
            band: BandEstimator::default(),
            feature_score: FeatureScore::default(),
            online_attention: true,
            attention_adam: AdamConfig::default(),
        }
    }

    /// The nonconformity score this configuration uses, given `f(x)`.
    pub fn score(&self, model: &TwoStageModel, feature: &[f64], y: &[f64]) -> Result<f64> {
        match (self.method.score_kind(), self.feature_score) {
            (ScoreKind::FeatureSpace, FeatureScore::BandRadius) => {
                band_radius(self.band, &model.head, feature, y)
            }
            (kind, _) => kind.score_with_feature(model, feature, y, &self.inversion),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowEntry {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub feature: Vec<f64>,
    pub score: f64,
}

/// Everything produced by one step of the online protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// 1-based index among post-warm-up steps.
    pub t: u64,
    /// `α_t` used for this step's quantile.
    pub alpha: f64,
    pub score: f64,
    pub quantile: f64,
    pub err: bool,
    pub interval: PredictionInterval,
    /// Atom weights aligned with the window (oldest first) and then the
    /// `+∞` weight.
    pub weights: Vec<f64>,
}

/// How the feature-space methods score a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureScore {
    /// `‖V̄ − f(x)‖` after gradient-descent inversion of the head.
    Inversion,
    /// Smallest feature radius whose band contains `y`, so that the score
    /// test and band membership agree.
    #[default]
    BandRadius,
}

/// One row of the per-step event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: u64,
    pub method: Method,
    pub alpha_t: f64,
    pub score: f64,
    pub quantile: f64,
    pub err: u8,
    pub mean_interval_length: f64,
}

impl EventRecord {
    pub fn new(method: Method, outcome: &StepOutcome, mean_interval_length: f64) -> Self {
        Self {
            t: outcome.t,
            method,
            alpha_t: outcome.alpha,
            score: outcome.score,
            quantile: outcome.quantile,
            err: outcome.err as u8,
            mean_interval_length,
        }
    }
}

struct AttentionState {
    params: AttentionParams,
    optimizer: AdamState,
}

struct Prepared {
    feature: Vec<f64>,
    prediction: Vec<f64>,
    weights: AttentionWeights,
    quantile: f64,
}

/// One online calibrator. Single owner, mutated sequentially.
pub struct Calibrator {
    config: CalibratorConfig,
    model: TwoStageModel,
    window: VecDeque<WindowEntry>,
    /// Last `2L` (feature, score) pairs, the source of online attention
    /// examples.
    history: VecDeque<(Vec<f64>, f64)>,
    alpha: AlphaTracker,
    attention: Option<AttentionState>,
    steps: u64,
}

impl fmt::Debug for Calibrator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Calibrator")
            .field("method", &self.config.method)
            .field("window", &self.window.len())
            .field("alpha", &self.alpha.alpha())
            .field("steps", &self.steps)
            .finish()
    }
}

impl Calibrator {
    /// `attention` must be present exactly for the attention methods.
    pub fn new(
        config: CalibratorConfig,
        model: TwoStageModel,
        attention: Option<AttentionParams>,
    ) -> Result<Self> {
        if config.window == 0 {
            return Err(Error::InvalidConfig(
                "window length must be at least 1".into(),
            ));
        }
        config.inversion.validate()?;
        let alpha = AlphaTracker::new(config.target_alpha, config.step_size)?;
        let attention = match (config.method.uses_attention(), attention) {
            (true, Some(params)) => {
                params.validate()?;
                check_dim(
                    "attention feature dimension",
                    model.feature_dim(),
                    params.feature_dim(),
                )?;
                let optimizer = AdamState::new(config.attention_adam, &params);
                Some(AttentionState { params, optimizer })
            }
            (false, None) => None,
            (true, None) => {
                return Err(Error::InvalidConfig(alloc::format!(
                    "{} needs attention parameters",
                    config.method
                )))
            }
            (false, Some(_)) => {
                return Err(Error::InvalidConfig(alloc::format!(
                    "{} uses uniform weights; attention parameters given",
                    config.method
                )))
            }
        };
        Ok(Self {
            config,
            model,
            window: VecDeque::with_capacity(config.window),
            history: VecDeque::with_capacity(2 * config.window + 1),
            alpha,
            attention,
            steps: 0,
        })
    }

    pub fn config(&self) -> &CalibratorConfig {
        &self.config
    }

    pub fn method(&self) -> crate::calibration::Method {
        self.config.method
    }

    pub fn model(&self) -> &TwoStageModel {
        &self.model
    }

    pub fn window(&self) -> &VecDeque<WindowEntry> {
        &self.window
    }

    pub fn alpha(&self) -> &AlphaTracker {
        &self.alpha
    }

    pub fn attention(&self) -> Option<&AttentionParams> {
        self.attention.as_ref().map(|a| &a.params)
    }

    pub fn coverage_bound(&self) -> CoverageBound {
        self.alpha.coverage_bound()
    }

    fn score_with_feature(&self, feature: &[f64], y: &[f64]) -> Result<f64> {
        self.config.score(&self.model, feature, y)
    }

    /// Fills the window with `L` observed pairs, oldest first. No level
    /// updates and no coverage events.
    pub fn warmup(&mut self, inputs: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<()> {
        check_dim("warm-up inputs", self.config.window, inputs.len())?;
        check_dim("warm-up labels", self.config.window, labels.len())?;
        self.window.clear();
        self.history.clear();
        for (x, y) in inputs.iter().zip(labels) {
            let feature = self.model.feature(x)?;
            let score = self.score_with_feature(&feature, y)?;
            self.push(x.clone(), y.clone(), feature, score);
        }
        Ok(())
    }

    fn push(&mut self, x: Vec<f64>, y: Vec<f64>, feature: Vec<f64>, score: f64) {
        let l = self.config.window;
        if self.attention.is_some() {
            self.history.push_back((feature.clone(), score));
            while self.history.len() > 2 * l {
                self.history.pop_front();
            }
        }
        self.window.push_back(WindowEntry {
            x,
            y,
            feature,
            score,
        });
        while self.window.len() > l {
            self.window.pop_front();
        }
    }

    fn require_full(&self) -> Result<()> {
        if self.window.len() < self.config.window {
            return Err(Error::WindowUnderfull {
                have: self.window.len(),
                need: self.config.window,
            });
        }
        Ok(())
    }

    fn weights_for(&self, query_feature: &[f64]) -> Result<AttentionWeights> {
        match &self.attention {
            None => Ok(AttentionWeights::uniform(self.window.len())),
            Some(state) => {
                let keys: Vec<&[f64]> = self.window.iter().map(|e| e.feature.as_slice()).collect();
                attention_weights(&state.params, query_feature, &keys)
            }
        }
    }

    /// Weighted score distribution for a test point with feature
    /// `query_feature`.
    pub fn build_distribution(&self, query_feature: &[f64]) -> Result<WeightedScoreDistribution> {
        self.require_full()?;
        let weights = self.weights_for(query_feature)?;
        self.distribution_with(&weights)
    }

    fn distribution_with(&self, weights: &AttentionWeights) -> Result<WeightedScoreDistribution> {
        let scores: Vec<f64> = self.window.iter().map(|e| e.score).collect();
        WeightedScoreDistribution::from_scores(&scores, &weights.calibration)
    }

    fn prepare(&self, x: &[f64]) -> Result<Prepared> {
        self.require_full()?;
        let feature = self.model.feature(x)?;
        let prediction = self.model.head.forward(&feature)?;
        let weights = self.weights_for(&feature)?;
        let quantile = self
            .distribution_with(&weights)?
            .quantile(1.0 - self.alpha.alpha());
        Ok(Prepared {
            feature,
            prediction,
            weights,
            quantile,
        })
    }

    fn interval_for(&self, prepared: &Prepared) -> Result<PredictionInterval> {
        let q = prepared.quantile;
        if q == f64::NEG_INFINITY {
            return Ok(PredictionInterval::point(prepared.prediction.clone(), q));
        }
        match self.config.method.score_kind() {
            ScoreKind::OutputSpace => Ok(PredictionInterval::around(&prepared.prediction, q, q)),
            ScoreKind::FeatureSpace => {
                self.config
                    .band
                    .interval(&self.model.head, &prepared.feature, q)
            }
        }
    }

    /// Interval for `x` at the current level, in model output units.
    pub fn predict_interval(&self, x: &[f64]) -> Result<PredictionInterval> {
        self.interval_for(&self.prepare(x)?)
    }

    /// `(err, score, quantile)` without changing any state.
    pub fn coverage_test(&self, x: &[f64], y: &[f64]) -> Result<(bool, f64, f64)> {
        let prepared = self.prepare(x)?;
        let score = self.score_with_feature(&prepared.feature, y)?;
        Ok((score > prepared.quantile, score, prepared.quantile))
    }

    /// One step of the online protocol: weights, quantile, interval,
    /// coverage, level update, attention fine-tuning, window slide.
    pub fn observe(&mut self, x: &[f64], y: &[f64]) -> Result<StepOutcome> {
        let prepared = self.prepare(x)?;
        let interval = self.interval_for(&prepared)?;
        let score = self.score_with_feature(&prepared.feature, y)?;
        let err = score > prepared.quantile;
        let alpha = self.alpha.alpha();
        self.alpha.update(err);
        self.steps += 1;

        let Prepared {
            feature,
            quantile,
            weights,
            ..
        } = prepared;
        self.push(x.to_vec(), y.to_vec(), feature, score);
        if self.config.online_attention {
            self.fine_tune_attention()?;
        }

        Ok(StepOutcome {
            t: self.steps,
            alpha,
            score,
            quantile,
            err,
            interval,
            weights: weights.calibration,
        })
    }

    fn fine_tune_attention(&mut self) -> Result<()> {
        let Some(state) = self.attention.as_mut() else {
            return Ok(());
        };
        let l = self.config.window;
        let features: Vec<&[f64]> = self.history.iter().map(|(f, _)| f.as_slice()).collect();
        let scores: Vec<f64> = self.history.iter().map(|(_, s)| *s).collect();
        let examples: Vec<AttentionExample<'_>> = (l..features.len())
            .map(|p| AttentionExample {
                query: features[p],
                keys: features[p - l..p].to_vec(),
                past_scores: scores[p - l..p].to_vec(),
                target: scores[p],
            })
            .collect();
        online_update_attention(&mut state.params, &mut state.optimizer, &examples)
    }

    /// Stream position label for logs.
    pub fn describe(&self) -> String {
        alloc::format!(
            "{} L={} t={}",
            self.config.method,
            self.config.window,
            self.steps
        )
    }
}
