//! Attention weights over the calibration window.
//!
//! Coefficients are `a_l = softmax_l(β ⟨q W_q, k_l W_k⟩)` for the current
//! feature `q` and stored features `k_l`. Calibration weights put
//! `L/(L+1) · a_l` on each stored score and `1/(L+1)` on the `+∞` atom.
//!
//! The embeddings are trained by predicting the current score as
//! `Σ a_l s_l` and descending the squared error.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::{dot, Matrix};
use crate::neuralnet::{AdamConfig, AdamState, ParamSet};
use crate::rng::{derive_seed_indexed, SeedStream};

pub const DEFAULT_LATENT_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    /// `W_q`, shape `[D × D′]`.
    pub query_weights: Matrix,
    /// `W_k`, shape `[D × D′]`.
    pub key_weights: Matrix,
    pub beta: f64,
}

impl AttentionParams {
    pub fn new(query_weights: Matrix, key_weights: Matrix, beta: f64) -> Result<Self> {
        let params = Self {
            query_weights,
            key_weights,
            beta,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(
            "key embedding rows",
            self.query_weights.rows(),
            self.key_weights.rows(),
        )?;
        check_dim(
            "key embedding cols",
            self.query_weights.cols(),
            self.key_weights.cols(),
        )?;
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!(
                "attention scale must be positive, got {}",
                self.beta
            )));
        }
        check_finite("query embedding", self.query_weights.as_slice())?;
        check_finite("key embedding", self.key_weights.as_slice())
    }

    /// Glorot-uniform embeddings and `β = 1/√D′`.
    pub fn init(feature_dim: usize, latent_dim: usize, seed: u64) -> Self {
        let mut rng = SeedStream::new(seed);
        let a = libm::sqrt(6.0 / (feature_dim + latent_dim) as f64);
        let query_weights =
            Matrix::from_fn(feature_dim, latent_dim, |_, _| rng.uniform_range(-a, a));
        let key_weights = Matrix::from_fn(feature_dim, latent_dim, |_, _| rng.uniform_range(-a, a));
        Self {
            query_weights,
            key_weights,
            beta: 1.0 / libm::sqrt(latent_dim as f64),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.query_weights.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.query_weights.cols()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            query_weights: Matrix::zeros(self.feature_dim(), self.latent_dim()),
            key_weights: Matrix::zeros(self.feature_dim(), self.latent_dim()),
            beta: self.beta,
        }
    }
}

impl ParamSet for AttentionParams {
    fn tensors(&self) -> Vec<&[f64]> {
        alloc::vec![self.query_weights.as_slice(), self.key_weights.as_slice()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        alloc::vec![
            self.query_weights.as_mut_slice(),
            self.key_weights.as_mut_slice()
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    /// Softmax coefficients, one per key.
    pub coefficients: Vec<f64>,
    /// `L` score weights followed by the `+∞` weight.
    pub calibration: Vec<f64>,
}

impl AttentionWeights {
    /// Re-normalizes coefficients that already sum to one.
    pub fn from_coefficients(coefficients: Vec<f64>) -> Self {
        let l = coefficients.len() as f64;
        let shrink = l / (l + 1.0);
        let mut calibration: Vec<f64> = coefficients.iter().map(|a| shrink * a).collect();
        calibration.push(1.0 / (l + 1.0));
        Self {
            coefficients,
            calibration,
        }
    }

    pub fn uniform(len: usize) -> Self {
        Self::from_coefficients(alloc::vec![1.0 / len as f64; len])
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }
}

/// Forward intermediates shared by weights and gradients.
struct Logits {
    /// `W_qᵀ q`
    projected_query: Vec<f64>,
    coefficients: Vec<f64>,
}

fn logits(params: &AttentionParams, query: &[f64], keys: &[&[f64]]) -> Result<Logits> {
    if keys.is_empty() {
        return Err(Error::Empty("attention history"));
    }
    let d = params.feature_dim();
    check_dim("attention query", d, query.len())?;
    check_finite("attention query", query)?;
    for k in keys {
        check_dim("attention key", d, k.len())?;
        check_finite("attention key", k)?;
    }
    let projected_query = params.query_weights.matvec_t(query);
    // Logit l is β⟨u, k_l⟩ with u = W_k W_qᵀ q.
    let key_space_query = params.key_weights.matvec(&projected_query);
    let raw: Vec<f64> = keys
        .iter()
        .map(|k| params.beta * dot(&key_space_query, k))
        .collect();
    Ok(Logits {
        projected_query,
        coefficients: softmax(&raw),
    })
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| libm::exp(z - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn attention_weights(
    params: &AttentionParams,
    query: &[f64],
    keys: &[&[f64]],
) -> Result<AttentionWeights> {
    Ok(AttentionWeights::from_coefficients(
        logits(params, query, keys)?.coefficients,
    ))
}

/// `Σ_l a_l s_l`
pub fn predict_score(weights: &AttentionWeights, past_scores: &[f64]) -> Result<f64> {
    check_dim("past scores", weights.len(), past_scores.len())?;
    Ok(dot(&weights.coefficients, past_scores))
}

/// One instantaneous term of the score-prediction loss.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionExample<'a> {
    pub query: &'a [f64],
    pub keys: Vec<&'a [f64]>,
    pub past_scores: Vec<f64>,
    pub target: f64,
}

impl<'a> AttentionExample<'a> {
    /// Every position of a series that has `window` predecessors.
    pub fn sliding(features: &'a [Vec<f64>], scores: &[f64], window: usize) -> Vec<Self> {
        let n = features.len().min(scores.len());
        if window == 0 || n <= window {
            return Vec::new();
        }
        (window..n)
            .map(|t| Self {
                query: &features[t],
                keys: features[t - window..t]
                    .iter()
                    .map(|v| v.as_slice())
                    .collect(),
                past_scores: scores[t - window..t].to_vec(),
                target: scores[t],
            })
            .collect()
    }
}

/// Gradients of `(target − Σ a_l s_l)²` with respect to `W_q` and `W_k`,
/// returned in an [`AttentionParams`]-shaped value, together with the loss.
pub fn attention_grad(
    params: &AttentionParams,
    query: &[f64],
    keys: &[&[f64]],
    past_scores: &[f64],
    target: f64,
) -> Result<(AttentionParams, f64)> {
    let fwd = logits(params, query, keys)?;
    check_dim("past scores", keys.len(), past_scores.len())?;
    check_finite("past scores", past_scores)?;
    if !target.is_finite() {
        return Err(Error::NonFinite("attention target"));
    }

    let prediction = dot(&fwd.coefficients, past_scores);
    let err = prediction - target;
    let loss = err * err;

    // d loss / d logit_l = 2 err · a_l (s_l − ŝ)
    let d = params.feature_dim();
    let mut grad_key_space = alloc::vec![0.0; d];
    for ((a, s), k) in fwd.coefficients.iter().zip(past_scores).zip(keys) {
        let g = 2.0 * err * a * (s - prediction) * params.beta;
        if g == 0.0 {
            continue;
        }
        for (acc, &ki) in grad_key_space.iter_mut().zip(k.iter()) {
            *acc += g * ki;
        }
    }

    let mut grads = params.zeros_like();
    grads
        .key_weights
        .add_outer(1.0, &grad_key_space, &fwd.projected_query);
    let grad_projected = params.key_weights.matvec_t(&grad_key_space);
    grads.query_weights.add_outer(1.0, query, &grad_projected);
    Ok((grads, loss))
}

/// Mean instantaneous loss over a set of examples.
pub fn mean_loss(params: &AttentionParams, examples: &[AttentionExample<'_>]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("attention examples"));
    }
    let mut total = 0.0;
    for ex in examples {
        let w = attention_weights(params, ex.query, &ex.keys)?;
        let e = predict_score(&w, &ex.past_scores)? - ex.target;
        total += e * e;
    }
    Ok(total / examples.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    pub params: AttentionParams,
    pub optimizer: AdamState,
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

/// Stochastic AdamW over the instantaneous losses, one step per example,
/// visiting examples in a per-epoch shuffle keyed on `(seed, epoch)`.
pub fn pretrain_attention(
    params: AttentionParams,
    examples: &[AttentionExample<'_>],
    epochs: usize,
    seed: u64,
    adam: AdamConfig,
) -> Result<PretrainReport> {
    if examples.is_empty() {
        return Err(Error::Empty("attention pretraining windows"));
    }
    params.validate()?;
    let mut params = params;
    let mut optimizer = AdamState::new(adam, &params);
    let initial_loss = mean_loss(&params, examples)?;
    let mut epoch_losses = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..epochs {
        order.sort_unstable();
        SeedStream::new(derive_seed_indexed(seed, "attention-epoch", epoch as u64))
            .shuffle(&mut order);
        for &i in &order {
            let ex = &examples[i];
            let (grads, _) =
                attention_grad(&params, ex.query, &ex.keys, &ex.past_scores, ex.target)?;
            optimizer.step(&mut params, &grads)?;
        }
        epoch_losses.push(mean_loss(&params, examples)?);
    }
    Ok(PretrainReport {
        params,
        optimizer,
        initial_loss,
        epoch_losses,
    })
}

/// One chronological pass of AdamW steps over the examples of the current
/// window.
pub fn online_update_attention(
    params: &mut AttentionParams,
    optimizer: &mut AdamState,
    examples: &[AttentionExample<'_>],
) -> Result<()> {
    for ex in examples {
        let (grads, _) = attention_grad(params, ex.query, &ex.keys, &ex.past_scores, ex.target)?;
        optimizer.step(params, &grads)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn params(seed: u64) -> AttentionParams {
        AttentionParams::init(4, 3, seed)
    }

    #[test]
    fn singleton_history() {
        let p = params(1);
        let k = [1.0, 2.0, 3.0, 4.0];
        let w = attention_weights(&p, &[0.5, 0.1, -0.3, 2.0], &[&k]).unwrap();
        assert_eq!(w.coefficients, vec![1.0]);
        assert_eq!(w.calibration, vec![0.5, 0.5]);
    }

    #[test]
    fn identical_keys_give_uniform_coefficients() {
        let p = params(2);
        let k = [0.3, -1.0, 2.0, 0.0];
        let w = attention_weights(&p, &[1.0, 1.0, 1.0, 1.0], &[&k, &k, &k, &k, &k]).unwrap();
        for a in &w.coefficients {
            assert!((a - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_query_embedding_gives_uniform() {
        let mut p = params(3);
        p.query_weights = Matrix::zeros(4, 3);
        let keys: Vec<Vec<f64>> = (0..6)
            .map(|i| vec![i as f64, -(i as f64), 1.0, 2.0 * i as f64])
            .collect();
        let refs: Vec<&[f64]> = keys.iter().map(|k| k.as_slice()).collect();
        let w = attention_weights(&p, &[3.0, 1.0, 4.0, 1.0], &refs).unwrap();
        assert!(w.coefficients.iter().all(|&a| a == 1.0 / 6.0));
    }

    #[test]
    fn empty_history_rejected() {
        let p = params(4);
        assert_eq!(
            attention_weights(&p, &[0.0; 4], &[]),
            Err(Error::Empty("attention history"))
        );
    }

    #[test]
    fn predictor_examples() {
        let uniform = AttentionWeights::uniform(3);
        assert!((predict_score(&uniform, &[1.0, 2.0, 3.0]).unwrap() - 2.0).abs() < 1e-15);
        let one_hot = AttentionWeights::from_coefficients(vec![0.0, 1.0, 0.0]);
        assert_eq!(predict_score(&one_hot, &[5.0, 7.0, 9.0]).unwrap(), 7.0);
        assert!(predict_score(&one_hot, &[1.0]).is_err());
    }

    #[test]
    fn stationary_residual_and_constant_scores_give_zero_grad() {
        let p = params(5);
        let k1 = [1.0, 0.0, 0.5, 0.2];
        let k2 = [0.0, 1.0, -0.5, 0.9];
        let q = [0.3, 0.3, 0.1, -0.7];
        let keys: [&[f64]; 2] = [&k1, &k2];
        let w = attention_weights(&p, &q, &keys).unwrap();
        let scores = [2.0, 6.0];
        let pred = predict_score(&w, &scores).unwrap();
        let (g, loss) = attention_grad(&p, &q, &keys, &scores, pred).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));

        let (g, _) = attention_grad(&p, &q, &keys, &[4.0, 4.0], 10.0).unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn sliding_examples_have_full_history() {
        let features: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64; 4]).collect();
        let scores = [0.0, 1.0, 2.0, 3.0, 4.0];
        let ex = AttentionExample::sliding(&features, &scores, 3);
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].past_scores, vec![0.0, 1.0, 2.0]);
        assert_eq!(ex[1].target, 4.0);
        assert_eq!(ex[1].query, features[4].as_slice());
    }

    #[test]
    fn zero_epochs_unchanged() {
        let p = params(6);
        let features: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64; 4]).collect();
        let scores = [0.0, 1.0, 2.0, 3.0, 4.0];
        let ex = AttentionExample::sliding(&features, &scores, 2);
        let r = pretrain_attention(p.clone(), &ex, 0, 1, AdamConfig::default()).unwrap();
        assert_eq!(r.params, p);
        assert!(pretrain_attention(p, &[], 1, 1, AdamConfig::default()).is_err());
    }
}
