//! Two-layer dense networks with hand-derived backpropagation and AdamW.
//!
//! A network computes `W2 · act(W1 · x + b1) + b2`; the output layer is
//! always linear. The ReLU subgradient at exactly zero is taken to be zero.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::Matrix;
use crate::rng::{derive_seed, derive_seed_indexed, SeedStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layer1_weights: Matrix,
    pub layer1_bias: Vec<f64>,
    pub layer2_weights: Matrix,
    pub layer2_bias: Vec<f64>,
    pub activation: Activation,
}

/// Gradients with respect to every parameter and to the input.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub params: MlpParams,
    pub input: Vec<f64>,
}

/// Cached forward activations.
struct ForwardTrace {
    pre_activation: Vec<f64>,
    hidden: Vec<f64>,
    output: Vec<f64>,
}

impl MlpParams {
    pub fn new(
        layer1_weights: Matrix,
        layer1_bias: Vec<f64>,
        layer2_weights: Matrix,
        layer2_bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        let params = Self {
            layer1_weights,
            layer1_bias,
            layer2_weights,
            layer2_bias,
            activation,
        };
        params.validate()?;
        Ok(params)
    }

    /// Checks shape consistency and finiteness.
    pub fn validate(&self) -> Result<()> {
        let hidden = self.layer1_weights.rows();
        check_dim("layer1 bias", hidden, self.layer1_bias.len())?;
        check_dim("layer2 input", hidden, self.layer2_weights.cols())?;
        check_dim(
            "layer2 bias",
            self.layer2_weights.rows(),
            self.layer2_bias.len(),
        )?;
        for t in self.tensors() {
            check_finite("network parameters", t)?;
        }
        Ok(())
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        activation: Activation,
        rng: &mut SeedStream,
    ) -> Self {
        let mut glorot = |rows: usize, cols: usize| {
            let a = libm::sqrt(6.0 / (rows + cols) as f64);
            Matrix::from_fn(rows, cols, |_, _| rng.uniform_range(-a, a))
        };
        let layer1_weights = glorot(hidden_dim, input_dim);
        let layer2_weights = glorot(output_dim, hidden_dim);
        Self {
            layer1_weights,
            layer1_bias: vec![0.0; hidden_dim],
            layer2_weights,
            layer2_bias: vec![0.0; output_dim],
            activation,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layer1_weights: Matrix::zeros(self.layer1_weights.rows(), self.layer1_weights.cols()),
            layer1_bias: vec![0.0; self.layer1_bias.len()],
            layer2_weights: Matrix::zeros(self.layer2_weights.rows(), self.layer2_weights.cols()),
            layer2_bias: vec![0.0; self.layer2_bias.len()],
            activation: self.activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer1_weights.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layer1_weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layer2_weights.rows()
    }

    fn trace(&self, x: &[f64]) -> ForwardTrace {
        let mut pre_activation = self.layer1_weights.matvec(x);
        for (z, b) in pre_activation.iter_mut().zip(&self.layer1_bias) {
            *z += b;
        }
        let hidden: Vec<f64> = pre_activation
            .iter()
            .map(|&z| self.activation.apply(z))
            .collect();
        let mut output = self.layer2_weights.matvec(&hidden);
        for (o, b) in output.iter_mut().zip(&self.layer2_bias) {
            *o += b;
        }
        ForwardTrace {
            pre_activation,
            hidden,
            output,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("network input", self.input_dim(), x.len())?;
        check_finite("network input", x)?;
        Ok(self.trace(x).output)
    }

    /// Gradients of `⟨upstream, forward(x)⟩`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<MlpGradients> {
        check_dim("network input", self.input_dim(), x.len())?;
        check_dim("upstream gradient", self.output_dim(), upstream.len())?;
        let trace = self.trace(x);
        let mut grads = self.zeros_like();

        grads.layer2_weights.add_outer(1.0, upstream, &trace.hidden);
        grads.layer2_bias.copy_from_slice(upstream);

        let mut delta = self.layer2_weights.matvec_t(upstream);
        for (d, &z) in delta.iter_mut().zip(&trace.pre_activation) {
            *d *= self.activation.derivative(z);
        }
        grads.layer1_weights.add_outer(1.0, &delta, x);
        grads.layer1_bias.copy_from_slice(&delta);
        let input = self.layer1_weights.matvec_t(&delta);

        Ok(MlpGradients {
            params: grads,
            input,
        })
    }

    /// Accumulates `scale · other` into `self` (same shapes).
    pub fn add_scaled(&mut self, scale: f64, other: &Self) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }
}

/// A collection of parameter tensors that an optimizer can walk.
pub trait ParamSet {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
}

impl ParamSet for MlpParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.layer1_weights.as_slice(),
            &self.layer1_bias,
            self.layer2_weights.as_slice(),
            &self.layer2_bias,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.layer1_weights.as_mut_slice(),
            &mut self.layer1_bias,
            self.layer2_weights.as_mut_slice(),
            &mut self.layer2_bias,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            weight_decay: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new<P: ParamSet>(config: AdamConfig, params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.len()])
            .collect();
        Self {
            config,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
        }
    }

    /// One AdamW update. On a non-finite gradient neither the state nor the
    /// parameters are touched.
    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grad_tensors = grads.tensors();
        check_dim(
            "optimizer tensors",
            self.first_moment.len(),
            grad_tensors.len(),
        )?;
        for (g, m) in grad_tensors.iter().zip(&self.first_moment) {
            check_dim("optimizer tensor", m.len(), g.len())?;
            check_finite("gradient", g)?;
        }

        let AdamConfig {
            learning_rate,
            weight_decay,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - libm::pow(beta1, t as f64);
        let bias2 = 1.0 - libm::pow(beta2, t as f64);

        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grad_tensors)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -=
                    learning_rate * (m_hat / (libm::sqrt(v_hat) + epsilon) + weight_decay * p[i]);
            }
        }
        Ok(())
    }
}

/// `mu = head ∘ extractor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageModel {
    pub extractor: MlpParams,
    pub head: MlpParams,
}

impl TwoStageModel {
    pub fn new(extractor: MlpParams, head: MlpParams) -> Result<Self> {
        extractor.validate()?;
        head.validate()?;
        check_dim("head input", extractor.output_dim(), head.input_dim())?;
        Ok(Self { extractor, head })
    }

    /// Both stages are ReLU networks whose hidden width equals the feature
    /// dimension.
    pub fn init(input_dim: usize, feature_dim: usize, output_dim: usize, seed: u64) -> Self {
        let mut rng = SeedStream::new(seed);
        let extractor = MlpParams::init(
            input_dim,
            feature_dim,
            feature_dim,
            Activation::Relu,
            &mut rng,
        );
        let head = MlpParams::init(
            feature_dim,
            feature_dim,
            output_dim,
            Activation::Relu,
            &mut rng,
        );
        Self { extractor, head }
    }

    pub fn feature_dim(&self) -> usize {
        self.extractor.output_dim()
    }

    pub fn feature(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.extractor.forward(x)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.head.forward(&self.feature(x)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub model: TwoStageModel,
    /// Full-dataset MSE before training.
    pub initial_loss: f64,
    /// Full-dataset MSE after each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mean squared error over all samples and output coordinates.
pub fn mse(model: &TwoStageModel, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (x, y) in inputs.iter().zip(targets) {
        let pred = model.predict(x)?;
        check_dim("target", pred.len(), y.len())?;
        total += pred
            .iter()
            .zip(y)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>();
        count += y.len();
    }
    Ok(total / count as f64)
}

/// Mini-batch AdamW on the MSE loss. Batch order is a per-epoch shuffle
/// keyed on `(seed, epoch)`.
pub fn train_two_stage(
    model: TwoStageModel,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if inputs.is_empty() {
        return Err(Error::Empty("training set"));
    }
    check_dim("training targets", inputs.len(), targets.len())?;
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    let out_dim = model.head.output_dim();
    for (x, y) in inputs.iter().zip(targets) {
        check_dim("training input", model.extractor.input_dim(), x.len())?;
        check_dim("training target", out_dim, y.len())?;
    }

    let mut model = model;
    let initial_loss = mse(&model, inputs, targets)?;
    let mut extractor_opt = AdamState::new(cfg.adam, &model.extractor);
    let mut head_opt = AdamState::new(cfg.adam, &model.head);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let shuffle_seed = derive_seed(cfg.seed, "batch-order");
    let mut order: Vec<usize> = (0..inputs.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut rng = SeedStream::new(derive_seed_indexed(shuffle_seed, "epoch", epoch as u64));
        order.sort_unstable();
        rng.shuffle(&mut order);

        for batch in order.chunks(cfg.batch_size) {
            let scale = 2.0 / (batch.len() * out_dim) as f64;
            let mut g_extractor = model.extractor.zeros_like();
            let mut g_head = model.head.zeros_like();
            for &i in batch {
                let feature = model.extractor.forward(&inputs[i])?;
                let pred = model.head.forward(&feature)?;
                let residual: Vec<f64> = pred
                    .iter()
                    .zip(&targets[i])
                    .map(|(p, t)| scale * (p - t))
                    .collect();
                let head_grads = model.head.backward(&feature, &residual)?;
                let ext_grads = model.extractor.backward(&inputs[i], &head_grads.input)?;
                g_head.add_scaled(1.0, &head_grads.params);
                g_extractor.add_scaled(1.0, &ext_grads.params);
            }
            head_opt.step(&mut model.head, &g_head)?;
            extractor_opt.step(&mut model.extractor, &g_extractor)?;
        }
        epoch_losses.push(mse(&model, inputs, targets)?);
    }

    Ok(TrainReport {
        model,
        initial_loss,
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_forward(p: &MlpParams, x: &[f64]) -> Vec<f64> {
        let (h, d, o) = (p.hidden_dim(), p.input_dim(), p.output_dim());
        let mut hidden = vec![0.0; h];
        for i in 0..h {
            let mut acc = p.layer1_bias[i];
            for j in 0..d {
                acc += p.layer1_weights[(i, j)] * x[j];
            }
            hidden[i] = match p.activation {
                Activation::Relu => acc.max(0.0),
                Activation::Identity => acc,
            };
        }
        let mut out = vec![0.0; o];
        for i in 0..o {
            let mut acc = p.layer2_bias[i];
            for j in 0..h {
                acc += p.layer2_weights[(i, j)] * hidden[j];
            }
            out[i] = acc;
        }
        out
    }

    fn random_params(
        rng: &mut SeedStream,
        d: usize,
        h: usize,
        o: usize,
        act: Activation,
    ) -> MlpParams {
        let mut p = MlpParams::init(d, h, o, act, rng);
        for b in p.layer1_bias.iter_mut().chain(p.layer2_bias.iter_mut()) {
            *b = rng.uniform_range(-0.5, 0.5);
        }
        p
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpParams::new(
            Matrix::zeros(4, 3),
            vec![0.0; 4],
            Matrix::zeros(2, 4),
            vec![0.0; 2],
            Activation::Relu,
        )
        .unwrap();
        assert_eq!(p.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_network_is_identity() {
        let p = MlpParams::new(
            Matrix::identity(3),
            vec![0.0; 3],
            Matrix::identity(3),
            vec![0.0; 3],
            Activation::Identity,
        )
        .unwrap();
        let x = [0.5, -1.25, 7.0];
        assert_eq!(p.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn forward_matches_double_loop() {
        let mut rng = SeedStream::new(42);
        for _ in 0..20 {
            let p = random_params(&mut rng, 5, 7, 3, Activation::Relu);
            let x: Vec<f64> = (0..5).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
            let fast = p.forward(&x).unwrap();
            let slow = naive_forward(&p, &x);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_input_dim() {
        let mut rng = SeedStream::new(0);
        let p = MlpParams::init(3, 4, 2, Activation::Relu, &mut rng);
        assert!(matches!(
            p.forward(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = SeedStream::new(5);
        let p = random_params(&mut rng, 4, 6, 3, Activation::Relu);
        let g = p.backward(&[0.3, -0.1, 0.7, 1.1], &[0.0; 3]).unwrap();
        assert_eq!(g.params, p.zeros_like());
        assert!(g.input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_activation_input_grad_is_adjoint() {
        let mut rng = SeedStream::new(9);
        let mut p = random_params(&mut rng, 3, 3, 3, Activation::Identity);
        p.layer2_weights = Matrix::identity(3);
        let up = [0.2, -1.0, 0.5];
        let g = p.backward(&[1.0, 2.0, 3.0], &up).unwrap();
        let expected = p.layer1_weights.matvec_t(&up);
        for (a, b) in g.input.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        // Pre-activation exactly 0 for the single hidden unit.
        let p = MlpParams::new(
            Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
            vec![-2.0],
            Matrix::from_vec(1, 1, vec![3.0]).unwrap(),
            vec![0.0],
            Activation::Relu,
        )
        .unwrap();
        let g = p.backward(&[2.0], &[1.0]).unwrap();
        assert_eq!(g.input, vec![0.0]);
        assert_eq!(g.params.layer1_bias, vec![0.0]);
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut rng = SeedStream::new(1);
        let mut p = random_params(&mut rng, 3, 4, 2, Activation::Relu);
        let before = p.clone();
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut opt = AdamState::new(cfg, &p);
        let zeros = p.zeros_like();
        for _ in 0..5 {
            opt.step(&mut p, &zeros).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(opt.step_count, 5);
    }

    #[test]
    fn adam_first_step_is_sign_like() {
        let mut rng = SeedStream::new(2);
        let mut p = random_params(&mut rng, 2, 2, 1, Activation::Identity);
        let before = p.clone();
        let cfg = AdamConfig {
            learning_rate: 0.01,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut grads = p.zeros_like();
        for (k, t) in grads.tensors_mut().into_iter().enumerate() {
            for (i, g) in t.iter_mut().enumerate() {
                *g = (k as f64 + 1.0) * if i % 2 == 0 { 0.3 } else { -2.0 };
            }
        }
        let mut opt = AdamState::new(cfg, &p);
        opt.step(&mut p, &grads).unwrap();
        for ((after, before), g) in p
            .tensors()
            .iter()
            .zip(before.tensors())
            .zip(grads.tensors())
        {
            for i in 0..after.len() {
                let expected = before[i] - 0.01 * g[i] / (g[i].abs() + 1e-8);
                assert!((after[i] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradient_without_side_effects() {
        let mut rng = SeedStream::new(3);
        let mut p = random_params(&mut rng, 2, 2, 1, Activation::Relu);
        let before = p.clone();
        let mut opt = AdamState::new(AdamConfig::default(), &p);
        let snapshot = opt.clone();
        let mut grads = p.zeros_like();
        grads.layer2_bias[0] = f64::NAN;
        assert!(matches!(opt.step(&mut p, &grads), Err(Error::NonFinite(_))));
        assert_eq!(p, before);
        assert_eq!(opt, snapshot);
    }

    /// Scalar parameter in a 1x1 identity network: `w² `-style descent.
    #[test]
    fn adam_descends_on_quadratic() {
        let mut p = MlpParams::new(
            Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
            vec![0.0],
            Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
            vec![0.0],
            Activation::Identity,
        )
        .unwrap();
        let cfg = AdamConfig {
            learning_rate: 0.1,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut opt = AdamState::new(cfg, &p);
        let mut w = p.layer1_weights[(0, 0)];
        for _ in 0..3 {
            let mut g = p.zeros_like();
            g.layer1_weights[(0, 0)] = 2.0 * w;
            opt.step(&mut p, &g).unwrap();
            let next = p.layer1_weights[(0, 0)];
            assert!(next.abs() < w.abs());
            w = next;
        }
    }

    #[test]
    fn zero_epochs_returns_model_unchanged() {
        let model = TwoStageModel::init(3, 4, 2, 17);
        let xs = vec![vec![1.0, 2.0, 3.0]];
        let ys = vec![vec![0.5, -0.5]];
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let report = train_two_stage(model.clone(), &xs, &ys, &cfg).unwrap();
        assert_eq!(report.model, model);
        assert!(report.epoch_losses.is_empty());
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let model = TwoStageModel::init(3, 4, 2, 17);
        assert_eq!(
            train_two_stage(model, &[], &[], &TrainConfig::default()),
            Err(Error::Empty("training set"))
        );
    }
}
