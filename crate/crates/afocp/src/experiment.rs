//! End-to-end runs: train, pretrain attention, warm up, stream, report.
//!
//! Every random stream of a run is derived from its master seed with
//! [`derive_seed`] under a fixed tag:
//!
//! | tag                  | used for                          |
//! |----------------------|-----------------------------------|
//! | `synthetic`          | synthetic generator seed          |
//! | `alternate-targets`  | segment draws of alternating CSV targets |
//! | `model-init`         | Glorot initialization of the model |
//! | `model-batches`      | mini-batch order                  |
//! | `attention-init`     | attention weights                 |
//! | `attention-batches`  | pretraining order                 |
//!
//! The method never enters a derivation, so all methods of one seed share
//! the same data, model and attention initialization.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use afocp_core::attention::{
    pretrain_attention, AttentionExample, AttentionParams, DEFAULT_LATENT_DIM,
};
use afocp_core::calibration::{Calibrator, CalibratorConfig, CoverageBound, EventRecord, Method};
use afocp_core::data::{
    split_and_downsample, SplitSpec, Standardizer, SyntheticConfig, TimeSeriesDataset,
};
use afocp_core::metrics::{
    assumption_diagnostics, AssumptionReport, DiagnosticStep, MetricsAccumulator,
};
use afocp_core::neuralnet::{train_two_stage, AdamConfig, TrainConfig, TwoStageModel};
use afocp_core::rng::derive_seed;
use afocp_core::scores::{InversionConfig, DEFAULT_INVERSION_STEPS};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_attention, save_model};
use crate::dataset::DatasetSource;
use crate::error::{AppError, Result};
use crate::report::{aggregate, write_events, write_json, AggregateRow, Summary};

/// Numeric knobs of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub alpha: f64,
    /// Window length `L`.
    pub window: usize,
    /// Feature dimension `D`; also the hidden width of both stages.
    pub feature_dim: usize,
    /// Level step size `λ`.
    pub lambda: f64,
    pub inversion_steps: usize,
    /// Fixed inversion step size; derived from the head norms when absent.
    pub inversion_lr: Option<f64>,
    pub latent_dim: usize,
    pub train_epochs: usize,
    pub batch_size: usize,
    pub attention_epochs: usize,
    pub online_attention: bool,
    pub train_fraction: f64,
    pub max_points: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            alpha: CalibratorConfig::DEFAULT_ALPHA,
            window: 100,
            feature_dim: 50,
            lambda: CalibratorConfig::DEFAULT_STEP_SIZE,
            inversion_steps: DEFAULT_INVERSION_STEPS,
            inversion_lr: None,
            latent_dim: DEFAULT_LATENT_DIM,
            train_epochs: 10,
            batch_size: 64,
            attention_epochs: 20,
            online_attention: true,
            train_fraction: SplitSpec::default().train_fraction,
            max_points: SplitSpec::default().max_points,
        }
    }
}

impl Settings {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AppError::Config(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} must lie in (0, 1)", self.alpha));
        }
        if self.window == 0 {
            return bad("window must be at least 1".into());
        }
        if self.feature_dim == 0 || self.latent_dim == 0 {
            return bad("feature and latent dimensions must be at least 1".into());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda = {} must be positive", self.lambda));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if let Some(lr) = self.inversion_lr {
            InversionConfig::new(lr, self.inversion_steps)?;
        } else if self.inversion_steps == 0 {
            return bad("inversion steps must be at least 1".into());
        }
        Ok(())
    }

    fn split(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
            max_points: self.max_points,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVar {
    Alpha,
    Window,
    FeatureDim,
    Lambda,
    InversionSteps,
    InversionLr,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::Alpha => "alpha",
            SweepVar::Window => "window",
            SweepVar::FeatureDim => "feature_dim",
            SweepVar::Lambda => "lambda",
            SweepVar::InversionSteps => "inversion_steps",
            SweepVar::InversionLr => "inversion_lr",
        }
    }

    fn is_integer(self) -> bool {
        matches!(
            self,
            SweepVar::Window | SweepVar::FeatureDim | SweepVar::InversionSteps
        )
    }

    fn apply(self, settings: &Settings, value: f64) -> Result<Settings> {
        if self.is_integer() && (value < 0.0 || value.fract() != 0.0) {
            return Err(AppError::Config(format!(
                "{} needs integer values, got {value}",
                self.name()
            )));
        }
        let mut s = *settings;
        match self {
            SweepVar::Alpha => s.alpha = value,
            SweepVar::Window => s.window = value as usize,
            SweepVar::FeatureDim => s.feature_dim = value as usize,
            SweepVar::Lambda => s.lambda = value,
            SweepVar::InversionSteps => s.inversion_steps = value as usize,
            SweepVar::InversionLr => s.inversion_lr = Some(value),
        }
        Ok(s)
    }
}

impl fmt::Display for SweepVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepVar {
    type Err = AppError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "alpha" => Ok(SweepVar::Alpha),
            "window" | "L" => Ok(SweepVar::Window),
            "feature_dim" | "feature-dim" | "D" => Ok(SweepVar::FeatureDim),
            "lambda" => Ok(SweepVar::Lambda),
            "inversion_steps" | "inversion-steps" => Ok(SweepVar::InversionSteps),
            "inversion_lr" | "inversion-lr" => Ok(SweepVar::InversionLr),
            other => Err(AppError::Config(format!(
                "unknown sweep variable {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub var: SweepVar,
    pub values: Vec<f64>,
}

impl FromStr for Sweep {
    type Err = AppError;

    /// `var=v1,v2,...`
    fn from_str(s: &str) -> Result<Self> {
        let (var, list) = s.split_once('=').ok_or_else(|| {
            AppError::Config(format!("sweep {s:?} is not of the form var=v1,v2,..."))
        })?;
        let values = list
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| AppError::Config(format!("bad sweep value {v:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.is_empty() {
            return Err(AppError::Config("sweep needs at least one value".into()));
        }
        Ok(Self {
            var: var.trim().parse()?,
            values,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub methods: Vec<Method>,
    pub settings: Settings,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub sweep: Option<Sweep>,
    /// Worker threads; all cores when absent.
    pub jobs: Option<usize>,
    /// Also run the paired AFOCP/AOCP assumption diagnostics per seed.
    pub diagnostics: bool,
    pub checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Synthetic(SyntheticConfig::default()),
            methods: Method::ALL.to_vec(),
            settings: Settings::default(),
            seeds: vec![0, 1, 2, 3, 4],
            out: PathBuf::from("results"),
            sweep: None,
            jobs: None,
            diagnostics: false,
            checkpoints: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(AppError::Config("no methods selected".into()));
        }
        if self.seeds.is_empty() {
            return Err(AppError::Config("no seeds given".into()));
        }
        for s in self.sweep_points()? {
            s.settings.validate()?;
        }
        Ok(())
    }

    fn sweep_points(&self) -> Result<Vec<SweepPoint>> {
        match &self.sweep {
            None => Ok(vec![SweepPoint {
                settings: self.settings,
                var: None,
                value: None,
            }]),
            Some(sw) => sw
                .values
                .iter()
                .map(|&v| {
                    Ok(SweepPoint {
                        settings: sw.var.apply(&self.settings, v)?,
                        var: Some(sw.var),
                        value: Some(v),
                    })
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct SweepPoint {
    settings: Settings,
    var: Option<SweepVar>,
    value: Option<f64>,
}

/// Everything shared by the methods of one (dataset, settings, seed).
#[derive(Debug, Clone)]
pub struct SeedContext {
    pub dataset: String,
    pub seed: u64,
    pub settings: Settings,
    /// Standardized training split.
    pub train: TimeSeriesDataset,
    /// Standardized stream.
    pub test: TimeSeriesDataset,
    /// Stream targets in original units.
    pub test_targets: Vec<Vec<f64>>,
    pub target_scaler: Standardizer,
    pub model: TwoStageModel,
    pub inversion: InversionConfig,
    pub train_losses: Vec<f64>,
    pub dropped_rows: usize,
}

/// Loads, splits, standardizes and trains the two-stage model.
pub fn prepare(source: &DatasetSource, settings: &Settings, seed: u64) -> Result<SeedContext> {
    settings.validate()?;
    let loaded = source.load(seed)?;
    let (train_raw, test_raw) =
        split_and_downsample(&loaded.dataset, &settings.split(), settings.window)?;
    let input_scaler = Standardizer::fit(&train_raw.inputs)?;
    let target_scaler = Standardizer::fit(&train_raw.targets)?;
    let standardize = |ds: &TimeSeriesDataset| {
        TimeSeriesDataset::new(
            ds.name.clone(),
            input_scaler.transform_all(&ds.inputs),
            target_scaler.transform_all(&ds.targets),
        )
    };
    let train = standardize(&train_raw)?;
    let test = standardize(&test_raw)?;

    let init = TwoStageModel::init(
        train.input_dim(),
        settings.feature_dim,
        train.output_dim(),
        derive_seed(seed, "model-init"),
    );
    let report = train_two_stage(
        init,
        &train.inputs,
        &train.targets,
        &TrainConfig {
            epochs: settings.train_epochs,
            batch_size: settings.batch_size,
            seed: derive_seed(seed, "model-batches"),
            adam: AdamConfig::default(),
        },
    )?;
    let model = report.model;
    let inversion = match settings.inversion_lr {
        Some(lr) => InversionConfig::new(lr, settings.inversion_steps)?,
        None => InversionConfig {
            num_steps: settings.inversion_steps,
            ..InversionConfig::for_head(&model.head)
        },
    };
    Ok(SeedContext {
        dataset: source.name(),
        seed,
        settings: *settings,
        train,
        test,
        test_targets: test_raw.targets,
        target_scaler,
        model,
        inversion,
        train_losses: report.epoch_losses,
        dropped_rows: loaded.dropped_rows,
    })
}

/// Output of one streamed method.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub method: Method,
    pub events: Vec<EventRecord>,
    pub metrics: MetricsAccumulator,
    pub bound: CoverageBound,
    /// Attention parameters after the stream, for attention methods.
    pub attention: Option<AttentionParams>,
    /// Level never left `[−λ, 1 + λ]`.
    pub alpha_within_bounds: bool,
    /// Steps whose interval contained the target, in original units.
    pub contained: u64,
}

impl SeedContext {
    pub fn calibrator_config(&self, method: Method) -> CalibratorConfig {
        CalibratorConfig {
            target_alpha: self.settings.alpha,
            step_size: self.settings.lambda,
            online_attention: self.settings.online_attention,
            ..CalibratorConfig::new(method, self.settings.window, self.inversion)
        }
    }

    /// Scores of the training split under the configuration of `method`.
    pub fn train_scores(&self, method: Method) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let config = self.calibrator_config(method);
        let mut features = Vec::with_capacity(self.train.len());
        let mut scores = Vec::with_capacity(self.train.len());
        for (x, y) in self.train.inputs.iter().zip(&self.train.targets) {
            let f = self.model.feature(x)?;
            scores.push(config.score(&self.model, &f, y)?);
            features.push(f);
        }
        Ok((features, scores))
    }

    /// Attention initialized from the seed and pretrained on sliding windows
    /// of the training scores.
    pub fn pretrained_attention(&self, method: Method) -> Result<AttentionParams> {
        let init = AttentionParams::init(
            self.settings.feature_dim,
            self.settings.latent_dim,
            derive_seed(self.seed, "attention-init"),
        );
        let (features, scores) = self.train_scores(method)?;
        let examples = AttentionExample::sliding(&features, &scores, self.settings.window);
        let report = pretrain_attention(
            init,
            &examples,
            self.settings.attention_epochs,
            derive_seed(self.seed, "attention-batches"),
            AdamConfig::default(),
        )?;
        Ok(report.params)
    }

    /// A calibrator warmed up with the last `L` training points.
    pub fn warmed_calibrator(
        &self,
        config: CalibratorConfig,
        attention: Option<AttentionParams>,
    ) -> Result<Calibrator> {
        let mut cal = Calibrator::new(config, self.model.clone(), attention)?;
        let n = self.train.len();
        let l = config.window;
        cal.warmup(&self.train.inputs[n - l..], &self.train.targets[n - l..])?;
        Ok(cal)
    }

    pub fn calibrator(&self, method: Method) -> Result<Calibrator> {
        let attention = if method.uses_attention() {
            Some(self.pretrained_attention(method)?)
        } else {
            None
        };
        self.warmed_calibrator(self.calibrator_config(method), attention)
    }

    /// Streams the test split. Intervals are mapped back to original units
    /// before lengths are recorded.
    pub fn stream(&self, mut cal: Calibrator) -> Result<RunResult> {
        let method = cal.method();
        let mut metrics = MetricsAccumulator::new();
        let mut events = Vec::with_capacity(self.test.len());
        let mut within = true;
        let mut contained = 0;
        for ((x, y), y_raw) in self
            .test
            .inputs
            .iter()
            .zip(&self.test.targets)
            .zip(&self.test_targets)
        {
            let outcome = cal.observe(x, y)?;
            within &= cal.alpha().within_bounds();
            let interval = self.target_scaler.inverse_interval(&outcome.interval);
            metrics.record(y_raw, &interval, outcome.err)?;
            contained += interval.contains(y_raw) as u64;
            events.push(EventRecord::new(method, &outcome, interval.mean_width()));
        }
        Ok(RunResult {
            method,
            events,
            metrics,
            bound: cal.coverage_bound(),
            attention: cal.attention().cloned(),
            alpha_within_bounds: within,
            contained,
        })
    }

    pub fn run(&self, method: Method) -> Result<RunResult> {
        self.stream(self.calibrator(method)?)
    }

    pub fn summary(
        &self,
        run: &RunResult,
        sweep_var: Option<SweepVar>,
        sweep_value: Option<f64>,
    ) -> Summary {
        let m = &run.metrics;
        Summary {
            method: run.method,
            dataset: self.dataset.clone(),
            alpha: self.settings.alpha,
            window: self.settings.window,
            feature_dim: self.settings.feature_dim,
            seed: self.seed,
            steps: m.steps(),
            coverage: m.coverage(),
            interval_coverage: run.contained as f64 / m.steps().max(1) as f64,
            mean_length: Some(m.mean_length()).filter(|l| l.is_finite()),
            inf_length_steps: m.infinite_steps(),
            theorem1_bound_lhs: run.bound.lhs,
            theorem1_bound_rhs: run.bound.rhs,
            sweep_var: sweep_var.map(|v| v.name().to_owned()),
            sweep_value,
        }
    }

    /// Runs AFOCP and AOCP side by side over the same stream and evaluates
    /// the length-comparison assumption statistics.
    pub fn diagnostics(&self, holder_exponent: f64) -> Result<AssumptionReport> {
        let mut feature_cal = self.calibrator(Method::Afocp)?;
        let mut output_cal = self.calibrator(Method::Aocp)?;
        let mut steps = Vec::with_capacity(self.test.len());
        for (x, y) in self.test.inputs.iter().zip(&self.test.targets) {
            let feature_scores = feature_cal.window().iter().map(|e| e.score).collect();
            let output_scores = output_cal.window().iter().map(|e| e.score).collect();
            let window_features = feature_cal
                .window()
                .iter()
                .map(|e| e.feature.clone())
                .collect();
            let test_feature = self.model.feature(x)?;
            let f = feature_cal.observe(x, y)?;
            let o = output_cal.observe(x, y)?;
            steps.push(DiagnosticStep {
                feature_alpha: f.alpha,
                feature_weights: f.weights,
                output_alpha: o.alpha,
                output_weights: o.weights,
                feature_scores,
                output_scores,
                window_features,
                test_feature,
            });
        }
        Ok(assumption_diagnostics(
            &steps,
            &self.model.head,
            holder_exponent,
        )?)
    }
}

/// A (method, seed) cell that did not complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub method: Option<Method>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_value: Option<f64>,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutcome {
    pub summaries: Vec<Summary>,
    pub aggregate: Vec<AggregateRow>,
    pub failures: Vec<Failure>,
}

impl ExperimentOutcome {
    pub fn all_succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

fn cell_stem(dataset: &str, method: Method, seed: u64, point: &SweepPoint) -> String {
    match (point.var, point.value) {
        (Some(var), Some(v)) => format!("{dataset}_{var}{v}_{method}_seed{seed}"),
        _ => format!("{dataset}_{method}_seed{seed}"),
    }
}

fn seed_stem(dataset: &str, seed: u64, point: &SweepPoint) -> String {
    match (point.var, point.value) {
        (Some(var), Some(v)) => format!("{dataset}_{var}{v}_seed{seed}"),
        _ => format!("{dataset}_seed{seed}"),
    }
}

enum CellResult {
    Done(Summary),
    Failed(Failure),
}

fn run_seed(cfg: &ExperimentConfig, point: &SweepPoint, seed: u64) -> Vec<CellResult> {
    let dataset = cfg.dataset.name();
    let fail = |method: Option<Method>, e: &AppError| {
        eprintln!(
            "[afocp] {dataset} seed {seed}{}: {} failed: {e}",
            point
                .value
                .map(|v| format!(" {}={v}", point.var.map_or("", SweepVar::name)))
                .unwrap_or_default(),
            method.map_or("preparation".to_owned(), |m| m.to_string())
        );
        Failure {
            method,
            seed,
            sweep_value: point.value,
            error: e.to_string(),
        }
    };
    let ctx = match prepare(&cfg.dataset, &point.settings, seed) {
        Ok(ctx) => ctx,
        Err(e) => {
            return cfg
                .methods
                .iter()
                .map(|&m| CellResult::Failed(fail(Some(m), &e)))
                .collect()
        }
    };
    if ctx.dropped_rows > 0 {
        eprintln!(
            "[afocp] {dataset}: dropped {} rows with missing values",
            ctx.dropped_rows
        );
    }
    eprintln!(
        "[afocp] {dataset} seed {seed}: {} train / {} stream points, final train MSE {:.4}",
        ctx.train.len(),
        ctx.test.len(),
        ctx.train_losses.last().copied().unwrap_or(f64::NAN)
    );
    if cfg.checkpoints {
        let path = cfg
            .out
            .join("checkpoints")
            .join(format!("{}_model.json", seed_stem(&dataset, seed, point)));
        if let Err(e) = save_model(&path, &ctx.model) {
            eprintln!("[afocp] could not write {}: {e}", path.display());
        }
    }
    if cfg.diagnostics {
        let path = cfg
            .out
            .join("diagnostics")
            .join(format!("{}.json", seed_stem(&dataset, seed, point)));
        match ctx.diagnostics(1.0).and_then(|r| write_json(&path, &r)) {
            Ok(()) => {}
            Err(e) => eprintln!("[afocp] diagnostics for seed {seed} failed: {e}"),
        }
    }

    cfg.methods
        .par_iter()
        .map(|&method| {
            let stem = cell_stem(&dataset, method, seed, point);
            let result = ctx.run(method).and_then(|run| {
                let summary = ctx.summary(&run, point.var, point.value);
                write_events(
                    &cfg.out.join("events").join(format!("{stem}.csv")),
                    &run.events,
                )?;
                write_json(
                    &cfg.out.join("summaries").join(format!("{stem}.json")),
                    &summary,
                )?;
                if let (true, Some(att)) = (cfg.checkpoints, &run.attention) {
                    save_attention(
                        &cfg.out
                            .join("checkpoints")
                            .join(format!("{stem}_attention.json")),
                        att,
                    )?;
                }
                Ok(summary)
            });
            match result {
                Ok(summary) => {
                    eprintln!(
                        "[afocp] {stem}: coverage {:.4}, mean length {}",
                        summary.coverage,
                        summary
                            .mean_length
                            .map_or("n/a".to_owned(), |l| format!("{l:.4}"))
                    );
                    CellResult::Done(summary)
                }
                Err(e) => CellResult::Failed(fail(Some(method), &e)),
            }
        })
        .collect()
}

/// Runs every (sweep point, seed, method) cell, writing event logs and
/// summaries under `cfg.out`, then `aggregate.json` and, when any cell
/// failed, `failures.json`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let points = cfg.sweep_points()?;
    let jobs: Vec<(SweepPoint, u64)> = points
        .iter()
        .flat_map(|p| cfg.seeds.iter().map(move |&s| (*p, s)))
        .collect();

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.jobs {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| AppError::Config(format!("thread pool: {e}")))?;
    let results: Vec<Vec<CellResult>> =
        pool.install(|| jobs.par_iter().map(|(p, s)| run_seed(cfg, p, *s)).collect());

    let mut outcome = ExperimentOutcome::default();
    for cell in results.into_iter().flatten() {
        match cell {
            CellResult::Done(s) => outcome.summaries.push(s),
            CellResult::Failed(f) => outcome.failures.push(f),
        }
    }
    outcome.aggregate = aggregate(&outcome.summaries);
    write_json(&cfg.out.join("aggregate.json"), &outcome.aggregate)?;
    let failures_path = cfg.out.join("failures.json");
    if outcome.failures.is_empty() {
        remove_if_present(&failures_path)?;
    } else {
        write_json(&failures_path, &outcome.failures)?;
    }
    Ok(outcome)
}

fn remove_if_present(path: &Path) -> Result<()> {
    match std::fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(AppError::Io {
            path: path.to_owned(),
            source: e,
        }),
    }
}
