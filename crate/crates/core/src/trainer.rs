//! One-class few-shot learning on the opening frames of a single stream.
//!
//! All `N - T` windows of `T + 1` consecutive frames are cut from the first
//! `N` frames. Each epoch visits every window once in a seeded random order
//! with one Adam update per window. The detection threshold is the mean
//! window loss of the final (frozen) weights.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_io::FeatureStream;
use crate::numerics::{AdamState, Tensor2};
use crate::transformer::{load_checkpoint, save_checkpoint, ModelConfig, ModelParams, SelfContext};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const REPORT_FILE: &str = "train_report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_shots: usize,
    pub window: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Standardise coordinates with statistics of the first `n_shots` frames.
    #[serde(default)]
    pub normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_shots: 50,
            window: 10,
            epochs: 100,
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.98,
            seed: 0,
            normalize: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::InvalidConfig("window must be at least 1".into()));
        }
        if self.n_shots < self.window + 1 {
            return Err(Error::InvalidConfig(format!(
                "n_shots {} must be at least window + 1 = {}",
                self.n_shots,
                self.window + 1
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// `T` consecutive inputs and the frame that follows them.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// 1-based index of the first input frame.
    pub first_frame: usize,
    pub inputs: Tensor2,
    pub target: Vec<f64>,
}

impl Window {
    /// 1-based index of the target frame.
    pub fn target_frame(&self) -> usize {
        self.first_frame + self.inputs.rows()
    }
}

/// All `n - t` windows from the first `n` frames: window `i` (1-based) has
/// inputs `F_i..F_{i+t-1}` and target `F_{i+t}`.
pub fn make_windows(stream: &FeatureStream, n: usize, t: usize) -> Result<Vec<Window>> {
    if t == 0 || n < t + 1 {
        return Err(Error::InvalidConfig(format!(
            "need n >= t + 1 with t >= 1 (n={n}, t={t})"
        )));
    }
    if stream.len() < n {
        return Err(Error::InvalidConfig(format!(
            "stream has {} frames, {n} required",
            stream.len()
        )));
    }
    (0..n - t)
        .map(|i| {
            Ok(Window {
                first_frame: i + 1,
                inputs: stream.window(i, t)?,
                target: stream.values_f64(i + t),
            })
        })
        .collect()
}

/// Mean squared difference `(1/D) Σ (actual - pred)²`.
pub fn mse_loss(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() || pred.is_empty() {
        return Err(Error::shape(
            "mse_loss",
            format!("lengths {} and {}", pred.len(), actual.len()),
        ));
    }
    let total: f64 = pred.iter().zip(actual).map(|(p, a)| (a - p) * (a - p)).sum();
    Ok(total / pred.len() as f64)
}

/// Per-coordinate standardisation fitted on the training frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(stream: &FeatureStream, frames: usize) -> Self {
        let d = stream.dim();
        let n = frames.min(stream.len()).max(1);
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(stream.values_f64(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(stream.values_f64(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, values: &mut [f64]) {
        for ((v, m), s) in values.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    fn apply_window(&self, w: &mut Window) {
        for r in 0..w.inputs.rows() {
            self.apply(w.inputs.row_mut(r));
        }
        self.apply(&mut w.target);
    }
}

/// Trained predictor plus everything needed to score new frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainArtifact {
    pub params: ModelParams,
    pub report: TrainReport,
}

/// Serializable part of a [`TrainArtifact`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean frozen-weight loss over all training windows.
    pub threshold: f64,
    /// Mean running loss of each epoch.
    pub loss_curve: Vec<f64>,
    pub per_window_final_losses: Vec<f64>,
    /// Running mean of the last epoch (the alternative threshold reading).
    pub last_epoch_running_mean: f64,
    pub self_context: SelfContext,
    pub normalizer: Option<Normalizer>,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
}

impl TrainArtifact {
    pub fn threshold(&self) -> f64 {
        self.report.threshold
    }

    pub fn window(&self) -> usize {
        self.params.config().window
    }

    /// Writes `model.ckpt` and `train_report.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_checkpoint(&self.params, &dir.join(CHECKPOINT_FILE))?;
        fs::write(dir.join(REPORT_FILE), serde_json::to_vec_pretty(&self.report)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let report: TrainReport = serde_json::from_slice(&fs::read(dir.join(REPORT_FILE))?)?;
        let params = load_checkpoint(&dir.join(CHECKPOINT_FILE), Some(&report.model_config))?;
        Ok(Self { params, report })
    }
}

/// Frozen-weight mean loss over `windows`.
pub fn compute_threshold(params: &ModelParams, windows: &[Window], toggle: SelfContext) -> Result<f64> {
    let losses = window_losses(params, windows, toggle)?;
    Ok(mean(&losses))
}

/// Frozen-weight loss of each window, in window order.
pub fn window_losses(params: &ModelParams, windows: &[Window], toggle: SelfContext) -> Result<Vec<f64>> {
    if windows.is_empty() {
        return Err(Error::InvalidConfig("no windows to evaluate".into()));
    }
    windows
        .par_iter()
        .map(|w| mse_loss(&params.predict_next(&w.inputs, toggle)?, &w.target))
        .collect()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Fits a fresh predictor to the first `n_shots` frames of `stream`.
pub fn train_few_shot(
    stream: &FeatureStream,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    toggle: SelfContext,
) -> Result<TrainArtifact> {
    train_config.validate()?;
    model_config.validate()?;
    if model_config.window != train_config.window {
        return Err(Error::InvalidConfig(format!(
            "model window {} differs from training window {}",
            model_config.window, train_config.window
        )));
    }
    if model_config.feature_dim != stream.dim() {
        return Err(Error::shape(
            "train_few_shot",
            format!(
                "stream dim {} vs model feature_dim {}",
                stream.dim(),
                model_config.feature_dim
            ),
        ));
    }
    let mut windows = make_windows(stream, train_config.n_shots, train_config.window)?;
    let normalizer = train_config
        .normalize
        .then(|| Normalizer::fit(stream, train_config.n_shots));
    if let Some(norm) = &normalizer {
        windows.iter_mut().for_each(|w| norm.apply_window(w));
    }

    let mut params = ModelParams::init(model_config)?;
    let mut adam = AdamState::new(
        params.tensors(),
        train_config.lr,
        train_config.beta1,
        train_config.beta2,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut loss_curve = Vec::with_capacity(train_config.epochs);
    let mut last_epoch = Vec::with_capacity(windows.len());

    for epoch in 1..=train_config.epochs {
        order.shuffle(&mut rng);
        last_epoch.clear();
        for (iteration, &i) in order.iter().enumerate() {
            let w = &windows[i];
            let (loss, grads) = params.loss_and_grads(&w.inputs, &w.target, toggle)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    iteration: iteration + 1,
                    loss,
                });
            }
            adam.step(params.tensors_mut(), &grads)?;
            last_epoch.push(loss);
        }
        loss_curve.push(mean(&last_epoch));
    }

    params.round_to_f32();
    let per_window_final_losses = window_losses(&params, &windows, toggle)?;
    if per_window_final_losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::Divergence {
            epoch: train_config.epochs,
            iteration: windows.len(),
            loss: f64::NAN,
        });
    }
    let threshold = mean(&per_window_final_losses);
    Ok(TrainArtifact {
        params,
        report: TrainReport {
            threshold,
            loss_curve,
            per_window_final_losses,
            last_epoch_running_mean: mean(&last_epoch),
            self_context: toggle,
            normalizer,
            model_config: model_config.clone(),
            train_config: train_config.clone(),
        },
    })
}
