//! Linear SVM trained by primal subgradient descent.
//!
//! Minimises `0.5 * |w|^2 + C * sum_i max(0, 1 - y_i (w . z_i + b))` where
//! `z_i` is the z-scored feature vector. Standardisation statistics live in
//! the model, so scoring takes raw features.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DmadError, Result};
use crate::manifest::Label;

/// Per-dimension spreads below this are treated as constant features.
const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Hinge-loss weight `C`.
    pub c: f64,
    pub epochs: usize,
    /// Step size `eta0 / (1 + decay * step)`, with `step` counting updates.
    pub eta0: f64,
    pub decay: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Stop once the epoch-end objective changes by less than this fraction.
    pub tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            epochs: 200,
            eta0: 0.01,
            decay: 0.001,
            seed: 0,
            shuffle: true,
            tolerance: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DmadError::InvalidConfig(m.to_string()));
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad("C must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return bad("eta0 must be positive");
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return bad("decay must be non-negative");
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return bad("tolerance must be non-negative");
        }
        Ok(())
    }

    /// Short hex digest identifying the hyperparameters a model was fit with.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        let hash = Sha256::digest(&json);
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub feature_dim: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub train_config_digest: String,
}

impl LinearModel {
    /// Model on unstandardised features (zero mean, unit spread).
    pub fn new(weights: Vec<f64>, bias: f64) -> Self {
        let d = weights.len();
        Self {
            feature_dim: d,
            weights,
            bias,
            mean: vec![0.0; d],
            std: vec![1.0; d],
            train_config_digest: String::new(),
        }
    }

    pub fn zero(feature_dim: usize) -> Self {
        Self::new(vec![0.0; feature_dim], 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.feature_dim;
        for len in [self.weights.len(), self.mean.len(), self.std.len()] {
            if len != d {
                return Err(DmadError::DimensionMismatch { expected: d, actual: len });
            }
        }
        let all = self.weights.iter().chain(&self.mean).chain(&self.std);
        if let Some(index) = all.clone().position(|v| !v.is_finite()) {
            return Err(DmadError::NonFinite { index });
        }
        if !self.bias.is_finite() {
            return Err(DmadError::NonFinite { index: d });
        }
        if self.std.iter().any(|&s| s <= 0.0) {
            return Err(DmadError::InvalidConfig("model std must be positive".into()));
        }
        Ok(())
    }

    fn standardize_into(&self, x: &[f64], out: &mut [f64]) {
        for (((o, &v), &m), &s) in out.iter_mut().zip(x).zip(&self.mean).zip(&self.std) {
            *o = (v - m) / s;
        }
    }

    fn decision(&self, x: &[f64]) -> f64 {
        let mut acc = self.bias;
        for (((&w, &v), &m), &s) in self.weights.iter().zip(x).zip(&self.mean).zip(&self.std) {
            acc += w * ((v - m) / s);
        }
        acc
    }
}

/// Signed decision value `w . z + b`; positive leans morph.
pub fn svm_score(model: &LinearModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.feature_dim {
        return Err(DmadError::DimensionMismatch {
            expected: model.feature_dim,
            actual: x.len(),
        });
    }
    Ok(model.decision(x))
}

fn check_training_data(features: &[Vec<f64>], labels: &[Label]) -> Result<usize> {
    if features.len() != labels.len() {
        return Err(DmadError::DimensionMismatch {
            expected: features.len(),
            actual: labels.len(),
        });
    }
    let d = features.first().map(Vec::len).unwrap_or(0);
    for row in features {
        if row.len() != d {
            return Err(DmadError::DimensionMismatch { expected: d, actual: row.len() });
        }
        if let Some(index) = row.iter().position(|v| !v.is_finite()) {
            return Err(DmadError::NonFinite { index });
        }
    }
    Ok(d)
}

/// Exact primal objective of `model` on raw features.
pub fn hinge_objective(model: &LinearModel, features: &[Vec<f64>], labels: &[Label], c: f64) -> Result<f64> {
    check_training_data(features, labels)?;
    let reg = 0.5 * model.weights.iter().map(|w| w * w).sum::<f64>();
    let mut loss = 0.0;
    for (x, y) in features.iter().zip(labels) {
        loss += (1.0 - y.sign() * svm_score(model, x)?).max(0.0);
    }
    Ok(reg + c * loss)
}

/// A subgradient of [`hinge_objective`] with respect to `(weights, bias)`.
/// Samples sitting exactly on the margin contribute nothing.
pub fn hinge_subgradient(
    model: &LinearModel,
    features: &[Vec<f64>],
    labels: &[Label],
    c: f64,
) -> Result<(Vec<f64>, f64)> {
    check_training_data(features, labels)?;
    let mut gw = model.weights.clone();
    let mut gb = 0.0;
    let mut z = vec![0.0; model.feature_dim];
    for (x, y) in features.iter().zip(labels) {
        let y = y.sign();
        if y * svm_score(model, x)? < 1.0 {
            model.standardize_into(x, &mut z);
            for (g, zi) in gw.iter_mut().zip(&z) {
                *g -= c * y * zi;
            }
            gb -= c * y;
        }
    }
    Ok((gw, gb))
}

/// Epoch-end objectives recorded while fitting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub objectives: Vec<f64>,
    pub best_epoch: usize,
}

pub fn train_linear_svm(features: &[Vec<f64>], labels: &[Label], config: &TrainConfig) -> Result<LinearModel> {
    train_linear_svm_with_report(features, labels, config).map(|(m, _)| m)
}

/// Fits the SVM and returns the lowest-objective epoch-end iterate together
/// with the objective trajectory.
pub fn train_linear_svm_with_report(
    features: &[Vec<f64>],
    labels: &[Label],
    config: &TrainConfig,
) -> Result<(LinearModel, TrainReport)> {
    config.validate()?;
    let d = check_training_data(features, labels)?;
    let n = features.len();
    if n < 2 {
        return Err(DmadError::Empty(format!("need at least 2 training samples, got {n}")));
    }
    if d == 0 {
        return Err(DmadError::Empty("zero-dimensional features".into()));
    }
    let positives = labels.iter().filter(|&&l| l == Label::Morph).count();
    if positives == 0 || positives == n {
        let only = if positives == 0 { Label::Bonafide } else { Label::Morph };
        return Err(DmadError::SingleClass(format!("all {n} training samples are {only}")));
    }

    let (mean, std) = column_stats(features, d);
    let mut z = vec![0.0; n * d];
    for (row, x) in z.chunks_exact_mut(d).zip(features) {
        for (((o, &v), &m), &s) in row.iter_mut().zip(x).zip(&mean).zip(&std) {
            *o = (v - m) / s;
        }
    }
    let y: Vec<f64> = labels.iter().map(|l| l.sign()).collect();

    let objective = |w: &[f64], b: f64| -> f64 {
        let reg = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
        let loss: f64 = z
            .chunks_exact(d)
            .zip(&y)
            .map(|(zi, &yi)| (1.0 - yi * (dot(w, zi) + b)).max(0.0))
            .sum();
        reg + config.c * loss
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut best = (objective(&w, b), w.clone(), b);
    let mut report = TrainReport::default();
    let shrink_per_step = 1.0 / n as f64;
    let mut step = 0u64;

    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        for &i in &order {
            let eta = config.eta0 / (1.0 + config.decay * step as f64);
            let zi = &z[i * d..(i + 1) * d];
            let margin = y[i] * (dot(&w, zi) + b);
            let keep = 1.0 - eta * shrink_per_step;
            if margin < 1.0 {
                let push = eta * config.c * y[i];
                for (wj, zj) in w.iter_mut().zip(zi) {
                    *wj = keep * *wj + push * zj;
                }
                b += push;
            } else {
                w.iter_mut().for_each(|wj| *wj *= keep);
            }
            step += 1;
        }
        let obj = objective(&w, b);
        if !obj.is_finite() {
            return Err(DmadError::NonFinite { index: epoch });
        }
        let prev = report.objectives.last().copied();
        report.objectives.push(obj);
        if obj < best.0 {
            best = (obj, w.clone(), b);
            report.best_epoch = epoch;
        }
        if let Some(prev) = prev {
            if (prev - obj).abs() <= config.tolerance * prev.abs().max(f64::MIN_POSITIVE) {
                break;
            }
        }
    }

    let (_, weights, bias) = best;
    Ok((
        LinearModel {
            feature_dim: d,
            weights,
            bias,
            mean,
            std,
            train_config_digest: config.digest(),
        },
        report,
    ))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn column_stats(features: &[Vec<f64>], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = features.len() as f64;
    let mut mean = vec![0.0; d];
    for x in features {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for x in features {
        for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var
        .into_iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd < MIN_STD {
                1.0
            } else {
                sd
            }
        })
        .collect();
    (mean, std)
}
