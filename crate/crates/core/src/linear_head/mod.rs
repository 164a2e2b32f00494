//! Bias-free linear classification layer over normalized concept scores.
//!
//! Logits are `z = W e` with `W` of shape `[classes, concepts]`; probabilities are the softmax
//! of `z` and training minimizes mean categorical cross-entropy.

mod model_io;
mod train;

use serde::{Deserialize, Serialize};

pub use model_io::{load_model, save_model, MODEL_FORMAT_VERSION, WEIGHTS_FILE};
pub use train::{
    adam_step, dataset_splits, soft_threshold, train, train_weights, EpochRecord, LabeledVectors, TrainConfig,
    TrainReport, TrainSplits, BATCH_SIZE_GRID,
};

use crate::concept_space::{Normalizer, PoolingMode};
use crate::error::{Error, Result};

/// Dense row-major matrix; row `c` holds the weights of class `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidShape {
                shape: vec![rows, cols],
                reason: format!("weight matrix needs {} values, got {}", rows * cols, data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidShape {
                shape: vec![rows.len(), cols],
                reason: "ragged rows".into(),
            });
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, class: usize, concept: usize) -> f64 {
        self.data[class * self.cols + concept]
    }

    pub fn set(&mut self, class: usize, concept: usize, value: f64) {
        self.data[class * self.cols + concept] = value;
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.data[class * self.cols..(class + 1) * self.cols]
    }

    pub fn count_zeros(&self) -> usize {
        self.data.iter().filter(|&&w| w == 0.0).count()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, w| m.max(w.abs()))
    }

    /// Rounds every entry to the nearest `f32`, the precision of the on-disk weight tensor.
    pub fn round_to_f32(&mut self) {
        for w in &mut self.data {
            *w = f64::from(*w as f32);
        }
    }

    /// `W e`, accumulated left to right over concepts. [`crate::interpret`] relies on this
    /// exact summation order.
    pub fn logits(&self, e: &[f64]) -> Result<Vec<f64>> {
        if e.len() != self.cols {
            return Err(Error::DimensionMismatch {
                what: "concept vector",
                expected: self.cols,
                found: e.len(),
            });
        }
        Ok((0..self.rows)
            .map(|c| {
                let mut z = 0.0;
                for (w, s) in self.row(c).iter().zip(e) {
                    z += w * s;
                }
                z
            })
            .collect())
    }

    pub fn predict(&self, e: &[f64]) -> Result<Prediction> {
        Ok(Prediction::from_logits(self.logits(e)?))
    }
}

/// Logits, softmax probabilities and the arg-max class of one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub predicted_class: usize,
}

impl Prediction {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let probabilities = softmax(&logits);
        let predicted_class = argmax(&logits);
        Self {
            logits,
            probabilities,
            predicted_class,
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean categorical cross-entropy over a batch, computed from the logits via log-sum-exp.
pub fn ce_loss(predictions: &[Prediction], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("loss batch"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            what: "label list",
            expected: predictions.len(),
            found: labels.len(),
        });
    }
    let mut total = 0.0;
    for (p, &y) in predictions.iter().zip(labels) {
        if y >= p.logits.len() {
            return Err(Error::ClassOutOfRange {
                class: y,
                classes: p.logits.len(),
            });
        }
        total += log_sum_exp(&p.logits) - p.logits[y];
    }
    Ok(total / predictions.len() as f64)
}

/// Gradient of the mean cross-entropy w.r.t. `W`: `(1/K) Σ_i (p_i - y_i) e_iᵀ`.
pub fn grad(weights: &WeightMatrix, batch: &[(&[f64], usize)]) -> Result<WeightMatrix> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("gradient batch"));
    }
    let mut g = WeightMatrix::zeros(weights.rows, weights.cols);
    for &(e, y) in batch {
        if y >= weights.rows {
            return Err(Error::ClassOutOfRange {
                class: y,
                classes: weights.rows,
            });
        }
        let p = softmax(&weights.logits(e)?);
        for (c, pc) in p.into_iter().enumerate() {
            let residual = if c == y { pc - 1.0 } else { pc };
            let row = &mut g.data[c * weights.cols..(c + 1) * weights.cols];
            for (gj, &s) in row.iter_mut().zip(e) {
                *gj += residual * s;
            }
        }
    }
    let scale = 1.0 / batch.len() as f64;
    g.data.iter_mut().for_each(|v| *v *= scale);
    Ok(g)
}

/// Trained bias-free head together with everything needed to score new feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    class_names: Vec<String>,
    concept_texts: Vec<String>,
    weights: WeightMatrix,
    normalizer: Normalizer,
    pooling_mode: PoolingMode,
}

impl LinearHead {
    /// Weights are rounded to `f32` precision so that a saved model reloads bit-identically.
    pub fn new(
        class_names: Vec<String>,
        concept_texts: Vec<String>,
        mut weights: WeightMatrix,
        normalizer: Normalizer,
        pooling_mode: PoolingMode,
    ) -> Result<Self> {
        if weights.rows != class_names.len() || weights.cols != concept_texts.len() {
            return Err(Error::ShapeMismatch {
                what: "weight matrix".into(),
                expected: vec![class_names.len(), concept_texts.len()],
                found: vec![weights.rows, weights.cols],
            });
        }
        if class_names.is_empty() || concept_texts.is_empty() {
            return Err(Error::EmptyInput("head classes or concepts"));
        }
        if let Some(i) = weights.data.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        if let Some(width) = normalizer.width() {
            if width != concept_texts.len() {
                return Err(Error::DimensionMismatch {
                    what: "normalizer",
                    expected: concept_texts.len(),
                    found: width,
                });
            }
        }
        weights.round_to_f32();
        Ok(Self {
            class_names,
            concept_texts,
            weights,
            normalizer,
            pooling_mode,
        })
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn concept_texts(&self) -> &[String] {
        &self.concept_texts
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.weights
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn pooling_mode(&self) -> PoolingMode {
        self.pooling_mode
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn num_concepts(&self) -> usize {
        self.concept_texts.len()
    }

    /// Predicts from an already normalized concept vector.
    pub fn forward(&self, e: &[f64]) -> Result<Prediction> {
        self.weights.predict(e)
    }

    pub fn evaluate(&self, data: &LabeledVectors) -> Result<f64> {
        evaluate(&self.weights, data)
    }
}

/// Fraction of items whose arg-max prediction equals the label.
pub fn evaluate(weights: &WeightMatrix, data: &LabeledVectors) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("evaluation set"));
    }
    let mut correct = 0usize;
    for (e, &y) in data.vectors.iter().zip(&data.labels) {
        if argmax(&weights.logits(e)?) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Mean cross-entropy of `weights` over a labeled set.
pub fn mean_loss(weights: &WeightMatrix, data: &LabeledVectors) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("loss set"));
    }
    let mut total = 0.0;
    for (e, &y) in data.vectors.iter().zip(&data.labels) {
        let z = weights.logits(e)?;
        total += log_sum_exp(&z) - z[y];
    }
    Ok(total / data.len() as f64)
}
