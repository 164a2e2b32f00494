use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate, grad, mean_loss, LinearHead, WeightMatrix};
use crate::concept_space::{fit_normalizer, score_dataset, Normalizer, NormalizerMode, PoolingMode};
use crate::error::{Error, Result};
use crate::tensor_io::{ConceptSet, Dataset, Split};

/// Batch sizes swept when tuning; any positive size is accepted.
pub const BATCH_SIZE_GRID: [usize; 5] = [8, 16, 32, 64, 128];

/// Concept vectors (already normalized) with class labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledVectors {
    pub vectors: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl LabeledVectors {
    pub fn new(vectors: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if vectors.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                what: "label list",
                expected: vectors.len(),
                found: labels.len(),
            });
        }
        if let Some(first) = vectors.first() {
            if let Some(bad) = vectors.iter().find(|v| v.len() != first.len()) {
                return Err(Error::DimensionMismatch {
                    what: "concept vector",
                    expected: first.len(),
                    found: bad.len(),
                });
            }
        }
        Ok(Self { vectors, labels })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.vectors.first().map(Vec::len)
    }

    /// Keeps only the given feature columns, in order.
    pub fn select_columns(&self, columns: &[usize]) -> Self {
        Self {
            vectors: self
                .vectors
                .iter()
                .map(|v| columns.iter().map(|&j| v[j]).collect())
                .collect(),
            labels: self.labels.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainSplits {
    pub train: LabeledVectors,
    pub val: LabeledVectors,
    /// Only used to record per-epoch test accuracy; never influences training.
    pub test: Option<LabeledVectors>,
}

/// Scores every item, fits the normalizer on the train split and normalizes all splits.
///
/// `test` is `None` when the dataset has no test items.
pub fn dataset_splits(
    dataset: &Dataset,
    concepts: &ConceptSet,
    pooling_mode: PoolingMode,
    normalizer_mode: NormalizerMode,
) -> Result<(Normalizer, TrainSplits)> {
    let scores = score_dataset(dataset, concepts, pooling_mode)?;
    let collect = |split: Split| {
        let (vectors, labels): (Vec<_>, Vec<_>) = dataset
            .items()
            .iter()
            .zip(&scores)
            .filter(|(item, _)| item.split == split)
            .map(|(item, v)| (v.clone(), item.label))
            .unzip();
        (vectors, labels)
    };
    let (train_raw, train_labels) = collect(Split::Train);
    let normalizer = fit_normalizer(&train_raw, normalizer_mode)?;
    let normalize = |(vectors, labels): (Vec<Vec<f64>>, Vec<usize>)| -> Result<LabeledVectors> {
        let vectors = vectors
            .iter()
            .map(|v| normalizer.apply_scores(v))
            .collect::<Result<Vec<_>>>()?;
        LabeledVectors::new(vectors, labels)
    };
    let train = normalize((train_raw, train_labels))?;
    let val = normalize(collect(Split::Val))?;
    let test = collect(Split::Test);
    let test = if test.0.is_empty() { None } else { Some(normalize(test)?) };
    Ok((normalizer, TrainSplits { train, val, test }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-accuracy improvement before stopping.
    pub patience: usize,
    pub l1_lambda: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 32,
            max_epochs: 5000,
            patience: 200,
            l1_lambda: 0.0,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidTrainConfig(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be >= 1".into());
        }
        if self.patience > self.max_epochs {
            return fail(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            ));
        }
        if !(self.l1_lambda >= 0.0 && self.l1_lambda.is_finite()) {
            return fail(format!("l1_lambda must be >= 0, got {}", self.l1_lambda));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return fail("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return fail("adam_eps must be > 0".into());
        }
        Ok(())
    }

    pub fn batch_size_in_grid(&self) -> bool {
        BATCH_SIZE_GRID.contains(&self.batch_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Earliest epoch attaining the maximum validation accuracy.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }
}

/// Adam optimizer state for one weight matrix.
#[derive(Debug, Clone)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// One bias-corrected Adam update of `weights` in place.
pub fn adam_step(
    weights: &mut [f64],
    gradient: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: i32,
    config: &TrainConfig,
) {
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for i in 0..weights.len() {
        let g = gradient[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        weights[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_eps);
    }
}

/// Proximal operator of `threshold * |w|`: shrinks toward zero, snapping to exactly zero
/// instead of crossing it.
pub fn soft_threshold(w: f64, threshold: f64) -> f64 {
    if w > threshold {
        w - threshold
    } else if w < -threshold {
        w + threshold
    } else {
        0.0
    }
}

fn check_split(name: &'static str, data: &LabeledVectors, dim: usize, classes: usize) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyInput(name));
    }
    if let Some(d) = data.dim() {
        if d != dim {
            return Err(Error::DimensionMismatch {
                what: "concept vector",
                expected: dim,
                found: d,
            });
        }
    }
    if let Some(&y) = data.labels.iter().find(|&&y| y >= classes) {
        return Err(Error::ClassOutOfRange { class: y, classes });
    }
    Ok(())
}

/// Trains a `[num_classes, dim]` weight matrix from zero initialization.
///
/// Each epoch shuffles the training split with a generator seeded once from
/// `config.seed`, applies one Adam step per mini-batch (followed by soft-thresholding when
/// `l1_lambda > 0`), then evaluates the validation split. Weights are kept on the `f32`
/// grid after every step. Returns the weights of the best validation epoch.
pub fn train_weights(
    splits: &TrainSplits,
    num_classes: usize,
    config: &TrainConfig,
) -> Result<(WeightMatrix, TrainReport)> {
    config.validate()?;
    let dim = splits
        .train
        .dim()
        .ok_or(Error::EmptyInput("train split"))?;
    check_split("train split", &splits.train, dim, num_classes)?;
    check_split("val split", &splits.val, dim, num_classes)?;
    if let Some(test) = &splits.test {
        check_split("test split", test, dim, num_classes)?;
    }

    let mut weights = WeightMatrix::zeros(num_classes, dim);
    let mut adam = Adam {
        m: vec![0.0; weights.data().len()],
        v: vec![0.0; weights.data().len()],
        t: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..splits.train.len()).collect();
    let shrink = config.learning_rate * config.l1_lambda;

    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, WeightMatrix)> = None;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[f64], usize)> = chunk
                .iter()
                .map(|&i| (splits.train.vectors[i].as_slice(), splits.train.labels[i]))
                .collect();
            let g = grad(&weights, &batch)?;
            adam.t += 1;
            adam_step(
                weights.data_mut(),
                g.data(),
                &mut adam.m,
                &mut adam.v,
                adam.t,
                config,
            );
            if shrink > 0.0 {
                weights
                    .data_mut()
                    .iter_mut()
                    .for_each(|w| *w = soft_threshold(*w, shrink));
            }
            weights.round_to_f32();
        }

        let train_loss = mean_loss(&weights, &splits.train)?;
        let val_loss = mean_loss(&weights, &splits.val)?;
        for loss in [train_loss, val_loss] {
            if !loss.is_finite() {
                log::error!("training diverged at epoch {epoch}: loss {loss}");
                return Err(Error::NonFiniteLoss { epoch, loss });
            }
        }
        let val_acc = evaluate(&weights, &splits.val)?;
        let test_acc = splits
            .test
            .as_ref()
            .map(|t| evaluate(&weights, t))
            .transpose()?;
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_acc,
            test_acc,
        });

        match &best {
            Some((acc, _, _)) if val_acc <= *acc => {}
            _ => best = Some((val_acc, epoch, weights.clone())),
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
        if epoch - best_epoch >= config.patience && epoch < config.max_epochs {
            stopped_early = true;
            log::debug!("early stop at epoch {epoch}, best epoch {best_epoch}");
            break;
        }
    }

    let (_, best_epoch, best_weights) = best.expect("at least one epoch runs");
    Ok((
        best_weights,
        TrainReport {
            epochs,
            best_epoch,
            stopped_early,
        },
    ))
}

/// Trains a head over normalized concept vectors and attaches the scoring metadata.
pub fn train(
    splits: &TrainSplits,
    config: &TrainConfig,
    class_names: Vec<String>,
    concept_texts: Vec<String>,
    normalizer: Normalizer,
    pooling_mode: PoolingMode,
) -> Result<(LinearHead, TrainReport)> {
    let (weights, report) = train_weights(splits, class_names.len(), config)?;
    let head = LinearHead::new(class_names, concept_texts, weights, normalizer, pooling_mode)?;
    Ok((head, report))
}
