//! Concept scores from feature maps: cosine heatmaps, pooling and [0, 1] normalization.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::{ConceptSet, Dataset, TensorF32};

/// H x W grid of cosine similarities between one concept embedding and each feature cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::InvalidShape {
                shape: vec![height, width],
                reason: format!("heatmap needs a non-empty grid, got {} values", values.len()),
            });
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingMode {
    #[default]
    Avg,
    Max,
    AvgPlusMax,
}

/// Pooled similarity scores `(s_1, ..., s_N)` for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptVector {
    pub scores: Vec<f64>,
    pub pooling_mode: PoolingMode,
}

impl ConceptVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

fn feature_dims(feature_map: &TensorF32) -> Result<(usize, usize, usize)> {
    match *feature_map.shape() {
        [h, w, d] => Ok((h, w, d)),
        ref other => Err(Error::InvalidShape {
            shape: other.to_vec(),
            reason: "feature map must be [H, W, D]".into(),
        }),
    }
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Cosine similarity of `concept` with every cell of `feature_map`.
///
/// Cells with zero norm score 0.
pub fn heatmap(feature_map: &TensorF32, concept: &[f32]) -> Result<Heatmap> {
    let (h, w, d) = feature_dims(feature_map)?;
    if concept.len() != d {
        return Err(Error::DimensionMismatch {
            what: "concept embedding",
            expected: d,
            found: concept.len(),
        });
    }
    let concept_norm = norm(concept);
    if concept_norm == 0.0 {
        return Err(Error::ZeroNormConcept(0));
    }
    let values = feature_map
        .data()
        .chunks_exact(d)
        .map(|cell| {
            let cell_norm = norm(cell);
            if cell_norm == 0.0 {
                return 0.0;
            }
            let dot: f64 = cell
                .iter()
                .zip(concept)
                .map(|(&a, &b)| f64::from(a) * f64::from(b))
                .sum();
            dot / (concept_norm * cell_norm)
        })
        .collect();
    Heatmap::new(h, w, values)
}

pub fn pool_avg(h: &Heatmap) -> f64 {
    h.values.iter().sum::<f64>() / h.values.len() as f64
}

pub fn pool_max(h: &Heatmap) -> f64 {
    h.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn pool(h: &Heatmap, mode: PoolingMode) -> f64 {
    match mode {
        PoolingMode::Avg => pool_avg(h),
        PoolingMode::Max => pool_max(h),
        PoolingMode::AvgPlusMax => 0.5 * (pool_avg(h) + pool_max(h)),
    }
}

pub fn concept_vector(
    feature_map: &TensorF32,
    concepts: &ConceptSet,
    mode: PoolingMode,
) -> Result<ConceptVector> {
    let scores = (0..concepts.len())
        .map(|i| {
            heatmap(feature_map, concepts.embedding(i))
                .map(|h| pool(&h, mode))
                .map_err(|e| match e {
                    Error::ZeroNormConcept(_) => Error::ZeroNormConcept(i),
                    other => other,
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConceptVector {
        scores,
        pooling_mode: mode,
    })
}

/// Raw concept scores of every dataset item, in manifest order.
pub fn score_dataset(dataset: &Dataset, concepts: &ConceptSet, mode: PoolingMode) -> Result<Vec<Vec<f64>>> {
    dataset.check_concepts(concepts)?;
    dataset
        .items()
        .iter()
        .map(|item| {
            let fmap = dataset.load_tensor(&item.id)?;
            concept_vector(&fmap, concepts, mode).map(|v| v.scores)
        })
        .collect()
}

/// Mean feature vector over all H x W cells. Input of the raw-feature probe.
pub fn average_pooled_features(feature_map: &TensorF32) -> Result<Vec<f64>> {
    let (h, w, d) = feature_dims(feature_map)?;
    let mut acc = vec![0.0f64; d];
    for cell in feature_map.data().chunks_exact(d) {
        for (a, &x) in acc.iter_mut().zip(cell) {
            *a += f64::from(x);
        }
    }
    let cells = (h * w) as f64;
    acc.iter_mut().for_each(|a| *a /= cells);
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizerMode {
    #[default]
    PerConceptMinmax,
    GlobalAffine,
}

/// Maps raw pooled similarities into [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Normalizer {
    /// `(s - min) / (max - min)` clamped, with extrema fitted on the training split.
    PerConceptMinmax { min: Vec<f64>, max: Vec<f64> },
    /// `(s + 1) / 2` clamped.
    GlobalAffine,
}

impl Normalizer {
    pub fn mode(&self) -> NormalizerMode {
        match self {
            Normalizer::PerConceptMinmax { .. } => NormalizerMode::PerConceptMinmax,
            Normalizer::GlobalAffine => NormalizerMode::GlobalAffine,
        }
    }

    /// Number of concepts this normalizer was fitted for, if it is concept-specific.
    pub fn width(&self) -> Option<usize> {
        match self {
            Normalizer::PerConceptMinmax { min, .. } => Some(min.len()),
            Normalizer::GlobalAffine => None,
        }
    }

    pub fn apply_scores(&self, scores: &[f64]) -> Result<Vec<f64>> {
        match self {
            Normalizer::PerConceptMinmax { min, max } => {
                if scores.len() != min.len() {
                    return Err(Error::DimensionMismatch {
                        what: "concept vector",
                        expected: min.len(),
                        found: scores.len(),
                    });
                }
                Ok(scores
                    .iter()
                    .zip(min.iter().zip(max))
                    .map(|(&s, (&lo, &hi))| {
                        if hi > lo {
                            ((s - lo) / (hi - lo)).clamp(0.0, 1.0)
                        } else {
                            0.5
                        }
                    })
                    .collect())
            }
            Normalizer::GlobalAffine => Ok(scores
                .iter()
                .map(|&s| ((s + 1.0) / 2.0).clamp(0.0, 1.0))
                .collect()),
        }
    }
}

/// Fits a normalizer on training-split score vectors.
pub fn fit_normalizer<V: AsRef<[f64]>>(train: &[V], mode: NormalizerMode) -> Result<Normalizer> {
    let first = train.first().ok_or(Error::EmptyInput("normalizer training vectors"))?;
    let n = first.as_ref().len();
    if let Some(bad) = train.iter().find(|v| v.as_ref().len() != n) {
        return Err(Error::DimensionMismatch {
            what: "training concept vector",
            expected: n,
            found: bad.as_ref().len(),
        });
    }
    Ok(match mode {
        NormalizerMode::GlobalAffine => Normalizer::GlobalAffine,
        NormalizerMode::PerConceptMinmax => {
            let mut min = vec![f64::INFINITY; n];
            let mut max = vec![f64::NEG_INFINITY; n];
            for v in train {
                for (j, &s) in v.as_ref().iter().enumerate() {
                    min[j] = min[j].min(s);
                    max[j] = max[j].max(s);
                }
            }
            Normalizer::PerConceptMinmax { min, max }
        }
    })
}

pub fn apply_normalizer(normalizer: &Normalizer, v: &ConceptVector) -> Result<ConceptVector> {
    Ok(ConceptVector {
        scores: normalizer.apply_scores(&v.scores)?,
        pooling_mode: v.pooling_mode,
    })
}

/// Seeded K-of-N index subset, returned in ascending order.
pub fn subset_indices(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(Error::SubsetOutOfRange { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Keeps a seeded random K-subset of the concepts, preserving their relative order.
pub fn subset_concepts(concepts: &ConceptSet, k: usize, seed: u64) -> Result<ConceptSet> {
    concepts.select(&subset_indices(concepts.len(), k, seed)?)
}
