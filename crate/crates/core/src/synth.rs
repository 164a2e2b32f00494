//! Synthetic confounded datasets and the robustness experiments run on them.
//!
//! Every item's feature map holds the same vector in each cell,
//! `α·u_y + β·g·v`, plus independent Gaussian noise `σ·ε` per cell. `u_y` is the class
//! direction, `v` a confound direction and `g = ±1` a binary confound that agrees with the
//! label with probability `rho` in its split. All directions are mutually orthonormal and
//! the concept set contains the class directions and some distractors but never `v`, so
//! concept scores carry no confound signal while the raw pooled features do.

use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::concept_space::{
    average_pooled_features, concept_vector, fit_normalizer, subset_indices, Normalizer,
    NormalizerMode, PoolingMode,
};
use crate::error::{Error, Result};
use crate::linear_head::{
    evaluate, train_weights, EpochRecord, LabeledVectors, TrainConfig, TrainSplits, WeightMatrix,
};
use crate::tensor_io::{
    save_concepts, save_manifest, write_tensor_file, ConceptRecord, ConceptSet, DatasetManifest,
    ItemRecord, Split, TensorF32,
};

/// Corrupted items get `SCORE_SPIKE_FACTOR · α` of a wrong class direction added to every cell.
pub const SCORE_SPIKE_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Embedding dimension D.
    pub dim: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    /// α
    pub signal_strength: f64,
    /// β
    pub confound_strength: f64,
    /// σ
    pub noise: f64,
    /// Probability that the confound agrees with the label in the train and val splits.
    pub rho_train: f64,
    pub rho_test: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Distractor concepts per class.
    pub n_distractor_concepts: usize,
    /// Fraction of items whose feature map gets a spurious wrong-class spike.
    pub score_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            height: 8,
            width: 8,
            num_classes: 2,
            signal_strength: 1.0,
            confound_strength: 2.0,
            noise: 0.1,
            rho_train: 1.0,
            rho_test: 0.0,
            n_train: 500,
            n_val: 200,
            n_test: 200,
            n_distractor_concepts: 3,
            score_noise: 0.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn num_distractors(&self) -> usize {
        self.n_distractor_concepts * self.num_classes
    }

    /// Class signals + distractors.
    pub fn num_concepts(&self) -> usize {
        self.num_classes + self.num_distractors()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidSynthConfig(msg));
        for (name, v) in [
            ("signal_strength", self.signal_strength),
            ("confound_strength", self.confound_strength),
            ("noise", self.noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        for (name, v) in [
            ("rho_train", self.rho_train),
            ("rho_test", self.rho_test),
            ("score_noise", self.score_noise),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.num_classes < 2 {
            return fail("num_classes must be >= 2".into());
        }
        if self.height == 0 || self.width == 0 {
            return fail("height and width must be >= 1".into());
        }
        let needed = self.num_classes + 1 + self.num_distractors();
        if self.dim < needed {
            return fail(format!(
                "dimension too small for orthogonalization: dim {} < {needed} directions",
                self.dim
            ));
        }
        Ok(())
    }
}

/// The orthonormal directions planted in a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Directions {
    pub signals: Vec<Vec<f64>>,
    pub confound: Vec<f64>,
    pub distractors: Vec<Vec<f64>>,
}

impl Directions {
    pub fn all(&self) -> Vec<&[f64]> {
        self.signals
            .iter()
            .map(Vec::as_slice)
            .chain(std::iter::once(self.confound.as_slice()))
            .chain(self.distractors.iter().map(Vec::as_slice))
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthonormal vectors from seeded Gaussian draws via Gram–Schmidt with re-orthogonalization.
pub fn orthonormal_directions(count: usize, dim: usize, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
    if count > dim {
        return Err(Error::InvalidSynthConfig(format!(
            "dimension too small for orthogonalization: {count} directions in R^{dim}"
        )));
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for b in &basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = dot(&v, &v).sqrt();
        // a draw (numerically) inside the current span is discarded and redrawn
        if n < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n);
        basis.push(v);
    }
    Ok(basis)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthItem {
    pub id: String,
    pub label: usize,
    pub split: Split,
    /// g ∈ {+1, -1}
    pub confound_sign: i8,
    /// Concept index of the wrong-class signal spiked into this item, if corrupted.
    pub corrupted_concept: Option<usize>,
    pub feature_map: TensorF32,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub class_names: Vec<String>,
    pub directions: Directions,
    pub concepts: ConceptSet,
    pub items: Vec<SynthItem>,
}

/// Confound sign that agrees with class `label`.
pub fn aligned_sign(label: usize) -> i8 {
    if label % 2 == 1 {
        1
    } else {
        -1
    }
}

pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dirs = orthonormal_directions(
        config.num_classes + 1 + config.num_distractors(),
        config.dim,
        &mut rng,
    )?;
    let distractors = dirs.split_off(config.num_classes + 1);
    let confound = dirs.pop().expect("confound direction");
    let directions = Directions {
        signals: dirs,
        confound,
        distractors,
    };

    let mut records = Vec::with_capacity(config.num_concepts());
    let mut emb = Vec::with_capacity(config.num_concepts() * config.dim);
    for (c, u) in directions.signals.iter().enumerate() {
        records.push(ConceptRecord::new(format!("signal concept for class {c}"), Some(c)));
        emb.extend(u.iter().map(|&x| x as f32));
    }
    for (k, w) in directions.distractors.iter().enumerate() {
        records.push(ConceptRecord::new(format!("distractor concept {k}"), None));
        emb.extend(w.iter().map(|&x| x as f32));
    }
    let concepts = ConceptSet::new(
        records,
        TensorF32::new(vec![config.num_concepts(), config.dim], emb)?,
    )?;

    let mut items = Vec::with_capacity(config.n_train + config.n_val + config.n_test);
    for (split, n, rho) in [
        (Split::Train, config.n_train, config.rho_train),
        (Split::Val, config.n_val, config.rho_train),
        (Split::Test, config.n_test, config.rho_test),
    ] {
        for i in 0..n {
            items.push(generate_item(config, &directions, split, i, rho, &mut rng)?);
        }
    }

    Ok(SynthDataset {
        config: config.clone(),
        class_names: (0..config.num_classes).map(|c| format!("class_{c}")).collect(),
        directions,
        concepts,
        items,
    })
}

fn generate_item(
    config: &SynthConfig,
    dirs: &Directions,
    split: Split,
    index: usize,
    rho: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SynthItem> {
    let label = index % config.num_classes;
    let aligned = rng.random::<f64>() < rho;
    let g = if aligned {
        aligned_sign(label)
    } else {
        -aligned_sign(label)
    };

    let mut base: Vec<f64> = dirs.signals[label]
        .iter()
        .zip(&dirs.confound)
        .map(|(u, v)| config.signal_strength * u + config.confound_strength * f64::from(g) * v)
        .collect();

    let mut corrupted_concept = None;
    if config.score_noise > 0.0 && rng.random::<f64>() < config.score_noise {
        let wrong: Vec<usize> = (0..config.num_classes).filter(|&c| c != label).collect();
        let &c = wrong.choose(rng).expect("at least two classes");
        let spike = SCORE_SPIKE_FACTOR * config.signal_strength;
        base.iter_mut()
            .zip(&dirs.signals[c])
            .for_each(|(b, u)| *b += spike * u);
        corrupted_concept = Some(c);
    }

    let cells = config.height * config.width;
    let mut data = Vec::with_capacity(cells * config.dim);
    for _ in 0..cells {
        for &b in &base {
            let eps: f64 = rng.sample(StandardNormal);
            data.push((b + config.noise * eps) as f32);
        }
    }
    Ok(SynthItem {
        id: format!("{split}-{index:04}"),
        label,
        split,
        confound_sign: g,
        corrupted_concept,
        feature_map: TensorF32::new(vec![config.height, config.width, config.dim], data)?,
    })
}

#[derive(Serialize)]
struct ItemSidecar<'a> {
    id: &'a str,
    confound_sign: i8,
    corrupted_concept: Option<usize>,
}

impl SynthDataset {
    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            class_names: self.class_names.clone(),
            embedding_dim: self.config.dim,
            items: self
                .items
                .iter()
                .map(|item| ItemRecord {
                    id: item.id.clone(),
                    label: item.label,
                    split: item.split,
                    tensor_path: format!("tensors/{}.cltensr", item.id),
                    shape: [self.config.height, self.config.width, self.config.dim],
                })
                .collect(),
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SynthItem> {
        self.items.iter().filter(move |item| item.split == split)
    }

    /// Writes `manifest.json`, `tensors/*.cltensr`, `concepts.json` (+ embeddings) and
    /// `synth.json` (config echo plus per-item confound signs) into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let tensors = dir.join("tensors");
        fs::create_dir_all(&tensors).map_err(Error::io_at(&tensors))?;
        let manifest = self.manifest();
        for (item, record) in self.items.iter().zip(&manifest.items) {
            write_tensor_file(&item.feature_map, dir.join(&record.tensor_path))?;
        }
        save_manifest(&manifest, dir.join("manifest.json"))?;
        save_concepts(&self.concepts, dir.join("concepts.json"), "concepts.cltensr")?;
        let sidecar = serde_json::json!({
            "config": self.config,
            "items": self.items.iter().map(|i| ItemSidecar {
                id: &i.id,
                confound_sign: i.confound_sign,
                corrupted_concept: i.corrupted_concept,
            }).collect::<Vec<_>>(),
        });
        let path = dir.join("synth.json");
        fs::write(&path, serde_json::to_string_pretty(&sidecar)?).map_err(Error::io_at(&path))
    }
}

/// Raw (unnormalized) per-split inputs for a pipeline.
#[derive(Debug, Clone)]
pub struct RawSplits {
    pub train: LabeledVectors,
    pub val: LabeledVectors,
    pub test: LabeledVectors,
}

impl RawSplits {
    fn build(ds: &SynthDataset, features: impl Fn(&SynthItem) -> Result<Vec<f64>>) -> Result<Self> {
        let collect = |split| -> Result<LabeledVectors> {
            let mut vectors = Vec::new();
            let mut labels = Vec::new();
            for item in ds.split(split) {
                vectors.push(features(item)?);
                labels.push(item.label);
            }
            LabeledVectors::new(vectors, labels)
        };
        Ok(Self {
            train: collect(Split::Train)?,
            val: collect(Split::Val)?,
            test: collect(Split::Test)?,
        })
    }

    /// Pooled concept scores for every item.
    pub fn concept_scores(ds: &SynthDataset, mode: PoolingMode) -> Result<Self> {
        Self::build(ds, |item| {
            concept_vector(&item.feature_map, &ds.concepts, mode).map(|v| v.scores)
        })
    }

    /// Average-pooled D-dimensional features, the raw-probe input.
    pub fn pooled_features(ds: &SynthDataset) -> Result<Self> {
        Self::build(ds, |item| average_pooled_features(&item.feature_map))
    }

    /// Fits a per-column min-max normalizer on the training split and applies it everywhere.
    pub fn normalized(&self) -> Result<(Normalizer, TrainSplits)> {
        let normalizer = fit_normalizer(&self.train.vectors, NormalizerMode::PerConceptMinmax)?;
        let apply = |data: &LabeledVectors| -> Result<LabeledVectors> {
            let vectors = data
                .vectors
                .iter()
                .map(|v| normalizer.apply_scores(v))
                .collect::<Result<Vec<_>>>()?;
            LabeledVectors::new(vectors, data.labels.clone())
        };
        let splits = TrainSplits {
            train: apply(&self.train)?,
            val: apply(&self.val)?,
            test: Some(apply(&self.test)?),
        };
        Ok((normalizer, splits))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub weights: WeightMatrix,
    pub normalizer: Normalizer,
    pub val_acc: f64,
    pub test_acc: f64,
    pub best_epoch: usize,
    pub curve: Vec<EpochRecord>,
}

/// Normalize, train and evaluate one pipeline.
pub fn run_pipeline(raw: &RawSplits, num_classes: usize, train_config: &TrainConfig) -> Result<PipelineOutcome> {
    let (normalizer, splits) = raw.normalized()?;
    let (weights, report) = train_weights(&splits, num_classes, train_config)?;
    let test = splits.test.as_ref().expect("test split present");
    Ok(PipelineOutcome {
        test_acc: evaluate(&weights, test)?,
        val_acc: report.best().val_acc,
        best_epoch: report.best_epoch,
        curve: report.epochs,
        weights,
        normalizer,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub seed: u64,
    pub config: SynthConfig,
    pub train_config: TrainConfig,
    pub concept_test_acc: f64,
    pub raw_probe_test_acc: f64,
    pub concept_val_acc: f64,
    pub raw_probe_val_acc: f64,
    pub concept_best_epoch: usize,
    pub raw_probe_best_epoch: usize,
    pub concept_curve: Vec<EpochRecord>,
    pub raw_probe_curve: Vec<EpochRecord>,
}

/// Concept path vs raw pooled-feature probe on one generated dataset.
pub fn run_robustness_experiment(
    config: &SynthConfig,
    train_config: &TrainConfig,
) -> Result<RobustnessReport> {
    let ds = generate(config)?;
    robustness_on(&ds, train_config)
}

pub fn robustness_on(ds: &SynthDataset, train_config: &TrainConfig) -> Result<RobustnessReport> {
    let m = ds.config.num_classes;
    let (concept, raw) = std::thread::scope(|s| {
        let concept = s.spawn(|| {
            RawSplits::concept_scores(ds, PoolingMode::Avg)
                .and_then(|r| run_pipeline(&r, m, train_config))
        });
        let raw = s.spawn(|| {
            RawSplits::pooled_features(ds).and_then(|r| run_pipeline(&r, m, train_config))
        });
        (
            concept.join().expect("concept pipeline panicked"),
            raw.join().expect("raw probe pipeline panicked"),
        )
    });
    let (concept, raw) = (concept?, raw?);
    Ok(RobustnessReport {
        seed: ds.config.seed,
        config: ds.config.clone(),
        train_config: train_config.clone(),
        concept_test_acc: concept.test_acc,
        raw_probe_test_acc: raw.test_acc,
        concept_val_acc: concept.val_acc,
        raw_probe_val_acc: raw.val_acc,
        concept_best_epoch: concept.best_epoch,
        raw_probe_best_epoch: raw.best_epoch,
        concept_curve: concept.curve,
        raw_probe_curve: raw.curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub k: usize,
    pub mean_acc: f64,
    /// Sample standard deviation; 0 for a single repeat.
    pub std_acc: f64,
    pub accuracies: Vec<f64>,
    pub subsets: Vec<Vec<usize>>,
}

/// Concept-path test accuracy using only the concept columns in `indices`.
pub fn concept_subset_accuracy(
    normalized: &TrainSplits,
    indices: &[usize],
    num_classes: usize,
    train_config: &TrainConfig,
) -> Result<f64> {
    let test = normalized.test.as_ref().ok_or(Error::EmptyInput("test split"))?;
    let splits = TrainSplits {
        train: normalized.train.select_columns(indices),
        val: normalized.val.select_columns(indices),
        test: None,
    };
    let (weights, _) = train_weights(&splits, num_classes, train_config)?;
    evaluate(&weights, &test.select_columns(indices))
}

/// Mean concept-path test accuracy over `repeats` random K-subsets for each K.
///
/// Subset seeds are drawn in order from a generator seeded with `seed`.
pub fn concept_count_ablation(
    config: &SynthConfig,
    train_config: &TrainConfig,
    ks: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<Vec<AblationRow>> {
    let ds = generate(config)?;
    let n = ds.concepts.len();
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > n) {
        return Err(Error::SubsetOutOfRange { k, n });
    }
    if repeats == 0 {
        return Err(Error::EmptyInput("ablation repeats"));
    }
    let (_, normalized) = RawSplits::concept_scores(&ds, PoolingMode::Avg)?.normalized()?;
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    ks.iter()
        .map(|&k| {
            let mut accuracies = Vec::with_capacity(repeats);
            let mut subsets = Vec::with_capacity(repeats);
            for _ in 0..repeats {
                let indices = subset_indices(n, k, seeds.next_u64())?;
                accuracies.push(concept_subset_accuracy(
                    &normalized,
                    &indices,
                    config.num_classes,
                    train_config,
                )?);
                subsets.push(indices);
            }
            let mean = accuracies.iter().sum::<f64>() / repeats as f64;
            let std = if repeats > 1 {
                (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            Ok(AblationRow {
                k,
                mean_acc: mean,
                std_acc: std,
                accuracies,
                subsets,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            dim: 16,
            height: 2,
            width: 3,
            n_train: 40,
            n_val: 20,
            n_test: 20,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn directions_are_orthonormal() {
        let ds = generate(&small()).unwrap();
        let all = ds.directions.all();
        assert_eq!(all.len(), 2 + 1 + 6);
        for (i, a) in all.iter().enumerate() {
            assert!((dot(a, a) - 1.0).abs() < 1e-12);
            for b in &all[i + 1..] {
                assert!(dot(a, b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn dimension_too_small() {
        let cfg = SynthConfig {
            dim: 8,
            ..small()
        };
        let err = generate(&cfg).unwrap_err();
        assert!(err.to_string().contains("dimension too small"), "{err}");
    }

    #[test]
    fn invalid_values_rejected() {
        for cfg in [
            SynthConfig { noise: -1.0, ..small() },
            SynthConfig { rho_test: 1.5, ..small() },
            SynthConfig { num_classes: 1, ..small() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn confound_follows_rho_by_split() {
        let ds = generate(&small()).unwrap();
        for item in &ds.items {
            let aligned = item.confound_sign == aligned_sign(item.label);
            match item.split {
                Split::Train | Split::Val => assert!(aligned),
                Split::Test => assert!(!aligned),
            }
        }
    }

    #[test]
    fn noiseless_signal_concept_dominates() {
        let cfg = SynthConfig {
            noise: 0.0,
            confound_strength: 0.0,
            ..small()
        };
        let ds = generate(&cfg).unwrap();
        for item in &ds.items {
            let v = concept_vector(&item.feature_map, &ds.concepts, PoolingMode::Avg).unwrap();
            let best = crate::linear_head::argmax(&v.scores);
            assert_eq!(best, item.label);
            assert!((v.scores[item.label] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.items, b.items);
        assert_eq!(a.concepts, b.concepts);
        let c = generate(&SynthConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a.items, c.items);
    }

    #[test]
    fn score_noise_marks_corrupted_items() {
        let cfg = SynthConfig {
            score_noise: 0.5,
            ..small()
        };
        let ds = generate(&cfg).unwrap();
        let corrupted: Vec<_> = ds.items.iter().filter(|i| i.corrupted_concept.is_some()).collect();
        assert!(!corrupted.is_empty() && corrupted.len() < ds.items.len());
        for item in corrupted {
            assert_ne!(item.corrupted_concept, Some(item.label));
        }
    }

    #[test]
    fn ablation_rejects_bad_k() {
        let cfg = small();
        let tc = TrainConfig {
            max_epochs: 5,
            patience: 5,
            ..TrainConfig::default()
        };
        assert!(concept_count_ablation(&cfg, &tc, &[0], 1, 1).is_err());
        assert!(concept_count_ablation(&cfg, &tc, &[9], 1, 1).is_err());
    }
}
