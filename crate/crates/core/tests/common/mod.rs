//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use cbm_core::concept_space::{Normalizer, PoolingMode};
use cbm_core::linear_head::{LinearHead, WeightMatrix};
use cbm_core::tensor_io::TensorF32;
use rand::Rng;

/// Double-loop cosine heatmap + pooling over an `[H, W, D]` feature map.
pub fn naive_concept_scores(
    fmap: &[f32],
    h: usize,
    w: usize,
    d: usize,
    concepts: &[Vec<f32>],
    mode: PoolingMode,
) -> Vec<f64> {
    concepts
        .iter()
        .map(|t| {
            let mut tn = 0.0f64;
            for x in t {
                tn += f64::from(*x) * f64::from(*x);
            }
            let tn = tn.sqrt();
            let mut sum = 0.0;
            let mut max = f64::NEG_INFINITY;
            for j in 0..h {
                for k in 0..w {
                    let mut dot = 0.0f64;
                    let mut vn = 0.0f64;
                    for c in 0..d {
                        let v = f64::from(fmap[(j * w + k) * d + c]);
                        dot += v * f64::from(t[c]);
                        vn += v * v;
                    }
                    let cos = if vn == 0.0 { 0.0 } else { dot / (tn * vn.sqrt()) };
                    sum += cos;
                    if cos > max {
                        max = cos;
                    }
                }
            }
            let avg = sum / (h * w) as f64;
            match mode {
                PoolingMode::Avg => avg,
                PoolingMode::Max => max,
                PoolingMode::AvgPlusMax => 0.5 * (avg + max),
            }
        })
        .collect()
}

/// Cross-entropy via explicit probabilities.
pub fn naive_loss(w: &[Vec<f64>], batch: &[(Vec<f64>, usize)]) -> f64 {
    let mut total = 0.0;
    for (e, y) in batch {
        let z: Vec<f64> = w
            .iter()
            .map(|row| row.iter().zip(e).map(|(a, b)| a * b).sum())
            .collect();
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        total -= (z[*y].exp() / denom).ln();
    }
    total / batch.len() as f64
}

/// Central finite differences of [`naive_loss`].
pub fn finite_difference_grad(w: &[Vec<f64>], batch: &[(Vec<f64>, usize)], step: f64) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; w[0].len()]; w.len()];
    for c in 0..w.len() {
        for j in 0..w[0].len() {
            let mut plus = w.to_vec();
            let mut minus = w.to_vec();
            plus[c][j] += step;
            minus[c][j] -= step;
            out[c][j] = (naive_loss(&plus, batch) - naive_loss(&minus, batch)) / (2.0 * step);
        }
    }
    out
}

pub fn random_tensor(rng: &mut impl Rng, shape: Vec<usize>) -> TensorF32 {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-2.0f32..2.0)).collect();
    TensorF32::new(shape, data).unwrap()
}

pub fn random_head(rng: &mut impl Rng, classes: usize, concepts: usize) -> LinearHead {
    let data = (0..classes * concepts)
        .map(|_| rng.random_range(-3.0..3.0))
        .collect();
    LinearHead::new(
        (0..classes).map(|c| format!("class {c}")).collect(),
        (0..concepts).map(|j| format!("concept {j}")).collect(),
        WeightMatrix::from_vec(classes, concepts, data).unwrap(),
        Normalizer::GlobalAffine,
        PoolingMode::Avg,
    )
    .unwrap()
}

pub fn random_unit_vector(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.0..=1.0)).collect()
}
