//! Read-only views over a trained head: global weight rankings, per-instance contribution
//! decompositions and Sankey link data.
//!
//! A weight `W[c][j]` is concept `j`'s importance for class `c`; negative weights read as the
//! absence of the concept supporting the class. For an input `e`, concept `j` contributes
//! `W[c][j] * e[j]` to logit `z_c`, and those contributions sum to `z_c` exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear_head::{LinearHead, WeightMatrix};

/// Fraction of the largest |W| below which Sankey links are dropped by default.
pub const DEFAULT_SANKEY_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedWeight {
    pub concept_index: usize,
    pub text: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub class_index: usize,
    pub class_name: String,
    pub weights: Vec<RankedWeight>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalInterpretation {
    pub classes: Vec<ClassWeights>,
}

/// Concept indices ordered by descending |value|; ties keep the lower index first.
fn rank_by_magnitude(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()));
    order
}

pub fn global_weights(head: &LinearHead, top_k: Option<usize>) -> GlobalInterpretation {
    let w = head.weights();
    let classes = (0..w.rows())
        .map(|c| {
            let row = w.row(c);
            let mut order = rank_by_magnitude(row);
            if let Some(k) = top_k {
                order.truncate(k);
            }
            ClassWeights {
                class_index: c,
                class_name: head.class_names()[c].clone(),
                weights: order
                    .into_iter()
                    .map(|j| RankedWeight {
                        concept_index: j,
                        text: head.concept_texts()[j].clone(),
                        weight: row[j],
                    })
                    .collect(),
            }
        })
        .collect();
    GlobalInterpretation { classes }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub concept_index: usize,
    pub text: String,
    pub score: f64,
    pub weight: f64,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceInterpretation {
    pub item_id: Option<String>,
    pub target_class: usize,
    /// `z_c`: the sum of all N contributions, including any cut by `top_k`.
    pub logit: f64,
    /// Ranked by |contribution|, signs kept.
    pub contributions: Vec<Contribution>,
}

pub fn instance_contributions(
    head: &LinearHead,
    e: &[f64],
    class: usize,
    top_k: Option<usize>,
    item_id: Option<&str>,
) -> Result<InstanceInterpretation> {
    let w = head.weights();
    if class >= w.rows() {
        return Err(Error::ClassOutOfRange {
            class,
            classes: w.rows(),
        });
    }
    if e.len() != w.cols() {
        return Err(Error::DimensionMismatch {
            what: "concept vector",
            expected: w.cols(),
            found: e.len(),
        });
    }
    let row = w.row(class);
    let products: Vec<f64> = row.iter().zip(e).map(|(w, s)| w * s).collect();
    // same order and starting value as WeightMatrix::logits
    let mut logit = 0.0;
    for &p in &products {
        logit += p;
    }
    let mut order = rank_by_magnitude(&products);
    if let Some(k) = top_k {
        order.truncate(k);
    }
    let contributions = order
        .into_iter()
        .map(|j| Contribution {
            concept_index: j,
            text: head.concept_texts()[j].clone(),
            score: e[j],
            weight: row[j],
            contribution: products[j],
        })
        .collect();
    Ok(InstanceInterpretation {
        item_id: item_id.map(str::to_string),
        target_class: class,
        logit,
        contributions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    #[serde(rename = "concept")]
    Concept,
    #[serde(rename = "class")]
    Class,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SankeyNode {
    pub id: String,
    pub kind: NodeKind,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkSign {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "-")]
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SankeyLink {
    pub source: String,
    pub target: String,
    pub magnitude: f64,
    pub sign: LinkSign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SankeyExport {
    pub nodes: Vec<SankeyNode>,
    pub links: Vec<SankeyLink>,
}

impl SankeyExport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

pub fn concept_node_id(j: usize) -> String {
    format!("concept:{j}")
}

pub fn class_node_id(c: usize) -> String {
    format!("class:{c}")
}

/// Default link threshold: 1% of the largest |W|.
pub fn default_sankey_threshold(weights: &WeightMatrix) -> f64 {
    DEFAULT_SANKEY_FRACTION * weights.max_abs()
}

/// Concept-to-class links for every weight with `|W| >= magnitude_threshold`.
///
/// `hard_threshold` zeroes weights with `|W| < τ` before export, a post-hoc alternative to
/// training with an L1 penalty. Zero weights never produce links.
pub fn export_sankey(
    head: &LinearHead,
    magnitude_threshold: Option<f64>,
    hard_threshold: Option<f64>,
) -> SankeyExport {
    let w = head.weights();
    let threshold = magnitude_threshold.unwrap_or_else(|| default_sankey_threshold(w));
    let mut nodes: Vec<SankeyNode> = head
        .concept_texts()
        .iter()
        .enumerate()
        .map(|(j, text)| SankeyNode {
            id: concept_node_id(j),
            kind: NodeKind::Concept,
            label: text.clone(),
        })
        .collect();
    nodes.extend(head.class_names().iter().enumerate().map(|(c, name)| SankeyNode {
        id: class_node_id(c),
        kind: NodeKind::Class,
        label: name.clone(),
    }));

    let mut links = Vec::new();
    for j in 0..w.cols() {
        for c in 0..w.rows() {
            let mut weight = w.get(c, j);
            if hard_threshold.is_some_and(|tau| weight.abs() < tau) {
                weight = 0.0;
            }
            let magnitude = weight.abs();
            if weight == 0.0 || magnitude < threshold {
                continue;
            }
            links.push(SankeyLink {
                source: concept_node_id(j),
                target: class_node_id(c),
                magnitude,
                sign: if weight > 0.0 {
                    LinkSign::Positive
                } else {
                    LinkSign::Negative
                },
            });
        }
    }
    SankeyExport { nodes, links }
}
