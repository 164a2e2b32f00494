//! Test-time intervention: override normalized concept scores and re-predict.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear_head::{LinearHead, Prediction};

/// Sparse score overrides, keyed by concept index. Values are normalized scores in [0, 1].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InterventionRequest {
    #[serde(default)]
    pub overrides: BTreeMap<usize, f64>,
}

impl InterventionRequest {
    pub fn new(overrides: impl IntoIterator<Item = (usize, f64)>) -> Self {
        Self {
            overrides: overrides.into_iter().collect(),
        }
    }

    pub fn validate(&self, num_concepts: usize) -> Result<()> {
        for (&index, &value) in &self.overrides {
            if index >= num_concepts {
                return Err(Error::ConceptOutOfRange {
                    index,
                    concepts: num_concepts,
                });
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::ScoreOutOfRange(value));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionResult {
    pub before: Prediction,
    pub after: Prediction,
    pub changed_class: bool,
    /// Per class: `Σ_j W[c][j] * (new_j - old_j)` over the overridden concepts.
    pub logit_deltas: Vec<f64>,
}

/// Copy of `e` with the overridden entries replaced.
pub fn apply(e: &[f64], request: &InterventionRequest) -> Result<Vec<f64>> {
    request.validate(e.len())?;
    let mut out = e.to_vec();
    for (&j, &value) in &request.overrides {
        out[j] = value;
    }
    Ok(out)
}

pub fn what_if(head: &LinearHead, e: &[f64], request: &InterventionRequest) -> Result<InterventionResult> {
    if e.len() != head.num_concepts() {
        return Err(Error::DimensionMismatch {
            what: "concept vector",
            expected: head.num_concepts(),
            found: e.len(),
        });
    }
    let edited = apply(e, request)?;
    let before = head.forward(e)?;
    let after = head.forward(&edited)?;
    let w = head.weights();
    let logit_deltas = (0..w.rows())
        .map(|c| {
            let mut delta = 0.0;
            for (&j, &value) in &request.overrides {
                delta += w.get(c, j) * (value - e[j]);
            }
            delta
        })
        .collect();
    let changed_class = before.predicted_class != after.predicted_class;
    log::info!(
        "intervention: overrides={:?} class {} -> {}",
        request.overrides,
        before.predicted_class,
        after.predicted_class
    );
    Ok(InterventionResult {
        before,
        after,
        changed_class,
        logit_deltas,
    })
}
