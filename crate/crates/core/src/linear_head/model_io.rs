use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LinearHead, WeightMatrix};
use crate::concept_space::{Normalizer, PoolingMode};
use crate::error::{Error, Result};
use crate::tensor_io::{read_tensor_file, write_tensor_file, TensorF32};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const WEIGHTS_FILE: &str = "weights.cltensr";

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    class_names: Option<Vec<String>>,
    concept_texts: Option<Vec<String>>,
    pooling_mode: Option<PoolingMode>,
    normalizer: Option<Normalizer>,
    weights_path: Option<String>,
}

/// Writes `model.json` at `path` and the `[classes, concepts]` weight tensor beside it.
pub fn save_model(head: &LinearHead, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let root = path.parent().unwrap_or_else(|| Path::new(""));
    let w = head.weights();
    let data = w.data().iter().map(|&v| v as f32).collect();
    let tensor = TensorF32::new(vec![w.rows(), w.cols()], data)?;
    write_tensor_file(&tensor, root.join(WEIGHTS_FILE))?;

    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        class_names: Some(head.class_names().to_vec()),
        concept_texts: Some(head.concept_texts().to_vec()),
        pooling_mode: Some(head.pooling_mode()),
        normalizer: Some(head.normalizer().clone()),
        weights_path: Some(WEIGHTS_FILE.to_string()),
    };
    fs::write(path, serde_json::to_string_pretty(&file)?).map_err(Error::io_at(path))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LinearHead> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(Error::io_at(path))?;
    let file: ModelFile = serde_json::from_str(&text)?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: MODEL_FORMAT_VERSION,
            found: file.format_version,
        });
    }
    let missing = |field: &str| Error::IncompleteModel(format!("missing {field}"));
    let class_names = file.class_names.ok_or_else(|| missing("class_names"))?;
    let concept_texts = file.concept_texts.ok_or_else(|| missing("concept_texts"))?;
    let pooling_mode = file.pooling_mode.ok_or_else(|| missing("pooling_mode"))?;
    let normalizer = file.normalizer.ok_or_else(|| missing("normalizer"))?;
    let weights_path = file.weights_path.ok_or_else(|| missing("weights_path"))?;

    let root = path.parent().unwrap_or_else(|| Path::new(""));
    let tensor = read_tensor_file(root.join(weights_path))?;
    let expected = vec![class_names.len(), concept_texts.len()];
    if tensor.shape() != expected.as_slice() {
        return Err(Error::ShapeMismatch {
            what: "weight tensor".into(),
            expected,
            found: tensor.shape().to_vec(),
        });
    }
    let data = tensor.data().iter().map(|&v| f64::from(v)).collect();
    let weights = WeightMatrix::from_vec(class_names.len(), concept_texts.len(), data)?;
    LinearHead::new(class_names, concept_texts, weights, normalizer, pooling_mode)
}
