use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::concepts::ConceptSet;
use super::tensor::{probe_tensor_file, read_tensor_file, TensorF32};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub label: usize,
    pub split: Split,
    /// Relative to the manifest's directory.
    pub tensor_path: String,
    /// `[H, W, D]`
    pub shape: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub embedding_dim: usize,
    pub items: Vec<ItemRecord>,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Checks everything that can be checked without touching tensor files.
    pub fn validate(&self) -> Result<()> {
        if self.class_names.len() < 2 {
            return Err(Error::InvalidManifest(format!(
                "need at least 2 classes, found {}",
                self.class_names.len()
            )));
        }
        let mut names = HashSet::new();
        for name in &self.class_names {
            if !names.insert(name.as_str()) {
                return Err(Error::InvalidManifest(format!("duplicate class name {name:?}")));
            }
        }
        if self.embedding_dim == 0 {
            return Err(Error::InvalidManifest("embedding_dim must be positive".into()));
        }
        let mut ids = HashSet::new();
        for item in &self.items {
            if !ids.insert(item.id.as_str()) {
                return Err(Error::DuplicateId(item.id.clone()));
            }
            if item.label >= self.class_names.len() {
                return Err(Error::LabelOutOfRange {
                    id: item.id.clone(),
                    label: item.label,
                    classes: self.class_names.len(),
                });
            }
            if item.shape.contains(&0) {
                return Err(Error::InvalidShape {
                    shape: item.shape.to_vec(),
                    reason: format!("item {:?}: H, W, D must be >= 1", item.id),
                });
            }
            if item.shape[2] != self.embedding_dim {
                return Err(Error::ShapeMismatch {
                    what: format!("item {:?} embedding dim", item.id),
                    expected: vec![self.embedding_dim],
                    found: vec![item.shape[2]],
                });
            }
        }
        Ok(())
    }
}

/// A validated manifest plus the directory its tensor paths resolve against.
/// Feature maps are read on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    manifest: DatasetManifest,
    root: PathBuf,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn items(&self) -> &[ItemRecord] {
        &self.manifest.items
    }

    pub fn item(&self, id: &str) -> Option<&ItemRecord> {
        self.index.get(id).map(|&i| &self.manifest.items[i])
    }

    pub fn tensor_path(&self, item: &ItemRecord) -> PathBuf {
        self.root.join(&item.tensor_path)
    }

    /// Loads and shape-checks the feature map of item `id`.
    pub fn load_tensor(&self, id: &str) -> Result<TensorF32> {
        let item = self.item(id).ok_or_else(|| Error::UnknownItem(id.to_string()))?;
        let tensor = read_tensor_file(self.tensor_path(item))?;
        if tensor.shape() != item.shape {
            return Err(Error::ShapeMismatch {
                what: format!("tensor for item {id:?}"),
                expected: item.shape.to_vec(),
                found: tensor.shape().to_vec(),
            });
        }
        Ok(tensor)
    }

    /// Fails when the concept embeddings live in a different space than the feature maps.
    pub fn check_concepts(&self, concepts: &ConceptSet) -> Result<()> {
        if concepts.dim() != self.manifest.embedding_dim {
            return Err(Error::DimensionMismatch {
                what: "concept embeddings",
                expected: self.manifest.embedding_dim,
                found: concepts.dim(),
            });
        }
        Ok(())
    }
}

/// Parses a manifest and validates it eagerly, including the header and size of every tensor file.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(Error::io_at(manifest_path))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let root = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    dataset_from_manifest(manifest, root)
}

pub fn dataset_from_manifest(manifest: DatasetManifest, root: PathBuf) -> Result<Dataset> {
    manifest.validate()?;
    for item in &manifest.items {
        let found = probe_tensor_file(root.join(&item.tensor_path))?;
        if found != item.shape {
            return Err(Error::ShapeMismatch {
                what: format!("tensor file for item {:?}", item.id),
                expected: item.shape.to_vec(),
                found,
            });
        }
    }
    let index = manifest
        .items
        .iter()
        .enumerate()
        .map(|(i, item)| (item.id.clone(), i))
        .collect();
    Ok(Dataset {
        manifest,
        root,
        index,
    })
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(manifest)?;
    fs::write(path, json).map_err(Error::io_at(path))
}
