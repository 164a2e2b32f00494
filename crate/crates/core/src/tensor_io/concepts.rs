use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::{read_tensor_file, write_tensor_file, TensorF32};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptRecord {
    pub text: String,
    #[serde(default)]
    pub class_hint: Option<usize>,
}

impl ConceptRecord {
    pub fn new(text: impl Into<String>, class_hint: Option<usize>) -> Self {
        Self {
            text: text.into(),
            class_hint,
        }
    }
}

/// Case- and whitespace-insensitive key used for concept deduplication.
pub fn fold_concept_text(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// N concept texts with their `[N, D]` text embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptSet {
    concepts: Vec<ConceptRecord>,
    embeddings: TensorF32,
}

impl ConceptSet {
    pub fn new(concepts: Vec<ConceptRecord>, embeddings: TensorF32) -> Result<Self> {
        if embeddings.rank() != 2 {
            return Err(Error::InvalidConceptSet(format!(
                "embeddings must be rank 2, got shape {:?}",
                embeddings.shape()
            )));
        }
        if embeddings.shape()[0] != concepts.len() {
            return Err(Error::InvalidConceptSet(format!(
                "{} concepts but {} embedding rows",
                concepts.len(),
                embeddings.shape()[0]
            )));
        }
        let mut seen = HashSet::new();
        for (i, c) in concepts.iter().enumerate() {
            if c.text.trim().is_empty() {
                return Err(Error::InvalidConceptSet(format!("concept {i} has empty text")));
            }
            if !seen.insert(fold_concept_text(&c.text)) {
                return Err(Error::InvalidConceptSet(format!(
                    "duplicate concept text {:?}",
                    c.text
                )));
            }
        }
        for i in 0..concepts.len() {
            if embeddings.row(i).iter().all(|&v| v == 0.0) {
                return Err(Error::ZeroNormConcept(i));
            }
        }
        Ok(Self {
            concepts,
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.shape()[1]
    }

    pub fn concepts(&self) -> &[ConceptRecord] {
        &self.concepts
    }

    pub fn texts(&self) -> Vec<String> {
        self.concepts.iter().map(|c| c.text.clone()).collect()
    }

    pub fn embeddings(&self) -> &TensorF32 {
        &self.embeddings
    }

    pub fn embedding(&self, i: usize) -> &[f32] {
        self.embeddings.row(i)
    }

    /// Keeps the concepts at `indices`, in the order given.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let d = self.dim();
        let mut concepts = Vec::with_capacity(indices.len());
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            let record = self.concepts.get(i).ok_or(Error::ConceptOutOfRange {
                index: i,
                concepts: self.len(),
            })?;
            concepts.push(record.clone());
            data.extend_from_slice(self.embedding(i));
        }
        Self::new(concepts, TensorF32::new(vec![indices.len(), d], data)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ConceptsFile {
    concepts: Vec<ConceptRecord>,
    embeddings_path: String,
}

/// Reads `concepts.json`; `embeddings_path` resolves against the JSON file's directory.
pub fn load_concepts(path: impl AsRef<Path>) -> Result<ConceptSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(Error::io_at(path))?;
    let file: ConceptsFile = serde_json::from_str(&text)?;
    let root = path.parent().unwrap_or_else(|| Path::new(""));
    let embeddings = read_tensor_file(root.join(&file.embeddings_path))?;
    ConceptSet::new(file.concepts, embeddings)
}

/// Writes `concepts.json` at `path` and the embeddings next to it under `embeddings_file`.
pub fn save_concepts(set: &ConceptSet, path: impl AsRef<Path>, embeddings_file: &str) -> Result<()> {
    let path = path.as_ref();
    let root = path.parent().unwrap_or_else(|| Path::new(""));
    write_tensor_file(&set.embeddings, root.join(embeddings_file))?;
    let file = ConceptsFile {
        concepts: set.concepts.clone(),
        embeddings_path: embeddings_file.to_string(),
    };
    fs::write(path, serde_json::to_string_pretty(&file)?).map_err(Error::io_at(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(rows: usize, d: usize) -> TensorF32 {
        let data = (0..rows * d).map(|i| (i + 1) as f32).collect();
        TensorF32::new(vec![rows, d], data).unwrap()
    }

    #[test]
    fn folded_duplicates_rejected() {
        let concepts = vec![
            ConceptRecord::new("Rib  crowding", None),
            ConceptRecord::new(" rib crowding", Some(1)),
        ];
        assert!(ConceptSet::new(concepts, emb(2, 3)).is_err());
    }

    #[test]
    fn zero_norm_row_rejected() {
        let concepts = vec![ConceptRecord::new("a", None), ConceptRecord::new("b", None)];
        let t = TensorF32::new(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            ConceptSet::new(concepts, t),
            Err(Error::ZeroNormConcept(1))
        ));
    }

    #[test]
    fn count_mismatch_rejected() {
        let concepts = vec![ConceptRecord::new("a", None)];
        assert!(ConceptSet::new(concepts, emb(2, 3)).is_err());
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let set = ConceptSet::new(
            vec![ConceptRecord::new("a", Some(0)), ConceptRecord::new("b", None)],
            emb(2, 3),
        )
        .unwrap();
        let path = dir.path().join("concepts.json");
        save_concepts(&set, &path, "concepts.cltensr").unwrap();
        assert_eq!(load_concepts(&path).unwrap(), set);
    }
}
