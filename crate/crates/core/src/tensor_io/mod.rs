//! On-disk exchange formats: binary tensors, dataset manifests and concept sets.

mod concepts;
mod manifest;
mod tensor;

pub use concepts::{fold_concept_text, load_concepts, save_concepts, ConceptRecord, ConceptSet};
pub use manifest::{
    dataset_from_manifest, load_dataset, save_manifest, Dataset, DatasetManifest, ItemRecord,
    Split,
};
pub use tensor::{
    probe_tensor_file, read_header, read_tensor, read_tensor_file, write_tensor,
    write_tensor_file, TensorF32, MAGIC, MAX_RANK,
};
