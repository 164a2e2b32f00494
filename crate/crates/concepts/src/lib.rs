//! Concept elicitation: prompt templates, an LLM chat client with offline fixtures, bullet
//! parsing and assembly of descriptors plus text embeddings into a concept set.

pub mod candidates;
pub mod client;
pub mod error;
pub mod parse;
pub mod prompt;

pub use candidates::{
    assemble_concept_set, generate_candidates, select_distinctive, AssembledConcepts, CandidateGroup,
    ConceptCandidates, Provenance,
};
pub use client::{fixture_path, query_llm, record_fixture, sha256_hex, LLMConfig};
pub use error::{Error, Result};
pub use parse::parse_bullets;
pub use prompt::{build_prompt, PromptKind, PromptTemplate};

/// Directory of the fixtures shipped with this crate.
pub fn bundled_fixture_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}
