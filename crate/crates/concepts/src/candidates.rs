//! Candidate descriptors with provenance, selection and assembly into a concept set.

use cbm_core::tensor_io::{fold_concept_text, ConceptRecord, ConceptSet, TensorF32};
use serde::{Deserialize, Serialize};

use crate::client::{query_llm, sha256_hex, LLMConfig};
use crate::error::{Error, Result};
use crate::parse::{parse_bullets, MAX_DESCRIPTOR_CHARS};
use crate::prompt::{build_prompt, PromptKind, PromptTemplate};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub prompt: String,
    pub prompt_sha256: String,
    pub response_sha256: String,
}

impl Provenance {
    pub fn new(prompt: &str, response: &str) -> Self {
        Self {
            prompt: prompt.to_string(),
            prompt_sha256: sha256_hex(prompt),
            response_sha256: sha256_hex(response),
        }
    }
}

/// Descriptors returned by one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateGroup {
    /// Set for per-class prompts; `None` when one prompt covers every class.
    pub class_index: Option<usize>,
    pub class_name: Option<String>,
    pub descriptors: Vec<String>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptCandidates {
    pub class_names: Vec<String>,
    pub groups: Vec<CandidateGroup>,
}

impl ConceptCandidates {
    /// Total descriptor count, duplicates across groups included.
    pub fn len(&self) -> usize {
        self.groups.iter().map(|g| g.descriptors.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Descriptors in group order, paired with their class hint and provenance.
    pub fn flatten(&self) -> Vec<(&str, Option<usize>, &Provenance)> {
        self.groups
            .iter()
            .flat_map(|g| {
                g.descriptors
                    .iter()
                    .map(move |d| (d.as_str(), g.class_index, &g.provenance))
            })
            .collect()
    }
}

/// Parses a response and enforces the descriptor length limit.
pub fn descriptors_from_response(response: &str) -> Vec<String> {
    parse_bullets(response)
        .into_iter()
        .filter(|d| {
            let keep = d.chars().count() <= MAX_DESCRIPTOR_CHARS;
            if !keep {
                log::warn!("dropping descriptor longer than {MAX_DESCRIPTOR_CHARS} chars: {d:?}");
            }
            keep
        })
        .collect()
}

fn query_group(
    prompt: String,
    class: Option<(usize, &str)>,
    config: &LLMConfig,
) -> Result<CandidateGroup> {
    let response = query_llm(&prompt, config)?;
    let descriptors = descriptors_from_response(&response);
    if descriptors.is_empty() {
        log::warn!("no bullet descriptors in response to prompt {}", sha256_hex(&prompt));
    }
    Ok(CandidateGroup {
        class_index: class.map(|(i, _)| i),
        class_name: class.map(|(_, n)| n.to_string()),
        descriptors,
        provenance: Provenance::new(&prompt, &response),
    })
}

/// Queries the model with `template` for `class_names`.
///
/// `per_class` templates issue one query per class; other kinds issue a single query.
pub fn generate_candidates(
    class_names: &[&str],
    template: &PromptTemplate,
    config: &LLMConfig,
) -> Result<ConceptCandidates> {
    if class_names.is_empty() {
        return Err(Error::InvalidTemplate("no class names".into()));
    }
    let groups = match template.kind() {
        PromptKind::PerClass => class_names
            .iter()
            .enumerate()
            .map(|(i, name)| query_group(build_prompt(template, &[name])?, Some((i, name)), config))
            .collect::<Result<Vec<_>>>()?,
        PromptKind::SelectN => {
            return Err(Error::InvalidTemplate(
                "select_n prompts take a candidate list; use select_distinctive".into(),
            ))
        }
        PromptKind::Discriminative | PromptKind::MisleadingProbe => {
            vec![query_group(build_prompt(template, class_names)?, None, config)?]
        }
    };
    Ok(ConceptCandidates {
        class_names: class_names.iter().map(|s| s.to_string()).collect(),
        groups,
    })
}

/// One select-N round over every candidate descriptor.
///
/// Selected descriptors inherit the class hint of the first candidate they match
/// case-insensitively; descriptors the model invents get no hint.
pub fn select_distinctive(candidates: &ConceptCandidates, n: usize, config: &LLMConfig) -> Result<ConceptCandidates> {
    if n == 0 {
        return Err(Error::InvalidTemplate("select_n needs n >= 1".into()));
    }
    let flat = candidates.flatten();
    let names: Vec<&str> = flat.iter().map(|(d, _, _)| *d).collect();
    let prompt = build_prompt(&PromptTemplate::select_n(n), &names)?;
    let response = query_llm(&prompt, config)?;
    let provenance = Provenance::new(&prompt, &response);
    let selected = descriptors_from_response(&response);
    if selected.len() != n {
        log::warn!("asked for {n} concepts, model returned {}", selected.len());
    }

    let hint_of = |d: &str| {
        let folded = fold_concept_text(d);
        flat.iter()
            .find(|(c, _, _)| fold_concept_text(c) == folded)
            .and_then(|(_, hint, _)| *hint)
    };
    // regroup by hint in first-appearance order so per-class provenance stays explicit
    let mut groups: Vec<CandidateGroup> = Vec::new();
    for d in selected {
        let hint = hint_of(&d);
        match groups.iter_mut().find(|g| g.class_index == hint) {
            Some(g) => g.descriptors.push(d),
            None => groups.push(CandidateGroup {
                class_index: hint,
                class_name: hint.map(|i| candidates.class_names[i].clone()),
                descriptors: vec![d],
                provenance: provenance.clone(),
            }),
        }
    }
    Ok(ConceptCandidates {
        class_names: candidates.class_names.clone(),
        groups,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledConcepts {
    pub concepts: ConceptSet,
    /// Parallel to `concepts`.
    pub provenance: Vec<Provenance>,
}

/// Pairs descriptors (in `flatten` order) with embedding rows.
///
/// `embeddings` must have one row per descriptor before deduplication. A descriptor repeated
/// across groups is kept once with its first class hint and its first embedding row.
pub fn assemble_concept_set(candidates: &ConceptCandidates, embeddings: &TensorF32) -> Result<AssembledConcepts> {
    let flat = candidates.flatten();
    let shape = embeddings.shape();
    if shape.len() != 2 {
        return Err(cbm_core::Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "concept embeddings must be [N, D]".into(),
        }
        .into());
    }
    if shape[0] != flat.len() {
        return Err(Error::CountMismatch {
            descriptors: flat.len(),
            rows: shape[0],
        });
    }
    let mut seen = std::collections::HashSet::new();
    let mut records = Vec::new();
    let mut provenance = Vec::new();
    let mut data = Vec::new();
    for (i, (text, hint, prov)) in flat.into_iter().enumerate() {
        if !seen.insert(fold_concept_text(text)) {
            log::warn!("duplicate descriptor {text:?} dropped; first occurrence kept");
            continue;
        }
        records.push(ConceptRecord::new(text, hint));
        provenance.push(prov.clone());
        data.extend_from_slice(embeddings.row(i));
    }
    let rows = records.len();
    let concepts = ConceptSet::new(records, TensorF32::new(vec![rows, shape[1]], data)?)?;
    Ok(AssembledConcepts { concepts, provenance })
}
