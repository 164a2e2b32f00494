//! Prompt templates for concept elicitation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PLACEHOLDER: &str = "{class_names}";

pub const PER_CLASS_TEMPLATE: &str =
    "Can you provide concise radiology descriptors for {class_names}? List in bullet points with no extra context.";
pub const DISCRIMINATIVE_TEMPLATE: &str =
    "What are the useful visual attributes to distinguish {class_names} in a chest X-ray?";

/// Instructive variants used to check prompt robustness.
pub const INSTRUCTIVE_PROBES: [&str; 3] = [
    "What are the useful radiology descriptors to distinguish {class_names}?",
    "What are the helpful radiology descriptors to distinguish {class_names}?",
    "What are the concise radiology descriptors to distinguish {class_names}?",
];

/// Misleading variants; expected to produce poor concepts.
pub const MISLEADING_PROBES: [&str; 2] = [
    "What are the irrelevant radiology descriptors to distinguish {class_names}?",
    "Give me some random visual features in a photo",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    /// One query per class.
    PerClass,
    /// One query naming every class.
    Discriminative,
    /// Ask the model to pick the `n` most distinctive entries of a candidate list.
    SelectN,
    MisleadingProbe,
}

impl std::str::FromStr for PromptKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_class" => Ok(Self::PerClass),
            "discriminative" => Ok(Self::Discriminative),
            "select_n" => Ok(Self::SelectN),
            "misleading_probe" => Ok(Self::MisleadingProbe),
            other => Err(Error::InvalidTemplate(format!("unknown template kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    kind: PromptKind,
    template: String,
}

impl PromptTemplate {
    pub fn new(kind: PromptKind, template: impl Into<String>) -> Result<Self> {
        let template = template.into();
        let count = template.matches(PLACEHOLDER).count();
        match kind {
            PromptKind::PerClass | PromptKind::Discriminative if count != 1 => {
                return Err(Error::InvalidTemplate(format!(
                    "{kind:?} template needs the {PLACEHOLDER} placeholder exactly once, found {count}"
                )));
            }
            PromptKind::SelectN | PromptKind::MisleadingProbe if count > 1 => {
                return Err(Error::InvalidTemplate(format!(
                    "{PLACEHOLDER} may appear at most once, found {count}"
                )));
            }
            _ => {}
        }
        if template.trim().is_empty() {
            return Err(Error::InvalidTemplate("empty template".into()));
        }
        Ok(Self { kind, template })
    }

    pub fn per_class() -> Self {
        Self::new(PromptKind::PerClass, PER_CLASS_TEMPLATE).expect("valid built-in template")
    }

    pub fn discriminative() -> Self {
        Self::new(PromptKind::Discriminative, DISCRIMINATIVE_TEMPLATE).expect("valid built-in template")
    }

    pub fn select_n(n: usize) -> Self {
        Self::new(
            PromptKind::SelectN,
            format!("Here is a list of concepts. Can you select the most distinctive {n} concepts from them?"),
        )
        .expect("valid built-in template")
    }

    pub fn instructive_probes() -> Vec<Self> {
        INSTRUCTIVE_PROBES
            .iter()
            .map(|t| Self::new(PromptKind::Discriminative, *t).expect("valid built-in template"))
            .collect()
    }

    pub fn misleading_probes() -> Vec<Self> {
        MISLEADING_PROBES
            .iter()
            .map(|t| Self::new(PromptKind::MisleadingProbe, *t).expect("valid built-in template"))
            .collect()
    }

    /// Built-in template for a kind. `select_n` defaults to 5.
    pub fn default_for(kind: PromptKind) -> Self {
        match kind {
            PromptKind::PerClass => Self::per_class(),
            PromptKind::Discriminative => Self::discriminative(),
            PromptKind::SelectN => Self::select_n(5),
            PromptKind::MisleadingProbe => Self::misleading_probes().remove(0),
        }
    }

    pub fn kind(&self) -> PromptKind {
        self.kind
    }

    pub fn template(&self) -> &str {
        &self.template
    }
}

/// Renders the prompt.
///
/// `per_class` takes exactly one class name. `discriminative` and `misleading_probe` join the
/// names with ", ". For `select_n` the names are the candidate concepts, appended one per line
/// as "- " bullets after the instruction.
pub fn build_prompt(template: &PromptTemplate, names: &[&str]) -> Result<String> {
    if names.iter().any(|n| n.trim().is_empty()) {
        return Err(Error::InvalidTemplate("empty class name".into()));
    }
    match template.kind {
        PromptKind::PerClass => {
            if names.len() != 1 {
                return Err(Error::InvalidTemplate(format!(
                    "per_class prompt takes one class name, got {}",
                    names.len()
                )));
            }
            Ok(template.template.replace(PLACEHOLDER, names[0]))
        }
        PromptKind::Discriminative | PromptKind::MisleadingProbe => {
            if names.is_empty() {
                return Err(Error::InvalidTemplate("no class names".into()));
            }
            Ok(template.template.replace(PLACEHOLDER, &names.join(", ")))
        }
        PromptKind::SelectN => {
            if names.is_empty() {
                return Err(Error::InvalidTemplate("no candidate concepts to select from".into()));
            }
            let mut out = template.template.replace(PLACEHOLDER, "");
            for name in names {
                out.push_str("\n- ");
                out.push_str(name);
            }
            Ok(out)
        }
    }
}
