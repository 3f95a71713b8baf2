//! Prompt rendering for the two pipeline templates.
//!
//! The template bodies are embedded constants; golden copies live under
//! `templates/` at the repository root and a test asserts the two stay
//! byte-identical. Rendering substitutes `{IMPRESSION}` with the impression
//! verbatim and `{LIST OF PATHOLOGIES}` with the comma-separated canonical
//! names in vocabulary id order, and changes no other byte.

use thiserror::Error;

use crate::vocab::Vocabulary;

pub const IMPRESSION_PLACEHOLDER: &str = "{IMPRESSION}";
pub const PATHOLOGY_LIST_PLACEHOLDER: &str = "{LIST OF PATHOLOGIES}";

/// Teacher-labeling prompt: asks for a PathologyID,PathologyName,Word CSV
/// with DEFINITE/POSSIBLE/ABSENT statuses, explanations allowed around it.
pub const TEACHER_LABELING_TEMPLATE: &str = r#"You are a musculoskeletal radiologist reading the radiology impression below. Your task is to list only those pathologic conditions from the list of pathologies below that are explicitly mentioned in the radiology impression as either possible or definite. The pathology should be included strictly if it is specifically named in the report. Do not infer the presence or absence of a pathology that is not explicitly named in the report. If a pathology is not clearly mentioned, it should not be included in the output. If a pathology is specifically excluded with phrases such as "no fracture", or "without evidence of", or "no evidence of", or "without", or "within normal limits", please list that pathology as ABSENT. Present your answer in a CSV format with the columns PathologyID, PathologyName, and Word. Use 'DEFINITE' as the "Word" if the pathology is explicitly mentioned as confirmed present, and 'POSSIBLE' if the pathology is explicitly suggested as a possibility. If a pathology is explicitly excluded, list it as 'ABSENT'. Please explain your answers. BEGIN RADIOLOGY IMPRESSION {IMPRESSION} END RADIOLOGY IMPRESSION List of Pathologies: {LIST OF PATHOLOGIES}."#;

/// Fine-tune prompt: asks for a bare comma-separated list of present or
/// possible pathology names, exclusions omitted.
pub const FINE_TUNE_TEMPLATE: &str = r#"You are a musculoskeletal radiologist. Your task is to list only those pathologic conditions from the list of pathologies that are explicitly mentioned in the radiology impression as either possible or definite. The pathology should be included strictly if it is specifically named in the report. Do not infer the presence or absence of a pathology that is not explicitly named in the report. If a pathology is not clearly mentioned, it should not be included in the output. If a pathology is specifically excluded with phrases such as "no fracture", or "without evidence of", or "no evidence of", or "without", or "within normal limits", please do not list that pathology. Present your answer in a comma-separated list of pathology names. Include the pathology name in the output list if it is explicitly mentioned as confirmed present, or if it is explicitly suggested as a possibility. If a pathology is explicitly excluded, exclude it from the output list. BEGIN RADIOLOGY IMPRESSION {IMPRESSION} END RADIOLOGY IMPRESSION.  Here is a List of Pathologies: {LIST OF PATHOLOGIES}."#;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateKind {
    TeacherLabeling,
    FineTune,
}

#[derive(Debug, Clone, Copy)]
pub struct PromptTemplate {
    pub kind: TemplateKind,
    pub body: &'static str,
}

impl PromptTemplate {
    pub fn teacher_labeling() -> Self {
        Self {
            kind: TemplateKind::TeacherLabeling,
            body: TEACHER_LABELING_TEMPLATE,
        }
    }

    pub fn fine_tune() -> Self {
        Self {
            kind: TemplateKind::FineTune,
            body: FINE_TUNE_TEMPLATE,
        }
    }

    pub fn of(kind: TemplateKind) -> Self {
        match kind {
            TemplateKind::TeacherLabeling => Self::teacher_labeling(),
            TemplateKind::FineTune => Self::fine_tune(),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("impression is empty after trimming")]
    EmptyImpression,
}

/// The pathology list as rendered into prompts: canonical names in id order,
/// joined by ", ".
pub fn pathology_list(vocab: &Vocabulary) -> String {
    vocab.canonical_names().join(", ")
}

/// Substitute both placeholders. The impression goes in verbatim (only its
/// emptiness is checked); every other byte of the template is preserved.
pub fn render(
    template: &PromptTemplate,
    impression: &str,
    vocab: &Vocabulary,
) -> Result<String, PromptError> {
    if impression.trim().is_empty() {
        return Err(PromptError::EmptyImpression);
    }
    Ok(template
        .body
        .replacen(IMPRESSION_PLACEHOLDER, impression, 1)
        .replacen(PATHOLOGY_LIST_PLACEHOLDER, &pathology_list(vocab), 1))
}
