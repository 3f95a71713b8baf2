//! Structured parsing of raw LLM text.
//!
//! Two reply shapes exist: the teacher's CSV with
//! `PathologyID,PathologyName,Word` columns (prose explanations around the
//! CSV are expected and ignored), and the student's bare comma-separated name
//! list. Name resolution always goes through the vocabulary; the numeric
//! PathologyID column is advisory only, since names are the prompt's primary
//! currency and lookup misses must surface as out-of-vocabulary.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::{normalize, PathologyId, Vocabulary};

/// Assertion status words the teacher prompt allows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Definite,
    Possible,
    Absent,
}

impl Status {
    fn parse(word: &str) -> Option<Self> {
        match word.trim().to_ascii_uppercase().as_str() {
            "DEFINITE" => Some(Self::Definite),
            "POSSIBLE" => Some(Self::Possible),
            "ABSENT" => Some(Self::Absent),
            _ => None,
        }
    }
}

/// One parsed CSV row. `pathology` is `None` when the surface name did not
/// resolve against the vocabulary (an out-of-vocabulary prediction).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assertion {
    pub pathology: Option<PathologyId>,
    pub surface_name: String,
    pub status: Status,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    TeacherVote,
    Gold,
    ModelPrediction,
}

/// The label set for one report: resolved pathology ids plus the multiset of
/// out-of-vocabulary surface names kept aside for hallucination accounting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub report_id: String,
    pub labels: BTreeSet<PathologyId>,
    #[serde(rename = "oov")]
    pub oov_names: Vec<String>,
    pub provenance: Provenance,
}

impl LabelSet {
    pub fn empty(report_id: impl Into<String>, provenance: Provenance) -> Self {
        Self {
            report_id: report_id.into(),
            labels: BTreeSet::new(),
            oov_names: Vec::new(),
            provenance,
        }
    }
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("no PathologyID,PathologyName,Word header found in reply")]
    NoCsvFound,
}

/// A CSV-region line that was not a valid 3-field row; reported, not fatal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedRow {
    pub line: usize,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TeacherParse {
    pub assertions: Vec<Assertion>,
    pub malformed: Vec<MalformedRow>,
}

fn is_header(line: &str) -> bool {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    fields.len() == 3
        && fields[0].eq_ignore_ascii_case("PathologyID")
        && fields[1].eq_ignore_ascii_case("PathologyName")
        && fields[2].eq_ignore_ascii_case("Word")
}

fn parse_row(line: &str, vocab: &Vocabulary) -> Option<Assertion> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 3 {
        return None;
    }
    let status = Status::parse(fields[2])?;
    let surface_name = fields[1].trim().to_string();
    let pathology = vocab.lookup(&surface_name).map(|e| e.id);
    Some(Assertion {
        pathology,
        surface_name,
        status,
    })
}

/// Extract and parse the teacher CSV region.
///
/// The region starts at the first header line (case-insensitive,
/// whitespace-tolerant) and runs through the last subsequent line that is a
/// valid 3-field row with a DEFINITE/POSSIBLE/ABSENT third field. Non-blank
/// lines inside the region that fail to parse are reported per-row without
/// aborting; prose before and after the region is ignored.
pub fn parse_teacher_csv(raw: &str, vocab: &Vocabulary) -> Result<TeacherParse, ParseError> {
    let lines: Vec<&str> = raw.lines().collect();
    let header = lines
        .iter()
        .position(|l| is_header(l.trim()))
        .ok_or(ParseError::NoCsvFound)?;
    let last_valid = (header + 1..lines.len())
        .rev()
        .find(|&i| parse_row(lines[i], vocab).is_some());

    let mut assertions = Vec::new();
    let mut malformed = Vec::new();
    if let Some(last) = last_valid {
        for (i, line) in lines.iter().enumerate().take(last + 1).skip(header + 1) {
            if line.trim().is_empty() {
                continue;
            }
            match parse_row(line, vocab) {
                Some(a) => assertions.push(a),
                None => malformed.push(MalformedRow {
                    line: i + 1,
                    content: line.to_string(),
                }),
            }
        }
    }
    Ok(TeacherParse {
        assertions,
        malformed,
    })
}

/// Parse the student's comma-separated name list.
///
/// Total function: the first non-empty line is split on commas, each token
/// normalized and resolved; unmatched non-empty tokens become OOV names. The
/// literal token "none" (or an empty reply) yields an empty label set.
pub fn parse_student_list(
    raw: &str,
    vocab: &Vocabulary,
    report_id: &str,
    provenance: Provenance,
) -> LabelSet {
    let mut set = LabelSet::empty(report_id, provenance);
    let Some(line) = raw.lines().find(|l| !l.trim().is_empty()) else {
        return set;
    };
    for token in line.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        let normalized = normalize(token);
        if normalized == "none" {
            continue;
        }
        match vocab.lookup(token) {
            Some(entry) => {
                set.labels.insert(entry.id);
            }
            None => set.oov_names.push(token.to_string()),
        }
    }
    set
}

/// Collapse assertions into the positive label set: DEFINITE and POSSIBLE
/// both count as positive, ABSENT is discarded, and positive OOV assertions
/// are routed to the OOV multiset.
pub fn assertions_to_label_set(
    assertions: &[Assertion],
    report_id: &str,
    provenance: Provenance,
) -> LabelSet {
    let mut set = LabelSet::empty(report_id, provenance);
    for assertion in assertions {
        if assertion.status == Status::Absent {
            continue;
        }
        match assertion.pathology {
            Some(id) => {
                set.labels.insert(id);
            }
            None => set.oov_names.push(assertion.surface_name.clone()),
        }
    }
    set
}
