//! Corpus persistence and dataset assembly.
//!
//! Every artifact is JSONL, one record per line, so files stream and diff
//! cleanly. Raw per-run teacher outputs are always persisted alongside voted
//! labels: voting can be re-run from disk without re-querying a backend.
//! Inputs are assumed de-identified; nothing here inspects or scrubs PHI.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::metrics::Modality;
use crate::parse::{parse_student_list, LabelSet};
use crate::prompt::{render, PromptTemplate};
use crate::split::SplitSpec;
use crate::vocab::Vocabulary;
use crate::vote::VoteMode;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("line {line}: duplicate report_id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: missing or invalid field {field:?}")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: malformed JSON: {message}")]
    MalformedJson { line: usize, message: String },
    #[error("no label set for report {0}")]
    MissingLabels(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One radiology report: identifier, study modality, optional anatomy tag,
/// and the impression text the pipeline runs on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub report_id: String,
    pub modality: Modality,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anatomy: Option<String>,
    pub impression: String,
}

/// One fine-tune example: rendered prompt plus the completion the student
/// should produce (sorted canonical names, or "None").
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineTunePair {
    pub prompt: String,
    pub completion: String,
}

/// Raw teacher output for one (report, run) cell, recorded verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRunRecord {
    pub report_id: String,
    pub run_index: u8,
    pub raw_text: String,
}

/// Read and validate a corpus file. Records come back in file order;
/// duplicate ids, missing fields, and unparseable lines are rejected with
/// their line number.
pub fn ingest_reports(path: &Path) -> Result<Vec<ReportRecord>, StoreError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut records = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let display = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| StoreError::MalformedJson {
                line: display,
                message: e.to_string(),
            })?;
        let report_id = value["report_id"]
            .as_str()
            .filter(|s| !s.is_empty())
            .ok_or(StoreError::MissingField {
                line: display,
                field: "report_id",
            })?
            .to_string();
        let modality: Modality = value["modality"]
            .as_str()
            .and_then(|s| s.parse().ok())
            .ok_or(StoreError::MissingField {
                line: display,
                field: "modality",
            })?;
        let impression = value["impression"]
            .as_str()
            .filter(|s| !s.trim().is_empty())
            .ok_or(StoreError::MissingField {
                line: display,
                field: "impression",
            })?
            .to_string();
        let anatomy = value["anatomy"].as_str().map(str::to_string);
        if !seen.insert(report_id.clone()) {
            return Err(StoreError::DuplicateId {
                line: display,
                id: report_id,
            });
        }
        records.push(ReportRecord {
            report_id,
            modality,
            anatomy,
            impression,
        });
    }
    Ok(records)
}

pub fn write_reports(records: &[ReportRecord], path: &Path) -> Result<(), StoreError> {
    write_jsonl(records, path)
}

pub fn write_label_sets(sets: &[LabelSet], path: &Path) -> Result<(), StoreError> {
    write_jsonl(sets, path)
}

pub fn read_label_sets(path: &Path) -> Result<Vec<LabelSet>, StoreError> {
    read_jsonl(path)
}

pub fn write_raw_runs(runs: &[RawRunRecord], path: &Path) -> Result<(), StoreError> {
    write_jsonl(runs, path)
}

pub fn read_raw_runs(path: &Path) -> Result<Vec<RawRunRecord>, StoreError> {
    read_jsonl(path)
}

pub fn write_finetune_pairs(pairs: &[FineTunePair], path: &Path) -> Result<(), StoreError> {
    write_jsonl(pairs, path)
}

pub fn read_finetune_pairs(path: &Path) -> Result<Vec<FineTunePair>, StoreError> {
    read_jsonl(path)
}

fn write_jsonl<T: Serialize>(records: &[T], path: &Path) -> Result<(), StoreError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut out, record).map_err(|e| StoreError::MalformedJson {
            line: 0,
            message: e.to_string(),
        })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, StoreError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line).map_err(|e| StoreError::MalformedJson {
                line: lineno + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(records)
}

/// Build one fine-tune pair per report: the rendered student prompt and a
/// completion of alphabetically sorted canonical names ("None" when the voted
/// set is empty). Every completion parses back to its source label set.
pub fn emit_finetune_pairs(
    reports: &[ReportRecord],
    labels: &BTreeMap<String, LabelSet>,
    vocab: &Vocabulary,
) -> Result<Vec<FineTunePair>, StoreError> {
    let template = PromptTemplate::fine_tune();
    let mut pairs = Vec::with_capacity(reports.len());
    for report in reports {
        let label_set = labels
            .get(&report.report_id)
            .ok_or_else(|| StoreError::MissingLabels(report.report_id.clone()))?;
        let prompt =
            render(&template, &report.impression, vocab).map_err(|_| StoreError::MissingField {
                line: 0,
                field: "impression",
            })?;
        let mut names: Vec<&str> = label_set
            .labels
            .iter()
            .filter_map(|id| vocab.entry(*id).map(|e| e.canonical_name.as_str()))
            .collect();
        names.sort_unstable();
        let completion = if names.is_empty() {
            "None".to_string()
        } else {
            names.join(", ")
        };
        debug_assert_eq!(
            parse_student_list(&completion, vocab, &report.report_id, label_set.provenance).labels,
            label_set.labels
        );
        pairs.push(FineTunePair { prompt, completion });
    }
    Ok(pairs)
}

/// Reproducibility record for one pipeline command: configuration, content
/// hashes of the templates and vocabulary, and digests of every output file.
/// Two runs with identical inputs differ only in `created_unix_secs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub created_unix_secs: u64,
    pub command: String,
    pub teacher_template_sha256: String,
    pub finetune_template_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocabulary_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runs_per_report: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vote_mode: Option<VoteMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSpec>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            created_unix_secs: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            command: command.into(),
            teacher_template_sha256: sha256_hex(
                crate::prompt::TEACHER_LABELING_TEMPLATE.as_bytes(),
            ),
            finetune_template_sha256: sha256_hex(crate::prompt::FINE_TUNE_TEMPLATE.as_bytes()),
            vocabulary_sha256: None,
            backend: None,
            model: None,
            runs_per_report: None,
            temperature: None,
            seed: None,
            vote_mode: None,
            split: None,
            outputs: BTreeMap::new(),
        }
    }

    /// Record a produced file under its file name.
    pub fn add_output(&mut self, path: &Path) -> Result<(), StoreError> {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.outputs.insert(name, sha256_file(path)?);
        Ok(())
    }

    /// Re-hash every recorded output and compare against the stored digests.
    pub fn verify_outputs(&self, dir: &Path) -> Result<bool, StoreError> {
        for (name, digest) in &self.outputs {
            if sha256_file(&dir.join(name))? != *digest {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn write(&self, path: &Path) -> Result<(), StoreError> {
        let json = serde_json::to_string_pretty(self).map_err(|e| StoreError::MalformedJson {
            line: 0,
            message: e.to_string(),
        })?;
        fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, StoreError> {
        let content = fs::read_to_string(path)?;
        serde_json::from_str(&content).map_err(|e| StoreError::MalformedJson {
            line: 0,
            message: e.to_string(),
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String, StoreError> {
    Ok(sha256_hex(&fs::read(path)?))
}
