//! The pathology vocabulary: 133 canonical differential diagnoses in 12
//! categories, loaded from a tab-separated data file so the list can be
//! edited without recompiling.
//!
//! Name matching is exact-after-normalization plus an explicit alias table.
//! There is deliberately no fuzzy matching: the teacher prompt only wants
//! pathologies that are specifically named, so a near-miss must surface as
//! out-of-vocabulary rather than silently snap to a neighbour.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Expected entry count when strict validation is on.
pub const CANONICAL_ENTRY_COUNT: usize = 133;

/// Stable vocabulary id, assigned by data-file listing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PathologyId(pub u32);

impl fmt::Display for PathologyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathologyEntry {
    pub id: PathologyId,
    pub canonical_name: String,
    pub category: String,
    pub aliases: BTreeSet<String>,
}

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("line {line}: name {name:?} already resolves to another entry")]
    DuplicateName { line: usize, name: String },
    #[error("vocabulary has {found} entries, expected {expected} (strict mode)")]
    BadCount { found: usize, expected: usize },
    #[error("line {line}: {message}")]
    MalformedFile { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Immutable after load; shared freely across threads.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    entries: Vec<PathologyEntry>,
    index: HashMap<String, u32>,
    by_id: HashMap<u32, usize>,
}

/// Case-fold, trim, collapse internal whitespace runs to one space, and map
/// typographic apostrophes/quotes to the ASCII apostrophe. Idempotent.
pub fn normalize(raw: &str) -> String {
    let mapped: String = raw
        .chars()
        .map(|c| match c {
            '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{201B}' | '\u{201C}' | '\u{201D}'
            | '\u{201E}' | '\u{201F}' | '\u{2032}' | '\u{00B4}' => '\'',
            _ => c,
        })
        .collect();
    let lowered = mapped.to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    let mut pending_space = false;
    for c in lowered.chars() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(c);
        }
    }
    out
}

impl Vocabulary {
    /// Load and validate a vocabulary file. With `strict` on, the entry count
    /// must be exactly [`CANONICAL_ENTRY_COUNT`]. Fails atomically: any
    /// violation returns an error and no vocabulary.
    pub fn load(path: &Path, strict: bool) -> Result<Self, VocabError> {
        Self::parse(&fs::read_to_string(path)?, strict)
    }

    /// Parse vocabulary file content. One record per line:
    /// `id<TAB>canonical_name<TAB>category<TAB>alias1|alias2|...`
    /// (alias field may be empty or absent). `#` starts a comment line.
    pub fn parse(content: &str, strict: bool) -> Result<Self, VocabError> {
        let mut entries = Vec::new();
        let mut index: HashMap<String, u32> = HashMap::new();
        let mut by_id: HashMap<u32, usize> = HashMap::new();

        for (lineno, raw_line) in content.lines().enumerate() {
            let line_display = lineno + 1;
            let line = raw_line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 3 || fields.len() > 4 {
                return Err(VocabError::MalformedFile {
                    line: line_display,
                    message: format!("expected 3 or 4 tab-separated fields, got {}", fields.len()),
                });
            }
            let id: u32 = fields[0]
                .trim()
                .parse()
                .map_err(|_| VocabError::MalformedFile {
                    line: line_display,
                    message: format!("bad id {:?}", fields[0]),
                })?;
            if id == 0 {
                return Err(VocabError::MalformedFile {
                    line: line_display,
                    message: "id must be >= 1".into(),
                });
            }
            let canonical_name = normalize(fields[1]);
            if canonical_name.is_empty() {
                return Err(VocabError::MalformedFile {
                    line: line_display,
                    message: "empty canonical name".into(),
                });
            }
            let category = fields[2].trim().to_string();
            if category.is_empty() {
                return Err(VocabError::MalformedFile {
                    line: line_display,
                    message: "empty category".into(),
                });
            }
            let mut aliases = BTreeSet::new();
            if let Some(alias_field) = fields.get(3) {
                for alias in alias_field.split('|') {
                    let alias = normalize(alias);
                    if !alias.is_empty() {
                        aliases.insert(alias);
                    }
                }
            }

            if by_id.insert(id, entries.len()).is_some() {
                return Err(VocabError::MalformedFile {
                    line: line_display,
                    message: format!("duplicate id {id}"),
                });
            }
            if index.insert(canonical_name.clone(), id).is_some() {
                return Err(VocabError::DuplicateName {
                    line: line_display,
                    name: canonical_name,
                });
            }
            for alias in &aliases {
                if index.insert(alias.clone(), id).is_some() {
                    return Err(VocabError::DuplicateName {
                        line: line_display,
                        name: alias.clone(),
                    });
                }
            }
            entries.push(PathologyEntry {
                id: PathologyId(id),
                canonical_name,
                category,
                aliases,
            });
        }

        if strict && entries.len() != CANONICAL_ENTRY_COUNT {
            return Err(VocabError::BadCount {
                found: entries.len(),
                expected: CANONICAL_ENTRY_COUNT,
            });
        }
        Ok(Self {
            entries,
            index,
            by_id,
        })
    }

    /// Resolve a surface name to its entry via exact-after-normalization
    /// match on canonical names and aliases. `None` signals an
    /// out-of-vocabulary (possibly hallucinated) name; callers decide policy.
    pub fn lookup(&self, name: &str) -> Option<&PathologyEntry> {
        let id = *self.index.get(&normalize(name))?;
        self.entry(PathologyId(id))
    }

    pub fn entry(&self, id: PathologyId) -> Option<&PathologyEntry> {
        self.by_id.get(&id.0).map(|&i| &self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in listing (id-assignment) order.
    pub fn iter(&self) -> impl Iterator<Item = &PathologyEntry> {
        self.entries.iter()
    }

    /// Canonical names in listing order, as rendered into prompts.
    pub fn canonical_names(&self) -> Vec<&str> {
        self.entries
            .iter()
            .map(|e| e.canonical_name.as_str())
            .collect()
    }

    /// Serialize back to the file format; `parse(to_tsv(v))` reproduces `v`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let aliases: Vec<&str> = e.aliases.iter().map(|s| s.as_str()).collect();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.id,
                e.canonical_name,
                e.category,
                aliases.join("|")
            ));
        }
        out
    }
}
