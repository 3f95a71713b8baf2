//! # dxtract
//!
//! Library behind the `dxtract` CLI: builds training data for an in-house
//! differential-diagnosis extraction model out of radiology impressions, and
//! provides the numeric core used to reason about the QLoRA fine-tuning setup.
//!
//! The pipeline stages, in the order the CLI wires them:
//!
//! 1. [`vocab`] — the 133-pathology vocabulary with categories, aliases, and
//!    exact-after-normalization name resolution.
//! 2. [`prompt`] — byte-exact rendering of the teacher-labeling and fine-tune
//!    prompt templates.
//! 3. [`gateway`] — chat-completion backends: a retrying HTTP client and a
//!    deterministic mock for offline runs.
//! 4. [`parse`] — turns raw completions into structured assertions and label
//!    sets (teacher CSV format and student comma-list format).
//! 5. [`vote`] — majority voting across the three teacher runs per report.
//! 6. [`split`] — iterative stratification into train/validation parts.
//! 7. [`store`] — corpus ingestion, label files, fine-tune pair emission, and
//!    run manifests (all JSONL).
//! 8. [`metrics`] — micro/macro precision/recall/F1, per-modality breakdowns,
//!    and confusion-pair error analysis.
//! 9. [`qlora`] — NF4 blockwise quantization, LoRA adapter algebra,
//!    trainable-parameter accounting, and prompt-masked cross-entropy.
//!
//! Everything is deterministic given explicit seeds; no stage talks to the
//! network unless the HTTP backend is selected. Input reports are assumed to
//! be de-identified before they reach this library.

pub mod gateway;
pub mod metrics;
pub mod parse;
pub mod prompt;
pub mod qlora;
pub mod split;
pub mod store;
pub mod vocab;
pub mod vote;

pub use vocab::{PathologyEntry, PathologyId, Vocabulary};
