//! Majority voting across the teacher runs for one report.
//!
//! The default mode votes on whole parsed label sets: any set produced by a
//! strict plurality of runs wins. When every run disagrees (no strict
//! plurality), voting falls back to per-label majority, which is the natural
//! total extension. OOV names never survive into the voted labels; they are
//! pooled so hallucinations stay countable.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parse::{LabelSet, Provenance};
use crate::vocab::PathologyId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteMode {
    SetLevel,
    PerLabel,
}

/// One teacher run's parsed output for a report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOutput {
    pub report_id: String,
    pub run_index: u8,
    pub label_set: LabelSet,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VoteError {
    #[error("no runs supplied")]
    NoRuns,
    #[error("runs mix report ids: {0} and {1}")]
    MixedReports(String, String),
}

/// Aggregate runs into one label set with provenance `teacher_vote`.
pub fn majority_vote(runs: &[RunOutput], mode: VoteMode) -> Result<LabelSet, VoteError> {
    let first = runs.first().ok_or(VoteError::NoRuns)?;
    for run in runs {
        if run.report_id != first.report_id {
            return Err(VoteError::MixedReports(
                first.report_id.clone(),
                run.report_id.clone(),
            ));
        }
    }

    let labels = match mode {
        VoteMode::SetLevel => set_level(runs).unwrap_or_else(|| per_label(runs)),
        VoteMode::PerLabel => per_label(runs),
    };

    let mut voted = LabelSet::empty(&first.report_id, Provenance::TeacherVote);
    voted.labels = labels;
    // Pool OOV names from all runs for the hallucination report; they never
    // become labels.
    for run in runs {
        voted
            .oov_names
            .extend(run.label_set.oov_names.iter().cloned());
    }
    voted.oov_names.sort();
    Ok(voted)
}

/// Whole-set plurality: the most common label set, provided it is strictly
/// more common than every other. `None` when no strict plurality exists.
fn set_level(runs: &[RunOutput]) -> Option<BTreeSet<PathologyId>> {
    let mut counts: BTreeMap<&BTreeSet<PathologyId>, usize> = BTreeMap::new();
    for run in runs {
        *counts.entry(&run.label_set.labels).or_default() += 1;
    }
    let best = counts.values().copied().max()?;
    let mut winners = counts.iter().filter(|(_, &c)| c == best);
    let (set, _) = winners.next()?;
    if winners.next().is_some() {
        return None;
    }
    Some((*set).clone())
}

/// A label is kept iff it appears in more than half the runs.
fn per_label(runs: &[RunOutput]) -> BTreeSet<PathologyId> {
    let mut counts: BTreeMap<PathologyId, usize> = BTreeMap::new();
    for run in runs {
        for &id in &run.label_set.labels {
            *counts.entry(id).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .filter(|&(_, c)| 2 * c > runs.len())
        .map(|(id, _)| id)
        .collect()
}
