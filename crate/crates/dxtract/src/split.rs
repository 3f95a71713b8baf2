//! Train/validation partitioning by iterative stratification.
//!
//! The greedy first-order algorithm: keep fractional desired counts per part,
//! overall and per label; repeatedly take the label with the fewest remaining
//! unassigned examples and deal its examples to the part that most wants that
//! label, decrementing every desideratum the example touches. Examples with
//! no labels are dealt last against the overall desiderata. Second-order mode
//! runs the same procedure over co-occurring label pairs first, then over
//! single labels.
//!
//! All ties break deterministically — lowest label id, then greatest
//! remaining overall desired count, then lowest part index — so a given
//! corpus and spec always reproduce the same split. The spec's seed is
//! recorded for manifests and for seeding randomized baselines; the
//! stratifier itself never draws randomness.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::PathologyId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratifyOrder {
    FirstOrder,
    SecondOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: Vec<f64>,
    pub seed: u64,
    pub order: StratifyOrder,
}

impl Default for SplitSpec {
    fn default() -> Self {
        // Training/validation ratio used for the 31,056-report corpus:
        // 18,538 / 12,518.
        Self {
            ratios: vec![0.5969, 0.4031],
            seed: 0,
            order: StratifyOrder::FirstOrder,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), SplitError> {
        if self.ratios.len() < 2 {
            return Err(SplitError::BadRatios("need at least 2 parts".into()));
        }
        if self.ratios.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(SplitError::BadRatios("ratios must be positive".into()));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SplitError::BadRatios(format!(
                "ratios sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SplitError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("bad ratios: {0}")]
    BadRatios(String),
    #[error("duplicate report id {0}")]
    DuplicateReportId(String),
}

/// The computed partition: one part index per report, in corpus order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub assignments: Vec<(String, usize)>,
    pub part_count: usize,
}

impl SplitAssignment {
    pub fn part_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.part_count];
        for &(_, part) in &self.assignments {
            sizes[part] += 1;
        }
        sizes
    }

    pub fn part_of(&self, report_id: &str) -> Option<usize> {
        self.assignments
            .iter()
            .find(|(id, _)| id == report_id)
            .map(|&(_, p)| p)
    }
}

type Corpus = [(String, BTreeSet<PathologyId>)];

/// Stratification key: (l, l) for a single label, (a, b) with a < b for a
/// co-occurring pair. The two forms never collide.
type Key = (PathologyId, PathologyId);

/// Greedy iterative stratification. Deterministic in (corpus order, spec).
pub fn iterative_stratify(
    corpus: &Corpus,
    spec: &SplitSpec,
) -> Result<SplitAssignment, SplitError> {
    spec.validate()?;
    if corpus.is_empty() {
        return Err(SplitError::EmptyCorpus);
    }
    {
        let mut seen = BTreeSet::new();
        for (id, _) in corpus {
            if !seen.insert(id) {
                return Err(SplitError::DuplicateReportId(id.clone()));
            }
        }
    }

    let parts = spec.ratios.len();

    // Key families processed in order: pairs first in second-order mode, then
    // single labels. Desiderata are shared across families, so an example
    // assigned during the pair phase has already consumed its share of every
    // key it carries by the time the single-label phase runs.
    let mut key_examples: BTreeMap<Key, Vec<usize>> = BTreeMap::new();
    let mut families: Vec<Vec<Key>> = Vec::new();
    if spec.order == StratifyOrder::SecondOrder {
        for (i, (_, labels)) in corpus.iter().enumerate() {
            let labels: Vec<_> = labels.iter().copied().collect();
            for (a_idx, &a) in labels.iter().enumerate() {
                for &b in &labels[a_idx + 1..] {
                    key_examples.entry((a, b)).or_default().push(i);
                }
            }
        }
        families.push(key_examples.keys().copied().collect());
    }
    for (i, (_, labels)) in corpus.iter().enumerate() {
        for &l in labels {
            key_examples.entry((l, l)).or_default().push(i);
        }
    }
    families.push(
        key_examples
            .keys()
            .copied()
            .filter(|(a, b)| a == b)
            .collect(),
    );

    let mut example_keys: Vec<Vec<Key>> = vec![Vec::new(); corpus.len()];
    for (key, examples) in &key_examples {
        for &i in examples {
            example_keys[i].push(*key);
        }
    }

    let mut desired: BTreeMap<Key, Vec<f64>> = key_examples
        .iter()
        .map(|(k, ex)| {
            (
                *k,
                spec.ratios.iter().map(|r| r * ex.len() as f64).collect(),
            )
        })
        .collect();
    let mut remaining: BTreeMap<Key, usize> =
        key_examples.iter().map(|(k, ex)| (*k, ex.len())).collect();
    let mut desired_overall: Vec<f64> = spec
        .ratios
        .iter()
        .map(|r| r * corpus.len() as f64)
        .collect();
    let mut assigned: Vec<Option<usize>> = vec![None; corpus.len()];

    for family in &families {
        loop {
            // Rarest key first; the family list is in ascending key order, so
            // a strict < keeps ties on the lowest id.
            let mut pick: Option<(Key, usize)> = None;
            for &key in family {
                let r = remaining[&key];
                if r > 0 && pick.is_none_or(|(_, best)| r < best) {
                    pick = Some((key, r));
                }
            }
            let Some((key, _)) = pick else { break };

            // Examples listed in corpus order.
            for &example in &key_examples[&key] {
                if assigned[example].is_some() {
                    continue;
                }
                let part = argmax_tiebreak(&desired[&key], Some(&desired_overall));
                assigned[example] = Some(part);
                desired_overall[part] -= 1.0;
                for k in &example_keys[example] {
                    desired.get_mut(k).unwrap()[part] -= 1.0;
                    *remaining.get_mut(k).unwrap() -= 1;
                }
            }
        }
    }

    // Label-free examples go to the part with the greatest remaining overall
    // desired count.
    for (i, slot) in assigned.iter_mut().enumerate() {
        if slot.is_none() {
            debug_assert!(corpus[i].1.is_empty());
            let part = argmax_tiebreak(&desired_overall, None);
            desired_overall[part] -= 1.0;
            *slot = Some(part);
        }
    }

    let assignments = corpus
        .iter()
        .zip(&assigned)
        .map(|((id, _), part)| (id.clone(), part.expect("every example assigned")))
        .collect();
    Ok(SplitAssignment {
        assignments,
        part_count: parts,
    })
}

/// Index of the maximum value; ties resolved by the secondary score, then by
/// lowest index.
fn argmax_tiebreak(primary: &[f64], secondary: Option<&[f64]>) -> usize {
    let mut best = 0usize;
    for i in 1..primary.len() {
        let better = primary[i] > primary[best]
            || (primary[i] == primary[best] && secondary.is_some_and(|s| s[i] > s[best]));
        if better {
            best = i;
        }
    }
    best
}

/// Per-label deviation of achieved part fractions from the desired ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelQuality {
    pub support: usize,
    pub fractions: Vec<f64>,
    pub deviations: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub per_label: BTreeMap<PathologyId, LabelQuality>,
    pub max_deviation: f64,
    pub mean_deviation: f64,
}

/// Measure |achieved_fraction − desired_ratio| for every (label, part) cell.
/// Labels with zero support have no defined fraction and are excluded.
pub fn split_quality(
    assignment: &SplitAssignment,
    corpus: &Corpus,
    spec: &SplitSpec,
) -> QualityReport {
    let part_of: BTreeMap<&str, usize> = assignment
        .assignments
        .iter()
        .map(|(id, p)| (id.as_str(), *p))
        .collect();

    let mut per_label_counts: BTreeMap<PathologyId, Vec<usize>> = BTreeMap::new();
    for (id, labels) in corpus {
        let part = part_of[id.as_str()];
        for &l in labels {
            per_label_counts
                .entry(l)
                .or_insert_with(|| vec![0; spec.ratios.len()])[part] += 1;
        }
    }

    let mut per_label = BTreeMap::new();
    let mut sum = 0.0;
    let mut cells = 0usize;
    let mut max_deviation = 0.0f64;
    for (label, counts) in per_label_counts {
        let support: usize = counts.iter().sum();
        if support == 0 {
            continue;
        }
        let fractions: Vec<f64> = counts.iter().map(|&c| c as f64 / support as f64).collect();
        let deviations: Vec<f64> = fractions
            .iter()
            .zip(&spec.ratios)
            .map(|(f, r)| (f - r).abs())
            .collect();
        for &d in &deviations {
            sum += d;
            cells += 1;
            max_deviation = max_deviation.max(d);
        }
        per_label.insert(
            label,
            LabelQuality {
                support,
                fractions,
                deviations,
            },
        );
    }

    QualityReport {
        per_label,
        max_deviation,
        mean_deviation: if cells == 0 { 0.0 } else { sum / cells as f64 },
    }
}
