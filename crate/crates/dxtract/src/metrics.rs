//! Multi-label evaluation: micro/macro precision, recall and F1, per-class
//! and per-modality breakdowns, hallucination accounting, and confusion-pair
//! error analysis.
//!
//! Counting conventions:
//! - tp/fp/fn pool over all (report, label) pairs for the micro metrics.
//! - Macro F1 averages per-class F1 over classes with gold support > 0 by
//!   default; classes whose F1 is 0/0 score 0. The `macro_include_unsupported`
//!   flag widens the average to every observed class.
//! - Each predicted out-of-vocabulary name counts as one micro false positive
//!   when `count_oov_as_fp` is on (the default); OOV names never enter the
//!   per-class table or the macro average.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parse::LabelSet;
use crate::vocab::PathologyId;

/// Imaging modality of the source study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modality {
    CR,
    CT,
    MR,
    US,
    #[serde(rename = "other")]
    Other,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Modality::CR => "CR",
            Modality::CT => "CT",
            Modality::MR => "MR",
            Modality::US => "US",
            Modality::Other => "other",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "CR" => Ok(Modality::CR),
            "CT" => Ok(Modality::CT),
            "MR" => Ok(Modality::MR),
            "US" => Ok(Modality::US),
            "other" => Ok(Modality::Other),
            _ => Err(format!(
                "unknown modality {s:?} (expected CR|CT|MR|US|other)"
            )),
        }
    }
}

/// Gold and predicted label sets for one report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalPair {
    pub report_id: String,
    pub modality: Modality,
    pub gold: LabelSet,
    pub predicted: LabelSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1_micro: f64,
    pub f1_macro: f64,
    pub micro_tp: u64,
    pub micro_fp: u64,
    pub micro_fn: u64,
    pub hallucination_rate: f64,
    pub per_class: BTreeMap<PathologyId, ClassMetrics>,
    pub per_modality: BTreeMap<Modality, MetricsReport>,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub count_oov_as_fp: bool,
    pub macro_include_unsupported: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            count_oov_as_fp: true,
            macro_include_unsupported: false,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no evaluation pairs supplied")]
    EmptyInput,
    #[error("pair for report {0} has mismatched gold/predicted report ids")]
    MismatchedIds(String),
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_from_precision_recall(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Compute the full multi-label metrics report.
pub fn evaluate(pairs: &[EvalPair], options: &EvalOptions) -> Result<MetricsReport, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    for pair in pairs {
        if pair.gold.report_id != pair.predicted.report_id {
            return Err(MetricsError::MismatchedIds(pair.report_id.clone()));
        }
    }
    let mut report = evaluate_group(pairs, options);

    let mut by_modality: BTreeMap<Modality, Vec<EvalPair>> = BTreeMap::new();
    for pair in pairs {
        by_modality
            .entry(pair.modality)
            .or_default()
            .push(pair.clone());
    }
    for (modality, group) in by_modality {
        report
            .per_modality
            .insert(modality, evaluate_group(&group, options));
    }
    Ok(report)
}

fn evaluate_group(pairs: &[EvalPair], options: &EvalOptions) -> MetricsReport {
    let mut per_class: BTreeMap<PathologyId, ClassMetrics> = BTreeMap::new();
    let mut oov_predictions = 0u64;
    let mut total_predictions = 0u64;

    for pair in pairs {
        total_predictions += (pair.predicted.labels.len() + pair.predicted.oov_names.len()) as u64;
        oov_predictions += pair.predicted.oov_names.len() as u64;
        for &id in pair.gold.labels.union(&pair.predicted.labels) {
            let slot = per_class.entry(id).or_insert(ClassMetrics {
                tp: 0,
                fp: 0,
                fn_: 0,
                f1: 0.0,
                support: 0,
            });
            let in_gold = pair.gold.labels.contains(&id);
            let in_pred = pair.predicted.labels.contains(&id);
            match (in_gold, in_pred) {
                (true, true) => slot.tp += 1,
                (false, true) => slot.fp += 1,
                (true, false) => slot.fn_ += 1,
                (false, false) => unreachable!("id came from the union"),
            }
        }
    }

    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    let mut macro_sum = 0.0;
    let mut macro_n = 0u64;
    for class in per_class.values_mut() {
        class.support = class.tp + class.fn_;
        class.f1 = ratio(2 * class.tp, 2 * class.tp + class.fp + class.fn_);
        tp += class.tp;
        fp += class.fp;
        fn_ += class.fn_;
        if class.support > 0 || options.macro_include_unsupported {
            macro_sum += class.f1;
            macro_n += 1;
        }
    }
    if options.count_oov_as_fp {
        fp += oov_predictions;
    }

    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    MetricsReport {
        precision,
        recall,
        f1_micro: f1_from_precision_recall(precision, recall),
        f1_macro: if macro_n == 0 {
            0.0
        } else {
            macro_sum / macro_n as f64
        },
        micro_tp: tp,
        micro_fp: fp,
        micro_fn: fn_,
        hallucination_rate: ratio(oov_predictions, total_predictions),
        per_class,
        per_modality: BTreeMap::new(),
    }
}

/// One substitution-error tally: a gold label that was missed while another
/// label was falsely predicted in the same report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionPair {
    pub gold: PathologyId,
    pub predicted: PathologyId,
    pub count: u64,
}

/// Cross-tally of false negatives against co-occurring false positives, per
/// report, ranked by count (ties by ascending label ids). Surfaces pairs the
/// model substitutes for one another.
pub fn confusion_pairs(
    pairs: &[EvalPair],
    top_k: usize,
) -> Result<Vec<ConfusionPair>, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut counts: BTreeMap<(PathologyId, PathologyId), u64> = BTreeMap::new();
    for pair in pairs {
        let false_negatives: BTreeSet<_> = pair
            .gold
            .labels
            .difference(&pair.predicted.labels)
            .copied()
            .collect();
        let false_positives: BTreeSet<_> = pair
            .predicted
            .labels
            .difference(&pair.gold.labels)
            .copied()
            .collect();
        for &g in &false_negatives {
            for &p in &false_positives {
                *counts.entry((g, p)).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<ConfusionPair> = counts
        .into_iter()
        .map(|((gold, predicted), count)| ConfusionPair {
            gold,
            predicted,
            count,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then(a.gold.cmp(&b.gold))
            .then(a.predicted.cmp(&b.predicted))
    });
    ranked.truncate(top_k);
    Ok(ranked)
}
