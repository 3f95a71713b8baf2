//! Command implementations. Every command with identical inputs and seeds
//! produces byte-identical primary outputs; wall-clock time appears only in
//! manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use dxtract::gateway::{complete_batch, Backend, CompletionRequest, HttpBackend, MockBackend};
use dxtract::metrics::{confusion_pairs, evaluate, EvalOptions, EvalPair, MetricsReport, Modality};
use dxtract::parse::{assertions_to_label_set, parse_teacher_csv, LabelSet, Provenance};
use dxtract::prompt::{render, PromptTemplate};
use dxtract::qlora::{
    count_trainable, nf4_dequantize, nf4_quantize, write_quantized, LoraConfig, TargetModule,
};
use dxtract::split::{iterative_stratify, split_quality, SplitSpec, StratifyOrder};
use dxtract::store::{
    emit_finetune_pairs, ingest_reports, read_label_sets, read_raw_runs, sha256_file,
    write_finetune_pairs, write_label_sets, write_raw_runs, Manifest, RawRunRecord, ReportRecord,
};
use dxtract::vocab::Vocabulary;
use dxtract::vote::{majority_vote, RunOutput, VoteMode};

use crate::{
    BackendKind, EmitFinetuneArgs, ErrorsArgs, EvalArgs, LabelArgs, MissingPredArg, OrderArg,
    ParamCountArgs, QuantizeArgs, SplitArgs, VoteArgs, VoteModeArg,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    BackendFailure(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl From<VoteModeArg> for VoteMode {
    fn from(arg: VoteModeArg) -> Self {
        match arg {
            VoteModeArg::Set => VoteMode::SetLevel,
            VoteModeArg::PerLabel => VoteMode::PerLabel,
        }
    }
}

fn config_err(message: impl std::fmt::Display) -> CliError {
    CliError::Config(message.to_string())
}

fn load_vocab(path: &Path, strict: bool) -> Result<Vocabulary, CliError> {
    Vocabulary::load(path, strict).map_err(|e| config_err(format!("vocabulary: {e}")))
}

fn ensure_out_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)
        .map_err(|e| config_err(format!("cannot create {}: {e}", path.display())))
}

pub fn cmd_label(args: LabelArgs) -> Result<u8, CliError> {
    if args.runs == 0 {
        return Err(config_err("--runs must be at least 1"));
    }
    if args.max_in_flight == 0 {
        return Err(config_err("--max-in-flight must be at least 1"));
    }
    let vocab = load_vocab(&args.vocab, args.strict_vocab)?;
    let reports = ingest_reports(&args.corpus).map_err(|e| config_err(format!("corpus: {e}")))?;
    ensure_out_dir(&args.out)?;

    let backend: Box<dyn Backend> = match args.backend {
        BackendKind::Mock => {
            let names = vocab
                .canonical_names()
                .iter()
                .map(|s| s.to_string())
                .collect();
            let mut mock = MockBackend::new(args.seed, names).with_flip_probability(args.flip_prob);
            if let Some(marker) = &args.fail_on {
                mock = mock.failing_on(marker.clone());
            }
            Box::new(mock)
        }
        BackendKind::Http => {
            if args.fail_on.is_some() {
                return Err(config_err("--fail-on applies to the mock backend only"));
            }
            Box::new(HttpBackend::from_env(args.api_url.clone()).map_err(config_err)?)
        }
    };

    let template = PromptTemplate::teacher_labeling();
    let mut requests = Vec::with_capacity(reports.len() * args.runs as usize);
    for report in &reports {
        let prompt = render(&template, &report.impression, &vocab)
            .map_err(|e| config_err(format!("report {}: {e}", report.report_id)))?;
        for run_index in 0..args.runs {
            requests.push(CompletionRequest {
                model_name: args.model.clone(),
                prompt: prompt.clone(),
                temperature: args.temperature,
                max_tokens: args.max_tokens,
                run_index,
            });
        }
    }

    let results = complete_batch(backend.as_ref(), &requests, args.max_in_flight);

    let mut raw_runs: Vec<RawRunRecord> = Vec::new();
    let mut labeled: Vec<LabelSet> = Vec::new();
    let mut failures: Vec<(String, String)> = Vec::new();
    for (ri, report) in reports.iter().enumerate() {
        let chunk = &results[ri * args.runs as usize..(ri + 1) * args.runs as usize];
        let mut run_outputs = Vec::with_capacity(chunk.len());
        let mut failure: Option<String> = None;
        for (run_index, outcome) in chunk.iter().enumerate() {
            match outcome {
                Ok(result) => {
                    raw_runs.push(RawRunRecord {
                        report_id: report.report_id.clone(),
                        run_index: run_index as u8,
                        raw_text: result.raw_text.clone(),
                    });
                    match parse_teacher_csv(&result.raw_text, &vocab) {
                        Ok(parsed) => run_outputs.push(RunOutput {
                            report_id: report.report_id.clone(),
                            run_index: run_index as u8,
                            label_set: assertions_to_label_set(
                                &parsed.assertions,
                                &report.report_id,
                                Provenance::TeacherVote,
                            ),
                        }),
                        Err(e) => failure = Some(format!("run {run_index}: {e}")),
                    }
                }
                Err(e) => failure = Some(format!("run {run_index}: {e}")),
            }
        }
        match failure {
            None => labeled.push(
                majority_vote(&run_outputs, args.vote.into())
                    .map_err(|e| CliError::Other(anyhow::anyhow!("vote: {e}")))?,
            ),
            Some(reason) => failures.push((report.report_id.clone(), reason)),
        }
    }

    if labeled.is_empty() && !reports.is_empty() {
        return Err(CliError::BackendFailure(format!(
            "no report labeled; first failure: {} ({})",
            failures[0].0, failures[0].1
        )));
    }

    let runs_path = args.out.join("runs.jsonl");
    let labels_path = args.out.join("labels.jsonl");
    write_raw_runs(&raw_runs, &runs_path).map_err(config_err)?;
    write_label_sets(&labeled, &labels_path).map_err(config_err)?;

    let mut manifest = Manifest::new("label");
    manifest.vocabulary_sha256 = Some(sha256_file(&args.vocab).map_err(config_err)?);
    manifest.backend = Some(backend.identity());
    manifest.model = Some(args.model.clone());
    manifest.runs_per_report = Some(args.runs);
    manifest.temperature = Some(args.temperature);
    manifest.seed = Some(args.seed);
    manifest.vote_mode = Some(args.vote.into());
    manifest.add_output(&runs_path).map_err(config_err)?;
    manifest.add_output(&labels_path).map_err(config_err)?;
    manifest
        .write(&args.out.join("manifest.json"))
        .map_err(config_err)?;

    println!("labeled {} of {} reports", labeled.len(), reports.len());
    if failures.is_empty() {
        Ok(0)
    } else {
        for (id, reason) in &failures {
            eprintln!("failed: {id}: {reason}");
        }
        eprintln!("{} of {} reports failed", failures.len(), reports.len());
        Ok(1)
    }
}

pub fn cmd_vote(args: VoteArgs) -> Result<u8, CliError> {
    let vocab = load_vocab(&args.vocab, args.strict_vocab)?;
    let raw_runs = read_raw_runs(&args.runs).map_err(|e| config_err(format!("runs: {e}")))?;
    ensure_out_dir(&args.out)?;

    // Group by report id, keeping first-appearance order.
    let mut order: Vec<String> = Vec::new();
    let mut grouped: BTreeMap<String, Vec<&RawRunRecord>> = BTreeMap::new();
    for record in &raw_runs {
        if !grouped.contains_key(&record.report_id) {
            order.push(record.report_id.clone());
        }
        grouped
            .entry(record.report_id.clone())
            .or_default()
            .push(record);
    }

    let mut labeled = Vec::new();
    let mut failures: Vec<(String, String)> = Vec::new();
    for report_id in &order {
        let mut run_outputs = Vec::new();
        let mut failure = None;
        for record in &grouped[report_id] {
            match parse_teacher_csv(&record.raw_text, &vocab) {
                Ok(parsed) => run_outputs.push(RunOutput {
                    report_id: report_id.clone(),
                    run_index: record.run_index,
                    label_set: assertions_to_label_set(
                        &parsed.assertions,
                        report_id,
                        Provenance::TeacherVote,
                    ),
                }),
                Err(e) => failure = Some(format!("run {}: {e}", record.run_index)),
            }
        }
        match failure {
            None => labeled.push(
                majority_vote(&run_outputs, args.vote.into())
                    .map_err(|e| CliError::Other(anyhow::anyhow!("vote: {e}")))?,
            ),
            Some(reason) => failures.push((report_id.clone(), reason)),
        }
    }

    let labels_path = args.out.join("labels.jsonl");
    write_label_sets(&labeled, &labels_path).map_err(config_err)?;
    let mut manifest = Manifest::new("vote");
    manifest.vocabulary_sha256 = Some(sha256_file(&args.vocab).map_err(config_err)?);
    manifest.vote_mode = Some(args.vote.into());
    manifest.add_output(&labels_path).map_err(config_err)?;
    manifest
        .write(&args.out.join("manifest.json"))
        .map_err(config_err)?;

    println!("voted {} reports", labeled.len());
    if failures.is_empty() {
        Ok(0)
    } else {
        for (id, reason) in &failures {
            eprintln!("failed: {id}: {reason}");
        }
        Ok(1)
    }
}

#[derive(Serialize, Deserialize)]
struct AssignmentRecord {
    report_id: String,
    part: usize,
}

fn parse_ratios(raw: &str) -> Result<Vec<f64>, CliError> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| config_err(format!("bad ratio {s:?}: {e}")))
        })
        .collect()
}

pub fn cmd_split(args: SplitArgs) -> Result<u8, CliError> {
    let labels = read_label_sets(&args.labels).map_err(|e| config_err(format!("labels: {e}")))?;
    let spec = SplitSpec {
        ratios: parse_ratios(&args.ratios)?,
        seed: args.seed,
        order: match args.order {
            OrderArg::First => StratifyOrder::FirstOrder,
            OrderArg::Second => StratifyOrder::SecondOrder,
        },
    };
    let corpus: Vec<(String, std::collections::BTreeSet<_>)> = labels
        .iter()
        .map(|l| (l.report_id.clone(), l.labels.clone()))
        .collect();
    let assignment = iterative_stratify(&corpus, &spec).map_err(config_err)?;
    let quality = split_quality(&assignment, &corpus, &spec);
    ensure_out_dir(&args.out)?;

    let assignment_path = args.out.join("assignment.jsonl");
    let mut lines = String::new();
    for (report_id, part) in &assignment.assignments {
        let record = AssignmentRecord {
            report_id: report_id.clone(),
            part: *part,
        };
        lines.push_str(&serde_json::to_string(&record).map_err(config_err)?);
        lines.push('\n');
    }
    fs::write(&assignment_path, lines).map_err(config_err)?;

    let quality_path = args.out.join("quality.json");
    fs::write(
        &quality_path,
        serde_json::to_string_pretty(&quality).map_err(config_err)? + "\n",
    )
    .map_err(config_err)?;

    let mut manifest = Manifest::new("split");
    manifest.split = Some(spec.clone());
    manifest.seed = Some(args.seed);
    manifest.add_output(&assignment_path).map_err(config_err)?;
    manifest.add_output(&quality_path).map_err(config_err)?;
    manifest
        .write(&args.out.join("manifest.json"))
        .map_err(config_err)?;

    let sizes = assignment.part_sizes();
    println!(
        "split {} reports into parts {:?} (max deviation {:.4}, mean {:.4})",
        corpus.len(),
        sizes,
        quality.max_deviation,
        quality.mean_deviation
    );
    Ok(0)
}

pub fn cmd_emit_finetune(args: EmitFinetuneArgs) -> Result<u8, CliError> {
    let vocab = load_vocab(&args.vocab, args.strict_vocab)?;
    let reports = ingest_reports(&args.corpus).map_err(|e| config_err(format!("corpus: {e}")))?;
    let labels = read_label_sets(&args.labels).map_err(|e| config_err(format!("labels: {e}")))?;
    let by_id: BTreeMap<String, LabelSet> = labels
        .into_iter()
        .map(|l| (l.report_id.clone(), l))
        .collect();
    let pairs = emit_finetune_pairs(&reports, &by_id, &vocab).map_err(config_err)?;
    ensure_out_dir(&args.out)?;

    let pairs_path = args.out.join("pairs.jsonl");
    write_finetune_pairs(&pairs, &pairs_path).map_err(config_err)?;
    let mut manifest = Manifest::new("emit-finetune");
    manifest.vocabulary_sha256 = Some(sha256_file(&args.vocab).map_err(config_err)?);
    manifest.add_output(&pairs_path).map_err(config_err)?;
    manifest
        .write(&args.out.join("manifest.json"))
        .map_err(config_err)?;

    println!("emitted {} fine-tune pairs", pairs.len());
    Ok(0)
}

fn print_metrics_table(report: &MetricsReport) {
    println!(
        "{:<10} {:>9} {:>7} {:>8} {:>8}",
        "group", "Precision", "Recall", "F1 Micro", "F1 Macro"
    );
    let row = |name: &str, m: &MetricsReport| {
        println!(
            "{:<10} {:>9.3} {:>7.3} {:>8.3} {:>8.3}",
            name, m.precision, m.recall, m.f1_micro, m.f1_macro
        );
    };
    row("overall", report);
    for (modality, nested) in &report.per_modality {
        row(&modality.to_string(), nested);
    }
}

fn build_eval_pairs(
    gold_path: &Path,
    pred_path: &Path,
    corpus: Option<&Path>,
    on_missing: MissingPredArg,
) -> Result<Vec<EvalPair>, CliError> {
    let gold = read_label_sets(gold_path).map_err(|e| config_err(format!("gold: {e}")))?;
    let pred = read_label_sets(pred_path).map_err(|e| config_err(format!("pred: {e}")))?;
    let modality_of: BTreeMap<String, Modality> = match corpus {
        Some(path) => ingest_reports(path)
            .map_err(|e| config_err(format!("corpus: {e}")))?
            .into_iter()
            .map(|r: ReportRecord| (r.report_id, r.modality))
            .collect(),
        None => BTreeMap::new(),
    };
    let mut pred_by_id: BTreeMap<String, LabelSet> =
        pred.into_iter().map(|l| (l.report_id.clone(), l)).collect();

    let mut pairs = Vec::with_capacity(gold.len());
    for gold_set in gold {
        let report_id = gold_set.report_id.clone();
        let predicted = match pred_by_id.remove(&report_id) {
            Some(p) => p,
            None => match on_missing {
                MissingPredArg::Empty => {
                    eprintln!("warning: no prediction for {report_id}; scoring empty");
                    LabelSet::empty(&report_id, Provenance::ModelPrediction)
                }
                MissingPredArg::Error => {
                    return Err(config_err(format!("no prediction for report {report_id}")))
                }
            },
        };
        let modality = modality_of
            .get(&report_id)
            .copied()
            .unwrap_or(Modality::Other);
        pairs.push(EvalPair {
            report_id,
            modality,
            gold: gold_set,
            predicted,
        });
    }
    if !pred_by_id.is_empty() {
        eprintln!(
            "warning: {} prediction(s) without gold labels ignored",
            pred_by_id.len()
        );
    }
    Ok(pairs)
}

pub fn cmd_eval(args: EvalArgs) -> Result<u8, CliError> {
    let pairs = build_eval_pairs(
        &args.gold,
        &args.pred,
        args.corpus.as_deref(),
        args.on_missing_pred,
    )?;
    let options = EvalOptions {
        count_oov_as_fp: args.count_oov_as_fp,
        macro_include_unsupported: args.macro_include_unsupported,
    };
    let report = evaluate(&pairs, &options).map_err(config_err)?;
    print_metrics_table(&report);
    println!("hallucination rate: {:.4}", report.hallucination_rate);
    if let Some(out) = &args.out {
        fs::write(
            out,
            serde_json::to_string_pretty(&report).map_err(config_err)? + "\n",
        )
        .map_err(config_err)?;
    }
    Ok(0)
}

pub fn cmd_errors(args: ErrorsArgs) -> Result<u8, CliError> {
    let vocab = load_vocab(&args.vocab, args.strict_vocab)?;
    let pairs = build_eval_pairs(&args.gold, &args.pred, None, MissingPredArg::Empty)?;
    let ranked = confusion_pairs(&pairs, args.top_k).map_err(config_err)?;
    if ranked.is_empty() {
        println!("no confusion pairs: predictions match gold everywhere");
        return Ok(0);
    }
    println!(
        "{:<45} {:<45} {:>5}",
        "gold (missed)", "predicted instead", "count"
    );
    for pair in ranked {
        let name = |id| {
            vocab
                .entry(id)
                .map(|e| e.canonical_name.clone())
                .unwrap_or_else(|| format!("#{id}"))
        };
        println!(
            "{:<45} {:<45} {:>5}",
            name(pair.gold),
            name(pair.predicted),
            pair.count
        );
    }
    Ok(0)
}

#[derive(Deserialize)]
struct ArchSpec {
    name: String,
    layer_count: u32,
    modules: Vec<TargetModule>,
}

pub fn cmd_param_count(args: ParamCountArgs) -> Result<u8, CliError> {
    let content = fs::read_to_string(&args.arch)
        .map_err(|e| config_err(format!("{}: {e}", args.arch.display())))?;
    let arch: ArchSpec =
        serde_json::from_str(&content).map_err(|e| config_err(format!("arch spec: {e}")))?;
    let config = LoraConfig {
        rank: args.rank,
        alpha: args.alpha,
        target_modules: arch.modules,
        layer_count: arch.layer_count,
        ..LoraConfig::default()
    };
    config.validate().map_err(config_err)?;
    let (total, per_layer) = count_trainable(&config);
    println!("architecture: {}", arch.name);
    println!(
        "layers: {}  rank: {}  alpha: {}",
        arch.layer_count, args.rank, args.alpha
    );
    println!("per-layer trainable parameters: {per_layer}");
    println!("total trainable parameters: {total}");
    println!("bytes at 16-bit: {}", total * 2);
    Ok(0)
}

pub fn cmd_quantize(args: QuantizeArgs) -> Result<u8, CliError> {
    if args.block_size == 0 {
        return Err(config_err("--block-size must be at least 1"));
    }
    let content = fs::read_to_string(&args.input)
        .map_err(|e| config_err(format!("{}: {e}", args.input.display())))?;
    let values: Vec<f64> = content
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|e| config_err(format!("bad value {tok:?}: {e}")))
        })
        .collect::<Result<_, _>>()?;
    if values.is_empty() {
        return Err(config_err("input tensor is empty"));
    }
    let quantized = nf4_quantize(&values, &[values.len()], args.block_size).map_err(config_err)?;
    write_quantized(&quantized, &args.out).map_err(config_err)?;

    let restored = nf4_dequantize(&quantized);
    let mut max_err = 0.0f64;
    let mut sum_err = 0.0f64;
    for (r, o) in restored.iter().zip(&values) {
        let e = (r - o).abs();
        max_err = max_err.max(e);
        sum_err += e;
    }
    let file_len = fs::metadata(&args.out).map_err(config_err)?.len();
    println!(
        "elements: {}  blocks: {}",
        values.len(),
        quantized.block_count()
    );
    println!("max abs round-trip error: {max_err:.6}");
    println!(
        "mean abs round-trip error: {:.6}",
        sum_err / values.len() as f64
    );
    println!(
        "compression vs 32-bit storage: {:.2}x (file {} bytes vs {} bytes)",
        (values.len() as f64 * 4.0) / file_len as f64,
        file_len,
        values.len() * 4
    );
    Ok(0)
}
