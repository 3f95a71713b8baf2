//! End-to-end CLI tests driving the compiled binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dxtract"))
}

fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
}

fn vocab_arg() -> String {
    repo_path("data/pathologies.tsv").display().to_string()
}

fn write_corpus(dir: &Path, n: usize) -> PathBuf {
    let impressions = [
        "Complete anterior cruciate ligament (acl) tear with joint effusion.",
        "No acute fracture. Findings most consistent with gout.",
        "Soft tissue abscess with adjacent cellulitis.",
        "Partial rotator cuff tear. No biceps tear identified.",
        "Burst fracture at L1 without retropulsion.",
    ];
    let modalities = ["MR", "CR", "US", "MR", "CT"];
    let mut lines = String::new();
    for i in 0..n {
        lines.push_str(&format!(
            "{{\"report_id\":\"r{i}\",\"modality\":\"{}\",\"impression\":\"{} (study {i})\"}}\n",
            modalities[i % modalities.len()],
            impressions[i % impressions.len()],
        ));
    }
    let path = dir.join("corpus.jsonl");
    fs::write(&path, lines).unwrap();
    path
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn label_is_deterministic_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), 10);
    let digest = |out: &Path| {
        let status = binary()
            .args(["label", "--corpus"])
            .arg(&corpus)
            .args(["--vocab", &vocab_arg(), "--out"])
            .arg(out)
            .args(["--seed", "42", "--flip-prob", "0.2"])
            .status()
            .unwrap();
        assert!(status.success());
        fs::read(out.join("labels.jsonl")).unwrap()
    };
    let a = digest(&dir.path().join("a"));
    let b = digest(&dir.path().join("b"));
    assert_eq!(a, b, "labels.jsonl must be byte-identical across runs");
}

#[test]
fn label_partial_failure_exits_one_and_labels_the_rest() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), 10);
    let out = dir.path().join("out");
    let output = binary()
        .args(["label", "--corpus"])
        .arg(&corpus)
        .args(["--vocab", &vocab_arg(), "--out"])
        .arg(&out)
        .args(["--seed", "1", "--fail-on", "study 3"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("1 of 10 reports failed"),
        "stderr: {stderr}"
    );
    let labels = fs::read_to_string(out.join("labels.jsonl")).unwrap();
    assert_eq!(labels.lines().count(), 9);
    assert!(!labels.contains("\"r3\""));
}

#[test]
fn label_total_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), 3);
    let output = binary()
        .args(["label", "--corpus"])
        .arg(&corpus)
        .args(["--vocab", &vocab_arg(), "--out"])
        .arg(dir.path().join("out"))
        .args(["--fail-on", "study"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
}

#[test]
fn revote_from_stored_runs_matches_label_voting() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), 8);
    let out1 = dir.path().join("label-out");
    assert!(binary()
        .args(["label", "--corpus"])
        .arg(&corpus)
        .args(["--vocab", &vocab_arg(), "--out"])
        .arg(&out1)
        .args(["--seed", "9", "--flip-prob", "0.3"])
        .status()
        .unwrap()
        .success());
    let out2 = dir.path().join("vote-out");
    assert!(binary()
        .args(["vote", "--runs"])
        .arg(out1.join("runs.jsonl"))
        .args(["--vocab", &vocab_arg(), "--out"])
        .arg(&out2)
        .status()
        .unwrap()
        .success());
    assert_eq!(
        fs::read(out1.join("labels.jsonl")).unwrap(),
        fs::read(out2.join("labels.jsonl")).unwrap(),
        "re-voting stored runs must reproduce the labels file"
    );
}

#[test]
fn vote_mode_is_recorded_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), 4);
    let out1 = dir.path().join("set");
    let out2 = dir.path().join("per-label");
    for (out, mode) in [(&out1, "set"), (&out2, "per-label")] {
        assert!(binary()
            .args(["label", "--corpus"])
            .arg(&corpus)
            .args(["--vocab", &vocab_arg(), "--out"])
            .arg(out)
            .args(["--vote", mode])
            .status()
            .unwrap()
            .success());
    }
    let manifest1 = fs::read_to_string(out1.join("manifest.json")).unwrap();
    let manifest2 = fs::read_to_string(out2.join("manifest.json")).unwrap();
    assert!(manifest1.contains("\"set_level\""));
    assert!(manifest2.contains("\"per_label\""));
}

#[test]
fn split_bad_ratios_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("labels.jsonl");
    fs::write(
        &labels,
        "{\"report_id\":\"r1\",\"labels\":[1],\"oov\":[],\"provenance\":\"teacher_vote\"}\n",
    )
    .unwrap();
    let output = binary()
        .args(["split", "--labels"])
        .arg(&labels)
        .args(["--out"])
        .arg(dir.path().join("out"))
        .args(["--ratios", "0.5,0.4"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn split_single_report_gives_parts_one_and_zero() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("labels.jsonl");
    fs::write(
        &labels,
        "{\"report_id\":\"r1\",\"labels\":[1],\"oov\":[],\"provenance\":\"teacher_vote\"}\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let output = binary()
        .args(["split", "--labels"])
        .arg(&labels)
        .args(["--out"])
        .arg(&out)
        .args(["--ratios", "0.5,0.5"])
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(stdout_of(&output).contains("[1, 0]"));
    let assignment = fs::read_to_string(out.join("assignment.jsonl")).unwrap();
    assert_eq!(assignment.trim(), "{\"report_id\":\"r1\",\"part\":0}");
}

#[test]
fn eval_perfect_predictions_print_ones() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("labels.jsonl");
    fs::write(
        &labels,
        "{\"report_id\":\"r1\",\"labels\":[1,2],\"oov\":[],\"provenance\":\"gold\"}\n",
    )
    .unwrap();
    let output = binary()
        .args(["eval", "--gold"])
        .arg(&labels)
        .args(["--pred"])
        .arg(&labels)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = stdout_of(&output);
    assert!(stdout.contains("1.000"), "stdout: {stdout}");
}

#[test]
fn eval_single_pair_half_recall() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.jsonl");
    let pred = dir.path().join("pred.jsonl");
    fs::write(
        &gold,
        "{\"report_id\":\"r1\",\"labels\":[1,2],\"oov\":[],\"provenance\":\"gold\"}\n",
    )
    .unwrap();
    fs::write(
        &pred,
        "{\"report_id\":\"r1\",\"labels\":[1],\"oov\":[],\"provenance\":\"model_prediction\"}\n",
    )
    .unwrap();
    let output = binary()
        .args(["eval", "--gold"])
        .arg(&gold)
        .args(["--pred"])
        .arg(&pred)
        .output()
        .unwrap();
    let stdout = stdout_of(&output);
    assert!(stdout.contains("1.000"), "precision column: {stdout}");
    assert!(stdout.contains("0.500"), "recall column: {stdout}");
}

#[test]
fn eval_missing_prediction_scores_empty_or_errors_per_flag() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.jsonl");
    let pred = dir.path().join("pred.jsonl");
    fs::write(
        &gold,
        "{\"report_id\":\"r1\",\"labels\":[1],\"oov\":[],\"provenance\":\"gold\"}\n\
         {\"report_id\":\"r2\",\"labels\":[2],\"oov\":[],\"provenance\":\"gold\"}\n",
    )
    .unwrap();
    fs::write(
        &pred,
        "{\"report_id\":\"r1\",\"labels\":[1],\"oov\":[],\"provenance\":\"model_prediction\"}\n",
    )
    .unwrap();

    let output = binary()
        .args(["eval", "--gold"])
        .arg(&gold)
        .args(["--pred"])
        .arg(&pred)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("no prediction for r2"), "{stderr}");
    // r2 scored as empty: recall drops to 1/2.
    assert!(stdout_of(&output).contains("0.500"));

    let strict = binary()
        .args(["eval", "--gold"])
        .arg(&gold)
        .args(["--pred"])
        .arg(&pred)
        .args(["--on-missing-pred", "error"])
        .output()
        .unwrap();
    assert_eq!(strict.status.code(), Some(2));
}

#[test]
fn eval_constructed_counts_reproduce_table_row() {
    // tp=64, fp=4, fn=9: P=64/68=0.941, R=64/73=0.877, F1=128/141=0.908.
    let dir = tempfile::tempdir().unwrap();
    let mut gold = String::new();
    let mut pred = String::new();
    for i in 0..64 {
        let label = i % 20 + 1;
        gold.push_str(&format!(
            "{{\"report_id\":\"t{i}\",\"labels\":[{label}],\"oov\":[],\"provenance\":\"gold\"}}\n"
        ));
        pred.push_str(&format!(
            "{{\"report_id\":\"t{i}\",\"labels\":[{label}],\"oov\":[],\"provenance\":\"model_prediction\"}}\n"
        ));
    }
    for i in 0..9 {
        gold.push_str(&format!(
            "{{\"report_id\":\"n{i}\",\"labels\":[21],\"oov\":[],\"provenance\":\"gold\"}}\n"
        ));
        pred.push_str(&format!(
            "{{\"report_id\":\"n{i}\",\"labels\":[],\"oov\":[],\"provenance\":\"model_prediction\"}}\n"
        ));
    }
    for i in 0..4 {
        gold.push_str(&format!(
            "{{\"report_id\":\"p{i}\",\"labels\":[],\"oov\":[],\"provenance\":\"gold\"}}\n"
        ));
        pred.push_str(&format!(
            "{{\"report_id\":\"p{i}\",\"labels\":[22],\"oov\":[],\"provenance\":\"model_prediction\"}}\n"
        ));
    }
    let gold_path = dir.path().join("gold.jsonl");
    let pred_path = dir.path().join("pred.jsonl");
    fs::write(&gold_path, gold).unwrap();
    fs::write(&pred_path, pred).unwrap();
    let metrics_path = dir.path().join("metrics.json");
    let output = binary()
        .args(["eval", "--gold"])
        .arg(&gold_path)
        .args(["--pred"])
        .arg(&pred_path)
        .args(["--out"])
        .arg(&metrics_path)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = stdout_of(&output);
    let overall = stdout.lines().find(|l| l.starts_with("overall")).unwrap();
    assert!(overall.contains("0.941"), "{overall}");
    assert!(overall.contains("0.877"), "{overall}");
    assert!(overall.contains("0.908"), "{overall}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&metrics_path).unwrap()).unwrap();
    assert_eq!(json["micro_tp"], 64);
    assert_eq!(json["micro_fp"], 4);
    assert_eq!(json["micro_fn"], 9);
}

#[test]
fn errors_command_names_the_confused_pair() {
    let dir = tempfile::tempdir().unwrap();
    // Gold 4 = "partial rotator cuff tear", predicted 2 = "biceps tear".
    let gold = dir.path().join("gold.jsonl");
    let pred = dir.path().join("pred.jsonl");
    fs::write(
        &gold,
        "{\"report_id\":\"r1\",\"labels\":[4],\"oov\":[],\"provenance\":\"gold\"}\n",
    )
    .unwrap();
    fs::write(
        &pred,
        "{\"report_id\":\"r1\",\"labels\":[2],\"oov\":[],\"provenance\":\"model_prediction\"}\n",
    )
    .unwrap();
    let output = binary()
        .args(["errors", "--gold"])
        .arg(&gold)
        .args(["--pred"])
        .arg(&pred)
        .args(["--vocab", &vocab_arg()])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = stdout_of(&output);
    assert!(stdout.contains("partial rotator cuff tear"), "{stdout}");
    assert!(stdout.contains("biceps tear"), "{stdout}");
}

#[test]
fn param_count_rank_scaling_is_linear() {
    let arch = repo_path("data/arch/llama3-8b.json");
    let out64 = binary()
        .args(["param-count", "--arch"])
        .arg(&arch)
        .args(["--rank", "64"])
        .output()
        .unwrap();
    let out32 = binary()
        .args(["param-count", "--arch"])
        .arg(&arch)
        .args(["--rank", "32"])
        .output()
        .unwrap();
    assert!(stdout_of(&out64).contains("total trainable parameters: 167772160"));
    assert!(stdout_of(&out32).contains("total trainable parameters: 83886080"));
}

#[test]
fn quantize_reports_stats_and_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("tensor.txt");
    let values: Vec<String> = (0..256)
        .map(|i| format!("{:.6}", (i as f64 - 128.0) * 0.01))
        .collect();
    fs::write(&input, values.join(" ")).unwrap();
    let out = dir.path().join("t.nf4");
    let output = binary()
        .args(["quantize", "--input"])
        .arg(&input)
        .args(["--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(out.exists());
    let stdout = stdout_of(&output);
    assert!(stdout.contains("max abs round-trip error"), "{stdout}");
    assert!(stdout.contains("compression vs 32-bit storage"), "{stdout}");
}

#[test]
fn quantize_unit_normal_tensor_respects_gap_bound() {
    use rand::{Rng, SeedableRng};
    let dir = tempfile::tempdir().unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4096);
    let values: Vec<f64> = (0..4096)
        .map(|_| {
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect();
    let input = dir.path().join("tensor.txt");
    let text: Vec<String> = values.iter().map(|v| format!("{v:.17}")).collect();
    fs::write(&input, text.join("\n")).unwrap();

    let output = binary()
        .args(["quantize", "--input"])
        .arg(&input)
        .args(["--out"])
        .arg(dir.path().join("t.nf4"))
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = stdout_of(&output);
    let reported: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("max abs round-trip error: "))
        .unwrap()
        .parse()
        .unwrap();

    // Bound from the quantization module: worst block absmax times half the
    // largest codebook gap, plus one bfloat16 rounding of the reconstruction.
    let parsed: Vec<f64> = fs::read_to_string(&input)
        .unwrap()
        .split_whitespace()
        .map(|t| t.parse().unwrap())
        .collect();
    let q = dxtract::qlora::nf4_quantize(&parsed, &[parsed.len()], 64).unwrap();
    let half_gap = q.codebook.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max) / 2.0;
    let bound = q.absmax.iter().cloned().fold(0.0, f64::max) * (half_gap + 1.0 / 256.0);
    assert!(reported <= bound, "reported {reported} vs bound {bound}");
}

#[test]
fn zero_tensor_quantizes_with_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("tensor.txt");
    fs::write(&input, "0 0 0 0 0 0 0 0").unwrap();
    let output = binary()
        .args(["quantize", "--input"])
        .arg(&input)
        .args(["--out"])
        .arg(dir.path().join("t.nf4"))
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = stdout_of(&output);
    assert!(
        stdout.contains("max abs round-trip error: 0.000000"),
        "{stdout}"
    );
}

#[test]
fn unknown_flag_exits_two_with_usage() {
    let output = binary()
        .args(["split", "--bogus-flag", "x"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr)
        .to_lowercase()
        .contains("usage"));
}

#[test]
fn every_subcommand_has_help() {
    for sub in [
        "label",
        "vote",
        "split",
        "emit-finetune",
        "eval",
        "errors",
        "param-count",
        "quantize",
    ] {
        let output = binary().args([sub, "--help"]).output().unwrap();
        assert!(output.status.success(), "{sub} --help failed");
        assert!(
            stdout_of(&output).contains("Usage"),
            "{sub} help lacks usage"
        );
    }
}
