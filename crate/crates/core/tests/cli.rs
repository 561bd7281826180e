//! Runs the `capbias` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

use capbias::classifier::{save_checkpoint, AttributeClassifier, ClassifierConfig};
use capbias::report::Report;
use capbias::vocab::Vocabulary;

fn capbias(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capbias"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--out", p(dir), "--quiet"];
    args.extend_from_slice(extra);
    let out = capbias(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn write_config(dir: &Path, metrics: &[&str]) -> std::path::PathBuf {
    let config = serde_json::json!({
        "human_captions": "human_captions.jsonl",
        "generated_captions": "generated_captions.jsonl",
        "annotations": "annotations.jsonl",
        "objects": "objects.jsonl",
        "object_lexicon": "object_lexicon.json",
        "metrics": metrics,
        "top_k": 10,
        "min_per_value": 1,
        "label": "synthetic",
        "protocol": {
            "n_seeds": 2,
            "classifier": {"embed_dim": 16, "hidden_dim": 16, "epochs": 3, "learning_rate": 0.001}
        }
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn report_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--n-images", "400", "--theta-human", "0.6", "--theta-generated", "0.9"]);
    let config = write_config(dir.path(), &["ba", "dba_g", "dba_o", "ratio", "error", "leakage", "lic"]);
    let mut reports = Vec::new();
    for name in ["a.json", "b.json"] {
        let out_path = dir.path().join(name);
        let out = capbias(&["report", "--config", p(&config), "--seed", "11", "--out", p(&out_path), "--quiet"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        reports.push(Report::read_json(&out_path).unwrap());
    }
    assert_eq!(reports[0].content_hash(), reports[1].content_hash());
    let names: Vec<&str> = reports[0].metrics.iter().map(|m| m.name.as_str()).collect();
    for expected in ["ba", "dba_g", "dba_o", "ratio", "error", "lic", "lic_m", "lic_d", "leakage"] {
        assert!(names.contains(&expected), "missing {expected} in {names:?}");
    }
    assert_eq!(reports[0].provenance.master_seed, 11);
    assert!(reports[0].provenance.inputs.contains_key("objects"));

    let other = dir.path().join("c.json");
    let out = capbias(&["report", "--config", p(&config), "--seed", "12", "--out", p(&other), "--quiet"]);
    assert!(out.status.success());
    let c = Report::read_json(&other).unwrap();
    assert_ne!(c.metric("lic").unwrap().per_seed, reports[0].metric("lic").unwrap().per_seed);

    let table = capbias(&["report", "--from", p(&dir.path().join("a.json")), p(&other)]);
    let text = String::from_utf8(table.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("Model"));
}

#[test]
fn dba_g_without_objects_exits_2_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--n-images", "40"]);
    let out_path = dir.path().join("r.json");
    let out = capbias(&[
        "dba",
        "--direction",
        "g",
        "--human",
        p(&dir.path().join("human_captions.jsonl")),
        "--generated",
        p(&dir.path().join("generated_captions.jsonl")),
        "--annotations",
        p(&dir.path().join("annotations.jsonl")),
        "--out",
        p(&out_path),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("dba_g") && stderr.contains("--objects"), "{stderr}");
    assert!(!out_path.exists());
}

#[test]
fn missing_input_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = capbias(&["mask", p(&dir.path().join("nope.jsonl"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_synth_spec_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = capbias(&["synth", "--out", p(dir.path()), "--theta-human", "0.3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn equal_thetas_give_zero_ba() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--n-images", "4000", "--theta-human", "0.7", "--theta-generated", "0.7"]);
    let words = dir.path().join("words.txt");
    std::fs::write(&words, "kitchen\nskateboard\n").unwrap();
    let out = capbias(&[
        "ba",
        "--human",
        p(&dir.path().join("human_captions.jsonl")),
        "--generated",
        p(&dir.path().join("generated_captions.jsonl")),
        "--annotations",
        p(&dir.path().join("annotations.jsonl")),
        "--task-words",
        p(&words),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Report = serde_json::from_slice(&out.stdout).unwrap();
    let ba = report.metric("ba").unwrap();
    assert!(ba.mean.abs() < 3.0, "BA x100 = {}", ba.mean);
}

#[test]
fn mask_and_vocab_commands() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    std::fs::write(
        &input,
        concat!(
            r#"{"caption_id":"1","image_id":"a","caption":"A woman and her dog.","source":"human"}"#, "\n",
            r#"{"caption_id":"2","image_id":"b","caption":"Two men on a bench","source":"model"}"#, "\n",
        ),
    )
    .unwrap();
    let masked = dir.path().join("masked.jsonl");
    let out = capbias(&["mask", p(&input), "--out", p(&masked)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("masked 3"));
    let text = std::fs::read_to_string(&masked).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["tokens"], serde_json::json!(["a", "<gender>", "and", "<gender>", "dog"]));

    // Masking a masked file changes nothing.
    let twice = dir.path().join("twice.jsonl");
    assert!(capbias(&["mask", p(&masked), "--out", p(&twice), "-q"]).status.success());
    assert_eq!(std::fs::read_to_string(&twice).unwrap(), text);

    let vocab_path = dir.path().join("vocab.json");
    assert!(capbias(&["vocab", p(&input), "--out", p(&vocab_path), "-q"]).status.success());
    let vocab = Vocabulary::read_json(&vocab_path).unwrap();
    assert_eq!(vocab.index_of("<gender>"), Some(0));
    assert!(vocab.contains("bench") && !vocab.contains("woman"));
}

#[test]
fn score_command_with_constant_classifier() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = Vocabulary::from_tokens(["<gender>", "<oov>", "<pad>", "dog"].map(String::from).to_vec()).unwrap();
    let mut clf = AttributeClassifier::new(ClassifierConfig { embed_dim: 4, hidden_dim: 4, ..Default::default() }, vocab.clone(), 2).unwrap();
    clf.set_output_bias(&[0.0, 2.0f64.ln()], true).unwrap();
    let ckpt = dir.path().join("clf.json");
    save_checkpoint(&ckpt, &clf, &["female".to_string(), "male".to_string()]).unwrap();

    let caps = dir.path().join("caps.jsonl");
    std::fs::write(
        &caps,
        concat!(
            r#"{"caption_id":"x","image_id":"a","caption":"a woman with a dog","source":"model"}"#, "\n",
            r#"{"caption_id":"y","image_id":"b","caption":"a cat","source":"model"}"#, "\n",
        ),
    )
    .unwrap();
    let out = capbias(&["score", "--checkpoint", p(&ckpt), "--vocab-hash", &vocab.hash(), p(&caps)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    for l in &lines {
        assert_eq!(l["predicted"], "male");
        assert!((l["scores"]["male"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }
    assert_eq!(lines[0]["caption_id"], "x");

    let bad = capbias(&["score", "--checkpoint", p(&ckpt), "--vocab-hash", "deadbeef", p(&caps)]);
    assert_eq!(bad.status.code(), Some(2));

    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = capbias(&["score", "--checkpoint", p(&ckpt), p(&empty)]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
}

#[test]
fn flags_override_config_values() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--n-images", "200", "--theta-generated", "0.8"]);
    let config = write_config(dir.path(), &["ratio"]);
    let out_path = dir.path().join("r.json");
    let out = capbias(&[
        "report",
        "--config",
        p(&config),
        "--metrics",
        "ratio,error",
        "--label",
        "flagged",
        "--set",
        "mixed_as_error=true",
        "--out",
        p(&out_path),
        "-q",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = Report::read_json(&out_path).unwrap();
    assert_eq!(report.label, "flagged");
    assert!(report.metric("error").is_some());
    assert!(report.metric("ba").is_none());
}
