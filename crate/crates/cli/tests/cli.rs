use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use seda_core::corpus::io::{read_records, write_documents};
use seda_core::synthetic::{generate, SyntheticConfig};

fn seda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seda")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn corpus(dir: &Path, documents: usize) -> PathBuf {
    let docs = generate(
        &SyntheticConfig {
            documents,
            ..Default::default()
        },
        "doc",
    )
    .unwrap();
    let path = dir.join("docs.jsonl");
    write_documents(&path, &docs).unwrap();
    path
}

fn error_kind(o: &Output) -> String {
    let line = String::from_utf8_lossy(&o.stderr);
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(v["status"], "error");
    v["kind"].as_str().unwrap().to_string()
}

#[test]
fn missing_input_and_bad_config_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x.jsonl");
    let o = seda(&["segment", "--in", "nope.jsonl", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_kind(&o), "usage");

    let docs = corpus(tmp.path(), 2);
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "d_h=lots\n").unwrap();
    let o = seda(&["train", "--config", s(&cfg), "--data", s(&docs), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_kind(&o), "usage");

    let o = seda(&["segment", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn corrupt_records_are_runtime_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.jsonl");
    fs::write(&bad, "{not json\n").unwrap();
    let o = seda(&["segment", "--in", s(&bad), "--out", s(&tmp.path().join("o.jsonl"))]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_kind(&o), "runtime");
}

#[test]
fn gold_against_itself_scores_one_and_writes_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let docs = corpus(tmp.path(), 5);
    let out = tmp.path().join("eval.json");
    let o = seda(&[
        "evaluate",
        "--pred",
        s(&docs),
        "--gold",
        s(&docs),
        "--json",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["f1"], 1.0);
    assert_eq!(report["ebf"], 1.0);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("eval.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "evaluate");
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["outputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn oracle_augmentation_covers_cross_sentence_entities() {
    let tmp = tempfile::tempdir().unwrap();
    let docs = corpus(tmp.path(), 20);
    let (nl, aug, pred) = (
        tmp.path().join("nl.jsonl"),
        tmp.path().join("aug.jsonl"),
        tmp.path().join("pred.jsonl"),
    );
    assert!(seda(&["segment", "--in", s(&docs), "--out", s(&nl)]).status.success());
    let o = seda(&[
        "augment",
        "--oracle",
        "--in",
        s(&docs),
        "--out",
        s(&aug),
        "--pred",
        s(&pred),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!read_records(&aug).unwrap().is_empty());
    let o = seda(&[
        "report",
        "--gold",
        s(&docs),
        "--cross-sentence",
        "--run",
        &format!("newline={}", s(&nl)),
        "--run",
        &format!("seda={}:{}", s(&aug), s(&pred)),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    // the cross-sentence table comes last
    let row = |name: &str| text.lines().rfind(|l| l.starts_with(name)).unwrap().to_string();
    assert!(row("newline").contains("0.0000"), "{text}");
    assert!(row("seda").contains("1.0000"), "{text}");
}

#[test]
fn ablation_writes_one_row_per_setting_even_into_a_closed_pipe() {
    let tmp = tempfile::tempdir().unwrap();
    let docs = corpus(tmp.path(), 4);
    let out = tmp.path().join("abl.jsonl");
    // close the read end before the table is printed
    let mut child = Command::new(env!("CARGO_BIN_EXE_seda"))
        .args([
            "ablate",
            "--oracle",
            "--in",
            s(&docs),
            "--sizes",
            "2,3",
            "--out",
            s(&out),
        ])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    drop(child.stdout.take());
    let status = child.wait().unwrap();
    assert!(status.success());
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 1 + 3 * 3 * 2);
}

#[test]
fn gradcheck_passes_on_a_sampled_subset() {
    let o = seda(&["gradcheck", "--max-per-tensor", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
}

#[test]
fn relative_inputs_resolve_under_the_data_dir() {
    let tmp = tempfile::tempdir().unwrap();
    corpus(tmp.path(), 2);
    let out = tmp.path().join("nl.jsonl");
    let o = Command::new(env!("CARGO_BIN_EXE_seda"))
        .env("SEDA_DATA_DIR", tmp.path())
        .args(["segment", "--in", "docs.jsonl", "--out", s(&out)])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!read_records(&out).unwrap().is_empty());
}

#[test]
fn standoff_ingestion_reports_counts_and_records_sources() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("corpus");
    fs::create_dir(&dir).unwrap();
    fs::write(dir.join("a.txt"), "My knee and ankle pain.\nTook lipitor.\n").unwrap();
    fs::write(
        dir.join("a.ann"),
        "T1\tADR 3 7;18 22\tknee pain\nT2\tADR 12 22\tankle pain\nT3\tDrug 29 36\tlipitor\n",
    )
    .unwrap();
    let docs = tmp.path().join("docs.jsonl");
    let o = seda(&["ingest", "--corpus", s(&dir), "--out", s(&docs)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stats: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(stats["entities"], 3);
    assert_eq!(stats["discontinuous"], 1);
    let manifest = fs::read_to_string(tmp.path().join("docs.jsonl.manifest.json")).unwrap();
    assert!(manifest.contains("a.ann") && manifest.contains("a.txt"));
}
