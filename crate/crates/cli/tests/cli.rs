use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn demo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/demo")
}

fn moa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moa"))
        .arg("-q")
        .args(args)
        .output()
        .expect("moa runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn error_line(o: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&o.stderr);
    let last = stderr.lines().last().expect("an error line");
    serde_json::from_str(last).unwrap_or_else(|e| panic!("not json ({e}): {last}"))
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = moa(&["bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(moa(&["--help"]).status.code(), Some(0));
    assert_eq!(moa(&["train", "--labels", "x"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_are_one_json_line() {
    let o = moa(&["ingest", "--cases", "/no/such/cases.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    let err = error_line(&o);
    assert_eq!(err["error"], "io");
    assert!(err["message"].as_str().unwrap().contains("/no/such/cases.jsonl"));
    assert_eq!(String::from_utf8_lossy(&o.stderr).lines().count(), 1);
}

#[test]
fn ingest_reports_class_profile() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("summary.json");
    let o = moa(&[
        "ingest",
        "--cases",
        demo().join("cases.jsonl").to_str().unwrap(),
        "--strict",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["cases"], 488);
    assert_eq!(v["class_counts"]["mutant"], 374);
    assert_eq!(v["class_counts"]["wildtype"], 114);
    assert!(dir.path().join("summary.json.manifest.json").exists());
}

#[test]
fn strict_ingest_rejects_warnings() {
    let dir = tempfile::tempdir().unwrap();
    let cases = dir.path().join("cases.jsonl");
    std::fs::write(&cases, "{\"patient_id\": \"P1\", \"age_years\": 40}\n").unwrap();
    assert!(moa(&["ingest", "--cases", cases.to_str().unwrap()]).status.success());
    let o = moa(&["ingest", "--cases", cases.to_str().unwrap(), "--strict"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_line(&o)["error"], "validation");
}

#[test]
fn kb_build_then_query() {
    let dir = tempfile::tempdir().unwrap();
    let index = dir.path().join("kb/index.json");
    let o = moa(&[
        "kb",
        "build",
        "--corpus",
        demo().join("corpus").to_str().unwrap(),
        "--keywords",
        "glioma,IDH",
        "--out",
        index.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["documents"], 11);
    assert_eq!(v["relevant_documents"], 8);
    assert!(dir.path().join("kb/index.json.manifest.json").exists());

    let o = moa(&["kb", "query", "--index", index.to_str().unwrap(), "--query", "1p/19q codeletion CIC", "-k", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let hits: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(hits.len(), 3);
    assert_eq!(hits[0]["doc_id"], "oligodendroglioma-markers");
    let scores: Vec<f64> = hits.iter().map(|h| h["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn kb_query_rejects_mismatched_embedder() {
    let dir = tempfile::tempdir().unwrap();
    let index = dir.path().join("index.json");
    let built = moa(&["kb", "build", "--corpus", demo().join("corpus").to_str().unwrap(), "--out", index.to_str().unwrap()]);
    assert!(built.status.success());
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, "[embedder]\ndimension = 64\n").unwrap();
    let o = moa(&["kb", "query", "--index", index.to_str().unwrap(), "--query", "IDH", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_line(&o)["error"], "config");
}

#[test]
fn embed_texts_and_normalize() {
    let dir = tempfile::tempdir().unwrap();
    let reports = dir.path().join("reports");
    std::fs::create_dir(&reports).unwrap();
    std::fs::write(reports.join("P2.txt"), "**IDH1 status:** mutant\nTP53 R273H oncogenic").unwrap();
    std::fs::write(reports.join("P1.txt"), "# Report\n- wildtype, no alterations").unwrap();
    std::fs::write(reports.join("P3.txt"), "Oligodendroglioma with CIC R215W").unwrap();
    let embs = dir.path().join("embs.jsonl");
    let o = moa(&[
        "embed", "texts", "--in", reports.to_str().unwrap(), "--embedder", "hashed", "--dimension", "32", "--out",
        embs.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<Value> = std::fs::read_to_string(&embs)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let ids: Vec<&str> = rows.iter().map(|r| r["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["P1", "P2", "P3"]);
    assert!(rows.iter().all(|r| r["vector"].as_array().unwrap().len() == 32 && r["modality"] == "report"));

    let stats = dir.path().join("stats.json");
    let normed = dir.path().join("normed.jsonl");
    let fit = moa(&[
        "embed", "normalize", "--stats", stats.to_str().unwrap(), "--in", embs.to_str().unwrap(), "--out",
        normed.to_str().unwrap(), "--fit",
    ]);
    assert!(fit.status.success(), "{}", String::from_utf8_lossy(&fit.stderr));
    let first = std::fs::read(&normed).unwrap();
    // Re-applying the stored statistics reproduces the fitted output.
    let again = moa(&[
        "embed", "normalize", "--stats", stats.to_str().unwrap(), "--in", embs.to_str().unwrap(), "--out",
        normed.to_str().unwrap(),
    ]);
    assert!(again.status.success());
    assert_eq!(std::fs::read(&normed).unwrap(), first);
}

#[test]
fn remote_embedder_refused_offline() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("P1.txt"), "text").unwrap();
    let o = moa(&[
        "embed", "texts", "--in", dir.path().to_str().unwrap(), "--embedder", "remote", "--endpoint",
        "http://127.0.0.1:9/embed", "--offline", "--out", dir.path().join("o.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = error_line(&o);
    assert!(err["message"].as_str().unwrap().contains("offline"), "{err}");
}

#[test]
fn train_writes_checkpoint_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let embs = dir.path().join("e.jsonl");
    let labels = dir.path().join("l.jsonl");
    let mut e = String::new();
    let mut l = String::new();
    for i in 0..20 {
        let y = i % 2;
        let v = [y as f64 + 0.1 * i as f64, 1.0 - y as f64, 0.5];
        e.push_str(&format!("{{\"id\":\"P{i}\",\"vector\":[{},{},{}],\"modality\":\"fused\"}}\n", v[0], v[1], v[2]));
        let label = if y == 1 { "mutant" } else { "wildtype" };
        l.push_str(&format!("{{\"id\":\"P{i}\",\"label\":\"{label}\"}}\n"));
    }
    std::fs::write(&embs, e).unwrap();
    std::fs::write(&labels, l).unwrap();
    let cfg = dir.path().join("t.toml");
    std::fs::write(&cfg, "[train]\nepochs = 3\nhidden_dims = [8, 4, 4]\n").unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let o = moa(&[
        "train", "--embeddings", embs.to_str().unwrap(), "--labels", labels.to_str().unwrap(), "--config",
        cfg.to_str().unwrap(), "--out", ckpt.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["epochs"], 3);
    assert!(ckpt.exists());
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.ckpt.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);

    // A label missing for one embedding is a validation error.
    std::fs::write(&labels, "{\"id\":\"P0\",\"label\":\"mutant\"}\n").unwrap();
    let o = moa(&[
        "train", "--embeddings", embs.to_str().unwrap(), "--labels", labels.to_str().unwrap(), "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(error_line(&o)["error"], "validation");
}

#[test]
fn report_generate_small_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(demo().join("cases.jsonl")).unwrap();
    let cases = dir.path().join("cases.jsonl");
    std::fs::write(&cases, text.lines().take(6).collect::<Vec<_>>().join("\n")).unwrap();
    let out = dir.path().join("reports");
    let o = moa(&[
        "report", "generate", "--cases", cases.to_str().unwrap(), "--config",
        demo().join("demo.toml").to_str().unwrap(), "--out", out.to_str().unwrap(), "--offline", "--no-histology",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(summary["written"], 6);
    assert_eq!(summary["histology_invocations"], 0);
    let report = std::fs::read_to_string(out.join("TCGA-SYN-0001.txt")).unwrap();
    assert!(report.trim_end().lines().last().unwrap().starts_with("IDH1 status: "));
    assert!(out.join("TCGA-SYN-0001.transcript.json").exists());
    assert!(out.join("run_manifest.json").exists());
}

#[test]
fn experiment_requires_an_output_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, format!("[paths]\ncases = {:?}\n", demo().join("cases.jsonl"))).unwrap();
    let o = moa(&["experiment", "run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_line(&o)["error"], "config");
}
