use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn stella(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stella")).args(["--log", "warn"]).args(args).output().unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/desk").join(name)
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn error_json(o: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&o.stderr);
    let line = stderr.lines().rev().find(|l| l.contains("\"exit_code\"")).expect("error line on stderr");
    serde_json::from_str(line).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn stage_commands_chain_and_verify() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = stella(&["ingest", "--manifest", p(&fixture("manifest.jsonl")), "--out", p(d)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(m["counts"]["accepted"], 60);

    let o = stella(&["chunk", "--accepted", p(&d.join("accepted.jsonl")), "--out", p(&d.join("passages.jsonl"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = stella(&["verify", "--work-dir", p(d)]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["chain_links"], 1);

    fs::write(d.join("accepted.jsonl"), "{}\n").unwrap();
    let o = stella(&["verify", "--work-dir", p(d)]);
    assert_eq!(code(&o), 5);
}

#[test]
fn missing_input_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = stella(&[
        "select",
        "--mock",
        "--passages",
        p(&d.join("passages.jsonl")),
        "--dict",
        p(&d.join("dict.json")),
        "--out",
        p(&d.join("candidates.jsonl")),
    ]);
    assert_eq!(code(&o), 3);
    let e = error_json(&o);
    assert_eq!(e["exit_code"], 3);
    assert!(e["error"].as_str().unwrap().contains("passages.jsonl"));
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[chunk]\nchunk_size = 10\noverlap = 10\n").unwrap();
    assert_eq!(code(&stella(&["run-all", "--mock", "--config", p(&cfg)])), 2);
    fs::write(&cfg, "[select]\nkk = 3\n").unwrap();
    assert_eq!(code(&stella(&["run-all", "--mock", "--config", p(&cfg)])), 2);
}

#[test]
fn live_gateway_without_profiles_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = stella(&["run", "terms", "--config", p(&fixture("desk.toml")), "--work-dir", p(dir.path())]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn malformed_qrels_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let en = dir.path().join("en");
    fs::create_dir_all(en.join("qrels")).unwrap();
    fs::write(en.join("corpus.jsonl"), "{\"_id\":\"p1\",\"title\":\"\",\"text\":\"rocket nozzle\"}\n").unwrap();
    fs::write(en.join("queries.jsonl"), "{\"_id\":\"tcq:p1\",\"text\":\"rocket nozzle\"}\n").unwrap();
    fs::write(en.join("qrels/test.tsv"), "query-id\tcorpus-id\tscore\ntcq:p1 p1 1\n").unwrap();
    let o = stella(&["eval", "--beir", p(dir.path()), "--retriever", "bm25", "--k", "10"]);
    assert_eq!(code(&o), 5);
    assert!(error_json(&o)["error"].as_str().unwrap().contains(":2:"));

    fs::write(en.join("qrels/test.tsv"), "query-id\tcorpus-id\tscore\ntcq:p1\tp1\t1\n").unwrap();
    let o = stella(&["eval", "--beir", p(dir.path()), "--retriever", "bm25", "--k", "10"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["reference"]["overall"], 1.0);
}

#[test]
fn validate_intents_reports_f1() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred.tsv");
    let gold = dir.path().join("gold.jsonl");
    fs::write(&pred, "id\tintent\np1\tdef\np2\tnum\np3\tnum\np4\tnum\n").unwrap();
    let gold_lines: String = [("p1", "def"), ("p2", "def"), ("p3", "num"), ("p4", "num")]
        .iter()
        .map(|(i, l)| format!("{{\"id\":\"{i}\",\"intent\":\"{l}\"}}\n"))
        .collect();
    fs::write(&gold, gold_lines).unwrap();
    let out = dir.path().join("f1.json");
    let o = stella(&["validate-intents", "--pred", p(&pred), "--ref", p(&gold), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(r["micro_f1"], 0.75);
    assert!((r["macro_f1"].as_f64().unwrap() - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);

    fs::write(&pred, "p1\tdef\n").unwrap();
    let o = stella(&["validate-intents", "--pred", p(&pred), "--ref", p(&gold)]);
    assert_eq!(code(&o), 5);
}
