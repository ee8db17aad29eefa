mod common;

use std::fs;

use common::{fixture, greenrec, ok, read};
use serde_json::Value;

fn s(p: &std::path::Path) -> &str {
    p.to_str().unwrap()
}

fn lines(path: impl AsRef<std::path::Path>) -> Vec<Value> {
    String::from_utf8(read(path))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn filter_keeps_twenty_per_session_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path(), 120, 6, 4, "");
    let run = tmp.path().join("run");
    let stdout = ok(&["filter", "--config", s(&fx.config), "--run-dir", s(&run)]);
    assert!(stdout.contains("target retention"));

    let rows = lines(run.join("candidates.jsonl"));
    let filtered: Vec<&Value> = rows.iter().filter(|r| r["kind"] == "filtered").collect();
    let initial: Vec<&Value> = rows.iter().filter(|r| r["kind"] == "initial").collect();
    assert_eq!(filtered.len(), 10);
    assert_eq!(initial.len(), 10);
    assert!(filtered.iter().all(|r| r["candidates"].as_array().unwrap().len() == 20));
    assert!(initial.iter().all(|r| r["candidates"].as_array().unwrap().len() == 100));

    let first = read(run.join("candidates.jsonl"));
    ok(&["filter", "--config", s(&fx.config), "--run-dir", s(&run)]);
    assert_eq!(first, read(run.join("candidates.jsonl")));

    let other = tmp.path().join("run2");
    ok(&["filter", "--config", s(&fx.config), "--run-dir", s(&other), "--seed", "4"]);
    assert_ne!(first, read(other.join("candidates.jsonl")));
}

#[test]
fn cutoff_larger_than_k_filter_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let allowed = fixture(&tmp.path().join("a"), 120, 6, 4, "[reranker]\nk_filter = 5\n[metrics]\ncutoffs = [1, 5]\n");
    ok(&["filter", "--config", s(&allowed.config), "--run-dir", s(&tmp.path().join("ra"))]);

    let rejected = fixture(&tmp.path().join("b"), 120, 6, 4, "[reranker]\nk_filter = 5\n[metrics]\ncutoffs = [1, 6]\n");
    let out = greenrec(&["filter", "--config", s(&rejected.config), "--run-dir", s(&tmp.path().join("rb"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("k_filter"));
}

#[test]
fn missing_catalog_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path(), 120, 6, 4, "");
    fs::remove_file(fx.dir.join("catalog.jsonl")).unwrap();
    let out = greenrec(&["optimize", "--config", s(&fx.config)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("paths.catalog"));
}

#[test]
fn malformed_catalog_reports_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path(), 120, 6, 4, "");
    let mut text = fs::read_to_string(fx.dir.join("catalog.jsonl")).unwrap();
    text.push_str("{\"id\": \"broken\"\n");
    fs::write(fx.dir.join("catalog.jsonl"), text).unwrap();
    let out = greenrec(&["filter", "--config", s(&fx.config), "--run-dir", s(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 121"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(greenrec(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(greenrec(&["filter"]).status.code(), Some(2));
    assert_eq!(greenrec(&["report", "--format", "xml", "--run-dir", "x"]).status.code(), Some(2));
}

#[test]
fn optimize_smoke_writes_five_trials() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path(), 120, 12, 4, "");
    let run = tmp.path().join("run");
    let args = ["--config", s(&fx.config), "--run-dir", s(&run), "--max-trials", "5"];
    ok(&[&["filter"], &args[..]].concat());
    let stdout = ok(&[&["optimize"], &args[..]].concat());
    assert!(stdout.contains("best prompt"));

    assert_eq!(lines(run.join("trials.jsonl")).len(), 5);
    let result: Value = serde_json::from_slice(&read(run.join("result.json"))).unwrap();
    assert!(result["best_prompt"]["text"].as_str().unwrap().contains("{session}"));
    assert_eq!(result["total_pulls"], 5);
    let prompts = lines(run.join("prompts.jsonl"));
    assert_eq!(prompts[0]["origin"], "seed");
    assert!(prompts.iter().all(|p| p.get("id").is_some() && p.get("parent").is_some()));
}

#[test]
fn optimize_without_filter_reports_missing_candidates() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path(), 120, 6, 4, "");
    let out = greenrec(&["optimize", "--config", s(&fx.config), "--run-dir", s(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("candidates.jsonl"));
}

#[test]
fn perfect_mock_prompt_hits_every_session() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path(), 120, 6, 8, "");
    let run = tmp.path().join("run");
    let prompt = tmp.path().join("perfect.txt");
    fs::write(&prompt, "{{q=1}} {session}\n{candidates}").unwrap();
    ok(&["filter", "--config", s(&fx.config), "--run-dir", s(&run)]);
    ok(&["evaluate", "--config", s(&fx.config), "--run-dir", s(&run), "--prompt", s(&prompt)]);

    let m: Value = serde_json::from_slice(&read(run.join("metrics.json"))).unwrap();
    let retention = m["metrics"]["target_retention_rate"].as_f64().unwrap();
    // Sessions whose target was filtered out can never be hit.
    assert_eq!(m["metrics"]["at"]["1"]["hr"].as_f64().unwrap(), retention);
    assert_eq!(lines(run.join("per_session.jsonl")).len(), 8);
}

/// Identity ranking over hand-written candidate sets with the target planted
/// at ranks 1, 3, 6 and 20.
#[test]
fn planted_ranks_give_hand_computed_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path(), 120, 1, 4, "");
    let identity: Vec<usize> = (1..=20).collect();
    let script = serde_json::json!({"tags": {"evaluate": format!("{identity:?}")}});
    fs::write(fx.dir.join("mock.json"), script.to_string()).unwrap();

    let run = tmp.path().join("run");
    ok(&["filter", "--config", s(&fx.config), "--run-dir", s(&run)]);
    let tests = lines(fx.dir.join("test.jsonl"));
    let mut out = String::new();
    for (session, plant) in tests.iter().zip([1usize, 3, 6, 20]) {
        let target = session["target"].as_str().unwrap();
        let mut ids: Vec<String> = (0..120)
            .map(|n| format!("i{n:03}"))
            .filter(|id| id != target)
            .take(19)
            .collect();
        ids.insert(plant - 1, target.to_string());
        let row = serde_json::json!({"session_id": session["session_id"], "candidates": ids, "kind": "filtered"});
        out.push_str(&format!("{row}\n"));
    }
    fs::write(run.join("candidates.jsonl"), out).unwrap();
    let prompt = tmp.path().join("p.txt");
    fs::write(&prompt, "{session}\n{candidates}").unwrap();
    ok(&["evaluate", "--config", s(&fx.config), "--run-dir", s(&run), "--prompt", s(&prompt)]);

    let m: Value = serde_json::from_slice(&read(run.join("metrics.json"))).unwrap();
    let at = &m["metrics"]["at"];
    let hand_ndcg5 = (1.0 + 1.0 / 4f64.log2()) / 4.0;
    assert_eq!(at["1"]["hr"].as_f64().unwrap(), 0.25);
    assert_eq!(at["5"]["hr"].as_f64().unwrap(), 0.5);
    assert_eq!(at["1"]["ndcg"].as_f64().unwrap(), 0.25);
    assert!((at["5"]["ndcg"].as_f64().unwrap() - hand_ndcg5).abs() < 1e-12);
    assert_eq!(m["metrics"]["failure_rate"].as_f64().unwrap(), 0.0);
}

#[test]
fn empty_test_split_is_an_error_without_report() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path(), 120, 6, 0, "");
    let run = tmp.path().join("run");
    ok(&["filter", "--config", s(&fx.config), "--run-dir", s(&run)]);
    let prompt = tmp.path().join("p.txt");
    fs::write(&prompt, "{session}\n{candidates}").unwrap();
    let out = greenrec(&["evaluate", "--config", s(&fx.config), "--run-dir", s(&run), "--prompt", s(&prompt)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!run.join("metrics.json").exists());
}

#[test]
fn backend_failures_score_zero_and_are_counted() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path(), 120, 2, 4, "");
    let run = tmp.path().join("run");
    ok(&["filter", "--config", s(&fx.config), "--run-dir", s(&run)]);
    let prompt = tmp.path().join("p.txt");
    // No marker and no evaluate entry: every call is unscripted.
    fs::write(&prompt, "{session}\n{candidates}").unwrap();
    ok(&["evaluate", "--config", s(&fx.config), "--run-dir", s(&run), "--prompt", s(&prompt)]);
    let m: Value = serde_json::from_slice(&read(run.join("metrics.json"))).unwrap();
    assert_eq!(m["metrics"]["failure_rate"].as_f64().unwrap(), 1.0);
    assert_eq!(m["metrics"]["at"]["5"]["hr"].as_f64().unwrap(), 0.0);
    assert_eq!(m["metrics"]["n_sessions"], 4);
}

#[test]
fn report_formats() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path(), 120, 8, 4, "");
    let run = tmp.path().join("run");
    let args = ["--config", s(&fx.config), "--run-dir", s(&run), "--max-trials", "4"];
    for cmd in ["filter", "optimize", "evaluate"] {
        ok(&[&[cmd], &args[..]].concat());
    }
    let table = ok(&["report", "--run-dir", s(&run)]);
    for label in ["HR@1", "HR@5", "NDCG@1", "NDCG@5"] {
        assert!(table.lines().any(|l| l.starts_with(label)), "{label} missing in\n{table}");
    }
    assert!(table.contains("mean_reward"));

    let tsv = ok(&["report", "--run-dir", s(&run), "--format", "tsv"]);
    assert_eq!(tsv.lines().next(), Some("metric\tvalue"));
    assert!(tsv.lines().skip(1).take(4).all(|l| l.split('\t').count() == 2));

    let json = ok(&["report", "--run-dir", s(&run), "--format", "json"]);
    let v: Value = serde_json::from_str(&json).unwrap();
    assert!(v["optimization"]["pool"].as_array().is_some());

    // The config alone also locates the run.
    let via_config = ok(&["report", "--config", s(&fx.config), "--run-dir", s(&run)]);
    assert_eq!(via_config, table);
}

#[test]
fn report_on_missing_dir_is_missing_artifact() {
    let out = greenrec(&["report", "--run-dir", "/nonexistent/greenrec-run"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing artifact"));

    let tmp = tempfile::tempdir().unwrap();
    let out = greenrec(&["report", "--run-dir", s(tmp.path())]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("metrics.json"));
}

#[test]
fn auto_named_run_dir_is_reused_across_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path(), 120, 6, 4, "");
    ok(&["filter", "--config", s(&fx.config)]);
    ok(&["optimize", "--config", s(&fx.config), "--max-trials", "12"]);
    let runs: Vec<_> = fs::read_dir(fx.dir.join("runs")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(runs.len(), 1, "{runs:?}");
    let name = runs[0].file_name().unwrap().to_str().unwrap().to_string();
    let (stamp, hash) = name.rsplit_once('-').unwrap();
    assert_eq!(hash.len(), 8);
    assert!(stamp.ends_with('Z'));
    assert!(runs[0].join("result.json").exists());
}

#[test]
fn llm_trace_is_written_when_enabled() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path(), 120, 6, 2, "[logging]\nllm_trace = true\n");
    let run = tmp.path().join("run");
    ok(&["filter", "--config", s(&fx.config), "--run-dir", s(&run)]);
    ok(&["optimize", "--config", s(&fx.config), "--run-dir", s(&run), "--max-trials", "2"]);
    let trace = lines(run.join("llm_trace.jsonl"));
    assert!(!trace.is_empty());
    assert!(trace.iter().all(|t| t["fingerprint"].as_str().unwrap().len() == 64));
    assert!(trace.iter().any(|t| t["tag"] == "evaluate"));
}
