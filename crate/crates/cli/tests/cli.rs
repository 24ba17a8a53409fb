use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_semshift");
const SUBCOMMANDS: [&str; 8] = ["ingest", "process", "sus", "solve", "baseline", "eval", "export-plan", "synth"];

fn semshift(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("SEMSHIFT_CACHE_DIR").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small synthetic corpus plus a config tuned so every task can split it.
fn demo(dir: &Path) -> String {
    let out = semshift(&["synth", "--out", dir.to_str().unwrap(), "--words", "12", "--per-period", "15", "--seed", "3"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let path = dir.join("config.json");
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    cfg["eval"]["lambda_grid"] = serde_json::json!([10.0, 100.0]);
    cfg["eval"]["lambda_r_grid"] = serde_json::json!([100.0]);
    cfg["eval"]["damping_grid"] = serde_json::json!([0.9]);
    cfg["eval"]["split_ratio"] = serde_json::json!(0.5);
    cfg["eval"]["repetitions"] = serde_json::json!(5);
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn help_for_every_subcommand() {
    for sub in SUBCOMMANDS {
        let out = semshift(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("Usage: semshift") && text.contains("--"), "{sub}: {text}");
    }
    assert_eq!(semshift(&["--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_1() {
    for args in [&["frobnicate"][..], &["sus", "--bogus"], &["eval", "--task", "nope"], &["solve"]] {
        let out = semshift(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", stderr(&out));
        assert!(!stderr(&out).is_empty());
    }
}

#[test]
fn ingest_writes_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let uses = dir.path().join("uses.tsv");
    let senses = dir.path().join("senses.tsv");
    fs::write(
        &uses,
        "identifier\tlemma\tgrouping\tcontext\tindexes_target_token\n\
         a1\tball\t1\tthe ball was round\t4:8\n\
         a2\tball\t2\ta grand ball tonight\t8:12\n",
    )
    .unwrap();
    fs::write(&senses, "identifier\tcluster\na1\t0\na2\t-1\nzz\t3\n").unwrap();
    let out_dir = dir.path().join("data");
    let out = semshift(&[
        "ingest",
        "--uses",
        uses.to_str().unwrap(),
        "--senses",
        senses.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    // the unmatched identifier is reported, not fatal
    assert!(stderr(&out).contains("zz"));
    let text = fs::read_to_string(out_dir.join("instances.jsonl")).unwrap();
    let rows: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["gold_sense"], 0);
    assert_eq!(rows[1]["gold_sense"], Value::Null);
    assert_eq!(rows[1]["period"], "MODERN");
}

#[test]
fn ingest_rejects_unknown_grouping() {
    let dir = tempfile::tempdir().unwrap();
    let uses = dir.path().join("uses.tsv");
    fs::write(&uses, "identifier\tlemma\tgrouping\tcontext\tindexes_target_token\na\tx\t7\tan x\t3:4\n").unwrap();
    let out = semshift(&["ingest", "--uses", uses.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn sus_without_cache_says_run_process_first() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo(dir.path());
    let out = semshift(&["sus", "--config", &cfg, "--word", "pseudo00", "--lambda", "100"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("run process first"), "{}", stderr(&out));
    let plan = dir.path().join("plan.csv");
    let out = semshift(&["export-plan", "--config", &cfg, "--word", "pseudo00", "--out", plan.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn process_then_export() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo(dir.path());
    let out_dir = dir.path().join("scores");
    let out = semshift(&["process", "--config", &cfg, "--word", "pseudo01", "--word", "pseudo02", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let words = fs::read_to_string(out_dir.join("words.csv")).unwrap();
    assert_eq!(words.lines().count(), 3);
    assert!(words.lines().next().unwrap().starts_with("word,theta"));

    let out = semshift(&["sus", "--config", &cfg, "--word", "pseudo01"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(table.lines().count(), 31);
    assert_eq!(table, fs::read_to_string(out_dir.join("pseudo01.sus.csv")).unwrap());

    let plan = dir.path().join("plan.csv");
    let out = semshift(&["export-plan", "--config", &cfg, "--word", "pseudo01", "--out", plan.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(fs::read_to_string(&plan).unwrap().lines().count(), 1 + 15 * 15);
    let block = dir.path().join("plan.suse");
    let out = semshift(&[
        "export-plan", "--config", &cfg, "--word", "pseudo01", "--format", "suse", "--out", block.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(fs::metadata(&block).unwrap().len(), 16 + 4 * 15 * 15);
    assert_eq!(fs::read_to_string(block.with_extension("rows")).unwrap().lines().count(), 15);
}

#[test]
fn eval_is_deterministic_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo(dir.path());
    let mut reports = Vec::new();
    for (i, threads) in ["2", "1", "2"].iter().enumerate() {
        // a fresh cache each time, so every run recomputes
        let cache = dir.path().join(format!("cache{i}"));
        let report = dir.path().join(format!("report{i}.json"));
        let out = semshift(&[
            "eval", "--config", &cfg, "--task", "word-magnitude", "--method", "f_sus,f2", "--threads", threads, "--cache",
            cache.to_str().unwrap(), "--out", report.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        reports.push((fs::read(&report).unwrap(), fs::read(report.with_extension("csv")).unwrap()));
    }
    assert!(reports.windows(2).all(|w| w[0] == w[1]));
    let parsed: Value = serde_json::from_slice(&reports[0].0).unwrap();
    let list = parsed.as_array().unwrap();
    assert_eq!(list.len(), 2);
    assert_eq!(list[0]["method"], "f_sus");
    assert_eq!(list[0]["repetitions"], 5);
}

#[test]
fn eval_rejects_method_of_other_task() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo(dir.path());
    let out = semshift(&["eval", "--config", &cfg, "--task", "instance", "--method", "f2"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn cache_location_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = demo(dir.path());
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(&cfg_path).unwrap()).unwrap();
    cfg["cache"] = Value::Null;
    fs::write(&cfg_path, cfg.to_string()).unwrap();
    let cache = dir.path().join("from-env");
    let out = Command::new(BIN)
        .args(["process", "--config", &cfg_path, "--word", "pseudo03"])
        .env("SEMSHIFT_CACHE_DIR", &cache)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(cache.join("pseudo03").join("manifest.json").exists());
}

#[test]
fn fatal_nonconvergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = demo(dir.path());
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(&cfg_path).unwrap()).unwrap();
    cfg["mm"]["max_iter"] = serde_json::json!(1);
    cfg["mm"]["polish"] = serde_json::json!(false);
    fs::write(&cfg_path, cfg.to_string()).unwrap();
    let args = ["process", "--config", &cfg_path, "--word", "pseudo05"];
    let out = semshift(&args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stderr(&out).contains("did not converge"));
    let mut fatal = args.to_vec();
    fatal.push("--fail-on-nonconvergence");
    assert_eq!(semshift(&fatal).status.code(), Some(3));
}

#[test]
fn solve_balanced_and_penalized() {
    let dir = tempfile::tempdir().unwrap();
    demo(dir.path());
    let emb = dir.path().join("embeddings.suse");
    let e = emb.to_str().unwrap();
    let out = semshift(&["solve", "--source", e, "--target", e]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["lambda"], Value::Null);
    assert!(summary["transport_cost"].as_f64().unwrap().abs() < 1e-9);
    assert!((summary["total_mass"].as_f64().unwrap() - 1.0).abs() < 1e-9);

    let plan = dir.path().join("p.csv");
    let out = semshift(&["solve", "--source", e, "--target", e, "--lambda", "10", "--out", plan.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["lambda"], 10.0);
    assert!(plan.exists());

    let missing = dir.path().join("nope.suse");
    let out = semshift(&["solve", "--source", missing.to_str().unwrap(), "--target", e]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn baseline_writes_clusters_and_sfds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo(dir.path());
    let out_dir = dir.path().join("ap");
    let out = semshift(&[
        "baseline", "--config", &cfg, "--word", "pseudo00", "--damping-grid", "0.7,0.9", "--out", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let summary: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("baseline.json")).unwrap()).unwrap();
    let runs = summary["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2);
    for r in runs {
        let old: u64 = r["old_counts"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).sum();
        assert_eq!(old, 15);
    }
    assert!(summary["gold"]["pseudo00"].is_object());
    assert!(out_dir.join("pseudo00.clusters-0.9.csv").exists());
}

#[test]
fn config_schema_version_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(&path, r#"{"version": 99}"#).unwrap();
    let out = semshift(&["process", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("schema version"));
}
