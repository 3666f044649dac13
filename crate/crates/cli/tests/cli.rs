use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn dcmcq(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcmcq"))
        .args(args)
        .current_dir(cwd)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn run_toy(tmp: &Path, strategy: &str, extra: &[&str]) -> Output {
    let corpus = fixture("toy.jsonl");
    let script = fixture("toy.script.json");
    let out = tmp.join(format!("toy-{strategy}"));
    let mut args = vec![
        "run",
        "--corpus",
        s(&corpus),
        "--backend",
        "scripted",
        "--script",
        s(&script),
        "--strategy",
        strategy,
        "--output",
        s(&out),
    ];
    args.extend_from_slice(extra);
    dcmcq(&args, tmp)
}

#[test]
fn worked_example_run_succeeds_with_perfect_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = fixture("worked_example.jsonl");
    let script = fixture("worked_example.script.json");
    let out = dcmcq(
        &[
            "run",
            "--corpus",
            s(&corpus),
            "--backend",
            "scripted",
            "--script",
            s(&script),
            "--strategy",
            "rex-got",
            "--output",
            "out",
        ],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = report(&tmp.path().join("out"));
    assert_eq!(r["exact_match"], 1.0);
    assert_eq!(r["macro_f1"], 1.0);
    let preds = fs::read_to_string(tmp.path().join("out/predictions.jsonl")).unwrap();
    let p: serde_json::Value = serde_json::from_str(preds.lines().next().unwrap()).unwrap();
    assert_eq!(p["chosen"], serde_json::json!([0, 1, 4]));
    assert!(tmp
        .path()
        .join("out/traces/worked_example-bob.json")
        .is_file());
    assert!(tmp.path().join("out/by_gold_count.csv").is_file());
}

#[test]
fn replay_with_cold_cache_fails_before_any_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_toy(
        tmp.path(),
        "standard",
        &["--cache", "replay", "--cache-dir", "missing"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("replay"));
    assert!(!tmp.path().join("toy-standard").exists());
}

#[test]
fn record_then_replay_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let rec = run_toy(
        tmp.path(),
        "rex_got",
        &[
            "--cache",
            "record",
            "--cache-dir",
            "cache",
            "--workers",
            "3",
        ],
    );
    assert!(rec.status.success());
    let first = fs::read(tmp.path().join("toy-rex_got/predictions.jsonl")).unwrap();
    let first_report = fs::read(tmp.path().join("toy-rex_got/report.json")).unwrap();
    fs::rename(tmp.path().join("toy-rex_got"), tmp.path().join("recorded")).unwrap();

    // Same flags as the recording run apart from cache mode and workers.
    for workers in ["1", "4"] {
        let out = run_toy(
            tmp.path(),
            "rex_got",
            &[
                "--cache",
                "replay",
                "--cache-dir",
                "cache",
                "--workers",
                workers,
            ],
        );
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let dir = tmp.path().join("toy-rex_got");
        assert!(fs::read(dir.join("predictions.jsonl")).unwrap() == first);
        assert!(fs::read(dir.join("report.json")).unwrap() == first_report);
        fs::remove_dir_all(dir).unwrap();
    }

    // The cache alone serves replay; the script is never consulted.
    let empty = tmp.path().join("empty.json");
    fs::write(&empty, r#"{"version":1,"scripts":[]}"#).unwrap();
    let corpus = fixture("toy.jsonl");
    let out = dcmcq(
        &[
            "run",
            "--corpus",
            s(&corpus),
            "--backend",
            "scripted",
            "--script",
            s(&empty),
            "--strategy",
            "rex_got",
            "--cache",
            "replay",
            "--cache-dir",
            "cache",
            "--output",
            "r",
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    assert!(fs::read(tmp.path().join("r/predictions.jsonl")).unwrap() == first);
}

#[test]
fn five_strategies_and_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for strategy in ["standard", "cot", "forward", "backward", "rex_got"] {
        let out = run_toy(tmp.path(), strategy, &["--workers", "2"]);
        assert!(
            out.status.success(),
            "{strategy}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        reports.push(tmp.path().join(format!("toy-{strategy}/report.json")));
    }
    let mut args = vec!["compare"];
    args.extend(reports.iter().map(|p| s(p)));
    let out = dcmcq(&args, tmp.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(rows.len(), 5);
    let names: Vec<&str> = rows
        .iter()
        .map(|r| r.split_whitespace().next().unwrap())
        .collect();
    assert_eq!(names, ["backward", "cot", "forward", "rex_got", "standard"]);

    args.push("--json");
    let out = dcmcq(&args, tmp.path());
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 5);
}

#[test]
fn compare_groups_columns_by_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run_toy(tmp.path(), "rex_got", &[]).status.success());
    let corpus = fixture("worked_example.jsonl");
    let script = fixture("worked_example.script.json");
    let out = dcmcq(
        &[
            "run",
            "--corpus",
            s(&corpus),
            "--backend",
            "scripted",
            "--script",
            s(&script),
            "--output",
            "fig",
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    let out = dcmcq(
        &["compare", "toy-rex_got/report.json", "fig/report.json"],
        tmp.path(),
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["Strategy", "toy", "worked_example"]);
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn compare_rejects_non_reports() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("x.json"), "{}").unwrap();
    let out = dcmcq(&["compare", "x.json"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn partial_failures_exit_nonzero_with_count() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("empty.json"),
        r#"{"version":1,"scripts":[]}"#,
    )
    .unwrap();
    let corpus = fixture("toy.jsonl");
    let out = dcmcq(
        &[
            "run",
            "--corpus",
            s(&corpus),
            "--backend",
            "scripted",
            "--script",
            "empty.json",
            "--output",
            "o",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("24 instance(s) failed"));
    assert_eq!(report(&tmp.path().join("o"))["n_errors"], 24);
}

#[test]
fn config_file_with_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    let toml = format!(
        "corpus = \"{}\"\nbackend = \"scripted\"\nscript = \"{}\"\nstrategy = \"standard\"\noutput = \"from-file\"\nrepeat = 2\n",
        s(&fixture("toy.jsonl")),
        s(&fixture("toy.script.json"))
    );
    fs::write(tmp.path().join("run.toml"), toml).unwrap();
    let out = dcmcq(
        &["run", "--config", "run.toml", "--strategy", "cot"],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = report(&tmp.path().join("from-file/run-2"));
    assert_eq!(r["strategy"], "cot");
    assert_eq!(
        fs::read(tmp.path().join("from-file/run-1/predictions.jsonl")).unwrap(),
        fs::read(tmp.path().join("from-file/run-2/predictions.jsonl")).unwrap()
    );
    assert!(tmp.path().join("from-file/average.json").is_file());
}

#[test]
fn unknown_strategy_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_toy(tmp.path(), "tree_of_thought", &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn stats_and_cache_purge() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = fixture("toy.jsonl");
    let out = dcmcq(&["stats", s(&corpus), "--json"], tmp.path());
    assert!(out.status.success());
    let stats: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stats["n_instances"], 24);
    let total: u64 = stats["by_gold_count"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(total, 24);

    assert!(run_toy(
        tmp.path(),
        "standard",
        &["--cache", "record", "--cache-dir", "cache"]
    )
    .status
    .success());
    fs::write(tmp.path().join("cache/keep.txt"), "x").unwrap();
    let out = dcmcq(&["cache", "purge", "--cache-dir", "cache"], tmp.path());
    assert!(out.status.success());
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "removed 24 cached completion(s)\n"
    );
    assert!(tmp.path().join("cache/keep.txt").is_file());
}
