use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn groupprof(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_groupprof"))
        .current_dir(dir)
        .args(args)
        .env_remove("GROUPPROF_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = groupprof(dir, args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

const INPUT: [&str; 6] = [
    "--users",
    "data/users.jsonl",
    "--candidates",
    "data/candidates.jsonl",
    "--requests",
    "data/requests.jsonl",
];

fn with_input<'a>(cmd: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![cmd];
    args.extend(INPUT);
    args.extend(extra);
    args
}

/// A small synthetic corpus in `dir/data`.
fn small_corpus() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    ok(
        tmp.path(),
        &["synth", "--seed", "5", "--n-groups", "2", "--users-per-group", "4", "--out", "data"],
    );
    tmp
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(files_under(&path));
        } else {
            out.push(path);
        }
    }
    out.sort();
    out
}

#[test]
fn synth_writes_corpus_and_ground_truth() {
    let tmp = small_corpus();
    let data = tmp.path().join("data");
    for f in ["users.jsonl", "candidates.jsonl", "requests.jsonl", "ground_truth.json", "manifest.json"] {
        assert!(data.join(f).is_file(), "{f}");
    }
    let users = std::fs::read_to_string(data.join("users.jsonl")).unwrap();
    assert_eq!(users.lines().count(), 8);
    let truth = read_json(data.join("ground_truth.json"));
    assert_eq!(truth["theta_g"].as_array().unwrap().len(), 2);
}

#[test]
fn profile_writes_distributions_and_manifest() {
    let tmp = small_corpus();
    ok(tmp.path(), &with_input("profile", &["--criterion", "age", "--out", "out"]));
    let age = tmp.path().join("out/profiles/age");
    let tsvs: Vec<_> = files_under(&age)
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "tsv"))
        .collect();
    assert!(!tsvs.is_empty());
    for tsv in &tsvs {
        let sidecar = read_json(tsv.with_extension("json"));
        assert_eq!(sidecar["criterion"], "age");
        assert_eq!(sidecar["distribution"], tsv.file_name().unwrap().to_str().unwrap());
        assert!(!sidecar["lambdas"].as_object().unwrap().is_empty());
        let total: f64 = std::fs::read_to_string(tsv)
            .unwrap()
            .lines()
            .map(|l| l.split('\t').nth(1).unwrap().parse::<f64>().unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
    let manifest = read_json(tmp.path().join("out/manifest.json"));
    assert_eq!(manifest["command"], "profile");
    let outputs = manifest["outputs"].as_object().unwrap();
    assert_eq!(outputs.len(), 2 * tsvs.len());
    assert!(outputs.values().all(|d| d.as_str().unwrap().len() == 64));
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 3);
}

#[test]
fn eval_reports_map_and_significance() {
    let tmp = small_corpus();
    ok(tmp.path(), &with_input("eval", &["--criterion", "gender,age", "--out", "eval"]));
    let report = read_json(tmp.path().join("eval/eval.json"));
    let comparisons = report["comparisons"].as_array().unwrap();
    assert_eq!(comparisons.len(), 2);
    let text = serde_json::to_string(&report).unwrap();
    for key in ["map_score", "per_request_ap", "p_value"] {
        assert!(text.contains(key), "{key} missing");
    }
}

#[test]
fn persisted_profiles_rank_like_fresh_estimates() {
    let tmp = small_corpus();
    let dir = tmp.path();
    ok(dir, &with_input("profile", &["--criterion", "age", "--out", "p"]));
    ok(dir, &with_input("rank", &["--criterion", "age", "--out", "fresh"]));
    ok(dir, &with_input("rank", &["--criterion", "age", "--profiles", "p", "--out", "loaded"]));
    let runs = |d: &str| -> Vec<(String, String)> {
        files_under(&dir.join(d).join("runs"))
            .into_iter()
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&p).unwrap()))
            .collect()
    };
    let fresh = runs("fresh");
    assert_eq!(fresh.len(), 3);
    assert_eq!(fresh, runs("loaded"));
}

#[test]
fn eval_of_run_files_matches_comparison() {
    let tmp = small_corpus();
    let dir = tmp.path();
    ok(dir, &with_input("rank", &["--criterion", "gender", "--strategy", "preferences", "--out", "r"]));
    let run_file = files_under(&dir.join("r/runs")).remove(0);
    let run_arg = run_file.to_string_lossy().into_owned();
    ok(dir, &with_input("eval", &["--runs", &run_arg, "--out", "e1"]));
    ok(dir, &with_input("eval", &["--criterion", "gender", "--out", "e2"]));
    let from_runs = read_json(dir.join("e1/eval.json"));
    let from_runs = &from_runs["runs"][0];
    let comparison = read_json(dir.join("e2/eval.json"));
    let text = serde_json::to_string(&comparison).unwrap();
    let map = from_runs["map_score"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&map));
    assert!(text.contains(&serde_json::to_string(&from_runs["map_score"]).unwrap()));
}

#[test]
fn sweep_has_one_section_per_width() {
    let tmp = small_corpus();
    ok(tmp.path(), &with_input("sweep", &["--bin-widths", "5,10,20,40", "--out", "s"]));
    let results = read_json(tmp.path().join("s/sweep.json"));
    let widths: Vec<u64> = results
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["bin_width"].as_u64().unwrap())
        .collect();
    assert_eq!(widths, [5, 10, 20, 40]);
    let tsv = std::fs::read_to_string(tmp.path().join("s/sweep.tsv")).unwrap();
    for w in ["5", "10", "20", "40"] {
        assert!(tsv.lines().any(|l| l.split('\t').next() == Some(w)), "width {w}");
    }
}

#[test]
fn no_temporary_files_are_left_behind() {
    let tmp = small_corpus();
    ok(tmp.path(), &with_input("profile", &["--out", "p"]));
    ok(tmp.path(), &with_input("rank", &["--profiles", "p", "--out", "r"]));
    for f in files_under(tmp.path()) {
        let name = f.file_name().unwrap().to_string_lossy().into_owned();
        assert!(!name.starts_with(".tmp"), "stray {}", f.display());
    }
}

#[test]
fn exit_codes() {
    let tmp = small_corpus();
    let dir = tmp.path();
    assert_eq!(groupprof(dir, &["--help"]).status.code(), Some(0));
    assert_eq!(groupprof(dir, &["--version"]).status.code(), Some(0));
    assert_eq!(groupprof(dir, &["profile", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(groupprof(dir, &with_input("profile", &["--criterion", "shoe-size", "--out", "x"])).status.code(), Some(1));

    std::fs::write(dir.join("data/broken.jsonl"), "{\"user_id\": \"u1\", \"age\": \n").unwrap();
    let broken = ["profile", "--users", "data/broken.jsonl", "--candidates", "data/candidates.jsonl"];
    let mut args = broken.to_vec();
    args.extend(["--requests", "data/requests.jsonl", "--out", "x"]);
    let out = groupprof(dir, &args);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());

    let mut args = vec!["profile", "--users", "data/missing.jsonl"];
    args.extend(["--candidates", "data/candidates.jsonl", "--requests", "data/requests.jsonl", "--out", "x"]);
    assert_eq!(groupprof(dir, &args).status.code(), Some(2));
}

fn groupprof_threads(dir: &Path, threads: &str, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_groupprof"))
        .current_dir(dir)
        .args(args)
        .env("GROUPPROF_THREADS", threads)
        .output()
        .expect("binary runs")
}

#[test]
fn thread_count_does_not_change_output() {
    let tmp = small_corpus();
    let dir = tmp.path();
    for (threads, out) in [("1", "one"), ("3", "three")] {
        let code = groupprof_threads(dir, threads, &with_input("eval", &["--criterion", "age,season", "--out", out]));
        assert_eq!(code.status.code(), Some(0));
    }
    let a = std::fs::read(dir.join("one/eval.json")).unwrap();
    let b = std::fs::read(dir.join("three/eval.json")).unwrap();
    assert_eq!(a, b);
    let bad = groupprof_threads(dir, "many", &with_input("eval", &["--out", "x"]));
    assert_eq!(bad.status.code(), Some(1));
}
