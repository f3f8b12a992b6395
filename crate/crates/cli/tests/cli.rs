//! End-to-end CLI checks: the binary composes the same pipeline as direct
//! library calls, outputs are byte-identical across reruns, and failures
//! exit nonzero with a machine-readable error.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sgtransfer::external::{build_external_plan, enumerate_na};
use sgtransfer::integrate::{load_enhanced, merge, write_enhanced};
use sgtransfer::internal::build_plan;
use sgtransfer::model::{build_triplet_index, load_dataset, load_vocab};
use sgtransfer::scorer::load_external_scores;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sgtransfer"))
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "command {:?} failed:\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Workspace {
            dir: tempfile::tempdir().unwrap(),
        };
        run(&[
            "synth",
            "--images",
            "40",
            "--object-classes",
            "10",
            "--predicates",
            "12",
            "--generals",
            "2",
            "--children-per-general",
            "2",
            "--seed",
            "1",
            "--out-dir",
            ws.path("synth").to_str().unwrap(),
        ]);
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn dataset(&self) -> PathBuf {
        self.path("synth/dataset.jsonl")
    }

    fn vocab_args(&self) -> Vec<String> {
        vec![
            "--objects".into(),
            self.path("synth/objects.txt").display().to_string(),
            "--predicates".into(),
            self.path("synth/predicates.txt").display().to_string(),
        ]
    }
}

fn str_args(owned: &[String]) -> Vec<&str> {
    owned.iter().map(|s| s.as_str()).collect()
}

#[test]
fn cli_pipeline_matches_library_composition() {
    let ws = Workspace::new();
    let vocab_args = ws.vocab_args();
    let dataset = ws.dataset().display().to_string();
    let scores = ws.path("scores.jsonl").display().to_string();
    let internal_plan = ws.path("internal.jsonl").display().to_string();
    let external_plan = ws.path("external.jsonl").display().to_string();
    let enhanced_cli = ws.path("enhanced_cli.jsonl");

    let mut args: Vec<&str> = vec!["score", "--dataset", &dataset, "--out", &scores];
    args.extend(str_args(&vocab_args));
    run(&args);

    let mut args: Vec<&str> = vec![
        "internal",
        "--dataset",
        &dataset,
        "--scores",
        &scores,
        "--k-i",
        "70",
        "--out",
        &internal_plan,
    ];
    args.extend(str_args(&vocab_args));
    run(&args);

    let mut args: Vec<&str> = vec![
        "external",
        "--dataset",
        &dataset,
        "--scores",
        &scores,
        "--k-e",
        "100",
        "--head-exclude",
        "3",
        "--out",
        &external_plan,
    ];
    args.extend(str_args(&vocab_args));
    run(&args);

    let mut args: Vec<&str> = vec![
        "merge",
        "--dataset",
        &dataset,
        "--internal",
        &internal_plan,
        "--external",
        &external_plan,
        "--out",
        enhanced_cli.to_str().unwrap(),
    ];
    args.extend(str_args(&vocab_args));
    run(&args);

    // The same composition through the library, reading the same score dump.
    let vocab = load_vocab(
        &ws.path("synth/objects.txt"),
        &ws.path("synth/predicates.txt"),
    )
    .unwrap();
    let d = load_dataset(&ws.dataset(), &vocab).unwrap();
    let table = load_external_scores(Path::new(&scores), &vocab).unwrap();
    let index = build_triplet_index(&d);
    let ip = build_plan(&d, &table, &index, 70.0).unwrap();
    let candidates = enumerate_na(&d);
    let ep = build_external_plan(&candidates, &table, &index, 100.0, 3).unwrap();
    let enhanced = merge(&d, &ip, &ep).unwrap();
    assert!(!ip.moves.is_empty(), "fixture should produce moves");
    assert!(!ep.additions.is_empty(), "fixture should produce additions");

    let enhanced_lib = ws.path("enhanced_lib.jsonl");
    write_enhanced(&enhanced, &enhanced_lib).unwrap();
    assert_eq!(
        std::fs::read(&enhanced_cli).unwrap(),
        std::fs::read(&enhanced_lib).unwrap(),
        "CLI bytes equal library bytes"
    );
}

#[test]
fn reruns_are_byte_identical() {
    let ws = Workspace::new();
    let vocab_args = ws.vocab_args();
    let dataset = ws.dataset().display().to_string();

    for out_name in ["a.jsonl", "b.jsonl"] {
        let out = ws.path(out_name).display().to_string();
        let mut args: Vec<&str> = vec!["score", "--dataset", &dataset, "--out", &out];
        args.extend(str_args(&vocab_args));
        run(&args);
    }
    assert_eq!(
        std::fs::read(ws.path("a.jsonl")).unwrap(),
        std::fs::read(ws.path("b.jsonl")).unwrap()
    );
    assert_eq!(
        std::fs::read(ws.path("a.jsonl.manifest.json")).unwrap(),
        std::fs::read(ws.path("b.jsonl.manifest.json")).unwrap()
    );
}

#[test]
fn merge_without_plans_preserves_dataset() {
    let ws = Workspace::new();
    let vocab_args = ws.vocab_args();
    let dataset = ws.dataset().display().to_string();
    let out = ws.path("noop.jsonl");

    let mut args: Vec<&str> = vec![
        "merge",
        "--dataset",
        &dataset,
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend(str_args(&vocab_args));
    run(&args);

    let vocab = load_vocab(
        &ws.path("synth/objects.txt"),
        &ws.path("synth/predicates.txt"),
    )
    .unwrap();
    let original = load_dataset(&ws.dataset(), &vocab).unwrap();
    let (merged, manifest) = load_enhanced(&out, &vocab).unwrap();
    assert_eq!(merged, original);
    let manifest = manifest.unwrap();
    assert_eq!(
        (manifest.moves, manifest.additions, manifest.collisions),
        (0, 0, 0)
    );
}

#[test]
fn evaluate_prints_summary_row() {
    let ws = Workspace::new();
    let vocab_args = ws.vocab_args();
    let dataset = ws.dataset().display().to_string();
    let truth = ws.path("synth/truth.jsonl").display().to_string();
    let prefix = ws.path("report").display().to_string();

    let mut args: Vec<&str> = vec![
        "evaluate",
        "--test",
        &truth,
        "--fit-train",
        &dataset,
        "--family",
        "accuracy",
        "--ks",
        "1,5",
        "--report-prefix",
        &prefix,
    ];
    args.extend(str_args(&vocab_args));
    let out = run(&args);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("top-1: Acc"), "summary row: {stdout}");
    assert!(stdout.contains("Non-Zero"), "summary row: {stdout}");
    assert!(ws.path("report.summary.tsv").exists());
    assert!(ws.path("report.per_predicate.tsv").exists());
    assert!(ws.path("report.json.manifest.json").exists());

    let mut args: Vec<&str> = vec![
        "evaluate",
        "--test",
        &truth,
        "--fit-train",
        &dataset,
        "--family",
        "recall",
        "--ks",
        "20,50",
    ];
    args.extend(str_args(&vocab_args));
    let out = run(&args);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("R@20/50:"), "summary row: {stdout}");
}

#[test]
fn split_and_reports_run() {
    let ws = Workspace::new();
    let vocab_args = ws.vocab_args();
    let dataset = ws.dataset().display().to_string();
    let split_dir = ws.path("split").display().to_string();

    let mut args: Vec<&str> = vec![
        "split",
        "--corpus",
        &dataset,
        "--min-test",
        "2",
        "--min-train",
        "1",
        "--seed",
        "3",
        "--out-dir",
        &split_dir,
    ];
    args.extend(str_args(&vocab_args));
    run(&args);
    assert!(ws.path("split/train.jsonl").exists());
    assert!(ws.path("split/val.jsonl").exists());
    assert!(ws.path("split/test.jsonl").exists());
    assert!(ws.path("split/split.manifest.json").exists());

    // Distribution report between the dataset and itself.
    let dist = ws.path("dist.tsv").display().to_string();
    let mut args: Vec<&str> = vec![
        "report",
        "distribution",
        "--before",
        &dataset,
        "--after",
        &dataset,
        "--bins",
        "3",
        "--out",
        &dist,
    ];
    args.extend(str_args(&vocab_args));
    run(&args);
    let tsv = std::fs::read_to_string(ws.path("dist.tsv")).unwrap();
    assert!(tsv.starts_with("bin\trank_lo"), "{tsv}");

    // Transfer-pair report over a real plan.
    let scores = ws.path("scores.jsonl").display().to_string();
    let mut args: Vec<&str> = vec!["score", "--dataset", &dataset, "--out", &scores];
    args.extend(str_args(&vocab_args));
    run(&args);
    let plan = ws.path("plan.jsonl").display().to_string();
    let mut args: Vec<&str> = vec![
        "internal",
        "--dataset",
        &dataset,
        "--scores",
        &scores,
        "--out",
        &plan,
    ];
    args.extend(str_args(&vocab_args));
    run(&args);
    let pairs = ws.path("pairs.tsv").display().to_string();
    let mut args: Vec<&str> = vec![
        "report", "pairs", "--plan", &plan, "--top-n", "5", "--out", &pairs,
    ];
    args.extend(str_args(&vocab_args));
    run(&args);
    let tsv = std::fs::read_to_string(ws.path("pairs.tsv")).unwrap();
    assert!(tsv.starts_with("general\tinformative\tmoved"), "{tsv}");
}

#[test]
fn stats_reports_counters() {
    let ws = Workspace::new();
    let vocab_args = ws.vocab_args();
    let dataset = ws.dataset().display().to_string();
    let mut args: Vec<&str> = vec!["stats", "--dataset", &dataset, "--json"];
    args.extend(str_args(&vocab_args));
    let out = run(&args);
    let payload: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(payload["images"], 40);
    assert!(payload["relations"].as_u64().unwrap() > 0);
}

#[test]
fn profile_sets_transfer_defaults() {
    let ws = Workspace::new();
    let vocab_args = ws.vocab_args();
    let dataset = ws.dataset().display().to_string();
    let scores = ws.path("scores.jsonl").display().to_string();
    let mut args: Vec<&str> = vec!["score", "--dataset", &dataset, "--out", &scores];
    args.extend(str_args(&vocab_args));
    run(&args);

    let plan = ws.path("plan1800.jsonl").display().to_string();
    let mut args: Vec<&str> = vec![
        "internal",
        "--dataset",
        &dataset,
        "--scores",
        &scores,
        "--profile",
        "vg1800",
        "--out",
        &plan,
    ];
    args.extend(str_args(&vocab_args));
    run(&args);
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(ws.path("plan1800.jsonl.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["parameters"]["k_i"], 90.0);

    let ext = ws.path("ext1800.jsonl").display().to_string();
    let mut args: Vec<&str> = vec![
        "external",
        "--dataset",
        &dataset,
        "--scores",
        &scores,
        "--profile",
        "vg1800",
        "--out",
        &ext,
    ];
    args.extend(str_args(&vocab_args));
    run(&args);
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(ws.path("ext1800.jsonl.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["parameters"]["head_exclude"], 0);
    assert_eq!(manifest["parameters"]["k_e"], 100.0);
}

#[test]
fn env_config_overrides_defaults_and_flags_win() {
    let ws = Workspace::new();
    let vocab_args = ws.vocab_args();
    let dataset = ws.dataset().display().to_string();
    let scores = ws.path("scores.jsonl").display().to_string();
    let mut args: Vec<&str> = vec!["score", "--dataset", &dataset, "--out", &scores];
    args.extend(str_args(&vocab_args));
    run(&args);

    let config = ws.path("config.toml");
    std::fs::write(&config, "[defaults]\nk_i = 10.0\n").unwrap();

    let plan = ws.path("plan_cfg.jsonl").display().to_string();
    let mut args: Vec<&str> = vec![
        "internal",
        "--dataset",
        &dataset,
        "--scores",
        &scores,
        "--out",
        &plan,
    ];
    args.extend(str_args(&vocab_args));
    let out = bin()
        .args(&args)
        .env("SGTRANSFER_CONFIG", &config)
        .output()
        .unwrap();
    assert!(out.status.success());
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(ws.path("plan_cfg.jsonl.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["parameters"]["k_i"], 10.0);

    let plan = ws.path("plan_flag.jsonl").display().to_string();
    let mut args: Vec<&str> = vec![
        "internal",
        "--dataset",
        &dataset,
        "--scores",
        &scores,
        "--k-i",
        "55",
        "--out",
        &plan,
    ];
    args.extend(str_args(&vocab_args));
    let out = bin()
        .args(&args)
        .env("SGTRANSFER_CONFIG", &config)
        .output()
        .unwrap();
    assert!(out.status.success());
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(ws.path("plan_flag.jsonl.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["parameters"]["k_i"], 55.0);
}

#[test]
fn failures_exit_nonzero_with_json_error() {
    let ws = Workspace::new();
    let vocab_args = ws.vocab_args();
    let mut args: Vec<&str> = vec!["stats", "--dataset", "/definitely/missing.jsonl"];
    args.extend(str_args(&vocab_args));
    let out = bin().args(&args).output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let payload: serde_json::Value =
        serde_json::from_str(stderr.lines().last().unwrap()).expect("stderr is JSON");
    assert_eq!(payload["kind"], "io");
    assert!(payload["error"].as_str().unwrap().contains("missing.jsonl"));
}

#[test]
fn workers_flag_does_not_change_output() {
    let ws = Workspace::new();
    let vocab_args = ws.vocab_args();
    let dataset = ws.dataset().display().to_string();
    for (out_name, workers) in [("w1.jsonl", "1"), ("w4.jsonl", "4")] {
        let out = ws.path(out_name).display().to_string();
        let mut args: Vec<&str> = vec![
            "--workers",
            workers,
            "score",
            "--dataset",
            &dataset,
            "--out",
            &out,
        ];
        args.extend(str_args(&vocab_args));
        run(&args);
    }
    assert_eq!(
        std::fs::read(ws.path("w1.jsonl")).unwrap(),
        std::fs::read(ws.path("w4.jsonl")).unwrap()
    );
}
