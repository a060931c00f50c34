use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sparse_fca::bench::checkpoint;
use sparse_fca::bench::cli::{
    EXIT_BAD_ARCHIVE, EXIT_BAD_CONFIG, EXIT_MISSING_FILE, EXIT_USAGE, EXIT_VERSION,
};
use sparse_fca::bench::report::CSV_COLUMNS;
use sparse_fca::bench::{ExperimentConfig, MetricsFile};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparse-fca"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn fails_with(args: &[&str], code: i32) -> String {
    let out = run(args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stderr = String::from_utf8(out.stderr).unwrap();
    let last = stderr.lines().last().unwrap_or_default().to_string();
    assert!(
        last.starts_with(&format!("error: code={code} kind=")),
        "{last}"
    );
    last
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// gen-data, pretrain, adapt, eval (with and without adapter), report.
fn pipeline(dir: &Path) {
    let cfg = config("smoke.json");
    let cfg = s(&cfg);
    let data = dir.join("data");
    let teacher = dir.join("teacher");
    let adapted = dir.join("adapt");
    ok(&["gen-data", "--config", cfg, "--out", s(&data)]);
    ok(&[
        "pretrain",
        "--config",
        cfg,
        "--data",
        s(&data),
        "--out",
        s(&teacher),
    ]);
    let teacher_file = teacher.join("teacher.fcaz");
    ok(&[
        "adapt",
        "--config",
        cfg,
        "--data",
        s(&data),
        "--teacher",
        s(&teacher_file),
        "--out",
        s(&adapted),
    ]);
    ok(&[
        "eval",
        "--config",
        cfg,
        "--data",
        s(&data),
        "--teacher",
        s(&teacher_file),
        "--out",
        s(&dir.join("base")),
    ]);
    ok(&[
        "eval",
        "--config",
        cfg,
        "--data",
        s(&data),
        "--teacher",
        s(&teacher_file),
        "--fca",
        s(&adapted.join("fca.fcaz")),
        "--out",
        s(&dir.join("cl")),
    ]);
    ok(&[
        "report",
        s(&dir.join("base/eval.json")),
        s(&dir.join("cl/eval.json")),
        "--out",
        s(&dir.join("report")),
    ]);
}

#[test]
fn full_pipeline_emits_every_artifact_deterministically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    for f in [
        "data/manifest.json",
        "data/train.fcaz",
        "data/val.fcaz",
        "data/eval.fcaz",
        "teacher/teacher.fcaz",
        "teacher/pretrain.json",
        "adapt/fca.fcaz",
        "adapt/adapt.json",
        "adapt/adapt.csv",
        "base/eval.json",
        "base/eval.csv",
        "cl/eval.json",
        "report/report.csv",
        "report/report.md",
    ] {
        let x = fs::read(a.path().join(f)).unwrap_or_else(|e| panic!("{f}: {e}"));
        if f.ends_with(".fcaz") || f.ends_with(".csv") || f == "data/manifest.json" {
            assert_eq!(
                x,
                fs::read(b.path().join(f)).unwrap(),
                "{f} differs between runs"
            );
        }
    }

    let csv = fs::read_to_string(a.path().join("report/report.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_COLUMNS.join(","));
    let md = fs::read_to_string(a.path().join("report/report.md")).unwrap();
    assert!(md.lines().any(|l| l.starts_with("| teacher |")), "{md}");
    assert!(md.lines().any(|l| l.starts_with("| cl |")), "{md}");

    // Provenance: the config text and seeds travel with the metrics.
    let metrics = MetricsFile::load(a.path().join("cl/eval.json")).unwrap();
    let source = fs::read_to_string(config("smoke.json")).unwrap();
    assert_eq!(metrics.config_source.as_deref(), Some(source.as_str()));
    assert_eq!(metrics.runs[0].seeds, metrics.config.seeds);

    // The baseline eval has no adapter settings in its rows.
    let base = fs::read_to_string(a.path().join("base/eval.csv")).unwrap();
    assert!(base
        .lines()
        .skip(1)
        .all(|l| l.starts_with("teacher,uniform,0,0,")));
}

#[test]
fn failures_map_to_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");

    let msg = fails_with(
        &[
            "eval",
            "--teacher",
            s(&dir.path().join("missing.fcaz")),
            "--out",
            s(&out),
        ],
        EXIT_MISSING_FILE,
    );
    assert!(msg.contains("missing.fcaz"));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{ "adapt": { "epochz": 3 } }"#).unwrap();
    fails_with(
        &["gen-data", "--config", s(&bad), "--out", s(&out)],
        EXIT_BAD_CONFIG,
    );
    fs::write(&bad, r#"{ "adapt": { "batch_size": 1 } }"#).unwrap();
    fails_with(
        &["gen-data", "--config", s(&bad), "--out", s(&out)],
        EXIT_BAD_CONFIG,
    );

    let future = dir.path().join("future.fcaz");
    let mut bytes = checkpoint::to_bytes(&[]).unwrap();
    bytes[4..8].copy_from_slice(&(checkpoint::VERSION + 1).to_le_bytes());
    fs::write(&future, bytes).unwrap();
    fails_with(
        &["eval", "--teacher", s(&future), "--out", s(&out)],
        EXIT_VERSION,
    );

    let garbage = dir.path().join("garbage.fcaz");
    fs::write(&garbage, b"not an archive").unwrap();
    fails_with(
        &["eval", "--teacher", s(&garbage), "--out", s(&out)],
        EXIT_BAD_ARCHIVE,
    );

    fails_with(&["ablate", "everything", "--out", s(&out)], EXIT_USAGE);
    fails_with(&["eval", "--out", s(&out)], EXIT_USAGE);
}

#[test]
fn help_documents_the_exit_codes() {
    let out = run(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for line in [
        "3  missing or unreadable file",
        "4  invalid config",
        "5  unsupported archive version",
    ] {
        assert!(text.contains(line), "{text}");
    }
}

#[test]
fn bundled_default_config_is_the_built_in_default() {
    let text = fs::read_to_string(config("default.json")).unwrap();
    assert_eq!(
        ExperimentConfig::from_json(&text).unwrap(),
        ExperimentConfig::default()
    );
    for name in ["smoke.json", "quick.json"] {
        ExperimentConfig::from_json(&fs::read_to_string(config(name)).unwrap()).unwrap();
    }
}

#[test]
fn sampling_sweep_scores_both_samplers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("smoke.json");
    ok(&[
        "ablate",
        "sampling",
        "--config",
        s(&cfg),
        "--out",
        s(dir.path()),
    ]);
    let metrics = MetricsFile::load(dir.path().join("ablate_sampling.json")).unwrap();
    let n = metrics.config.eval_sparsities().len();
    assert_eq!(metrics.runs.len(), 2);
    for run in &metrics.runs {
        assert_eq!(run.metrics.len(), 2);
        for m in &run.metrics {
            // Seen and unseen cells per sparsity, for each sampler.
            assert_eq!(m.cells.len(), 2 * n);
        }
    }
    assert!(dir.path().join("ablate_sampling.md").exists());
}
