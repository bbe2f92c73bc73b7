use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Writes a config that reads the bundled fixtures and keeps all output in `dir`.
fn config_in(dir: &Path, annotations: &Path) -> PathBuf {
    let f = fixtures();
    let text = format!(
        r#"[paths]
notes_dir = "{notes}"
annotations = "{ann}"
demographics = "{demo}"
test_ids = "{ids}"
snomed_map = "{snomed}/icd10cm_map.tsv"
snomed_owl = "{snomed}/owl_refset.tsv"
snomed_descriptions = "{snomed}/descriptions.tsv"
work_dir = "work"

[run]
run_id = "cli"
n_calls = 2
"#,
        notes = f.join("corpus/notes").display(),
        ann = annotations.display(),
        demo = f.join("corpus/demographics.tsv").display(),
        ids = f.join("corpus/test_ids.txt").display(),
        snomed = f.join("snomed").display(),
    );
    let path = dir.join("notegen.toml");
    fs::write(&path, text).unwrap();
    path
}

fn notegen(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_notegen"))
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn full_cycle() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_in(tmp.path(), &fixtures().join("corpus/annotations.tsv"));

    assert!(stdout(&notegen(&cfg, &["ingest"])).contains("index=14 test=6"));
    assert!(tmp.path().join("work/corpus.json").is_file());
    stdout(&notegen(&cfg, &["index"]));
    stdout(&notegen(&cfg, &["build-kg"]));

    let hits = stdout(&notegen(&cfg, &["retrieve", "--case", "S1130-05582017000100031-1", "-k", "3"]));
    let lines: Vec<&str> = hits.lines().collect();
    assert_eq!(lines.len(), 4, "{hits}");
    assert!(lines[0].starts_with("rank"));

    let g = stdout(&notegen(&cfg, &["generate", "--strategy", "cot_kg", "--n-calls", "3"]));
    assert!(g.contains("18"), "{g}");
    let records = fs::read_to_string(tmp.path().join("work/runs/cli/records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 18);

    stdout(&notegen(&cfg, &["-v", "evaluate"]));
    let report = tmp.path().join("work/reports/cli");
    for f in ["distances.csv", "summary.csv", "kde_cls.csv", "box_mean.svg"] {
        assert!(report.join(f).is_file(), "{f} missing");
    }
}

#[test]
fn dry_run_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_in(tmp.path(), &fixtures().join("corpus/annotations.tsv"));
    let out = stdout(&notegen(&cfg, &["--dry-run", "ingest"]));
    assert!(out.contains("index=14 test=6"));
    assert!(!tmp.path().join("work").exists());
}

#[test]
fn missing_input_fails_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_in(tmp.path(), &tmp.path().join("nope.tsv"));
    let o = notegen(&cfg, &["ingest"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.tsv"));

    let o = notegen(&cfg, &["evaluate"]);
    assert!(!o.status.success());

    let o = notegen(&tmp.path().join("absent.toml"), &["ingest"]);
    assert!(!o.status.success());
}

#[test]
fn unknown_strategy_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_in(tmp.path(), &fixtures().join("corpus/annotations.tsv"));
    let o = notegen(&cfg, &["generate", "--strategy", "cot_magic"]);
    assert!(!o.status.success());
}
