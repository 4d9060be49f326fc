//! The `anbn` binary: exit codes, idempotent reruns and partial invalidation.

use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
name = "tiny"
seed = 3
front_ends = ["mfcc", "anbn-ng"]
enrollment = ["clean", "multi"]

[corpus]
extractor_speakers = [51, 52]
extractor_texts = [2]
extractor_sessions = [1, 4]
sv_speakers = [2, 3, 4]
enroll_sessions = [1, 4]
test_sessions = [2, 3]
duration_s = 1.0

[noise]
names = ["white"]
train_snrs = [10.0]
enroll_snrs = [10.0]
test_snrs = [0.0, 10.0]
stream_seconds = 10.0

[an]
en_hidden = 8
dn_hidden = 8
epochs = 1
batch_utterances = 2

[ubm]
components = 4
iters = 2
"#;

fn anbn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anbn"))
        .current_dir(dir)
        .env("RUST_LOG", "info")
        .args(["--config", "tiny.toml", "--runs-dir", "runs"])
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

#[test]
fn full_run_is_idempotent_and_reruns_only_changed_units() {
    let dir = workspace();
    let first = anbn(dir.path(), &["run"]);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let run = dir.path().join("runs/tiny");
    for f in ["reports/eer.csv", "reports/table_clean.txt", "reports/table_multi.csv", "provenance/run.json"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let eer = std::fs::read(run.join("reports/eer.csv")).unwrap();

    let again = anbn(dir.path(), &["run"]);
    assert_eq!(again.status.code(), Some(0));
    let log = stderr(&again);
    assert!(!log.contains(": running"), "rerun executed units:\n{log}");
    assert_eq!(std::fs::read(run.join("reports/eer.csv")).unwrap(), eer);

    let changed = anbn(dir.path(), &["--set", "noise.test_snrs=[0.0, 5.0]", "run"]);
    assert_eq!(changed.status.code(), Some(0), "{}", stderr(&changed));
    let log = stderr(&changed);
    let ran: Vec<&str> = log.lines().filter(|l| l.contains(": running")).collect();
    assert!(!ran.is_empty());
    assert!(ran.iter().all(|l| l.contains("@5") || l.contains("eval") || l.contains("report")), "{ran:#?}");
}

#[test]
fn invalid_config_exits_with_config_error() {
    let dir = workspace();
    let out = anbn(dir.path(), &["--set", "ubm.components=3", "run"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let out = anbn(dir.path(), &["--set", "noise.names=[\"pink\"]", "show-config"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("runs/tiny").exists());
}

#[test]
fn stage_without_its_inputs_is_a_stage_failure() {
    let dir = workspace();
    let out = anbn(dir.path(), &["score"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn show_config_round_trips() {
    let dir = workspace();
    let out = anbn(dir.path(), &["--seed", "9", "show-config"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    std::fs::write(dir.path().join("shown.toml"), &text).unwrap();
    let again = Command::new(env!("CARGO_BIN_EXE_anbn"))
        .current_dir(dir.path())
        .args(["--config", "shown.toml", "show-config"])
        .output()
        .unwrap();
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
    assert!(text.contains("seed = 9"));
}
