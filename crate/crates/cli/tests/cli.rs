use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[synthetic]
rows = 90
dim = 3
classes = 3
spread = 2.0
seed = 4

[experiment]
trials = 2
seed = 1

[network]
hidden = [8]

[sgd]
reward_epochs = 2
learning_rate = 1e-2

[logging]
mode = "uniform"
"#;

fn harness(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ope-harness"))
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn list_estimators_prints_every_name() {
    let out = harness(&["list-estimators"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in [
        "DM",
        "IPS",
        "SnIPS",
        "DR",
        "SnDR",
        "DR_SWITCH",
        "DR_SHRINK",
        "DM_R",
        "DM_I",
        "TR",
        "SnTR",
        "TR_SWITCH",
        "TR_SHRINK",
    ] {
        assert!(
            text.lines()
                .any(|l| l.split_whitespace().next() == Some(name)),
            "missing {name}"
        );
    }
}

#[test]
fn validate_config_accepts_a_good_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "ok.toml", SMALL);
    let out = harness(&["validate-config", &cfg]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.toml",
        &format!("{SMALL}\n[sgd2]\nfoo = 1\n"),
    );
    assert_eq!(harness(&["validate-config", &cfg]).status.code(), Some(1));
    assert_eq!(harness(&["run", "--config", &cfg]).status.code(), Some(1));
}

#[test]
fn invalid_value_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.toml",
        &SMALL.replace("trials = 2", "trials = 0"),
    );
    assert_eq!(harness(&["run", "--config", &cfg]).status.code(), Some(1));
    let cfg = write(dir.path(), "bad2.toml", "[estimators]\nlist = [\"NOPE\"]\n");
    assert_eq!(harness(&["validate-config", &cfg]).status.code(), Some(1));
}

#[test]
fn missing_config_file_is_a_config_error() {
    assert_eq!(
        harness(&["run", "--config", "/nonexistent/x.toml"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn unreadable_dataset_is_a_runtime_fault() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "a.toml",
        "[dataset]\npath = \"missing.csv\"\n[experiment]\ntrials = 1\n",
    );
    assert_eq!(harness(&["run", "--config", &cfg]).status.code(), Some(2));
    write(dir.path(), "broken.csv", "a,b,class\n1,2,x\n3,oops,y\n");
    let cfg = write(
        dir.path(),
        "b.toml",
        "[dataset]\npath = \"broken.csv\"\n[experiment]\ntrials = 1\n",
    );
    assert_eq!(harness(&["run", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn csv_report_is_deterministic_and_well_formed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", SMALL);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (out, jobs) in [(&a, "1"), (&b, "2")] {
        let o = harness(&[
            "run",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--jobs",
            jobs,
            "--seed",
            "5",
        ]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let mut lines = text.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("estimator,rmse_mean,rmse_std,n_trials"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 13);
    assert!(rows.iter().all(|r| r.split(',').nth(3) == Some("2")));
}

#[test]
fn markdown_report_has_mean_and_std_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", SMALL);
    let o = harness(&[
        "run", "--config", &cfg, "--format", "markdown", "--jobs", "1",
    ]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let row = text.lines().find(|l| l.starts_with("| TR |")).unwrap();
    let cell = row.split('|').nth(2).unwrap().trim();
    let (mean, rest) = cell.split_once(" (").unwrap();
    mean.parse::<f64>().unwrap();
    rest.trim_end_matches(')').parse::<f64>().unwrap();
}
