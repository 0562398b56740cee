use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
seeds = [7]

[generator]
n_music = 40
n_videos = 160
n_uploaders = 20
n_pgc_pairs = 80
f_video = 8
f_music = 8

[split]
protocol = "strong"

[teacher]
latent_dim = 4
epochs = 2
batch_size = 32

[student]
latent_dim = 4
epochs = 2
batch_size = 32

[ablation]
teacher_weights = [0.0, 5.0]

[eval]
ks = [3]
"#;

fn debcm(args: &[&str], output: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_debcm"))
        .args(args)
        .env("DEBCM_OUTPUT", output)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn stages_run_through_the_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let cfg = write_config(dir.path(), CONFIG);
    let o = debcm(&["generate", "--config", &cfg], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("generate").is_dir());

    let o = debcm(&["evaluate", "--config", &cfg, "--teacher-weight", "5"], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().next().unwrap().starts_with("generate  cached"), "{stdout}");
    assert!(stdout.contains("evaluate  done"), "{stdout}");
}

#[test]
fn sweep_then_compare() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let a = dir.path().join("a");
    let o = debcm(&["sweep", "--config", &cfg], &a);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = a.join("metrics.csv");
    assert!(metrics.is_file());
    assert!(a.join("comparison.csv").is_file());

    let m = metrics.to_str().unwrap();
    let cmp = dir.path().join("cmp");
    let o = debcm(
        &[
            "compare",
            "--report",
            &format!("first@1={m}"),
            "--report",
            &format!("second@1={m}"),
            "--out",
            cmp.to_str().unwrap(),
        ],
        &a,
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(cmp.join("comparison.csv")).unwrap();
    // identical inputs: every difference is zero
    for line in table.lines().skip(1) {
        assert!(line.ends_with(",0"), "{line}");
    }
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    assert_eq!(debcm(&["no-such-command"], &out).status.code(), Some(1));
    assert_eq!(debcm(&["sweep"], &out).status.code(), Some(1));
    let missing = dir.path().join("absent.toml");
    assert_eq!(
        debcm(&["sweep", "--config", missing.to_str().unwrap()], &out).status.code(),
        Some(1)
    );
    let bad = write_config(dir.path(), &CONFIG.replace("seeds = [7]", "seeds = []"));
    assert_eq!(debcm(&["sweep", "--config", &bad], &out).status.code(), Some(1));
    assert_eq!(debcm(&["--help"], &out).status.code(), Some(0));
}

#[test]
fn stage_failure_exits_2_and_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let infeasible = CONFIG.replace(
        "protocol = \"strong\"",
        "protocol = \"genre_ratio\"\nx = 0.9\ngenre_a = 4\ngenre_b = 5",
    );
    let cfg = write_config(dir.path(), &infeasible);
    let o = debcm(&["sweep", "--config", &cfg], &out);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("stage split failed"), "{err}");
    assert!(out.join("generate").is_dir());
}
