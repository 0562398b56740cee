use std::path::Path;

use debcm_core::experiment::{run_pipeline, run_single, ExperimentConfig, Stage};
use debcm_core::Error;

fn config(extra: &str) -> ExperimentConfig {
    let text = format!(
        r#"
seeds = [3, 4]
threads = 2

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

[eval]
ks = [3, 5]
{extra}
"#
    );
    ExperimentConfig::from_toml(&text).unwrap()
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn rerun_is_a_cache_hit_with_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("[ablation]\nteacher_weights = [0.0, 5.0]\n");
    let first = run_pipeline(&cfg, dir.path()).unwrap();
    let csv = read(&dir.path().join("metrics.csv"));
    assert!(first.shared.iter().all(|r| !r.cached));

    let second = run_pipeline(&cfg, dir.path()).unwrap();
    assert!(second.shared.iter().all(|r| r.cached));
    assert!(second.cells.iter().flat_map(|c| &c.stages).all(|r| r.cached));
    assert_eq!(read(&dir.path().join("metrics.csv")), csv);

    // a fresh directory reproduces the same bytes
    let other = tempfile::tempdir().unwrap();
    run_pipeline(&cfg, other.path()).unwrap();
    assert_eq!(read(&other.path().join("metrics.csv")), csv);
}

#[test]
fn student_flag_off_leaves_teacher_artifacts_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("[stages]\nstudent = false\n");
    let out = run_pipeline(&cfg, dir.path()).unwrap();
    assert!(dir.path().join("teacher").is_dir());
    assert!(!dir.path().join("student").exists());
    assert!(!dir.path().join("evaluate").exists());
    assert!(!dir.path().join("metrics.csv").exists());
    assert!(out.metrics.rows.is_empty());
    assert!(dir.path().join("curves/teacher-s3.csv").is_file());
}

#[test]
fn sweep_is_a_cartesian_product() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("[ablation]\nteacher_weights = [0.0, 1.0, 10.0]\n");
    let out = run_pipeline(&cfg, dir.path()).unwrap();
    assert_eq!(out.cells.len(), 6);
    let runs: std::collections::BTreeSet<_> =
        out.metrics.rows.iter().map(|r| r.run_id.clone()).collect();
    assert_eq!(runs.len(), 6);
    // 2 metrics x 2 cutoffs per run
    assert_eq!(out.metrics.rows.len(), 6 * 4);
    assert!(dir.path().join("comparison.csv").is_file());
    assert!(dir.path().join("plots/strong_test_recall_at_5.svg").is_file());
    // one teacher per seed, shared by every cell
    let teachers = std::fs::read_dir(dir.path().join("teacher")).unwrap().count();
    assert_eq!(teachers, 2);
}

#[test]
fn config_change_invalidates_downstream_only() {
    let dir = tempfile::tempdir().unwrap();
    let base = config("");
    run_pipeline(&base, dir.path()).unwrap();

    let mut student_change = base.clone();
    student_change.student.as_mut().unwrap().epochs = 3;
    let out = run_pipeline(&student_change, dir.path()).unwrap();
    assert!(out.shared.iter().all(|r| r.cached));
    assert!(out.cells.iter().flat_map(|c| &c.stages).all(|r| !r.cached));

    let mut eval_change = student_change.clone();
    eval_change.eval.ks = vec![4];
    let out = run_pipeline(&eval_change, dir.path()).unwrap();
    for c in &out.cells {
        assert!(c.stages[0].cached, "student reused");
        assert!(!c.stages[1].cached, "evaluation recomputed");
    }

    let mut gen_change = base.clone();
    gen_change.generator.noise_sigma += 0.01;
    let out = run_pipeline(&gen_change, dir.path()).unwrap();
    assert!(out.shared.iter().all(|r| !r.cached));
}

#[test]
fn failing_stage_is_named_and_upstream_kept() {
    let dir = tempfile::tempdir().unwrap();
    // 40 clips over 6 genres leave too few in genre 5 for an intervention
    let mut cfg = config("");
    cfg.split = toml::from_str("protocol = \"genre_ratio\"\nx = 0.9\ngenre_a = 4\ngenre_b = 5").unwrap();
    let err = run_pipeline(&cfg, dir.path()).unwrap_err();
    match err {
        Error::Stage { stage, .. } => assert_eq!(stage, "split"),
        other => panic!("unexpected {other}"),
    }
    let gen = std::fs::read_dir(dir.path().join("generate")).unwrap().next().unwrap().unwrap();
    assert!(gen.path().join("ugc.jsonl").is_file());
    assert!(gen.path().join("DONE").is_file());
}

#[test]
fn single_stage_runs_reuse_upstream() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("");
    let recs = run_single(&cfg, dir.path(), 3, 40.0, Stage::Split).unwrap();
    assert_eq!(recs.len(), 2);
    let recs = run_single(&cfg, dir.path(), 3, 40.0, Stage::Evaluate).unwrap();
    let stages: Vec<_> = recs.iter().map(|r| (r.stage, r.cached)).collect();
    assert_eq!(
        stages,
        vec![
            (Stage::Generate, true),
            (Stage::Split, true),
            (Stage::Teacher, false),
            (Stage::Student, false),
            (Stage::Evaluate, false),
        ]
    );
    assert!(recs[4].dir.join("metrics.csv").is_file());
}
