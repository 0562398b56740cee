//! Cached stages: generate, split, teacher, student, evaluate.
//!
//! Each stage writes into `<root>/<stage>/<hash16>/` and marks completion
//! with a `DONE` file holding the full hash. A stage whose marker matches is
//! loaded instead of recomputed; a stage that fails leaves its partial files
//! in place and reports its name.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::info;
use serde_json::json;

use super::{compare, digest, run_id, ExperimentConfig, LabeledReport, SplitConfig};
use crate::datamodel::Dataset;
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, EvalRequest, MetricsReport, RunMeta};
use crate::nncore::Checkpoint;
use crate::student::{train_student, StudentModel};
use crate::synthgen::{
    generate_pgc, generate_ugc, genre_ratio_intervention, split_strong_generalization,
    GroundTruth, SplitSpec, SplitTag,
};
use crate::teacher::{train_teacher, TeacherModel};

const CACHE_VERSION: u32 = 1;
const DONE: &str = "DONE";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Generate,
    Split,
    Teacher,
    Student,
    Evaluate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Split => "split",
            Stage::Teacher => "teacher",
            Stage::Student => "student",
            Stage::Evaluate => "evaluate",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageRecord {
    pub stage: Stage,
    pub hash: String,
    pub dir: PathBuf,
    /// Loaded from a previous run.
    pub cached: bool,
}

#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub seed: u64,
    pub teacher_weight: f64,
    pub run_id: String,
    pub stages: Vec<StageRecord>,
    pub metrics: Option<MetricsReport>,
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub config_hash: String,
    /// Records of the per-seed stages (generate, split, teacher).
    pub shared: Vec<StageRecord>,
    pub cells: Vec<CellOutcome>,
    /// All metric rows, cells in (teacher weight, seed) order.
    pub metrics: MetricsReport,
    /// Files written at the root: metrics, curves, comparison.
    pub outputs: Vec<PathBuf>,
}

fn stage_dir(root: &Path, stage: Stage, hash: &str) -> PathBuf {
    root.join(stage.name()).join(&hash[..16])
}

/// Loads a completed stage or produces it.
fn cached<T>(
    root: &Path,
    stage: Stage,
    hash: String,
    produce: impl FnOnce(&Path) -> Result<T>,
    load: impl FnOnce(&Path) -> Result<T>,
) -> Result<(T, StageRecord)> {
    let wrap = |e: Error| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage {
            stage: stage.name(),
            source: Box::new(e),
        },
    };
    let dir = stage_dir(root, stage, &hash);
    let marker = dir.join(DONE);
    let done = std::fs::read_to_string(&marker)
        .map(|s| s.trim() == hash)
        .unwrap_or(false);
    let value = if done {
        info!("{}: cache hit {}", stage.name(), &hash[..16]);
        load(&dir).map_err(wrap)?
    } else {
        info!("{}: running {}", stage.name(), &hash[..16]);
        std::fs::create_dir_all(&dir).map_err(|e| wrap(Error::io(&dir, e)))?;
        let v = produce(&dir).map_err(wrap)?;
        std::fs::write(&marker, format!("{hash}\n")).map_err(|e| wrap(Error::io(&marker, e)))?;
        v
    };
    Ok((
        value,
        StageRecord {
            stage,
            hash,
            dir,
            cached: done,
        },
    ))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Upstream artifacts of one seed.
struct SeedState {
    seed: u64,
    ugc: Dataset,
    truth: GroundTruth,
    split: SplitSpec,
    teacher: Option<TeacherModel>,
    gen_hash: String,
    split_hash: String,
    teacher_hash: Option<String>,
    records: Vec<StageRecord>,
}

fn prepare_seed(cfg: &ExperimentConfig, root: &Path, seed: u64, upto: Stage) -> Result<SeedState> {
    let gen_cfg = cfg.generator_for(seed);
    let gen_hash = digest(&json!({
        "version": CACHE_VERSION,
        "stage": "generate",
        "generator": gen_cfg,
    }));
    let ((ugc, truth), gen_rec) = cached(
        root,
        Stage::Generate,
        gen_hash.clone(),
        |dir| {
            let (ugc, truth) = generate_ugc(&gen_cfg)?;
            ugc.save(&dir.join("ugc.jsonl"))?;
            truth.save(&dir.join("truth.jsonl"))?;
            generate_pgc(&gen_cfg)?.save(&dir.join("pgc.jsonl"))?;
            Ok((ugc, truth))
        },
        |dir| {
            Ok((
                Dataset::load(&dir.join("ugc.jsonl"))?,
                GroundTruth::load(&dir.join("truth.jsonl"))?,
            ))
        },
    )?;
    let gen_dir = gen_rec.dir.clone();
    let mut records = vec![gen_rec];

    let split_hash = digest(&json!({
        "version": CACHE_VERSION,
        "stage": "split",
        "upstream": [gen_hash],
        "split": cfg.split,
        "seed": seed,
    }));
    let mut split = SplitSpec::default();
    if upto >= Stage::Split {
        let (s, rec) = cached(
            root,
            Stage::Split,
            split_hash.clone(),
            |dir| {
                let spec = match &cfg.split {
                    SplitConfig::Strong { ratios } => {
                        split_strong_generalization(&ugc, (ratios[0], ratios[1], ratios[2]), seed)?
                    }
                    SplitConfig::GenreRatio { x, genre_a, genre_b } => {
                        genre_ratio_intervention(&ugc, *x, *genre_a, *genre_b, seed)?
                    }
                };
                spec.save(&dir.join("split.jsonl"))?;
                Ok(spec)
            },
            |dir| SplitSpec::load(&dir.join("split.jsonl")),
        )?;
        split = s;
        records.push(rec);
    }

    let mut teacher = None;
    let mut teacher_hash = None;
    if upto >= Stage::Teacher && cfg.stages.teacher {
        let tcfg = cfg.teacher.as_ref().expect("validated");
        let hash = digest(&json!({
            "version": CACHE_VERSION,
            "stage": "teacher",
            "upstream": [gen_hash],
            "teacher": tcfg,
            "seed": seed,
        }));
        let (t, rec) = cached(
            root,
            Stage::Teacher,
            hash.clone(),
            |dir| {
                let pgc = Dataset::load(&gen_dir.join("pgc.jsonl"))?;
                let (model, log) = train_teacher(&pgc, tcfg, seed)?;
                model.to_checkpoint(&hash).save(&dir.join("teacher.json"))?;
                write_text(&dir.join("curve.csv"), &log.to_csv())?;
                Ok(model)
            },
            |dir| TeacherModel::from_checkpoint(&Checkpoint::load(&dir.join("teacher.json"))?),
        )?;
        teacher = Some(t);
        teacher_hash = Some(hash);
        records.push(rec);
    }

    Ok(SeedState {
        seed,
        ugc,
        truth,
        split,
        teacher,
        gen_hash,
        split_hash,
        teacher_hash,
        records,
    })
}

fn run_cell(
    cfg: &ExperimentConfig,
    root: &Path,
    state: &SeedState,
    teacher_weight: f64,
    upto: Stage,
) -> Result<CellOutcome> {
    let seed = state.seed;
    let rid = run_id(teacher_weight, seed);
    let mut out = CellOutcome {
        seed,
        teacher_weight,
        run_id: rid.clone(),
        stages: Vec::new(),
        metrics: None,
    };
    if upto < Stage::Student || !cfg.stages.student {
        return Ok(out);
    }
    let scfg = cfg.student.as_ref().expect("validated");
    let opts = cfg.ablation.student_options(teacher_weight);
    let teacher = if opts.uses_teacher() {
        Some(state.teacher.as_ref().ok_or_else(|| Error::Stage {
            stage: Stage::Student.name(),
            source: Box::new(Error::Config("teacher stage did not run".into())),
        })?)
    } else {
        None
    };
    let teacher_hash = teacher.and(state.teacher_hash.clone());
    let student_hash = digest(&json!({
        "version": CACHE_VERSION,
        "stage": "student",
        "upstream": [state.gen_hash, state.split_hash, teacher_hash],
        "student": scfg,
        "options": opts,
        "seed": seed,
    }));
    let (student, rec) = cached(
        root,
        Stage::Student,
        student_hash.clone(),
        |dir| {
            let train = state.split.materialize(&state.ugc, SplitTag::Train)?;
            let val = state.split.materialize(&state.ugc, SplitTag::Val)?;
            let (model, log) = train_student(&train, &val, teacher, scfg, &opts, seed)?;
            model.to_checkpoint(&student_hash).save(&dir.join("student.json"))?;
            write_text(&dir.join("curve.csv"), &log.to_csv())?;
            Ok(model)
        },
        |dir| StudentModel::from_checkpoint(&Checkpoint::load(&dir.join("student.json"))?),
    )?;
    out.stages.push(rec);
    if upto < Stage::Evaluate || !cfg.evaluates() {
        return Ok(out);
    }

    let eval_hash = digest(&json!({
        "version": CACHE_VERSION,
        "stage": "evaluate",
        "upstream": [state.gen_hash, state.split_hash, student_hash],
        "eval": cfg.eval,
        "run_id": rid,
        "seed": seed,
    }));
    let (report, rec) = cached(
        root,
        Stage::Evaluate,
        eval_hash.clone(),
        |dir| {
            let train = state.split.materialize(&state.ugc, SplitTag::Train)?;
            let mut tags = vec![SplitTag::Test];
            if cfg.eval.validation {
                tags.insert(0, SplitTag::Val);
            }
            let mut report = MetricsReport::default();
            for tag in tags {
                let held = state.split.materialize(&state.ugc, tag)?;
                let pool = state.split.music(tag);
                let req = EvalRequest {
                    full: &state.ugc,
                    train: &train,
                    test: &held,
                    pool: &pool,
                    truth: Some(&state.truth),
                    sampler: cfg.eval.sampler,
                    popularity: cfg.eval.popularity,
                    ks: &cfg.eval.ks,
                    meta: RunMeta {
                        run_id: rid.clone(),
                        config_hash: eval_hash[..12].to_string(),
                        seed,
                        split: format!("{}/{tag}", cfg.split.label()),
                    },
                };
                report.extend(evaluate(&student, &req)?);
            }
            report.save(&dir.join("metrics.csv"))?;
            Ok(report)
        },
        |dir| MetricsReport::load(&dir.join("metrics.csv")),
    )?;
    out.stages.push(rec);
    out.metrics = Some(report);
    Ok(out)
}

/// Runs `jobs` on up to `threads` workers; results keep job order.
fn parallel<T: Send, R: Send>(threads: usize, jobs: Vec<T>, f: impl Fn(T) -> R + Sync) -> Vec<R> {
    let n = jobs.len();
    let slots: Vec<Mutex<Option<T>>> = jobs.into_iter().map(|j| Mutex::new(Some(j))).collect();
    let results: Vec<Mutex<Option<R>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let job = slots[i].lock().expect("job slot").take().expect("job taken once");
                let r = f(job);
                *results[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("job ran"))
        .collect()
}

fn thread_count(cfg: &ExperimentConfig) -> usize {
    cfg.threads.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
}

/// Runs stages up to `upto` for one seed and teacher weight, reusing cached
/// upstream stages. Returns the records of every stage touched.
pub fn run_single(
    cfg: &ExperimentConfig,
    root: &Path,
    seed: u64,
    teacher_weight: f64,
    upto: Stage,
) -> Result<Vec<StageRecord>> {
    cfg.validate()?;
    let state = prepare_seed(cfg, root, seed, upto)?;
    let cell = run_cell(cfg, root, &state, teacher_weight, upto)?;
    let mut records = state.records;
    records.extend(cell.stages);
    Ok(records)
}

/// Runs every (teacher weight, seed) cell of the config and writes the
/// combined outputs under `root`: `metrics.csv`, `curves/*.csv`, and, when
/// several teacher weights are swept, `comparison.csv` plus SVG plots of each
/// metric against the teacher weight.
pub fn run_pipeline(cfg: &ExperimentConfig, root: &Path) -> Result<PipelineOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let threads = thread_count(cfg);

    let states: Vec<SeedState> = parallel(threads, cfg.seeds.clone(), |seed| {
        prepare_seed(cfg, root, seed, Stage::Evaluate)
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let jobs: Vec<(usize, f64)> = cfg
        .ablation
        .teacher_weights
        .iter()
        .flat_map(|w| (0..states.len()).map(move |i| (i, *w)))
        .collect();
    let cells: Vec<CellOutcome> = parallel(threads, jobs, |(i, w)| {
        run_cell(cfg, root, &states[i], w, Stage::Evaluate)
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let mut outputs = Vec::new();
    let curves = root.join("curves");
    for state in &states {
        for rec in state.records.iter().filter(|r| r.stage == Stage::Teacher) {
            outputs.push(copy_curve(&rec.dir, &curves, &format!("teacher-s{}.csv", state.seed))?);
        }
    }
    for cell in &cells {
        for rec in cell.stages.iter().filter(|r| r.stage == Stage::Student) {
            outputs.push(copy_curve(&rec.dir, &curves, &format!("{}.csv", cell.run_id))?);
        }
    }

    let mut metrics = MetricsReport::default();
    for cell in &cells {
        if let Some(m) = &cell.metrics {
            metrics.extend(m.clone());
        }
    }
    if cfg.evaluates() {
        let path = root.join("metrics.csv");
        metrics.save(&path)?;
        outputs.push(path);
        if cfg.ablation.teacher_weights.len() >= 2 {
            let reports: Vec<LabeledReport> = cfg
                .ablation
                .teacher_weights
                .iter()
                .map(|w| LabeledReport {
                    label: "student".into(),
                    x: Some(*w),
                    report: MetricsReport {
                        rows: cells
                            .iter()
                            .filter(|c| c.teacher_weight == *w)
                            .flat_map(|c| c.metrics.iter().flat_map(|m| m.rows.clone()))
                            .collect(),
                    },
                })
                .collect();
            let table = compare::compare_runs(&reports)?;
            outputs.extend(compare::write_comparison(&table, root, "teacher weight")?);
        }
    }

    let mut shared = Vec::new();
    for s in states {
        shared.extend(s.records);
    }
    Ok(PipelineOutcome {
        config_hash: cfg.hash(),
        shared,
        cells,
        metrics,
        outputs,
    })
}

fn copy_curve(stage_dir: &Path, curves: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(curves).map_err(|e| Error::io(curves, e))?;
    let from = stage_dir.join("curve.csv");
    let to = curves.join(name);
    std::fs::copy(&from, &to).map_err(|e| Error::io(&from, e))?;
    Ok(to)
}
