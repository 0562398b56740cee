//! `debcm`: run and compare debiased music-matching experiments.
//!
//! Exit status: 0 on success, 1 for usage or configuration errors, 2 when a
//! pipeline stage (or comparison) fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use debcm_core::evalkit::MetricsReport;
use debcm_core::experiment::{
    compare_runs, run_pipeline, run_single, write_comparison, ExperimentConfig, LabeledReport,
    Stage, StageRecord,
};

#[derive(Parser)]
#[command(name = "debcm", version, about = "Debiased cross-modal music matching experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Artifact root; overrides output_dir in the config.
    #[arg(short, long, env = "DEBCM_OUTPUT")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct Single {
    #[command(flatten)]
    common: Common,
    /// Run seed; defaults to the first seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Teacher weight of the student cell; defaults to the first listed.
    #[arg(long)]
    teacher_weight: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic UGC and PGC datasets.
    Generate(Single),
    /// Split the UGC clips into train/validation/test.
    Split(Single),
    /// Train the teacher on PGC pairs.
    TrainTeacher(Single),
    /// Train one student cell.
    TrainStudent(Single),
    /// Evaluate one student cell.
    Evaluate(Single),
    /// Run every seed and teacher weight of the config.
    Sweep(Common),
    /// Compare metrics files and plot them.
    Compare {
        /// `LABEL=PATH` or `LABEL@X=PATH`; give at least two.
        #[arg(short, long = "report", required = true, num_args = 1)]
        reports: Vec<String>,
        /// Directory for comparison.csv, comparison.txt and plots.
        #[arg(long)]
        out: PathBuf,
        /// Caption of the plots' horizontal axis.
        #[arg(long, default_value = "X")]
        x_label: String,
    },
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(anyhow::Error),
    Stage(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<debcm_core::Error>() {
            Some(debcm_core::Error::Config(_)) => Failure::Usage(e),
            _ => Failure::Stage(e),
        }
    }
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), Failure> {
    // unreadable or invalid configs are usage errors
    let cfg = ExperimentConfig::load(&common.config).map_err(|e| Failure::Usage(e.into()))?;
    let root = common
        .output
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    Ok((cfg, root))
}

fn print_records(records: &[StageRecord]) {
    for r in records {
        let state = if r.cached { "cached" } else { "done" };
        println!("{:<9} {:<6} {}", r.stage.name(), state, r.dir.display());
    }
}

fn single(args: &Single, upto: Stage) -> Result<(), Failure> {
    let (cfg, root) = load(&args.common)?;
    let seed = args.seed.unwrap_or(cfg.seeds[0]);
    let weight = args
        .teacher_weight
        .unwrap_or(cfg.ablation.teacher_weights[0]);
    if upto >= Stage::Student && !cfg.stages.student {
        return Err(Failure::Usage(anyhow::anyhow!("the config disables the student stage")));
    }
    if upto == Stage::Teacher && !cfg.stages.teacher {
        return Err(Failure::Usage(anyhow::anyhow!("the config disables the teacher stage")));
    }
    let records = run_single(&cfg, &root, seed, weight, upto)
        .with_context(|| format!("running up to stage {}", upto.name()))?;
    print_records(&records);
    Ok(())
}

fn parse_report(spec: &str) -> anyhow::Result<LabeledReport> {
    let Some((head, path)) = spec.split_once('=') else {
        bail!("report {spec:?} is not LABEL=PATH or LABEL@X=PATH");
    };
    let (label, x) = match head.split_once('@') {
        Some((l, x)) => {
            let x: f64 = x.parse().with_context(|| format!("x value in {spec:?}"))?;
            (l, Some(x))
        }
        None => (head, None),
    };
    if label.is_empty() {
        bail!("report {spec:?} has an empty label");
    }
    Ok(LabeledReport {
        label: label.to_string(),
        x,
        report: MetricsReport::load(Path::new(path))?,
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Generate(a) => single(a, Stage::Generate),
        Command::Split(a) => single(a, Stage::Split),
        Command::TrainTeacher(a) => single(a, Stage::Teacher),
        Command::TrainStudent(a) => single(a, Stage::Student),
        Command::Evaluate(a) => single(a, Stage::Evaluate),
        Command::Sweep(common) => {
            let (cfg, root) = load(common)?;
            let out = run_pipeline(&cfg, &root).context("sweep")?;
            print_records(&out.shared);
            for c in &out.cells {
                print_records(&c.stages);
            }
            for p in &out.outputs {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Compare {
            reports,
            out,
            x_label,
        } => {
            let parsed = reports
                .iter()
                .map(|s| parse_report(s))
                .collect::<anyhow::Result<Vec<_>>>()
                .map_err(Failure::Usage)?;
            if parsed.len() < 2 {
                return Err(Failure::Usage(anyhow::anyhow!("compare needs at least two reports")));
            }
            let table = compare_runs(&parsed).map_err(|e| Failure::Stage(e.into()))?;
            print!("{}", table.to_table());
            write_comparison(&table, out, x_label).map_err(|e| Failure::Stage(e.into()))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
