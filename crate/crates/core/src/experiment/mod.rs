//! Experiment orchestration: a TOML config describing one study, stage
//! caching keyed by content hashes, sweeps over seeds and teacher weights,
//! and comparison tables/plots across runs.

mod compare;
mod pipeline;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crossmodal::KlDirection;
use crate::error::{Error, Result};
use crate::evalkit::{PopularitySource, TestSampler};
use crate::student::{DeconfounderMode, StudentOptions};
use crate::synthgen::GenConfig;
use crate::training::TrainConfig;

pub use compare::{compare_runs, plot_comparison, write_comparison, Comparison, ComparisonRow, LabeledReport};
pub use pipeline::{run_pipeline, run_single, CellOutcome, PipelineOutcome, Stage, StageRecord};

/// How clips are divided into train/validation/test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitConfig {
    /// Music-disjoint, popularity-stratified split.
    Strong {
        #[serde(default = "default_ratios")]
        ratios: [f64; 3],
    },
    /// Two-genre split whose training mix is `x:(1-x)`.
    GenreRatio { x: f64, genre_a: usize, genre_b: usize },
}

fn default_ratios() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig::Strong {
            ratios: default_ratios(),
        }
    }
}

impl SplitConfig {
    /// Protocol name used in the `split` column of metrics files.
    pub fn label(&self) -> &'static str {
        match self {
            SplitConfig::Strong { .. } => "strong",
            SplitConfig::GenreRatio { .. } => "genre_ratio",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub deconfounder: DeconfounderMode,
    pub ips: bool,
    /// One student per entry (and seed); 0 trains without the teacher.
    pub teacher_weights: Vec<f64>,
    pub kl_direction: KlDirection,
    pub label_distillation: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        let opts = StudentOptions::default();
        Self {
            deconfounder: opts.deconfounder,
            ips: opts.ips,
            teacher_weights: vec![opts.teacher_weight_video],
            kl_direction: opts.kl_direction,
            label_distillation: opts.label_distillation,
        }
    }
}

impl AblationConfig {
    pub fn student_options(&self, teacher_weight: f64) -> StudentOptions {
        StudentOptions {
            deconfounder: self.deconfounder,
            ips: self.ips,
            teacher_weight_video: teacher_weight,
            teacher_weight_music: teacher_weight,
            kl_direction: self.kl_direction,
            label_distillation: self.label_distillation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub sampler: TestSampler,
    pub popularity: PopularitySource,
    /// Also score the validation clips (rows tagged `<protocol>/val`).
    pub validation: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: vec![5, 10, 15, 20],
            sampler: TestSampler::All,
            popularity: PopularitySource::Full,
            validation: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageFlags {
    pub teacher: bool,
    pub student: bool,
    /// Ignored when the student stage is off.
    pub evaluate: bool,
}

impl Default for StageFlags {
    fn default() -> Self {
        Self {
            teacher: true,
            student: true,
            evaluate: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    /// Artifact root; not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Worker threads for independent runs; not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// `seed` here is replaced by each run seed.
    pub generator: GenConfig,
    pub split: SplitConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub student: Option<TrainConfig>,
    #[serde(default)]
    pub ablation: AblationConfig,
    pub eval: EvalConfig,
    #[serde(default)]
    pub stages: StageFlags,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Whether any student cell is guided by the teacher.
    pub fn needs_teacher(&self) -> bool {
        self.stages.student
            && self
                .ablation
                .teacher_weights
                .iter()
                .any(|w| self.ablation.student_options(*w).uses_teacher())
    }

    pub fn evaluates(&self) -> bool {
        self.stages.student && self.stages.evaluate
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        self.generator.validate()?;
        match &self.split {
            SplitConfig::Strong { ratios } => {
                if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0))
                    || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
                {
                    return bad(format!("split ratios {ratios:?} must be positive and sum to 1"));
                }
            }
            SplitConfig::GenreRatio { x, genre_a, genre_b } => {
                if !(0.1..=0.9).contains(x) {
                    return bad(format!("split x = {x} outside [0.1, 0.9]"));
                }
                let n = self.generator.n_genres;
                if genre_a == genre_b || *genre_a >= n || *genre_b >= n {
                    return bad(format!("split genres {genre_a}, {genre_b} must be distinct and < {n}"));
                }
            }
        }
        let weights = &self.ablation.teacher_weights;
        if weights.is_empty() {
            return bad("ablation.teacher_weights must not be empty".into());
        }
        for (i, w) in weights.iter().enumerate() {
            if weights[..i].contains(w) {
                return bad(format!("teacher weight {w} listed twice"));
            }
            self.ablation.student_options(*w).validate()?;
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return bad("eval.ks must be a nonempty list of positive cutoffs".into());
        }
        match self.eval.sampler {
            TestSampler::All => {}
            TestSampler::Diverse { fraction } | TestSampler::Matching { fraction } => {
                if !(fraction > 0.0 && fraction <= 1.0) {
                    return bad(format!("eval sampler fraction {fraction} outside (0, 1]"));
                }
            }
        }
        if self.stages.teacher || self.needs_teacher() {
            match &self.teacher {
                Some(t) => t.validate()?,
                None => return bad("[teacher] section is required by the teacher stage".into()),
            }
        }
        if self.needs_teacher() && !self.stages.teacher {
            return bad("teacher-guided students need stages.teacher = true".into());
        }
        if self.stages.student {
            let Some(s) = &self.student else {
                return bad("[student] section is required by the student stage".into());
            };
            s.validate()?;
            if let (Some(t), true) = (&self.teacher, self.needs_teacher()) {
                if t.latent_dim != s.latent_dim {
                    return bad(format!(
                        "teacher latent_dim {} differs from student latent_dim {}",
                        t.latent_dim, s.latent_dim
                    ));
                }
            }
        }
        Ok(())
    }

    /// Hash of everything that affects results; key order in the source
    /// file and the artifact location do not matter.
    pub fn hash(&self) -> String {
        let mut plain = self.clone();
        plain.output_dir = None;
        plain.threads = None;
        digest(&serde_json::to_value(&plain).expect("plain config"))
    }

    /// Generator config of one run.
    pub fn generator_for(&self, seed: u64) -> GenConfig {
        GenConfig {
            seed,
            ..self.generator.clone()
        }
    }
}

/// SHA-256 of the canonical JSON form (object keys sorted).
pub(crate) fn digest(value: &serde_json::Value) -> String {
    let text = serde_json::to_string(value).expect("json value");
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Run identifier of one sweep cell.
pub fn run_id(teacher_weight: f64, seed: u64) -> String {
    format!("kt{teacher_weight}-s{seed}")
}

/// A commented starting config.
pub const EXAMPLE_CONFIG: &str = include_str!("../../../../configs/example.toml");
