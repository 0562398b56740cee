//! The deconfounded student: a cross-modal VAE trained on uploader-selected
//! pairs whose music latent is extended by an averaged genre-preference
//! embedding, optionally guided towards a frozen teacher's posteriors.

mod rank;

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::crossmodal::{CrossModalNet, Deconfounder, KlDirection, LossBreakdown, NetDims};
use crate::datamodel::{uploader_preferences, Dataset, DatasetKind, GenrePreference, UploaderId};
use crate::error::{Error, Result};
use crate::nncore::{matching_score, Checkpoint, GaussianBatch};
use crate::teacher::{logistic, TeacherModel};
use crate::training::{fit, BatchExtras, GuidanceTargets, PairTable, TrainConfig, TrainLog};

pub use rank::{rank_music, RankingResult};

/// Smallest propensity used for inverse-propensity weights.
pub const PROPENSITY_FLOOR: f64 = 0.01;

/// How the confounder is averaged out during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeconfounderMode {
    /// Mean preference of the distinct uploaders in each minibatch.
    #[default]
    BatchAverage,
    /// Mean preference of all training uploaders, for every batch.
    GlobalAverage,
    /// No preference embedding; `z_m′ = z_m`.
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentOptions {
    pub deconfounder: DeconfounderMode,
    /// Weight each pair's matching loss by the inverse of its uploader's
    /// preference for the clip's genre.
    pub ips: bool,
    pub teacher_weight_video: f64,
    pub teacher_weight_music: f64,
    pub kl_direction: KlDirection,
    /// Blend weight of teacher-imputed labels; 0 disables label distillation.
    pub label_distillation: f64,
}

impl Default for StudentOptions {
    fn default() -> Self {
        Self {
            deconfounder: DeconfounderMode::BatchAverage,
            ips: false,
            teacher_weight_video: 40.0,
            teacher_weight_music: 40.0,
            kl_direction: KlDirection::TeacherStudent,
            label_distillation: 0.0,
        }
    }
}

impl StudentOptions {
    /// Plain cross-modal VAE: no deconfounder, no teacher.
    pub fn backbone() -> Self {
        Self {
            deconfounder: DeconfounderMode::Off,
            teacher_weight_video: 0.0,
            teacher_weight_music: 0.0,
            ..Self::default()
        }
    }

    pub fn uses_teacher(&self) -> bool {
        self.teacher_weight_video > 0.0
            || self.teacher_weight_music > 0.0
            || self.label_distillation > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.teacher_weight_video, self.teacher_weight_music];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("teacher weights must be finite and nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.label_distillation) {
            return Err(Error::Config("label_distillation must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudentModel {
    net: CrossModalNet,
    config: TrainConfig,
    options: StudentOptions,
    global_preference: Option<GenrePreference>,
    teacher_hash: Option<String>,
}

/// Mean genre distribution of the distinct uploaders in `batch`, summed in
/// uploader-id order.
pub fn batch_average_preference(
    batch: &[UploaderId],
    preferences: &BTreeMap<UploaderId, GenrePreference>,
) -> Result<GenrePreference> {
    let distinct: BTreeSet<UploaderId> = batch.iter().copied().collect();
    if distinct.is_empty() {
        return Err(Error::Empty("uploader batch"));
    }
    let prefs = distinct
        .iter()
        .map(|u| {
            preferences
                .get(u)
                .ok_or_else(|| Error::Integrity(format!("no preference for uploader {u}")))
        })
        .collect::<Result<Vec<_>>>()?;
    GenrePreference::mean(prefs)
}

/// Mean genre distribution over all uploaders with a non-empty history.
pub fn global_average_preference(train: &Dataset) -> Result<GenrePreference> {
    let prefs = uploader_preferences(train)?;
    GenrePreference::mean(prefs.values())
}

/// Deconfounded music latent: the `2d` concatenation `[z_m ‖ E_g·pref]` and
/// its `d`-dimensional projection used for scoring.
#[derive(Clone, Debug, PartialEq)]
pub struct DeconfoundedMusic {
    pub extended: Vec<f64>,
    pub projected: Vec<f64>,
}

pub fn deconfound(
    z_m: &[f64],
    pref: &GenrePreference,
    deconfounder: &Deconfounder,
) -> Result<DeconfoundedMusic> {
    let d = deconfounder.genre_table.nrows();
    if z_m.len() != d {
        return Err(Error::dim("music latent", d, z_m.len()));
    }
    let zu = deconfounder.preference_embedding(pref.probs())?;
    let extended: Vec<f64> = z_m.iter().copied().chain(zu.iter().copied()).collect();
    let projected = deconfounder
        .projection
        .weight
        .dot(&Array1::from(extended.clone()))
        + &deconfounder.projection.bias;
    Ok(DeconfoundedMusic {
        extended,
        projected: projected.to_vec(),
    })
}

impl StudentModel {
    pub fn new(
        f_video: usize,
        f_music: usize,
        n_genres: usize,
        config: TrainConfig,
        options: StudentOptions,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        options.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = NetDims {
            f_video,
            f_music,
            latent: config.latent_dim,
            n_genres: (options.deconfounder != DeconfounderMode::Off).then_some(n_genres),
        };
        Ok(Self {
            net: CrossModalNet::init(dims, config.dropout, &mut rng),
            config,
            options,
            global_preference: None,
            teacher_hash: None,
        })
    }

    pub fn net(&self) -> &CrossModalNet {
        &self.net
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn options(&self) -> &StudentOptions {
        &self.options
    }

    /// Preference substituted for the uploader at inference time.
    pub fn global_preference(&self) -> Option<&GenrePreference> {
        self.global_preference.as_ref()
    }

    pub fn set_global_preference(&mut self, pref: GenrePreference) {
        self.global_preference = Some(pref);
    }

    pub fn teacher_hash(&self) -> Option<&str> {
        self.teacher_hash.as_deref()
    }

    /// Preference fed to the deconfounder at inference, if any.
    pub(crate) fn inference_preference(&self) -> Result<Option<&[f64]>> {
        if self.net.deconfounder.is_none() {
            return Ok(None);
        }
        self.global_preference
            .as_ref()
            .map(|p| Some(p.probs()))
            .ok_or_else(|| Error::Invalid("student has no cached global preference".into()))
    }

    pub fn to_checkpoint(&self, config_hash: &str) -> Checkpoint {
        let dims = self.net.dims();
        let mut meta = BTreeMap::new();
        meta.insert("f_video".into(), json!(dims.f_video));
        meta.insert("f_music".into(), json!(dims.f_music));
        meta.insert("n_genres".into(), json!(dims.n_genres));
        meta.insert("config".into(), serde_json::to_value(&self.config).expect("plain struct"));
        meta.insert("options".into(), serde_json::to_value(&self.options).expect("plain struct"));
        meta.insert("global_preference".into(), json!(self.global_preference));
        meta.insert("teacher_hash".into(), json!(self.teacher_hash));
        Checkpoint::capture("student", config_hash, meta, &self.net)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("student")?;
        let config: TrainConfig = ck.meta("config")?;
        let dims = NetDims {
            f_video: ck.meta("f_video")?,
            f_music: ck.meta("f_music")?,
            latent: config.latent_dim,
            n_genres: ck.meta("n_genres")?,
        };
        let mut net = CrossModalNet::zeros(dims, config.dropout);
        ck.restore(&mut net)?;
        Ok(Self {
            net,
            config,
            options: ck.meta("options")?,
            global_preference: ck.meta("global_preference")?,
            teacher_hash: ck.meta("teacher_hash")?,
        })
    }
}

/// Everything the student objective needs besides its own parameters:
/// training pairs, uploader preferences, and frozen teacher outputs.
#[derive(Clone, Debug)]
pub struct StudentContext {
    pub pairs: PairTable,
    pub preferences: BTreeMap<UploaderId, GenrePreference>,
    pub global: GenrePreference,
    teacher: Option<(GaussianBatch, GaussianBatch)>,
    label_weights: Option<Vec<f64>>,
    teacher_hash: Option<String>,
}

impl StudentContext {
    pub fn new(
        train: &Dataset,
        teacher: Option<&TeacherModel>,
        options: &StudentOptions,
    ) -> Result<Self> {
        train.require_kind(DatasetKind::Ugc)?;
        let pairs = PairTable::from_dataset(train)?;
        let preferences = uploader_preferences(train)?;
        let global = GenrePreference::mean(preferences.values())?;
        let mut ctx = Self {
            pairs,
            preferences,
            global,
            teacher: None,
            label_weights: None,
            teacher_hash: None,
        };
        if options.uses_teacher() {
            let t = teacher.ok_or_else(|| {
                Error::Invalid("teacher guidance requested without a teacher".into())
            })?;
            if !t.is_frozen() {
                return Err(Error::NotFrozen);
            }
            let (v, m) = t.infer_batch(&ctx.pairs.video, &ctx.pairs.music)?;
            if options.label_distillation > 0.0 {
                let w = options.label_distillation;
                let targets = (0..ctx.pairs.len())
                    .map(|i| {
                        let s = matching_score(
                            v.mean.row(i).as_slice().expect("row"),
                            m.mean.row(i).as_slice().expect("row"),
                        )?;
                        Ok((1.0 - w) + w * logistic(s))
                    })
                    .collect::<Result<Vec<_>>>()?;
                ctx.label_weights = Some(targets);
            }
            ctx.teacher = Some((v, m));
            ctx.teacher_hash = Some(t.param_hash());
        }
        Ok(ctx)
    }

    /// Preference, sample weights and guidance for the given pair rows.
    pub fn extras(&self, options: &StudentOptions, rows: &[usize]) -> Result<BatchExtras> {
        let preference = match options.deconfounder {
            DeconfounderMode::Off => None,
            DeconfounderMode::GlobalAverage => Some(self.global.probs().to_vec()),
            DeconfounderMode::BatchAverage => {
                let ups: Vec<UploaderId> =
                    rows.iter().filter_map(|&r| self.pairs.uploaders[r]).collect();
                Some(batch_average_preference(&ups, &self.preferences)?.probs().to_vec())
            }
        };
        let mut weights: Option<Vec<f64>> = None;
        if options.ips {
            let raw = rows
                .iter()
                .map(|&r| {
                    let u = self.pairs.uploaders[r]
                        .ok_or_else(|| Error::Unsupported("IPS needs uploader ids".into()))?;
                    let p = self.preferences.get(&u).ok_or_else(|| {
                        Error::Integrity(format!("no preference for uploader {u}"))
                    })?;
                    Ok(1.0 / p.probs()[self.pairs.genres[r]].max(PROPENSITY_FLOOR))
                })
                .collect::<Result<Vec<f64>>>()?;
            let mean = raw.iter().sum::<f64>() / raw.len() as f64;
            weights = Some(raw.into_iter().map(|w| w / mean).collect());
        }
        if let Some(labels) = &self.label_weights {
            let w = weights.get_or_insert_with(|| vec![1.0; rows.len()]);
            for (wi, &r) in w.iter_mut().zip(rows) {
                *wi *= labels[r];
            }
        }
        let guidance = match &self.teacher {
            Some((v, m))
                if options.teacher_weight_video > 0.0 || options.teacher_weight_music > 0.0 =>
            {
                let pick = |g: &GaussianBatch| GaussianBatch {
                    mean: g.mean.select(ndarray::Axis(0), rows),
                    std: g.std.select(ndarray::Axis(0), rows),
                };
                Some(GuidanceTargets {
                    video: pick(v),
                    music: pick(m),
                    weight_video: options.teacher_weight_video,
                    weight_music: options.teacher_weight_music,
                    direction: options.kl_direction,
                })
            }
            _ => None,
        };
        Ok(BatchExtras {
            preference,
            sample_weights: weights,
            guidance,
        })
    }
}

/// Student objective on the given rows of the context with explicit noise.
pub fn student_loss(
    model: &StudentModel,
    ctx: &StudentContext,
    rows: &[usize],
    noise_video: ndarray::Array2<f64>,
    noise_music: ndarray::Array2<f64>,
) -> Result<LossBreakdown> {
    let mut batch = ctx.pairs.batch(rows, model.config.latent_dim);
    batch.noise_video = noise_video;
    batch.noise_music = noise_music;
    let ex = ctx.extras(&model.options, rows)?;
    batch.preference = ex.preference;
    batch.sample_weights = ex.sample_weights;
    let guidance = ex.guidance.as_ref().map(GuidanceTargets::as_guidance);
    model.net.loss(&batch, &model.config.loss_weights(), guidance)
}

/// Matching loss on held-out pairs at the posterior means, deconfounded with
/// the global training preference.
pub fn validation_matching_loss(model: &StudentModel, val: &PairTable) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::Empty("validation pairs"));
    }
    let mut batch = val.full_batch(model.config.latent_dim);
    batch.preference = model.inference_preference()?.map(<[f64]>::to_vec);
    Ok(model.net.loss(&batch, &model.config.loss_weights(), None)?.matching)
}

/// Trains the student on `train`, selecting the epoch with the lowest
/// validation matching loss on `val`.
pub fn train_student(
    train: &Dataset,
    val: &Dataset,
    teacher: Option<&TeacherModel>,
    config: &TrainConfig,
    options: &StudentOptions,
    seed: u64,
) -> Result<(StudentModel, TrainLog)> {
    if let Some(t) = teacher.filter(|_| options.uses_teacher()) {
        if t.latent_dim() != config.latent_dim {
            return Err(Error::dim("teacher latent", config.latent_dim, t.latent_dim()));
        }
    }
    let ctx = StudentContext::new(train, teacher, options)?;
    if ctx.pairs.is_empty() {
        return Err(Error::Empty("training pairs"));
    }
    let val_pairs = PairTable::from_dataset(val)?;
    let mut model = StudentModel::new(
        train.f_video(),
        train.f_music(),
        train.n_genres(),
        config.clone(),
        options.clone(),
        seed,
    )?;
    model.global_preference = Some(ctx.global.clone());
    model.teacher_hash = ctx.teacher_hash.clone();
    let shell = model.clone();
    let (net, log) = fit(
        model.net,
        config,
        &ctx.pairs,
        seed,
        &mut |rows| ctx.extras(options, rows),
        &mut |net| {
            let probe = StudentModel {
                net: net.clone(),
                ..shell.clone()
            };
            if val_pairs.is_empty() {
                Ok(0.0)
            } else {
                validation_matching_loss(&probe, &val_pairs)
            }
        },
    )?;
    Ok((StudentModel { net, ..shell }, log))
}

#[cfg(test)]
mod tests;
