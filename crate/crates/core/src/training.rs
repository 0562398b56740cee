//! Minibatch training loop shared by teacher and student.

use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crossmodal::{CrossModalNet, Guidance, KlDirection, LossBreakdown, LossWeights, NetBatch};
use crate::datamodel::{Dataset, DatasetKind, MusicId, UploaderId, VideoId};
use crate::error::{Error, Result};
use crate::nncore::{Adam, AdamConfig, GaussianBatch, MatchingConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub lr: f64,
    /// L2 coefficient.
    pub weight_decay: f64,
    pub recon_weight: f64,
    pub kl_weight: f64,
    pub matching_weight: f64,
    pub margin: f64,
    pub n_hard: usize,
    pub m2v_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            epochs: 50,
            batch_size: 256,
            dropout: 0.2,
            lr: 1e-3,
            weight_decay: 1e-3,
            recon_weight: 1.0,
            kl_weight: 1.0,
            matching_weight: 1.0,
            margin: 0.05,
            n_hard: 40,
            m2v_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.latent_dim == 0 || self.batch_size == 0 || self.n_hard == 0 {
            return bad("latent_dim, batch_size and n_hard must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        let nonneg = [
            self.lr,
            self.weight_decay,
            self.recon_weight,
            self.kl_weight,
            self.matching_weight,
            self.m2v_weight,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("learning rate, decay and loss weights must be finite and nonnegative");
        }
        if !(self.margin > 0.0) {
            return bad("margin must be positive");
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            recon: self.recon_weight,
            kl: self.kl_weight,
            matching: self.matching_weight,
            matching_config: MatchingConfig {
                margin: self.margin,
                n_hard: self.n_hard,
                m2v_weight: self.m2v_weight,
            },
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Positive (video, music) pairs of a dataset as dense feature matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct PairTable {
    pub kind: DatasetKind,
    pub video: Array2<f64>,
    pub music: Array2<f64>,
    pub video_ids: Vec<VideoId>,
    pub clip_ids: Vec<MusicId>,
    pub uploaders: Vec<Option<UploaderId>>,
    pub genres: Vec<usize>,
}

impl PairTable {
    /// All interactions with `y = 1`, in dataset order.
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let pos: Vec<_> = ds.interactions().iter().filter(|t| t.y == 1).collect();
        let mut video = Array2::zeros((pos.len(), ds.f_video()));
        let mut music = Array2::zeros((pos.len(), ds.f_music()));
        let mut table = PairTable {
            kind: ds.kind(),
            video: Array2::zeros((0, 0)),
            music: Array2::zeros((0, 0)),
            video_ids: Vec::with_capacity(pos.len()),
            clip_ids: Vec::with_capacity(pos.len()),
            uploaders: Vec::with_capacity(pos.len()),
            genres: Vec::with_capacity(pos.len()),
        };
        for (i, t) in pos.iter().enumerate() {
            let v = ds
                .video(t.video_id)
                .ok_or_else(|| Error::Integrity(format!("unknown video {}", t.video_id)))?;
            let m = ds
                .music_clip(t.music_id)
                .ok_or_else(|| Error::Integrity(format!("unknown music {}", t.music_id)))?;
            video.row_mut(i).assign(&ndarray::ArrayView1::from(v.feature.as_slice()));
            music.row_mut(i).assign(&ndarray::ArrayView1::from(m.feature.as_slice()));
            table.video_ids.push(t.video_id);
            table.clip_ids.push(t.music_id);
            table.uploaders.push(t.uploader_id);
            table.genres.push(m.genre);
        }
        table.video = video;
        table.music = music;
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.video_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.video_ids.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> PairTable {
        PairTable {
            kind: self.kind,
            video: self.video.select(Axis(0), rows),
            music: self.music.select(Axis(0), rows),
            video_ids: rows.iter().map(|&r| self.video_ids[r]).collect(),
            clip_ids: rows.iter().map(|&r| self.clip_ids[r]).collect(),
            uploaders: rows.iter().map(|&r| self.uploaders[r]).collect(),
            genres: rows.iter().map(|&r| self.genres[r]).collect(),
        }
    }

    /// A batch over `rows` with zero noise (posterior means).
    pub fn batch(&self, rows: &[usize], latent: usize) -> NetBatch {
        NetBatch {
            video: self.video.select(Axis(0), rows),
            music: self.music.select(Axis(0), rows),
            clip_ids: rows.iter().map(|&r| self.clip_ids[r].0).collect(),
            noise_video: Array2::zeros((rows.len(), latent)),
            noise_music: Array2::zeros((rows.len(), latent)),
            preference: None,
            sample_weights: None,
        }
    }

    pub fn full_batch(&self, latent: usize) -> NetBatch {
        self.batch(&(0..self.len()).collect::<Vec<_>>(), latent)
    }
}

/// Per-batch inputs that depend on the model being trained.
#[derive(Clone, Debug, Default)]
pub struct BatchExtras {
    pub preference: Option<Vec<f64>>,
    pub sample_weights: Option<Vec<f64>>,
    pub guidance: Option<GuidanceTargets>,
}

#[derive(Clone, Debug)]
pub struct GuidanceTargets {
    pub video: GaussianBatch,
    pub music: GaussianBatch,
    pub weight_video: f64,
    pub weight_music: f64,
    pub direction: KlDirection,
}

impl GuidanceTargets {
    pub fn as_guidance(&self) -> Guidance<'_> {
        Guidance {
            video: &self.video,
            music: &self.music,
            weight_video: self.weight_video,
            weight_music: self.weight_music,
            direction: self.direction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub validation: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,recon_video,recon_music,kl_video,kl_music,matching,kt_video,kt_music,total,validation\n",
        );
        for r in &self.epochs {
            let t = &r.train;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.epoch,
                t.recon_video,
                t.recon_music,
                t.kl_video,
                t.kl_music,
                t.matching,
                t.kt_video,
                t.kt_music,
                t.total,
                r.validation
            );
        }
        out
    }
}

/// Runs `cfg.epochs` epochs of shuffled minibatch Adam and returns the
/// parameters with the lowest `validate` score (evaluated after each epoch).
pub(crate) fn fit(
    init: CrossModalNet,
    cfg: &TrainConfig,
    table: &PairTable,
    seed: u64,
    extras: &mut dyn FnMut(&[usize]) -> Result<BatchExtras>,
    validate: &mut dyn FnMut(&CrossModalNet) -> Result<f64>,
) -> Result<(CrossModalNet, TrainLog)> {
    cfg.validate()?;
    if table.is_empty() {
        return Err(Error::Empty("training pairs"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x7472_6169_6e);
    let weights = cfg.loss_weights();
    let mut net = init;
    let mut opt = Adam::new(cfg.adam());
    let mut order: Vec<usize> = (0..table.len()).collect();
    let mut best: Option<(f64, CrossModalNet)> = None;
    let mut log = TrainLog::default();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        for (step, rows) in order.chunks(cfg.batch_size).enumerate() {
            let mut batch = table.batch(rows, cfg.latent_dim);
            batch.draw_noise(&mut rng);
            let ex = extras(rows)?;
            batch.preference = ex.preference;
            batch.sample_weights = ex.sample_weights;
            let guidance = ex.guidance.as_ref().map(GuidanceTargets::as_guidance);
            let (loss, grad) = net.loss_and_grad(&batch, &weights, guidance, Some(&mut rng))?;
            if !loss.is_finite() || !crate::nncore::all_finite(&grad) {
                return Err(Error::NonFinite {
                    epoch,
                    step,
                    detail: format!("{loss:?}"),
                    last_good: Some(Box::new(net)),
                });
            }
            opt.step(&mut net, &grad);
            sum.add_scaled(&loss, rows.len() as f64 / table.len() as f64);
        }
        let validation = validate(&net)?;
        log::debug!("epoch {epoch}: train {:.5} validation {validation:.5}", sum.total);
        if best.as_ref().is_none_or(|(b, _)| validation < *b) {
            best = Some((validation, net.clone()));
            log.best_epoch = epoch;
        }
        log.epochs.push(EpochRecord {
            epoch,
            train: sum,
            validation,
        });
    }
    let net = best.map_or(net, |(_, n)| n);
    Ok((net, log))
}
