//! The PGC teacher: a cross-modal VAE trained on clean expert pairs whose
//! frozen encoders later guide the student.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::crossmodal::{CrossModalNet, LossBreakdown, NetBatch, NetDims};
use crate::datamodel::{Dataset, DatasetKind, FeatureVector};
use crate::error::{Error, Result};
use crate::nncore::{param_hash, Checkpoint, DiagonalGaussian, GaussianBatch};
use crate::training::{fit, BatchExtras, PairTable, TrainConfig, TrainLog};

/// Share of PGC pairs held out for checkpoint selection.
pub const HOLDOUT_FRACTION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct TeacherModel {
    net: CrossModalNet,
    config: TrainConfig,
    frozen: bool,
}

impl TeacherModel {
    pub fn new(f_video: usize, f_music: usize, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = NetDims {
            f_video,
            f_music,
            latent: config.latent_dim,
            n_genres: None,
        };
        Ok(Self {
            net: CrossModalNet::init(dims, config.dropout, &mut rng),
            config,
            frozen: false,
        })
    }

    /// Wraps an existing network without a deconfounder.
    pub fn from_net(net: CrossModalNet, config: TrainConfig) -> Result<Self> {
        if net.deconfounder.is_some() {
            return Err(Error::Invalid("a teacher has no deconfounder".into()));
        }
        Ok(Self {
            net,
            config,
            frozen: false,
        })
    }

    pub fn net(&self) -> &CrossModalNet {
        &self.net
    }

    /// Mutable access, refused once frozen.
    pub fn net_mut(&mut self) -> Result<&mut CrossModalNet> {
        if self.frozen {
            return Err(Error::Frozen);
        }
        Ok(&mut self.net)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn param_hash(&self) -> String {
        param_hash(&self.net)
    }

    /// Objective on a batch with its component breakdown.
    pub fn loss_on(&self, batch: &NetBatch) -> Result<LossBreakdown> {
        self.net.loss(batch, &self.config.loss_weights(), None)
    }

    fn require_frozen(&self) -> Result<()> {
        if self.frozen {
            Ok(())
        } else {
            Err(Error::NotFrozen)
        }
    }

    /// Posteriors of a batch of pairs; no dropout, no gradient.
    pub fn infer_batch(
        &self,
        video: &Array2<f64>,
        music: &Array2<f64>,
    ) -> Result<(GaussianBatch, GaussianBatch)> {
        self.require_frozen()?;
        let (v, _) = self.net.video_encoder.forward(video, None)?;
        let (m, _) = self.net.music_encoder.forward(music, None)?;
        Ok((v, m))
    }

    pub fn to_checkpoint(&self, config_hash: &str) -> Checkpoint {
        let dims = self.net.dims();
        let mut meta = BTreeMap::new();
        meta.insert("f_video".into(), json!(dims.f_video));
        meta.insert("f_music".into(), json!(dims.f_music));
        meta.insert("config".into(), serde_json::to_value(&self.config).expect("plain struct"));
        meta.insert("frozen".into(), json!(self.frozen));
        Checkpoint::capture("teacher", config_hash, meta, &self.net)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("teacher")?;
        let config: TrainConfig = ck.meta("config")?;
        let dims = NetDims {
            f_video: ck.meta("f_video")?,
            f_music: ck.meta("f_music")?,
            latent: config.latent_dim,
            n_genres: None,
        };
        let mut net = CrossModalNet::zeros(dims, config.dropout);
        ck.restore(&mut net)?;
        Ok(Self {
            net,
            config,
            frozen: ck.meta("frozen")?,
        })
    }
}

/// Teacher objective on PGC pairs, evaluated at the posterior means.
pub fn teacher_loss(model: &TeacherModel, pairs: &PairTable) -> Result<LossBreakdown> {
    if pairs.kind != DatasetKind::Pgc {
        return Err(Error::KindMismatch {
            expected: DatasetKind::Pgc,
            actual: pairs.kind,
        });
    }
    if pairs.is_empty() {
        return Err(Error::Empty("teacher batch"));
    }
    model.loss_on(&pairs.full_batch(model.latent_dim()))
}

/// Trains on PGC pairs and returns the frozen teacher with the lowest
/// held-out loss, together with the per-epoch log.
pub fn train_teacher(
    pgc: &Dataset,
    config: &TrainConfig,
    seed: u64,
) -> Result<(TeacherModel, TrainLog)> {
    pgc.require_kind(DatasetKind::Pgc)?;
    let table = PairTable::from_dataset(pgc)?;
    if table.is_empty() {
        return Err(Error::Empty("PGC pairs"));
    }
    let mut order: Vec<usize> = (0..table.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x686f_6c64);
    order.shuffle(&mut rng);
    let n_hold = if table.len() >= 2 {
        ((HOLDOUT_FRACTION * table.len() as f64).ceil() as usize).min(table.len() - 1)
    } else {
        0
    };
    let (hold, train) = order.split_at(n_hold);
    let (mut hold, mut train) = (hold.to_vec(), train.to_vec());
    hold.sort_unstable();
    train.sort_unstable();
    let train_table = table.select(&train);
    let hold_table = table.select(if hold.is_empty() { &train } else { &hold });

    let model = TeacherModel::new(pgc.f_video(), pgc.f_music(), config.clone(), seed)?;
    let weights = config.loss_weights();
    let hold_batch = hold_table.full_batch(config.latent_dim);
    let (net, log) = fit(
        model.net,
        config,
        &train_table,
        seed,
        &mut |_| Ok(BatchExtras::default()),
        &mut |net| Ok(net.loss(&hold_batch, &weights, None)?.total),
    )?;
    let mut teacher = TeacherModel::from_net(net, config.clone())?;
    teacher.freeze();
    Ok((teacher, log))
}

/// Posteriors `q(z_v | v)` and `q(z_m | m)` of a frozen teacher.
pub fn infer_teacher_latents(
    model: &TeacherModel,
    v: &FeatureVector,
    m: &FeatureVector,
) -> Result<(DiagonalGaussian, DiagonalGaussian)> {
    let row = |x: &FeatureVector| {
        Array2::from_shape_vec((1, x.dim()), x.as_slice().to_vec()).expect("row shape")
    };
    let (gv, gm) = model.infer_batch(&row(v), &row(m))?;
    Ok((gv.row(0), gm.row(0)))
}

/// Logistic squashing of a teacher score.
pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Blended targets `(1 − w)·y + w·logistic(teacher score)` for every
/// interaction of `ugc`, in dataset order.
pub fn impute_labels(model: &TeacherModel, ugc: &Dataset, w: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Invalid(format!("imputation weight {w} outside [0, 1]")));
    }
    model.require_frozen()?;
    let mut out = Vec::with_capacity(ugc.interactions().len());
    for t in ugc.interactions() {
        let v = ugc
            .video(t.video_id)
            .ok_or_else(|| Error::Integrity(format!("unknown video {}", t.video_id)))?;
        let m = ugc
            .music_clip(t.music_id)
            .ok_or_else(|| Error::Integrity(format!("unknown music {}", t.music_id)))?;
        let (gv, gm) = infer_teacher_latents(model, &v.feature, &m.feature)?;
        let score = crate::nncore::matching_score(gv.mean(), gm.mean())?;
        out.push((1.0 - w) * f64::from(t.y) + w * logistic(score));
    }
    Ok(out)
}
