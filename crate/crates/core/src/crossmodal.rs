//! The cross-modal VAE shared by teacher and student: two Gaussian encoders,
//! two cross-generating decoders, and an optional deconfounder that appends
//! a genre-preference embedding to the music latent.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::{
    bidirectional_matching_loss, kl_between_batch, kl_standard_normal_batch, mse_batch, Decoder,
    GaussianBatch, GaussianEncoder, GaussianGrad, Linear, MatchingConfig, ParamVisitor,
    ParamVisitorMut, Parameterized,
};

/// Genre embedding table `E_g` (d × N_g) and the `2d → d` projection applied
/// to `[z_m ‖ z̄_u]` before scoring.
#[derive(Clone, Debug, PartialEq)]
pub struct Deconfounder {
    pub genre_table: Array2<f64>,
    pub projection: Linear,
}

impl Deconfounder {
    /// `z̄_u = E_g · pref`.
    pub fn preference_embedding(&self, pref: &[f64]) -> Result<Array1<f64>> {
        if pref.len() != self.genre_table.ncols() {
            return Err(Error::dim("genre preference", self.genre_table.ncols(), pref.len()));
        }
        Ok(self.genre_table.dot(&Array1::from(pref.to_vec())))
    }
}

impl Parameterized for Deconfounder {
    fn visit_params(&self, prefix: &str, f: &mut ParamVisitor) {
        let t = &self.genre_table;
        f(
            &format!("{prefix}.genre_table"),
            &[t.nrows(), t.ncols()],
            t.as_slice().expect("standard layout"),
        );
        self.projection.visit_params(&format!("{prefix}.projection"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut) {
        f(
            &format!("{prefix}.genre_table"),
            self.genre_table.as_slice_mut().expect("standard layout"),
        );
        self.projection.visit_params_mut(&format!("{prefix}.projection"), f);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetDims {
    pub f_video: usize,
    pub f_music: usize,
    pub latent: usize,
    /// Number of genres when a deconfounder is attached.
    pub n_genres: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossModalNet {
    pub video_encoder: GaussianEncoder,
    pub music_encoder: GaussianEncoder,
    /// Reconstructs video features from the (possibly extended) music latent.
    pub video_decoder: Decoder,
    /// Reconstructs music features from the video latent.
    pub music_decoder: Decoder,
    pub deconfounder: Option<Deconfounder>,
}

/// Which argument order the guidance KL uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(teacher ‖ student)`.
    #[default]
    TeacherStudent,
    /// `KL(student ‖ teacher)`.
    StudentTeacher,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub recon: f64,
    pub kl: f64,
    pub matching: f64,
    pub matching_config: MatchingConfig,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            recon: 1.0,
            kl: 1.0,
            matching: 1.0,
            matching_config: MatchingConfig::default(),
        }
    }
}

/// One minibatch of aligned (video, music) rows with the noise used for
/// reparametrization. Zero noise evaluates at the posterior means.
#[derive(Clone, Debug)]
pub struct NetBatch {
    pub video: Array2<f64>,
    pub music: Array2<f64>,
    pub clip_ids: Vec<u32>,
    pub noise_video: Array2<f64>,
    pub noise_music: Array2<f64>,
    /// Preference averaged into `z̄_u`; required iff a deconfounder is attached.
    pub preference: Option<Vec<f64>>,
    /// Per-row matching-loss weights.
    pub sample_weights: Option<Vec<f64>>,
}

impl NetBatch {
    pub fn len(&self) -> usize {
        self.video.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Replaces both noise matrices with standard-normal draws.
    pub fn draw_noise<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let normal = rand_distr::StandardNormal;
        self.noise_video = Array2::from_shape_simple_fn(self.noise_video.dim(), || {
            rng.sample::<f64, _>(normal)
        });
        self.noise_music = Array2::from_shape_simple_fn(self.noise_music.dim(), || {
            rng.sample::<f64, _>(normal)
        });
    }
}

/// Frozen posteriors the student is pulled towards.
#[derive(Clone, Copy, Debug)]
pub struct Guidance<'a> {
    pub video: &'a GaussianBatch,
    pub music: &'a GaussianBatch,
    pub weight_video: f64,
    pub weight_music: f64,
    pub direction: KlDirection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon_video: f64,
    pub recon_music: f64,
    pub kl_video: f64,
    pub kl_music: f64,
    pub matching: f64,
    pub kt_video: f64,
    pub kt_music: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn add_scaled(&mut self, other: &LossBreakdown, w: f64) {
        self.recon_video += w * other.recon_video;
        self.recon_music += w * other.recon_music;
        self.kl_video += w * other.kl_video;
        self.kl_music += w * other.kl_music;
        self.matching += w * other.matching;
        self.kt_video += w * other.kt_video;
        self.kt_music += w * other.kt_music;
        self.total += w * other.total;
    }

    pub fn is_finite(&self) -> bool {
        [
            self.recon_video,
            self.recon_music,
            self.kl_video,
            self.kl_music,
            self.matching,
            self.kt_video,
            self.kt_music,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

impl CrossModalNet {
    pub fn init<R: Rng + ?Sized>(dims: NetDims, dropout: f64, rng: &mut R) -> Self {
        let d = dims.latent;
        let video_encoder = GaussianEncoder::init(dims.f_video, d, dropout, rng);
        let music_encoder = GaussianEncoder::init(dims.f_music, d, dropout, rng);
        let dec_in = if dims.n_genres.is_some() { 2 * d } else { d };
        let video_decoder = Decoder::init(dec_in, dims.f_video, rng);
        let music_decoder = Decoder::init(d, dims.f_music, rng);
        let deconfounder = dims.n_genres.map(|g| Deconfounder {
            genre_table: Array2::from_shape_simple_fn((d, g), || rng.random_range(-0.1..0.1)),
            projection: Linear::xavier(2 * d, d, rng),
        });
        Self {
            video_encoder,
            music_encoder,
            video_decoder,
            music_decoder,
            deconfounder,
        }
    }

    /// All-zero network of the given shape.
    pub fn zeros(dims: NetDims, dropout: f64) -> Self {
        let d = dims.latent;
        let dec_in = if dims.n_genres.is_some() { 2 * d } else { d };
        Self {
            video_encoder: GaussianEncoder::zeros(dims.f_video, d, dropout),
            music_encoder: GaussianEncoder::zeros(dims.f_music, d, dropout),
            video_decoder: Decoder::zeros(dec_in, dims.f_video),
            music_decoder: Decoder::zeros(d, dims.f_music),
            deconfounder: dims.n_genres.map(|g| Deconfounder {
                genre_table: Array2::zeros((d, g)),
                projection: Linear::zeros(2 * d, d),
            }),
        }
    }

    pub fn dims(&self) -> NetDims {
        NetDims {
            f_video: self.video_encoder.input_dim(),
            f_music: self.music_encoder.input_dim(),
            latent: self.video_encoder.latent_dim(),
            n_genres: self.deconfounder.as_ref().map(|d| d.genre_table.ncols()),
        }
    }

    /// `[z_m ‖ z̄_u]` when deconfounding, `z_m` otherwise.
    fn extend(&self, z_m: &Array2<f64>, pref: Option<&[f64]>) -> Result<Array2<f64>> {
        match &self.deconfounder {
            None => Ok(z_m.clone()),
            Some(dc) => {
                let pref = pref.ok_or_else(|| {
                    Error::Invalid("deconfounded network needs a genre preference".into())
                })?;
                let zu = dc.preference_embedding(pref)?;
                let tiled = zu
                    .broadcast((z_m.nrows(), zu.len()))
                    .expect("broadcast row")
                    .to_owned();
                Ok(concatenate![Axis(1), *z_m, tiled])
            }
        }
    }

    /// Music-side vector entering the dot product: the projected extension
    /// when deconfounding, `z_m` itself otherwise.
    fn match_embedding(&self, extended: &Array2<f64>) -> Array2<f64> {
        match &self.deconfounder {
            None => extended.clone(),
            Some(dc) => dc.projection.forward(extended),
        }
    }

    /// Posterior means of a batch of videos.
    pub fn video_embedding(&self, video: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.video_encoder.forward(video, None)?.0.mean)
    }

    /// Matching-space embedding of music rows at their posterior means,
    /// deconfounded with `pref` when the network has a deconfounder.
    pub fn music_embedding(&self, music: &Array2<f64>, pref: Option<&[f64]>) -> Result<Array2<f64>> {
        let mean = self.music_encoder.forward(music, None)?.0.mean;
        Ok(self.match_embedding(&self.extend(&mean, pref)?))
    }

    /// Full objective and its gradient, shaped like `self`.
    pub fn loss_and_grad(
        &self,
        batch: &NetBatch,
        weights: &LossWeights,
        guidance: Option<Guidance<'_>>,
        mut dropout_rng: Option<&mut (dyn RngCore + '_)>,
    ) -> Result<(LossBreakdown, CrossModalNet)> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::Empty("training batch"));
        }
        let d = self.video_encoder.latent_dim();
        for (what, rows, m) in [
            ("music rows", n, &batch.music),
            ("video noise", n, &batch.noise_video),
            ("music noise", n, &batch.noise_music),
        ] {
            if m.nrows() != rows {
                return Err(Error::dim(what, rows, m.nrows()));
            }
        }
        if batch.noise_video.ncols() != d || batch.noise_music.ncols() != d {
            return Err(Error::dim("noise width", d, batch.noise_video.ncols()));
        }

        let (pv, trace_v) = self.video_encoder.forward(&batch.video, dropout_rng.as_deref_mut())?;
        let (pm, trace_m) = self.music_encoder.forward(&batch.music, dropout_rng.as_deref_mut())?;
        let z_v = pv.sample(&batch.noise_video);
        let z_m = pm.sample(&batch.noise_music);
        let extended = self.extend(&z_m, batch.preference.as_deref())?;
        let emb_m = self.match_embedding(&extended);

        let v_hat = self.video_decoder.forward(&extended)?;
        let m_hat = self.music_decoder.forward(&z_v)?;
        let (recon_video, d_vhat) = mse_batch(&v_hat, &batch.video);
        let (recon_music, d_mhat) = mse_batch(&m_hat, &batch.music);
        let (kl_video, dkl_v) = kl_standard_normal_batch(&pv);
        let (kl_music, dkl_m) = kl_standard_normal_batch(&pm);

        let scores = z_v.dot(&emb_m.t());
        let (matching, d_scores) = bidirectional_matching_loss(
            &scores,
            &batch.clip_ids,
            batch.sample_weights.as_deref(),
            &weights.matching_config,
        )?;

        let mut kt_video = 0.0;
        let mut kt_music = 0.0;
        let mut dkt_v = GaussianGrad::zeros(n, d);
        let mut dkt_m = GaussianGrad::zeros(n, d);
        if let Some(g) = &guidance {
            let student_side = |teacher: &GaussianBatch, student: &GaussianBatch| match g.direction {
                KlDirection::TeacherStudent => {
                    kl_between_batch(teacher, student).map(|(l, _, gs)| (l, gs))
                }
                KlDirection::StudentTeacher => {
                    kl_between_batch(student, teacher).map(|(l, gs, _)| (l, gs))
                }
            };
            (kt_video, dkt_v) = student_side(g.video, &pv)?;
            (kt_music, dkt_m) = student_side(g.music, &pm)?;
        }
        let (wv, wm) = guidance.map_or((0.0, 0.0), |g| (g.weight_video, g.weight_music));

        let total = weights.recon * (recon_video + recon_music)
            + weights.kl * (kl_video + kl_music)
            + weights.matching * matching
            + wv * kt_video
            + wm * kt_music;
        let breakdown = LossBreakdown {
            recon_video,
            recon_music,
            kl_video,
            kl_music,
            matching,
            kt_video,
            kt_music,
            total,
        };

        // backward
        let mut grad = crate::nncore::zeroed(self);
        let d_scores = d_scores * weights.matching;
        let mut d_ext =
            self.video_decoder
                .backward(&extended, &(d_vhat * weights.recon), &mut grad.video_decoder);
        let mut d_zv =
            self.music_decoder
                .backward(&z_v, &(d_mhat * weights.recon), &mut grad.music_decoder);
        d_zv += &d_scores.dot(&emb_m);
        let d_emb = d_scores.t().dot(&z_v);
        let d_zm = match (&self.deconfounder, grad.deconfounder.as_mut()) {
            (Some(dc), Some(gdc)) => {
                d_ext += &dc.projection.backward(&extended, &d_emb, &mut gdc.projection);
                let d_zu = d_ext.slice(s![.., d..]).sum_axis(Axis(0));
                let pref = Array1::from(batch.preference.clone().expect("checked in extend"));
                let outer = d_zu
                    .view()
                    .insert_axis(Axis(1))
                    .dot(&pref.view().insert_axis(Axis(0)));
                gdc.genre_table += &outer;
                d_ext.slice(s![.., ..d]).to_owned()
            }
            _ => d_ext + &d_emb,
        };

        let d_mean_v = &d_zv + &(&dkl_v.mean * weights.kl) + &(&dkt_v.mean * wv);
        let d_std_v = &d_zv * &batch.noise_video + &(&dkl_v.std * weights.kl) + &(&dkt_v.std * wv);
        let d_mean_m = &d_zm + &(&dkl_m.mean * weights.kl) + &(&dkt_m.mean * wm);
        let d_std_m = &d_zm * &batch.noise_music + &(&dkl_m.std * weights.kl) + &(&dkt_m.std * wm);
        self.video_encoder
            .backward(&trace_v, &d_mean_v, &d_std_v, &mut grad.video_encoder);
        self.music_encoder
            .backward(&trace_m, &d_mean_m, &d_std_m, &mut grad.music_encoder);
        Ok((breakdown, grad))
    }

    /// Objective only.
    pub fn loss(
        &self,
        batch: &NetBatch,
        weights: &LossWeights,
        guidance: Option<Guidance<'_>>,
    ) -> Result<LossBreakdown> {
        self.loss_and_grad(batch, weights, guidance, None).map(|(l, _)| l)
    }
}

impl Parameterized for CrossModalNet {
    fn visit_params(&self, prefix: &str, f: &mut ParamVisitor) {
        self.video_encoder.visit_params(&format!("{prefix}.video_encoder"), f);
        self.music_encoder.visit_params(&format!("{prefix}.music_encoder"), f);
        self.video_decoder.visit_params(&format!("{prefix}.video_decoder"), f);
        self.music_decoder.visit_params(&format!("{prefix}.music_decoder"), f);
        if let Some(dc) = &self.deconfounder {
            dc.visit_params(&format!("{prefix}.deconfounder"), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut) {
        self.video_encoder.visit_params_mut(&format!("{prefix}.video_encoder"), f);
        self.music_encoder.visit_params_mut(&format!("{prefix}.music_encoder"), f);
        self.video_decoder.visit_params_mut(&format!("{prefix}.video_decoder"), f);
        self.music_decoder.visit_params_mut(&format!("{prefix}.music_decoder"), f);
        if let Some(dc) = &mut self.deconfounder {
            dc.visit_params_mut(&format!("{prefix}.deconfounder"), f);
        }
    }
}
