//! Synthetic confounded UGC data, clean PGC pairs, and intervened splits.
//!
//! Every clip and video has a hidden latent content vector; the true match
//! score `s*` of a pair is the cosine similarity of their latents. Uploaders
//! select music with probability proportional to
//! `base_popularity(m) * exp(alpha * s*(v, m) + beta * ln pi_u[genre(m)])`, so
//! `beta` is the confounding dial (uploader genre preference drives both the
//! exposure of a genre and the recorded match) and `alpha` the content dial.
//! PGC pairs are drawn from the top quantile of `s*` alone.

mod sampling;
mod split;
mod truth;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    Dataset, DatasetKind, FeatureVector, GenrePreference, InteractionTriplet, MicroVideo,
    MusicClip, MusicId, Uploader, UploaderId, VideoId, DEFAULT_GENRES,
};
use crate::error::{Error, Result};

pub use sampling::{sample_diverse_test, sample_matching_test};
pub use split::{genre_ratio_intervention, split_strong_generalization, SplitSpec, SplitTag};
pub use truth::GroundTruth;

/// Clip counts per genre in the reference catalog (hiphop, jazz, classical,
/// reggae, pop, metal); used as the default genre mix when `n_genres == 6`.
pub const REFERENCE_GENRE_COUNTS: [f64; 6] = [651.0, 665.0, 1330.0, 311.0, 42.0, 4.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_music: usize,
    pub n_videos: usize,
    pub n_uploaders: usize,
    pub n_pgc_pairs: usize,
    pub f_video: usize,
    pub f_music: usize,
    pub n_genres: usize,
    pub latent_dim_true: usize,
    /// beta: weight of `ln pi_u[genre]` in the selection logit.
    pub confound_strength: f64,
    /// alpha: weight of `s*` in the selection logit.
    pub match_strength: f64,
    pub popularity_zipf_s: f64,
    pub dirichlet_alpha: f64,
    pub noise_sigma: f64,
    /// Length of the genre offset added to music latents.
    pub genre_separation: f64,
    /// PGC videos are paired with a clip drawn from this upper quantile of `s*`.
    pub pgc_quantile: f64,
    /// Relative clip frequency per genre; `None` uses the reference mix for six
    /// genres and a uniform mix otherwise.
    pub genre_weights: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_music: 200,
            n_videos: 2000,
            n_uploaders: 200,
            n_pgc_pairs: 1000,
            f_video: 32,
            f_music: 32,
            n_genres: 6,
            latent_dim_true: 8,
            confound_strength: 1.5,
            match_strength: 6.0,
            popularity_zipf_s: 0.3,
            dirichlet_alpha: 0.5,
            noise_sigma: 0.1,
            genre_separation: 1.0,
            pgc_quantile: 0.95,
            genre_weights: None,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_music", self.n_music),
            ("n_videos", self.n_videos),
            ("n_uploaders", self.n_uploaders),
            ("f_video", self.f_video),
            ("f_music", self.f_music),
            ("n_genres", self.n_genres),
            ("latent_dim_true", self.latent_dim_true),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.n_uploaders > self.n_videos {
            return Err(Error::Config(format!(
                "n_uploaders ({}) exceeds n_videos ({}); every uploader needs a video",
                self.n_uploaders, self.n_videos
            )));
        }
        let nonneg = [
            ("confound_strength", self.confound_strength),
            ("match_strength", self.match_strength),
            ("noise_sigma", self.noise_sigma),
            ("popularity_zipf_s", self.popularity_zipf_s),
            ("genre_separation", self.genre_separation),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.dirichlet_alpha.is_finite() && self.dirichlet_alpha > 0.0) {
            return Err(Error::Config("dirichlet_alpha must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.pgc_quantile) {
            return Err(Error::Config("pgc_quantile must lie in [0, 1)".into()));
        }
        if let Some(w) = &self.genre_weights {
            if w.len() != self.n_genres {
                return Err(Error::Config(format!(
                    "genre_weights has {} entries for {} genres",
                    w.len(),
                    self.n_genres
                )));
            }
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Config("genre_weights must be nonnegative with positive sum".into()));
            }
        }
        Ok(())
    }

    pub fn genre_names(&self) -> Vec<String> {
        (0..self.n_genres)
            .map(|g| match (self.n_genres, DEFAULT_GENRES.get(g)) {
                (6, Some(name)) => (*name).to_string(),
                _ => format!("genre{g}"),
            })
            .collect()
    }

    fn genre_mix(&self) -> Vec<f64> {
        match &self.genre_weights {
            Some(w) => w.clone(),
            None if self.n_genres == REFERENCE_GENRE_COUNTS.len() => REFERENCE_GENRE_COUNTS.to_vec(),
            None => vec![1.0; self.n_genres],
        }
    }
}

// Stream ids for the independent random substreams of one seed.
const STREAM_WORLD: u64 = 1;
const STREAM_UGC_CATALOG: u64 = 2;
const STREAM_UGC_VIDEOS: u64 = 3;
const STREAM_PGC: u64 = 4;
const STREAM_UPLOADER_BASE: u64 = 1 << 32;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed-determined structure shared by the UGC and PGC generators: genre
/// offsets in latent space and the linear maps from latent to features.
struct World {
    genre_centers: Vec<Vec<f64>>,
    video_map: Vec<Vec<f64>>,
    music_map: Vec<Vec<f64>>,
}

impl World {
    fn new(config: &GenConfig) -> Self {
        let mut rng = stream_rng(config.seed, STREAM_WORLD);
        let l = config.latent_dim_true;
        let genre_centers = (0..config.n_genres)
            .map(|_| {
                let v = gaussian_vec(&mut rng, l);
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.into_iter()
                    .map(|x| x / norm * config.genre_separation)
                    .collect()
            })
            .collect();
        let scale = 1.0 / (l as f64).sqrt();
        let mut linear_map = |rows: usize| -> Vec<Vec<f64>> {
            (0..rows)
                .map(|_| gaussian_vec(&mut rng, l).into_iter().map(|x| x * scale).collect())
                .collect()
        };
        let video_map = linear_map(config.f_video);
        let music_map = linear_map(config.f_music);
        Self {
            genre_centers,
            video_map,
            music_map,
        }
    }

    fn observe(&self, map: &[Vec<f64>], latent: &[f64], noise: f64, rng: &mut impl Rng) -> FeatureVector {
        let values = map
            .iter()
            .map(|row| {
                let clean: f64 = row.iter().zip(latent).map(|(a, b)| a * b).sum();
                let eps: f64 = rng.sample(StandardNormal);
                clean + noise * eps
            })
            .collect();
        FeatureVector::new(values).expect("finite features")
    }

    fn music_latent(&self, genre: usize, rng: &mut impl Rng) -> Vec<f64> {
        let center = &self.genre_centers[genre];
        gaussian_vec(rng, center.len())
            .into_iter()
            .zip(center)
            .map(|(e, c)| c + e)
            .collect()
    }

    /// Videos carry a "natural" genre drawn from the catalog mix, so content
    /// alone already prefers some genres over others.
    fn video_latent(&self, natural_genre: usize, rng: &mut impl Rng) -> Vec<f64> {
        self.music_latent(natural_genre, rng)
    }
}

struct Catalog {
    clips: Vec<MusicClip>,
    latents: Vec<Vec<f64>>,
}

fn gaussian_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Largest-remainder apportionment of `total` items by `weights`.
pub(crate) fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut left = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

fn sample_genre(rng: &mut impl Rng, cumulative: &[f64]) -> usize {
    let total = *cumulative.last().unwrap();
    let x = rng.random::<f64>() * total;
    cumulative.iter().position(|c| x < *c).unwrap_or(cumulative.len() - 1)
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect()
}

fn build_catalog(config: &GenConfig, world: &World, stream: u64) -> Catalog {
    let mut rng = stream_rng(config.seed, stream);
    let mut genres: Vec<usize> = apportion(&config.genre_mix(), config.n_music)
        .into_iter()
        .enumerate()
        .flat_map(|(g, c)| std::iter::repeat_n(g, c))
        .collect();
    genres.shuffle(&mut rng);
    let mut clips = Vec::with_capacity(config.n_music);
    let mut latents = Vec::with_capacity(config.n_music);
    for (i, g) in genres.into_iter().enumerate() {
        let latent = world.music_latent(g, &mut rng);
        let feature = world.observe(&world.music_map, &latent, config.noise_sigma, &mut rng);
        clips.push(MusicClip {
            music_id: MusicId(i as u32),
            feature,
            genre: g,
            popularity: 0,
        });
        latents.push(latent);
    }
    Catalog { clips, latents }
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn dirichlet(rng: &mut impl Rng, alpha: f64, n: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive concentration");
    let mut draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum <= 0.0 || !sum.is_finite() {
        // All draws underflowed; fall back to a single random genre.
        let g = rng.random_range(0..n);
        draws = vec![0.0; n];
        draws[g] = 1.0;
        return draws;
    }
    draws.iter_mut().for_each(|x| *x /= sum);
    draws
}

/// Selection logits of every catalog clip for one video and one uploader.
pub(crate) fn selection_logits(
    config: &GenConfig,
    video_latent: &[f64],
    preference: &[f64],
    catalog_latents: &[Vec<f64>],
    clip_genres: &[usize],
    log_base_popularity: &[f64],
) -> Vec<f64> {
    catalog_latents
        .iter()
        .zip(clip_genres)
        .zip(log_base_popularity)
        .map(|((m, &g), lp)| {
            let pref = preference[g].max(1e-300);
            config.match_strength * cosine(video_latent, m) + config.confound_strength * pref.ln() + lp
        })
        .collect()
}

pub(crate) fn softmax_sample(rng: &mut impl Rng, logits: &[f64]) -> usize {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

/// Generates a confounded UGC dataset (positive triplets only) together with
/// its hidden ground truth.
pub fn generate_ugc(config: &GenConfig) -> Result<(Dataset, GroundTruth)> {
    config.validate()?;
    let world = World::new(config);
    let catalog = build_catalog(config, &world, STREAM_UGC_CATALOG);
    let clip_genres: Vec<usize> = catalog.clips.iter().map(|c| c.genre).collect();

    let mut rng = stream_rng(config.seed, STREAM_UGC_CATALOG + 100);
    let mut ranks: Vec<usize> = (0..config.n_music).collect();
    ranks.shuffle(&mut rng);
    let log_base_popularity: Vec<f64> = ranks
        .iter()
        .map(|&r| -config.popularity_zipf_s * ((r + 1) as f64).ln())
        .collect();

    let mix = cumulative(&config.genre_mix());
    let mut vrng = stream_rng(config.seed, STREAM_UGC_VIDEOS);
    let mut video_latents = Vec::with_capacity(config.n_videos);
    let mut video_features = Vec::with_capacity(config.n_videos);
    let mut owners = Vec::with_capacity(config.n_videos);
    for i in 0..config.n_videos {
        let natural = sample_genre(&mut vrng, &mix);
        let latent = world.video_latent(natural, &mut vrng);
        video_features.push(world.observe(&world.video_map, &latent, config.noise_sigma, &mut vrng));
        video_latents.push(latent);
        owners.push(if i < config.n_uploaders {
            i
        } else {
            vrng.random_range(0..config.n_uploaders)
        });
    }
    let mut videos_of: Vec<Vec<usize>> = vec![Vec::new(); config.n_uploaders];
    for (v, &u) in owners.iter().enumerate() {
        videos_of[u].push(v);
    }

    let mut preferences = BTreeMap::new();
    let mut choice = vec![0usize; config.n_videos];
    for (u, vids) in videos_of.iter().enumerate() {
        let mut urng = stream_rng(config.seed, STREAM_UPLOADER_BASE + u as u64);
        let pref = dirichlet(&mut urng, config.dirichlet_alpha, config.n_genres);
        for &v in vids {
            let logits = selection_logits(
                config,
                &video_latents[v],
                &pref,
                &catalog.latents,
                &clip_genres,
                &log_base_popularity,
            );
            choice[v] = softmax_sample(&mut urng, &logits);
        }
        preferences.insert(UploaderId(u as u32), GenrePreference::new(pref)?);
    }

    let videos = (0..config.n_videos)
        .map(|v| MicroVideo {
            video_id: VideoId(v as u32),
            feature: video_features[v].clone(),
            uploader_id: Some(UploaderId(owners[v] as u32)),
        })
        .collect();
    let interactions = (0..config.n_videos)
        .map(|v| InteractionTriplet {
            uploader_id: Some(UploaderId(owners[v] as u32)),
            video_id: VideoId(v as u32),
            music_id: MusicId(choice[v] as u32),
            y: 1,
        })
        .collect();
    let uploaders = videos_of
        .iter()
        .enumerate()
        .map(|(u, vids)| Uploader {
            uploader_id: UploaderId(u as u32),
            history: vids.iter().map(|&v| MusicId(choice[v] as u32)).collect(),
        })
        .collect();

    let dataset = Dataset::new(
        DatasetKind::Ugc,
        config.f_video,
        config.f_music,
        config.genre_names(),
        videos,
        catalog.clips,
        uploaders,
        interactions,
    )?;
    let truth = GroundTruth::new(
        video_latents
            .into_iter()
            .enumerate()
            .map(|(v, l)| (VideoId(v as u32), l))
            .collect(),
        catalog
            .latents
            .into_iter()
            .enumerate()
            .map(|(m, l)| (MusicId(m as u32), l))
            .collect(),
        preferences,
    );
    Ok((dataset, truth))
}

/// PGC pairs with their ground truth. The PGC catalog is a fresh draw from the
/// same latent world and feature maps as the UGC catalog.
pub fn generate_pgc_with_truth(config: &GenConfig) -> Result<(Dataset, GroundTruth)> {
    config.validate()?;
    let world = World::new(config);
    let catalog = build_catalog(config, &world, STREAM_PGC);
    let mix = cumulative(&config.genre_mix());
    let mut rng = stream_rng(config.seed, STREAM_PGC + 100);
    let top = (((1.0 - config.pgc_quantile) * config.n_music as f64).ceil() as usize).max(1);

    let mut videos = Vec::with_capacity(config.n_pgc_pairs);
    let mut interactions = Vec::with_capacity(config.n_pgc_pairs);
    let mut video_latents = BTreeMap::new();
    for i in 0..config.n_pgc_pairs {
        let natural = sample_genre(&mut rng, &mix);
        let latent = world.video_latent(natural, &mut rng);
        let feature = world.observe(&world.video_map, &latent, config.noise_sigma, &mut rng);
        let mut scored: Vec<(f64, usize)> = catalog
            .latents
            .iter()
            .enumerate()
            .map(|(m, l)| (cosine(&latent, l), m))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let pick = scored[rng.random_range(0..top)].1;
        let vid = VideoId(i as u32);
        videos.push(MicroVideo {
            video_id: vid,
            feature,
            uploader_id: None,
        });
        interactions.push(InteractionTriplet {
            uploader_id: None,
            video_id: vid,
            music_id: MusicId(pick as u32),
            y: 1,
        });
        video_latents.insert(vid, latent);
    }
    let music_latents = catalog
        .latents
        .into_iter()
        .enumerate()
        .map(|(m, l)| (MusicId(m as u32), l))
        .collect();
    let dataset = Dataset::new(
        DatasetKind::Pgc,
        config.f_video,
        config.f_music,
        config.genre_names(),
        videos,
        catalog.clips,
        Vec::new(),
        interactions,
    )?;
    Ok((dataset, GroundTruth::new(video_latents, music_latents, BTreeMap::new())))
}

pub fn generate_pgc(config: &GenConfig) -> Result<Dataset> {
    generate_pgc_with_truth(config).map(|(d, _)| d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::write_dataset;

    fn small() -> GenConfig {
        GenConfig {
            n_music: 60,
            n_videos: 600,
            n_uploaders: 60,
            n_pgc_pairs: 200,
            f_video: 8,
            f_music: 8,
            latent_dim_true: 4,
            ..GenConfig::default()
        }
    }

    fn bytes(ds: &Dataset) -> Vec<u8> {
        let mut buf = Vec::new();
        write_dataset(ds, &mut buf).unwrap();
        buf
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let cfg = small();
        let (a, ta) = generate_ugc(&cfg).unwrap();
        let (b, tb) = generate_ugc(&cfg).unwrap();
        assert_eq!(bytes(&a), bytes(&b));
        assert_eq!(ta, tb);
        assert_eq!(bytes(&generate_pgc(&cfg).unwrap()), bytes(&generate_pgc(&cfg).unwrap()));
        let other = GenConfig { seed: 1, ..cfg };
        assert_ne!(bytes(&a), bytes(&generate_ugc(&other).unwrap().0));
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = GenConfig {
            n_music: 0,
            ..small()
        };
        assert!(matches!(generate_ugc(&bad), Err(Error::Config(_))));
        let bad = GenConfig {
            confound_strength: -1.0,
            ..small()
        };
        assert!(matches!(generate_pgc(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn ugc_shape() {
        let cfg = small();
        let (ds, truth) = generate_ugc(&cfg).unwrap();
        assert_eq!(ds.videos().len(), cfg.n_videos);
        assert_eq!(ds.interactions().len(), cfg.n_videos);
        assert!(ds.interactions().iter().all(|t| t.y == 1));
        assert!(ds.uploaders().iter().all(|u| !u.history.is_empty()));
        assert_eq!(truth.preferences().len(), cfg.n_uploaders);
    }

    #[test]
    fn default_genre_mix_follows_reference_counts() {
        let counts = apportion(&REFERENCE_GENRE_COUNTS, 3003);
        assert_eq!(counts, vec![651, 665, 1330, 311, 42, 4]);
        let cfg = GenConfig::default();
        let (ds, _) = generate_ugc(&cfg).unwrap();
        let mut per_genre = vec![0usize; 6];
        for m in ds.music() {
            per_genre[m.genre] += 1;
        }
        assert_eq!(per_genre, apportion(&REFERENCE_GENRE_COUNTS, 200));
    }

    #[test]
    fn pgc_pairs_match_better_than_ugc() {
        let cfg = small();
        let (ugc, ut) = generate_ugc(&cfg).unwrap();
        let (pgc, pt) = generate_pgc_with_truth(&cfg).unwrap();
        let mean = |ds: &Dataset, t: &GroundTruth| {
            let s: f64 = ds
                .interactions()
                .iter()
                .map(|i| t.s_star(i.video_id, i.music_id).unwrap())
                .sum();
            s / ds.interactions().len() as f64
        };
        assert!(mean(&pgc, &pt) > mean(&ugc, &ut));
        assert_eq!(pgc.kind(), DatasetKind::Pgc);
    }

    #[test]
    fn zero_pgc_pairs_is_valid() {
        let cfg = GenConfig {
            n_pgc_pairs: 0,
            ..small()
        };
        let pgc = generate_pgc(&cfg).unwrap();
        assert!(pgc.interactions().is_empty());
    }

    /// With beta = 1, no content term, flat popularity and equal genre mass,
    /// the selection probability of genre g is exactly pi_u[g]; 10k simulated
    /// selections must land within 0.05 total variation.
    #[test]
    fn content_free_selection_reproduces_preference() {
        let cfg = GenConfig {
            n_genres: 4,
            n_music: 40,
            match_strength: 0.0,
            confound_strength: 1.0,
            popularity_zipf_s: 0.0,
            ..small()
        };
        let world = World::new(&cfg);
        let catalog = build_catalog(&cfg, &world, STREAM_UGC_CATALOG);
        let genres: Vec<usize> = catalog.clips.iter().map(|c| c.genre).collect();
        let flat = vec![0.0; cfg.n_music];
        let mut rng = stream_rng(99, 0);
        for _ in 0..3 {
            let pref = dirichlet(&mut rng, 1.0, 4);
            let video = gaussian_vec(&mut rng, cfg.latent_dim_true);
            let logits = selection_logits(&cfg, &video, &pref, &catalog.latents, &genres, &flat);
            let mut hist = [0.0; 4];
            for _ in 0..10_000 {
                hist[genres[softmax_sample(&mut rng, &logits)]] += 1e-4;
            }
            let tv: f64 = hist.iter().zip(&pref).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
            assert!(tv < 0.05, "tv {tv} for pref {pref:?}");
        }
    }

    /// Large beta concentrates selections on the preferred genre.
    #[test]
    fn strong_confounding_concentrates_on_argmax() {
        let cfg = GenConfig {
            n_genres: 4,
            n_music: 40,
            match_strength: 0.0,
            confound_strength: 25.0,
            popularity_zipf_s: 0.0,
            ..small()
        };
        let world = World::new(&cfg);
        let catalog = build_catalog(&cfg, &world, STREAM_UGC_CATALOG);
        let genres: Vec<usize> = catalog.clips.iter().map(|c| c.genre).collect();
        let pref = vec![0.1, 0.6, 0.2, 0.1];
        let logits =
            selection_logits(&cfg, &[1.0; 4], &pref, &catalog.latents, &genres, &vec![0.0; 40]);
        let mut rng = stream_rng(5, 0);
        let hits = (0..2000)
            .filter(|_| genres[softmax_sample(&mut rng, &logits)] == 1)
            .count();
        assert!(hits > 1990);
    }

    fn mutual_information(ds: &Dataset, truth: &GroundTruth) -> f64 {
        let ng = ds.n_genres();
        let mut joint = vec![vec![0.0; ng]; ng];
        let n = ds.interactions().len() as f64;
        for t in ds.interactions() {
            let a = truth.preferences()[&t.uploader_id.unwrap()].argmax();
            let g = ds.music_clip(t.music_id).unwrap().genre;
            joint[a][g] += 1.0 / n;
        }
        let pa: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
        let pg: Vec<f64> = (0..ng).map(|g| joint.iter().map(|r| r[g]).sum()).collect();
        let mut mi = 0.0;
        for a in 0..ng {
            for g in 0..ng {
                if joint[a][g] > 0.0 {
                    mi += joint[a][g] * (joint[a][g] / (pa[a] * pg[g])).ln();
                }
            }
        }
        mi
    }

    #[test]
    fn confounding_dial_increases_mutual_information() {
        for seed in 0..5 {
            let mis: Vec<f64> = [0.0, 1.5, 4.0]
                .iter()
                .map(|&beta| {
                    let cfg = GenConfig {
                        confound_strength: beta,
                        seed,
                        ..small()
                    };
                    let (ds, truth) = generate_ugc(&cfg).unwrap();
                    mutual_information(&ds, &truth)
                })
                .collect();
            assert!(mis[0] <= mis[1] && mis[1] <= mis[2], "seed {seed}: {mis:?}");
        }
    }

    #[test]
    fn no_confounding_gives_chance_level_dependence() {
        let cfg = GenConfig {
            confound_strength: 0.0,
            n_videos: 3000,
            ..small()
        };
        let (ds, truth) = generate_ugc(&cfg).unwrap();
        let unconf = mutual_information(&ds, &truth);
        let (ds, truth) = generate_ugc(&GenConfig {
            confound_strength: 3.0,
            ..cfg
        })
        .unwrap();
        let conf = mutual_information(&ds, &truth);
        // Finite-sample MI bias is about (k-1)^2 / 2n nats for k x k tables.
        assert!(unconf < 0.03, "{unconf}");
        assert!(conf > 5.0 * unconf);
    }
}
