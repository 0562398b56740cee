//! Popularity-weighted Recall@K and NDCG@K, and the evaluation driver that
//! ranks a held-out music pool for every test video.
//!
//! With a single relevant clip per video the ideal DCG is 1, so NDCG@K is
//! the weighted mean of `1 / log2(rank + 1)` over hits. Position discounts:
//! rank 1 → 1, 2 → 0.631, 3 → 0.5, 4 → 0.431, 5 → 0.387.

mod report;

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::datamodel::{music_popularity_table, Dataset, MusicId, VideoId};
use crate::error::{Error, Result};
use crate::student::{RankingResult, StudentModel};
use crate::synthgen::{sample_diverse_test, sample_matching_test, GroundTruth};
use crate::teacher::TeacherModel;

pub use report::{MetricRow, MetricsReport, METRICS_HEADER};

/// Anything that scores every (video, clip) pair of two feature matrices.
pub trait MatchingModel {
    fn score_matrix(&self, videos: &Array2<f64>, music: &Array2<f64>) -> Result<Array2<f64>>;
}

impl MatchingModel for StudentModel {
    fn score_matrix(&self, videos: &Array2<f64>, music: &Array2<f64>) -> Result<Array2<f64>> {
        StudentModel::score_matrix(self, videos, music)
    }
}

impl MatchingModel for TeacherModel {
    fn score_matrix(&self, videos: &Array2<f64>, music: &Array2<f64>) -> Result<Array2<f64>> {
        let (v, m) = self.infer_batch(videos, music)?;
        Ok(v.mean.dot(&m.mean.t()))
    }
}

/// Inverse-popularity weights `λ_v`, normalized to sum to 1.
pub fn video_weight(
    test: &BTreeMap<VideoId, MusicId>,
    popularity: &BTreeMap<MusicId, usize>,
) -> Result<BTreeMap<VideoId, f64>> {
    if test.is_empty() {
        return Err(Error::Empty("test videos"));
    }
    let mut inv = BTreeMap::new();
    for (v, m) in test {
        let p = popularity.get(m).copied().unwrap_or(0);
        if p == 0 {
            return Err(Error::ZeroPopularity(*m));
        }
        inv.insert(*v, 1.0 / p as f64);
    }
    let total: f64 = inv.values().sum();
    Ok(inv.into_iter().map(|(v, w)| (v, w / total)).collect())
}

/// 1-based position of `clip` in the ranking, if within the first `k`.
fn hit_rank(r: &RankingResult, clip: MusicId, k: usize) -> Option<usize> {
    r.items.iter().take(k).position(|(m, _)| *m == clip).map(|p| p + 1)
}

fn weighted_sum(
    rankings: &BTreeMap<VideoId, RankingResult>,
    truth: &BTreeMap<VideoId, MusicId>,
    weights: &BTreeMap<VideoId, f64>,
    k: usize,
    gain: impl Fn(usize) -> f64,
) -> Result<f64> {
    let mut total = 0.0;
    for (v, w) in weights {
        let r = rankings.get(v).ok_or(Error::MissingRanking(*v))?;
        let clip = truth.get(v).ok_or(Error::MissingRanking(*v))?;
        if let Some(rank) = hit_rank(r, *clip, k) {
            total += w * gain(rank);
        }
    }
    Ok(total)
}

/// `Σ_v λ_v · 1[ground-truth clip in top K]`.
pub fn recall_at_k(
    rankings: &BTreeMap<VideoId, RankingResult>,
    truth: &BTreeMap<VideoId, MusicId>,
    weights: &BTreeMap<VideoId, f64>,
    k: usize,
) -> Result<f64> {
    weighted_sum(rankings, truth, weights, k, |_| 1.0)
}

/// `Σ_v λ_v / log2(rank_v + 1)` over hits within the top K.
pub fn ndcg_at_k(
    rankings: &BTreeMap<VideoId, RankingResult>,
    truth: &BTreeMap<VideoId, MusicId>,
    weights: &BTreeMap<VideoId, f64>,
    k: usize,
) -> Result<f64> {
    weighted_sum(rankings, truth, weights, k, |rank| 1.0 / (rank as f64 + 1.0).log2())
}

/// Which test videos are scored.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestSampler {
    All,
    /// Videos of the most genre-diverse uploaders.
    Diverse { fraction: f64 },
    /// Videos whose recorded pair has the highest true match score.
    Matching { fraction: f64 },
}

impl TestSampler {
    pub fn name(&self) -> &'static str {
        match self {
            TestSampler::All => "all",
            TestSampler::Diverse { .. } => "diverse",
            TestSampler::Matching { .. } => "matching",
        }
    }
}

/// Population whose clip counts define `λ_v`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopularitySource {
    /// Counts over the full dataset before splitting.
    #[default]
    Full,
    /// Counts over the training split; unseen clips count once.
    Training,
}

/// Identifies a run in the metrics output.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub split: String,
}

pub struct EvalRequest<'a> {
    /// Dataset before splitting; supplies uploader histories and popularity.
    pub full: &'a Dataset,
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    /// Candidate clips ranked for every test video.
    pub pool: &'a BTreeSet<MusicId>,
    pub truth: Option<&'a GroundTruth>,
    pub sampler: TestSampler,
    pub popularity: PopularitySource,
    pub ks: &'a [usize],
    pub meta: RunMeta,
}

/// Full ranking of `pool` for every test video, truncated at `max_k`.
pub fn rank_all(
    model: &dyn MatchingModel,
    dataset: &Dataset,
    videos: &[VideoId],
    pool: &[MusicId],
    max_k: usize,
) -> Result<BTreeMap<VideoId, RankingResult>> {
    if pool.is_empty() {
        return Err(Error::Empty("music pool"));
    }
    let mut vmat = Array2::zeros((videos.len(), dataset.f_video()));
    for (i, v) in videos.iter().enumerate() {
        let video = dataset
            .video(*v)
            .ok_or_else(|| Error::Integrity(format!("unknown video {v}")))?;
        vmat.row_mut(i)
            .assign(&ndarray::ArrayView1::from(video.feature.as_slice()));
    }
    let mut mmat = Array2::zeros((pool.len(), dataset.f_music()));
    for (j, m) in pool.iter().enumerate() {
        let clip = dataset
            .music_clip(*m)
            .ok_or_else(|| Error::Integrity(format!("unknown music {m}")))?;
        mmat.row_mut(j)
            .assign(&ndarray::ArrayView1::from(clip.feature.as_slice()));
    }
    let scores = model.score_matrix(&vmat, &mmat)?;
    let mut out = BTreeMap::new();
    for (i, v) in videos.iter().enumerate() {
        let mut items: Vec<(MusicId, f64)> =
            pool.iter().zip(scores.row(i)).map(|(m, s)| (*m, *s)).collect();
        items.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        items.truncate(max_k);
        out.insert(
            *v,
            RankingResult {
                video_id: *v,
                items,
                k: max_k,
            },
        );
    }
    Ok(out)
}

/// Ranks the pool for the sampled test videos and reports Recall@K and
/// NDCG@K for every requested K.
pub fn evaluate(model: &dyn MatchingModel, req: &EvalRequest<'_>) -> Result<MetricsReport> {
    let truth_pairs = req.test.ground_truth();
    let eligible: Vec<VideoId> = truth_pairs
        .iter()
        .filter(|(_, m)| req.pool.contains(m))
        .map(|(v, _)| *v)
        .collect();
    if eligible.is_empty() {
        return Err(Error::Empty("test videos"));
    }
    let sampled = match req.sampler {
        TestSampler::All => eligible,
        TestSampler::Diverse { fraction } => sample_diverse_test(req.full, &eligible, fraction)?,
        TestSampler::Matching { fraction } => {
            sample_matching_test(req.test, req.truth, &eligible, fraction)?
        }
    };
    let test_truth: BTreeMap<VideoId, MusicId> =
        sampled.iter().map(|v| (*v, truth_pairs[v])).collect();
    let popularity = match req.popularity {
        PopularitySource::Full => music_popularity_table(req.full),
        PopularitySource::Training => {
            let mut p = music_popularity_table(req.train);
            for m in test_truth.values() {
                let e = p.entry(*m).or_insert(0);
                if *e == 0 {
                    *e = 1;
                }
            }
            p
        }
    };
    let weights = video_weight(&test_truth, &popularity)?;
    let pool: Vec<MusicId> = req.pool.iter().copied().collect();
    let max_k = req.ks.iter().copied().max().unwrap_or(0);
    let rankings = rank_all(model, req.test, &sampled, &pool, max_k)?;
    let mut report = MetricsReport::default();
    for &k in req.ks {
        for (metric, value) in [
            ("recall", recall_at_k(&rankings, &test_truth, &weights, k)?),
            ("ndcg", ndcg_at_k(&rankings, &test_truth, &weights, k)?),
        ] {
            report.rows.push(MetricRow {
                run_id: req.meta.run_id.clone(),
                config_hash: req.meta.config_hash.clone(),
                seed: req.meta.seed,
                split: req.meta.split.clone(),
                sampler: req.sampler.name().into(),
                metric: metric.into(),
                k,
                value,
            });
        }
    }
    Ok(report)
}
