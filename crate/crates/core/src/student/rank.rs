use ndarray::Array2;

use super::StudentModel;
use crate::datamodel::{MicroVideo, MusicClip, MusicId, VideoId};
use crate::error::{Error, Result};

/// Top-`k` clips for one video, best first.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingResult {
    pub video_id: VideoId,
    pub items: Vec<(MusicId, f64)>,
    pub k: usize,
}

/// Sorts `(clip, score)` by score descending, then clip id ascending.
pub(crate) fn order_by_score(items: &mut [(MusicId, f64)]) {
    items.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

impl StudentModel {
    /// Scores of every (video, clip) pair at the posterior means, with the
    /// cached global preference in place of the uploader.
    pub fn score_matrix(&self, videos: &Array2<f64>, music: &Array2<f64>) -> Result<Array2<f64>> {
        let zv = self.net.video_embedding(videos)?;
        let zm = self.net.music_embedding(music, self.inference_preference()?)?;
        Ok(zv.dot(&zm.t()))
    }
}

pub(crate) fn feature_rows<'a>(rows: impl ExactSizeIterator<Item = &'a [f64]>, dim: usize) -> Array2<f64> {
    let n = rows.len();
    let mut out = Array2::zeros((n, dim));
    for (i, r) in rows.enumerate() {
        out.row_mut(i).assign(&ndarray::ArrayView1::from(r));
    }
    out
}

/// Ranks `pool` for `video` by dot-product score and keeps the top `k`.
pub fn rank_music(
    model: &StudentModel,
    video: &MicroVideo,
    pool: &[MusicClip],
    k: usize,
) -> Result<RankingResult> {
    if pool.is_empty() {
        return Err(Error::Empty("music pool"));
    }
    let v = feature_rows(std::iter::once(video.feature.as_slice()), video.feature.dim());
    let f_music = pool[0].feature.dim();
    let m = feature_rows(pool.iter().map(|c| c.feature.as_slice()), f_music);
    let scores = model.score_matrix(&v, &m)?;
    let mut items: Vec<(MusicId, f64)> =
        pool.iter().zip(scores.row(0)).map(|(c, s)| (c.music_id, *s)).collect();
    order_by_score(&mut items);
    items.truncate(k);
    Ok(RankingResult {
        video_id: video.video_id,
        items,
        k,
    })
}
