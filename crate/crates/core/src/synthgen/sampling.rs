//! Intervened test-set samplers: entropy-diverse uploaders and best-matching
//! pairs. Both keep the top fraction of the eligible videos under a total
//! order with lexicographic tie-breaking on identifiers.

use std::cmp::Ordering;
use std::collections::HashMap;

use super::GroundTruth;
use crate::datamodel::{genre_distribution, Dataset, UploaderId, VideoId};
use crate::error::{Error, Result};

fn keep_count(fraction: f64, n: usize) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Invalid(format!("fraction {fraction} outside (0, 1]")));
    }
    Ok(((fraction * n as f64).ceil() as usize).min(n))
}

/// Videos of the most genre-diverse uploaders: eligible videos ranked by the
/// entropy of their uploader's genre history (descending), ties broken by
/// uploader id then video id. Histories come from `dataset`.
pub fn sample_diverse_test(
    dataset: &Dataset,
    eligible: &[VideoId],
    fraction: f64,
) -> Result<Vec<VideoId>> {
    let keep = keep_count(fraction, eligible.len())?;
    let mut entropy: HashMap<UploaderId, f64> = HashMap::new();
    let mut rows = Vec::with_capacity(eligible.len());
    for &vid in eligible {
        let video = dataset
            .video(vid)
            .ok_or_else(|| Error::Integrity(format!("unknown video {vid}")))?;
        let uid = video.uploader_id.ok_or_else(|| {
            Error::Unsupported(format!("video {vid} has no uploader; diversity is undefined"))
        })?;
        let h = match entropy.get(&uid) {
            Some(h) => *h,
            None => {
                let up = dataset
                    .uploader(uid)
                    .ok_or_else(|| Error::Integrity(format!("unknown uploader {uid}")))?;
                let h = genre_distribution(up, dataset)?.entropy();
                entropy.insert(uid, h);
                h
            }
        };
        rows.push((h, uid, vid));
    }
    rows.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    Ok(rows.into_iter().take(keep).map(|(_, _, v)| v).collect())
}

/// Videos whose chosen clip matches best: eligible videos ranked by the true
/// match score of their recorded pair (descending), ties by video id.
pub fn sample_matching_test(
    dataset: &Dataset,
    truth: Option<&GroundTruth>,
    eligible: &[VideoId],
    fraction: f64,
) -> Result<Vec<VideoId>> {
    let truth = truth.ok_or_else(|| {
        Error::Unsupported("matching test set needs generator ground truth".into())
    })?;
    let keep = keep_count(fraction, eligible.len())?;
    let chosen = dataset.ground_truth();
    let mut rows = Vec::with_capacity(eligible.len());
    for &vid in eligible {
        let music = chosen
            .get(&vid)
            .ok_or_else(|| Error::Integrity(format!("video {vid} has no positive interaction")))?;
        let s = truth.s_star(vid, *music).ok_or_else(|| {
            Error::Unsupported(format!("no ground-truth latent for pair ({vid}, {music})"))
        })?;
        rows.push((s, vid));
    }
    rows.sort_by(|a, b| match b.0.total_cmp(&a.0) {
        Ordering::Equal => a.1.cmp(&b.1),
        o => o,
    });
    Ok(rows.into_iter().take(keep).map(|(_, v)| v).collect())
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::datamodel::tests::toy_ugc;
    use crate::datamodel::MusicId;
    use crate::synthgen::{generate_ugc, GenConfig};

    #[test]
    fn all_tied_is_deterministic() {
        // every uploader one-hot
        let ds = toy_ugc(2, &[0, 1], &[&[0, 0], &[1], &[0]]);
        let eligible: Vec<VideoId> = ds.videos().iter().map(|v| v.video_id).rev().collect();
        let a = sample_diverse_test(&ds, &eligible, 0.5).unwrap();
        let b = sample_diverse_test(&ds, &eligible, 0.5).unwrap();
        assert_eq!(a, b);
        // ties resolve to uploader 0 first, then video id
        assert_eq!(a, vec![VideoId(0), VideoId(1)]);
    }

    #[test]
    fn diverse_uploader_first() {
        // uploader 1 is uniform over two genres, others one-hot
        let ds = toy_ugc(2, &[0, 1], &[&[0, 0], &[0, 1], &[1]]);
        let eligible: Vec<VideoId> = ds.videos().iter().map(|v| v.video_id).collect();
        let picked = sample_diverse_test(&ds, &eligible, 0.4).unwrap();
        assert_eq!(picked, vec![VideoId(2), VideoId(3)]);
    }

    #[test]
    fn full_fraction_keeps_everything() {
        let ds = toy_ugc(2, &[0, 1], &[&[0, 0], &[0, 1], &[1]]);
        let eligible: Vec<VideoId> = ds.videos().iter().map(|v| v.video_id).collect();
        assert_eq!(sample_diverse_test(&ds, &eligible, 1.0).unwrap().len(), 5);
        assert!(sample_diverse_test(&ds, &eligible, 0.0).is_err());
        assert!(sample_diverse_test(&ds, &eligible, 1.5).is_err());
    }

    #[test]
    fn matching_requires_truth() {
        let ds = toy_ugc(2, &[0, 1], &[&[0]]);
        assert!(matches!(
            sample_matching_test(&ds, None, &[VideoId(0)], 1.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn matching_prefers_high_true_score() {
        let (ds, truth) = generate_ugc(&GenConfig {
            n_music: 40,
            n_videos: 300,
            n_uploaders: 30,
            f_video: 4,
            f_music: 4,
            ..GenConfig::default()
        })
        .unwrap();
        let eligible: Vec<VideoId> = ds.videos().iter().map(|v| v.video_id).collect();
        let all = sample_matching_test(&ds, Some(&truth), &eligible, 1.0).unwrap();
        assert_eq!(all.len(), eligible.len());
        let chosen = ds.ground_truth();
        let mean = |vs: &[VideoId]| {
            vs.iter()
                .map(|v| truth.s_star(*v, chosen[v]).unwrap())
                .sum::<f64>()
                / vs.len() as f64
        };
        let top = sample_matching_test(&ds, Some(&truth), &eligible, 0.2).unwrap();
        assert!(mean(&top) >= mean(&all));
    }

    #[test]
    fn best_pair_always_selected() {
        // Inject a pair whose latents coincide, so its s* is the maximum 1.0.
        let ds = toy_ugc(2, &[0, 1], &[&[0, 1, 0, 1, 1]]);
        let mut videos = BTreeMap::new();
        let mut music = BTreeMap::new();
        music.insert(MusicId(0), vec![1.0, 0.0]);
        music.insert(MusicId(1), vec![0.0, 1.0]);
        for (i, v) in ds.videos().iter().enumerate() {
            let latent = if i == 3 { vec![0.0, 1.0] } else { vec![0.3, 0.2 + i as f64 * 0.1] };
            videos.insert(v.video_id, latent);
        }
        let truth = GroundTruth::new(videos, music, BTreeMap::new());
        let eligible: Vec<VideoId> = ds.videos().iter().map(|v| v.video_id).collect();
        for fraction in [0.01, 0.2, 0.5, 1.0] {
            let picked = sample_matching_test(&ds, Some(&truth), &eligible, fraction).unwrap();
            assert!(picked.contains(&VideoId(3)));
        }
    }
}
