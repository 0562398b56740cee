//! Music-disjoint splits. Clips are assigned to splits and every interaction
//! follows its clip, so test music is never seen in training.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::stream_rng;
use crate::datamodel::{Dataset, MusicClip, MusicId};
use crate::error::{Error, Result};

const STREAM_SPLIT: u64 = 11;
const STREAM_INTERVENTION: u64 = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub const ALL: [SplitTag; 3] = [SplitTag::Train, SplitTag::Val, SplitTag::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "val" => Ok(SplitTag::Val),
            "test" => Ok(SplitTag::Test),
            other => Err(Error::Invalid(format!("unknown split tag {other:?}"))),
        }
    }
}

/// Assignment of music clips to splits. Clips absent from the map belong to
/// no split (used by the genre-ratio intervention, which keeps two genres).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitSpec {
    assignments: BTreeMap<MusicId, SplitTag>,
}

impl SplitSpec {
    pub fn new(assignments: BTreeMap<MusicId, SplitTag>) -> Self {
        Self { assignments }
    }

    pub fn assignments(&self) -> &BTreeMap<MusicId, SplitTag> {
        &self.assignments
    }

    pub fn tag_of(&self, music: MusicId) -> Option<SplitTag> {
        self.assignments.get(&music).copied()
    }

    pub fn music(&self, tag: SplitTag) -> BTreeSet<MusicId> {
        self.assignments
            .iter()
            .filter(|(_, t)| **t == tag)
            .map(|(m, _)| *m)
            .collect()
    }

    pub fn count(&self, tag: SplitTag) -> usize {
        self.assignments.values().filter(|t| **t == tag).count()
    }

    /// The sub-dataset whose interactions use clips of `tag`.
    pub fn materialize(&self, dataset: &Dataset, tag: SplitTag) -> Result<Dataset> {
        dataset.restrict_to_music(&self.music(tag))
    }

    /// Writes `music_id,split` rows with a header line.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<split stream>", e);
        writeln!(out, "music_id,split").map_err(io)?;
        for (m, t) in &self.assignments {
            writeln!(out, "{},{}", m.0, t).map_err(io)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R, origin: &Path) -> Result<Self> {
        let mut assignments = BTreeMap::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::io(origin, e))?;
            let perr = |msg: String| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg,
            };
            if i == 0 {
                if line.trim() != "music_id,split" {
                    return Err(perr(format!("unexpected header {line:?}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (id, tag) = line
                .split_once(',')
                .ok_or_else(|| perr("expected two columns".into()))?;
            let id: u32 = id.trim().parse().map_err(|e| perr(format!("{e}")))?;
            let tag: SplitTag = tag.trim().parse().map_err(|e: Error| perr(e.to_string()))?;
            if assignments.insert(MusicId(id), tag).is_some() {
                return Err(perr(format!("music {id} assigned twice")));
            }
        }
        Ok(Self { assignments })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(file), path)
    }
}

fn validate_ratios(ratios: &[f64]) -> Result<()> {
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::Invalid(format!("split ratios must be positive: {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!("split ratios sum to {sum}, expected 1")));
    }
    Ok(())
}

/// Label sequence of length `n` whose every prefix tracks `ratios` as closely
/// as possible (largest running deficit wins, lower index on ties).
fn deficit_sequence(ratios: &[f64], n: usize) -> Vec<usize> {
    let mut assigned = vec![0usize; ratios.len()];
    (0..n)
        .map(|i| {
            let target = (i + 1) as f64;
            let mut best = 0;
            let mut best_def = f64::NEG_INFINITY;
            for (k, r) in ratios.iter().enumerate() {
                let def = r * target - assigned[k] as f64;
                if def > best_def + 1e-12 {
                    best = k;
                    best_def = def;
                }
            }
            assigned[best] += 1;
            best
        })
        .collect()
}

fn by_popularity_desc(clips: &mut [&MusicClip]) {
    clips.sort_by(|a, b| b.popularity.cmp(&a.popularity).then(a.music_id.cmp(&b.music_id)));
}

/// Consecutive chunks of `size`; a short trailing chunk merges into the
/// previous one.
fn strata_bounds(n: usize, size: usize) -> Vec<(usize, usize)> {
    let mut bounds = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + size).min(n);
        if end - start < size && !bounds.is_empty() {
            let last: &mut (usize, usize) = bounds.last_mut().unwrap();
            last.1 = end;
        } else {
            bounds.push((start, end));
        }
        start = end;
    }
    bounds
}

/// Stratified assignment of `clips` (already sorted by popularity) to label
/// indices in proportion to `ratios`; labels are shuffled within each stratum.
fn stratified_labels(
    n: usize,
    ratios: &[f64],
    rng: &mut impl rand::Rng,
) -> Result<Vec<usize>> {
    let min_ratio = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let stratum_size = (1.0 / min_ratio - 1e-9).ceil() as usize;
    if n < stratum_size {
        return Err(Error::StratumTooSmall {
            stratum: 0,
            size: n,
            required: stratum_size,
        });
    }
    let mut labels = deficit_sequence(ratios, n);
    for (start, end) in strata_bounds(n, stratum_size) {
        labels[start..end].shuffle(rng);
    }
    Ok(labels)
}

/// Partitions every catalog clip into train/val/test by stratified sampling on
/// clip popularity. Strata are consecutive popularity-ranked blocks of
/// `ceil(1 / min(ratio))` clips.
pub fn split_strong_generalization(
    dataset: &Dataset,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitSpec> {
    let ratios = [ratios.0, ratios.1, ratios.2];
    validate_ratios(&ratios)?;
    let mut clips: Vec<&MusicClip> = dataset.music().iter().collect();
    by_popularity_desc(&mut clips);
    let mut rng = stream_rng(seed, STREAM_SPLIT);
    let labels = stratified_labels(clips.len(), &ratios, &mut rng)?;
    Ok(SplitSpec::new(
        clips
            .iter()
            .zip(labels)
            .map(|(c, l)| (c.music_id, SplitTag::ALL[l]))
            .collect(),
    ))
}

/// Training-set size `T` for which a training mix of `X:(1-X)` leaves a
/// held-out mix of `(1-X):X`, clamped to what the catalog can realize.
fn intervention_training_size(n_a: usize, n_b: usize, x: f64) -> Result<f64> {
    let (na, nb) = (n_a as f64, n_b as f64);
    // Two held-out clips per genre so both validation and test see each genre.
    let cap = ((na - 2.0) / x).min((nb - 2.0) / (1.0 - x)).min(0.8 * (na + nb));
    let exact = if (2.0 * x - 1.0).abs() < 1e-9 {
        f64::INFINITY
    } else {
        (x * na - (1.0 - x) * nb) / (2.0 * x - 1.0)
    };
    let t = if exact.is_finite() && exact > 0.0 {
        exact.min(cap)
    } else {
        cap
    };
    if t * x.min(1.0 - x) < 1.0 {
        return Err(Error::Infeasible(format!(
            "{n_a} and {n_b} clips allow a training set of at most {:.1} clips, \
             too few for a {x}:{} mix",
            cap.max(0.0),
            1.0 - x
        )));
    }
    Ok(t)
}

/// Restricts the catalog to `genre_a` and `genre_b` and splits it so the
/// training clips follow `X:(1-X)` while validation and test approximate
/// `(1-X):X`. Splits stay music-disjoint and popularity-stratified within
/// each genre.
pub fn genre_ratio_intervention(
    dataset: &Dataset,
    x: f64,
    genre_a: usize,
    genre_b: usize,
    seed: u64,
) -> Result<SplitSpec> {
    if !(0.1..=0.9).contains(&x) {
        return Err(Error::Invalid(format!("X = {x} outside [0.1, 0.9]")));
    }
    if genre_a == genre_b || genre_a >= dataset.n_genres() || genre_b >= dataset.n_genres() {
        return Err(Error::Invalid(format!(
            "genres {genre_a} and {genre_b} must be distinct and < {}",
            dataset.n_genres()
        )));
    }
    let pick = |g: usize| {
        let mut v: Vec<&MusicClip> = dataset.music().iter().filter(|m| m.genre == g).collect();
        by_popularity_desc(&mut v);
        v
    };
    let (clips_a, clips_b) = (pick(genre_a), pick(genre_b));
    let t = intervention_training_size(clips_a.len(), clips_b.len(), x)?;
    let t_a = (x * t).round() as usize;
    let t_b = ((1.0 - x) * t).round() as usize;
    let realized = t_a as f64 / (t_a + t_b) as f64;
    if (realized - x).abs() > 0.02 || t_b == 0 || t_a == 0 {
        return Err(Error::Infeasible(format!(
            "training counts {t_a}:{t_b} realize ratio {realized:.3}, not within 0.02 of {x}; \
             genre sizes {} and {}",
            clips_a.len(),
            clips_b.len()
        )));
    }

    let mut rng = stream_rng(seed, STREAM_INTERVENTION);
    let mut assignments = BTreeMap::new();
    for (clips, n_train) in [(clips_a, t_a), (clips_b, t_b)] {
        let n = clips.len();
        let held = n - n_train;
        let frac_train = n_train as f64 / n as f64;
        // train / val / test with val and test sharing the held-out part evenly
        let ratios = [frac_train, (1.0 - frac_train) / 2.0, (1.0 - frac_train) / 2.0];
        let mut labels = deficit_sequence(&ratios, n);
        let size = (1.0 / ratios.iter().cloned().fold(f64::INFINITY, f64::min) - 1e-9)
            .ceil()
            .max(1.0) as usize;
        for (start, end) in strata_bounds(n, size) {
            labels[start..end].shuffle(&mut rng);
        }
        debug_assert_eq!(labels.iter().filter(|l| **l == 0).count(), n_train);
        debug_assert_eq!(labels.iter().filter(|l| **l != 0).count(), held);
        for (c, l) in clips.iter().zip(labels) {
            assignments.insert(c.music_id, SplitTag::ALL[l]);
        }
    }
    Ok(SplitSpec::new(assignments))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{DatasetKind, FeatureVector, InteractionTriplet, MicroVideo, Uploader, UploaderId, VideoId};
    use crate::synthgen::{apportion, generate_ugc, GenConfig, REFERENCE_GENRE_COUNTS};

    /// Catalog with the given genres and popularity (each use is one video of
    /// a single uploader).
    fn catalog(genres: &[usize], popularity: &[usize], n_genres: usize) -> Dataset {
        let f = || FeatureVector::new(vec![0.0]).unwrap();
        let music: Vec<MusicClip> = genres
            .iter()
            .enumerate()
            .map(|(i, &g)| MusicClip {
                music_id: MusicId(i as u32),
                feature: f(),
                genre: g,
                popularity: 0,
            })
            .collect();
        let mut videos = Vec::new();
        let mut inter = Vec::new();
        let mut history = Vec::new();
        for (m, &p) in popularity.iter().enumerate() {
            for _ in 0..p {
                let vid = VideoId(videos.len() as u32);
                videos.push(MicroVideo {
                    video_id: vid,
                    feature: f(),
                    uploader_id: Some(UploaderId(0)),
                });
                inter.push(InteractionTriplet {
                    uploader_id: Some(UploaderId(0)),
                    video_id: vid,
                    music_id: MusicId(m as u32),
                    y: 1,
                });
                history.push(MusicId(m as u32));
            }
        }
        let uploaders = if history.is_empty() {
            vec![]
        } else {
            vec![Uploader {
                uploader_id: UploaderId(0),
                history,
            }]
        };
        Dataset::new(
            DatasetKind::Ugc,
            1,
            1,
            (0..n_genres).map(|g| format!("g{g}")).collect(),
            videos,
            music,
            uploaders,
            inter,
        )
        .unwrap()
    }

    fn reference_catalog() -> Dataset {
        let counts = apportion(&REFERENCE_GENRE_COUNTS, 3003);
        let genres: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(g, &c)| std::iter::repeat_n(g, c))
            .collect();
        // popularity between 3 and 219, deterministic spread
        let pop: Vec<usize> = (0..genres.len()).map(|i| 3 + (i * 7919) % 217).collect();
        catalog(&genres, &pop, 6)
    }

    #[test]
    fn reference_catalog_split_sizes() {
        let ds = reference_catalog();
        let spec = split_strong_generalization(&ds, (0.8, 0.1, 0.1), 3).unwrap();
        assert_eq!(spec.assignments().len(), 3003);
        assert!(spec.count(SplitTag::Train).abs_diff(2402) <= 1);
        assert!(spec.count(SplitTag::Val).abs_diff(300) <= 1);
        assert!(spec.count(SplitTag::Test).abs_diff(300) <= 1);
    }

    #[test]
    fn splits_partition_the_catalog() {
        let ds = reference_catalog();
        let spec = split_strong_generalization(&ds, (0.7, 0.2, 0.1), 0).unwrap();
        let sets: Vec<_> = SplitTag::ALL.iter().map(|t| spec.music(*t)).collect();
        let total: usize = sets.iter().map(|s| s.len()).sum();
        assert_eq!(total, ds.music().len());
        for i in 0..3 {
            for j in i + 1..3 {
                assert!(sets[i].is_disjoint(&sets[j]));
            }
        }
    }

    /// Recompute popularity means per split inside coarse popularity bands (ten
    /// equal-count bands of the ranked catalog) and compare across splits.
    #[test]
    fn stratum_popularity_means_agree() {
        let (ds, _) = generate_ugc(&GenConfig {
            n_music: 1000,
            n_videos: 20_000,
            n_uploaders: 500,
            f_video: 4,
            f_music: 4,
            ..GenConfig::default()
        })
        .unwrap();
        let spec = split_strong_generalization(&ds, (0.8, 0.1, 0.1), 1).unwrap();
        let mut ranked: Vec<&MusicClip> = ds.music().iter().collect();
        by_popularity_desc(&mut ranked);
        for (b, band) in ranked.chunks(ranked.len() / 10).enumerate() {
            let mut sums = [0.0; 3];
            let mut counts = [0.0; 3];
            for c in band {
                let k = spec.tag_of(c.music_id).unwrap() as usize;
                sums[k] += c.popularity as f64;
                counts[k] += 1.0;
            }
            let means: Vec<f64> = (0..3).map(|k| sums[k] / counts[k]).collect();
            let reference = means[0];
            for m in &means {
                assert!(
                    (m - reference).abs() <= 0.1 * reference,
                    "band {b}: means {means:?}"
                );
            }
        }
    }

    #[test]
    fn interactions_follow_their_clip() {
        let (ds, _) = generate_ugc(&GenConfig {
            n_music: 50,
            n_videos: 400,
            n_uploaders: 40,
            f_video: 4,
            f_music: 4,
            ..GenConfig::default()
        })
        .unwrap();
        let spec = split_strong_generalization(&ds, (0.8, 0.1, 0.1), 0).unwrap();
        let mut total = 0;
        for tag in SplitTag::ALL {
            let sub = spec.materialize(&ds, tag).unwrap();
            assert!(sub
                .interactions()
                .iter()
                .all(|t| spec.tag_of(t.music_id) == Some(tag)));
            total += sub.interactions().len();
        }
        assert_eq!(total, ds.interactions().len());
    }

    #[test]
    fn too_small_catalog_names_stratum() {
        let ds = catalog(&[0, 0, 0, 0, 0], &[1, 1, 1, 1, 1], 1);
        match split_strong_generalization(&ds, (0.8, 0.1, 0.1), 0) {
            Err(Error::StratumTooSmall {
                stratum,
                size,
                required,
            }) => {
                assert_eq!((stratum, size, required), (0, 5, 10));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_ratios_rejected() {
        let ds = reference_catalog();
        assert!(split_strong_generalization(&ds, (0.8, 0.1, 0.2), 0).is_err());
        assert!(split_strong_generalization(&ds, (1.0, 0.0, 0.0), 0).is_err());
    }

    fn genre_ratio(ds: &Dataset, spec: &SplitSpec, tag: SplitTag, genre: usize) -> f64 {
        let ids = spec.music(tag);
        let a = ids
            .iter()
            .filter(|m| ds.music_clip(**m).unwrap().genre == genre)
            .count();
        a as f64 / ids.len() as f64
    }

    #[test]
    fn intervention_realizes_ratios() {
        let ds = reference_catalog();
        for x in [0.5, 0.6, 0.7, 0.8] {
            let spec = genre_ratio_intervention(&ds, x, 0, 1, 7).unwrap();
            assert!(spec
                .assignments()
                .keys()
                .all(|m| matches!(ds.music_clip(*m).unwrap().genre, 0 | 1)));
            let train = genre_ratio(&ds, &spec, SplitTag::Train, 0);
            let test = genre_ratio(&ds, &spec, SplitTag::Test, 0);
            assert!((train - x).abs() <= 0.02, "X={x} train {train}");
            assert!((test - (1.0 - x)).abs() <= 0.05, "X={x} test {test}");
        }
    }

    #[test]
    fn intervention_training_share_of_a_decreases() {
        let ds = reference_catalog();
        let count_a = |x: f64| {
            let spec = genre_ratio_intervention(&ds, x, 0, 1, 7).unwrap();
            spec.music(SplitTag::Train)
                .iter()
                .filter(|m| ds.music_clip(**m).unwrap().genre == 0)
                .count()
        };
        assert!(count_a(0.8) > count_a(0.6));
    }

    #[test]
    fn intervention_balanced_case() {
        let ds = reference_catalog();
        let spec = genre_ratio_intervention(&ds, 0.5, 0, 1, 0).unwrap();
        let train = genre_ratio(&ds, &spec, SplitTag::Train, 0);
        let test = genre_ratio(&ds, &spec, SplitTag::Test, 0);
        assert!((train - 0.5).abs() <= 0.02);
        assert!((test - 0.5).abs() <= 0.05);
    }

    #[test]
    fn intervention_infeasible_reports_bound() {
        // genre 5 of the reference catalog has only 4 clips
        let ds = reference_catalog();
        match genre_ratio_intervention(&ds, 0.1, 4, 5, 0) {
            Err(Error::Infeasible(_)) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(genre_ratio_intervention(&ds, 0.95, 0, 1, 0).is_err());
    }

    #[test]
    fn split_file_round_trip() {
        let ds = reference_catalog();
        let spec = split_strong_generalization(&ds, (0.8, 0.1, 0.1), 2).unwrap();
        let mut buf = Vec::new();
        spec.write(&mut buf).unwrap();
        assert_eq!(SplitSpec::read(buf.as_slice(), Path::new("mem")).unwrap(), spec);
    }
}
