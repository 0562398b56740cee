//! Catalog entities, the genre-preference confounder, and dataset containers.
//!
//! A [`Dataset`] is either user-generated (UGC: every video has an uploader and
//! uploaders carry their selection history) or professionally generated (PGC:
//! matched pairs with no uploader attached). Construction validates referential
//! integrity and recomputes clip popularity from the interaction list, so a
//! `Dataset` value is always internally consistent.

mod io;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_dataset, write_dataset, DatasetRecord, HeaderRecord};

/// Genre names used when a generator config does not supply its own.
pub const DEFAULT_GENRES: [&str; 6] = ["hiphop", "jazz", "classical", "reggae", "pop", "metal"];

/// Tolerance on the unit-sum invariant of [`GenrePreference`].
pub const PREFERENCE_SUM_TOL: f64 = 1e-9;

macro_rules! id_type {
    ($name:ident, $prefix:literal) => {
        #[derive(
            Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(VideoId, "v");
id_type!(MusicId, "m");
id_type!(UploaderId, "u");

/// Content features of one item. All entries are finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "feature entry {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(f: FeatureVector) -> Self {
        f.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MusicClip {
    pub music_id: MusicId,
    pub feature: FeatureVector,
    pub genre: usize,
    /// Number of interactions referencing this clip in the owning dataset.
    pub popularity: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MicroVideo {
    pub video_id: VideoId,
    pub feature: FeatureVector,
    /// `None` for professionally generated content.
    pub uploader_id: Option<UploaderId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Uploader {
    pub uploader_id: UploaderId,
    /// Music the uploader has selected, one entry per selection.
    pub history: Vec<MusicId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionTriplet {
    pub uploader_id: Option<UploaderId>,
    pub video_id: VideoId,
    pub music_id: MusicId,
    pub y: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetKind {
    #[serde(rename = "UGC")]
    Ugc,
    #[serde(rename = "PGC")]
    Pgc,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Ugc => "UGC",
            DatasetKind::Pgc => "PGC",
        })
    }
}

/// A probability vector over genres: an uploader's historical genre mix, or an
/// average of such mixes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct GenrePreference(Vec<f64>);

impl GenrePreference {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("genre preference"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Invalid(format!(
                "genre preference has negative or non-finite entries: {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PREFERENCE_SUM_TOL {
            return Err(Error::Invalid(format!(
                "genre preference sums to {sum}, expected 1"
            )));
        }
        Ok(Self(probs))
    }

    pub fn one_hot(n_genres: usize, genre: usize) -> Result<Self> {
        if genre >= n_genres {
            return Err(Error::Invalid(format!(
                "genre {genre} out of range for {n_genres} genres"
            )));
        }
        let mut probs = vec![0.0; n_genres];
        probs[genre] = 1.0;
        Ok(Self(probs))
    }

    pub fn uniform(n_genres: usize) -> Result<Self> {
        if n_genres == 0 {
            return Err(Error::Empty("genre preference"));
        }
        Ok(Self(vec![1.0 / n_genres as f64; n_genres]))
    }

    /// Arithmetic mean of preferences, summed in the order given.
    pub fn mean<'a>(prefs: impl IntoIterator<Item = &'a GenrePreference>) -> Result<Self> {
        let mut acc: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for p in prefs {
            if n == 0 {
                acc = vec![0.0; p.len()];
            } else if p.len() != acc.len() {
                return Err(Error::dim("preference mean", acc.len(), p.len()));
            }
            for (a, x) in acc.iter_mut().zip(&p.0) {
                *a += x;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Empty("preference batch"));
        }
        for a in &mut acc {
            *a /= n as f64;
        }
        Self::new(acc)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    /// Shannon entropy in nats; `0 ln 0` is taken as 0.
    pub fn entropy(&self) -> f64 {
        -self
            .0
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.0.iter().enumerate() {
            if *p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

impl TryFrom<Vec<f64>> for GenrePreference {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<GenrePreference> for Vec<f64> {
    fn from(p: GenrePreference) -> Self {
        p.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    kind: DatasetKind,
    f_video: usize,
    f_music: usize,
    genre_names: Vec<String>,
    videos: Vec<MicroVideo>,
    music: Vec<MusicClip>,
    uploaders: Vec<Uploader>,
    interactions: Vec<InteractionTriplet>,
    video_index: HashMap<VideoId, usize>,
    music_index: HashMap<MusicId, usize>,
    uploader_index: HashMap<UploaderId, usize>,
}

impl Dataset {
    /// Validates all invariants and recomputes clip popularity.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: DatasetKind,
        f_video: usize,
        f_music: usize,
        genre_names: Vec<String>,
        videos: Vec<MicroVideo>,
        mut music: Vec<MusicClip>,
        uploaders: Vec<Uploader>,
        interactions: Vec<InteractionTriplet>,
    ) -> Result<Self> {
        let n_genres = genre_names.len();
        if n_genres == 0 {
            return Err(Error::Invalid("dataset declares no genres".into()));
        }
        let video_index = build_index(&videos, |v| v.video_id, "video")?;
        let music_index = build_index(&music, |m| m.music_id, "music")?;
        let uploader_index = build_index(&uploaders, |u| u.uploader_id, "uploader")?;

        for v in &videos {
            if v.feature.dim() != f_video {
                return Err(Error::dim("video feature", f_video, v.feature.dim()));
            }
            match (kind, v.uploader_id) {
                (DatasetKind::Ugc, None) => {
                    return Err(Error::Integrity(format!(
                        "UGC video {} has no uploader",
                        v.video_id
                    )))
                }
                (DatasetKind::Ugc, Some(u)) if !uploader_index.contains_key(&u) => {
                    return Err(Error::Integrity(format!(
                        "video {} references unknown uploader {u}",
                        v.video_id
                    )))
                }
                (DatasetKind::Pgc, Some(_)) => {
                    return Err(Error::Integrity(format!(
                        "PGC video {} carries an uploader",
                        v.video_id
                    )))
                }
                _ => {}
            }
        }
        for m in &music {
            if m.feature.dim() != f_music {
                return Err(Error::dim("music feature", f_music, m.feature.dim()));
            }
            if m.genre >= n_genres {
                return Err(Error::Integrity(format!(
                    "music {} has genre {} but only {n_genres} genres are declared",
                    m.music_id, m.genre
                )));
            }
        }
        if kind == DatasetKind::Pgc && !uploaders.is_empty() {
            return Err(Error::Integrity("PGC dataset carries uploaders".into()));
        }
        for u in &uploaders {
            for mid in &u.history {
                if !music_index.contains_key(mid) {
                    return Err(Error::Integrity(format!(
                        "uploader {} history references unknown music {mid}",
                        u.uploader_id
                    )));
                }
            }
        }

        let mut counts = vec![0usize; music.len()];
        for t in &interactions {
            if t.y > 1 {
                return Err(Error::Invalid(format!("interaction label y = {}", t.y)));
            }
            let vi = *video_index.get(&t.video_id).ok_or_else(|| {
                Error::Integrity(format!("interaction references unknown video {}", t.video_id))
            })?;
            let mi = *music_index.get(&t.music_id).ok_or_else(|| {
                Error::Integrity(format!("interaction references unknown music {}", t.music_id))
            })?;
            if t.uploader_id != videos[vi].uploader_id {
                return Err(Error::Integrity(format!(
                    "interaction uploader {:?} disagrees with video {} uploader {:?}",
                    t.uploader_id, t.video_id, videos[vi].uploader_id
                )));
            }
            if let Some(u) = t.uploader_id {
                let up = &uploaders[uploader_index[&u]];
                if up.history.is_empty() {
                    return Err(Error::EmptyHistory(u));
                }
            }
            counts[mi] += 1;
        }
        for (m, c) in music.iter_mut().zip(counts) {
            m.popularity = c;
        }

        Ok(Self {
            kind,
            f_video,
            f_music,
            genre_names,
            videos,
            music,
            uploaders,
            interactions,
            video_index,
            music_index,
            uploader_index,
        })
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    pub fn f_video(&self) -> usize {
        self.f_video
    }

    pub fn f_music(&self) -> usize {
        self.f_music
    }

    pub fn n_genres(&self) -> usize {
        self.genre_names.len()
    }

    pub fn genre_names(&self) -> &[String] {
        &self.genre_names
    }

    pub fn videos(&self) -> &[MicroVideo] {
        &self.videos
    }

    pub fn music(&self) -> &[MusicClip] {
        &self.music
    }

    pub fn uploaders(&self) -> &[Uploader] {
        &self.uploaders
    }

    pub fn interactions(&self) -> &[InteractionTriplet] {
        &self.interactions
    }

    pub fn video(&self, id: VideoId) -> Option<&MicroVideo> {
        self.video_index.get(&id).map(|&i| &self.videos[i])
    }

    pub fn music_clip(&self, id: MusicId) -> Option<&MusicClip> {
        self.music_index.get(&id).map(|&i| &self.music[i])
    }

    pub fn uploader(&self, id: UploaderId) -> Option<&Uploader> {
        self.uploader_index.get(&id).map(|&i| &self.uploaders[i])
    }

    pub fn require_kind(&self, expected: DatasetKind) -> Result<()> {
        if self.kind != expected {
            return Err(Error::KindMismatch {
                expected,
                actual: self.kind,
            });
        }
        Ok(())
    }

    /// The chosen clip of every positive interaction, keyed by video.
    pub fn ground_truth(&self) -> BTreeMap<VideoId, MusicId> {
        self.interactions
            .iter()
            .filter(|t| t.y == 1)
            .map(|t| (t.video_id, t.music_id))
            .collect()
    }

    /// Keeps the full music catalog but only the interactions (and their
    /// videos) whose clip is in `keep`. Uploader histories are rebuilt from the
    /// retained interactions; uploaders left without history are dropped.
    pub fn restrict_to_music(&self, keep: &BTreeSet<MusicId>) -> Result<Dataset> {
        let interactions: Vec<InteractionTriplet> = self
            .interactions
            .iter()
            .filter(|t| keep.contains(&t.music_id))
            .copied()
            .collect();
        let video_ids: BTreeSet<VideoId> = interactions.iter().map(|t| t.video_id).collect();
        let videos = self
            .videos
            .iter()
            .filter(|v| video_ids.contains(&v.video_id))
            .cloned()
            .collect();
        let mut histories: BTreeMap<UploaderId, Vec<MusicId>> = BTreeMap::new();
        for t in &interactions {
            if let Some(u) = t.uploader_id {
                histories.entry(u).or_default().push(t.music_id);
            }
        }
        let uploaders = histories
            .into_iter()
            .map(|(uploader_id, history)| Uploader {
                uploader_id,
                history,
            })
            .collect();
        Dataset::new(
            self.kind,
            self.f_video,
            self.f_music,
            self.genre_names.clone(),
            videos,
            self.music.clone(),
            uploaders,
            interactions,
        )
    }
}

fn build_index<T, K: std::hash::Hash + Eq + fmt::Display + Copy>(
    items: &[T],
    key: impl Fn(&T) -> K,
    what: &str,
) -> Result<HashMap<K, usize>> {
    let mut index = HashMap::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let k = key(item);
        if index.insert(k, i).is_some() {
            return Err(Error::Integrity(format!("duplicate {what} id {k}")));
        }
    }
    Ok(index)
}

/// Empirical genre histogram of the uploader's history, normalized to 1.
pub fn genre_distribution(uploader: &Uploader, dataset: &Dataset) -> Result<GenrePreference> {
    if uploader.history.is_empty() {
        return Err(Error::EmptyHistory(uploader.uploader_id));
    }
    let mut counts = vec![0usize; dataset.n_genres()];
    for mid in &uploader.history {
        let clip = dataset.music_clip(*mid).ok_or_else(|| {
            Error::Integrity(format!(
                "uploader {} history references unknown music {mid}",
                uploader.uploader_id
            ))
        })?;
        counts[clip.genre] += 1;
    }
    let n = uploader.history.len() as f64;
    GenrePreference::new(counts.into_iter().map(|c| c as f64 / n).collect())
}

pub fn preference_entropy(pref: &GenrePreference) -> f64 {
    pref.entropy()
}

/// Interaction count per clip; every catalog clip is present.
pub fn music_popularity_table(dataset: &Dataset) -> BTreeMap<MusicId, usize> {
    let mut table: BTreeMap<MusicId, usize> =
        dataset.music().iter().map(|m| (m.music_id, 0)).collect();
    for t in dataset.interactions() {
        *table.entry(t.music_id).or_insert(0) += 1;
    }
    table
}

/// Genre distributions of every uploader with a non-empty history, in id order.
pub fn uploader_preferences(dataset: &Dataset) -> Result<BTreeMap<UploaderId, GenrePreference>> {
    dataset
        .uploaders()
        .iter()
        .filter(|u| !u.history.is_empty())
        .map(|u| Ok((u.uploader_id, genre_distribution(u, dataset)?)))
        .collect()
}
