use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cosine;
use crate::datamodel::{GenrePreference, MusicId, UploaderId, VideoId};
use crate::error::{Error, Result};

/// Hidden generator state: latent content per video and clip, and each
/// uploader's true genre preference `pi_u`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct GroundTruth {
    video_latents: BTreeMap<VideoId, Vec<f64>>,
    music_latents: BTreeMap<MusicId, Vec<f64>>,
    preferences: BTreeMap<UploaderId, GenrePreference>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Modality {
    Video,
    Music,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum TruthRecord {
    TrueLatent {
        modality: Modality,
        id: u32,
        latent: Vec<f64>,
    },
    Preference {
        uploader_id: UploaderId,
        probs: GenrePreference,
    },
}

impl GroundTruth {
    pub fn new(
        video_latents: BTreeMap<VideoId, Vec<f64>>,
        music_latents: BTreeMap<MusicId, Vec<f64>>,
        preferences: BTreeMap<UploaderId, GenrePreference>,
    ) -> Self {
        Self {
            video_latents,
            music_latents,
            preferences,
        }
    }

    /// True match score: cosine similarity of the latent content vectors.
    pub fn s_star(&self, video: VideoId, music: MusicId) -> Option<f64> {
        Some(cosine(
            self.video_latents.get(&video)?,
            self.music_latents.get(&music)?,
        ))
    }

    pub fn preferences(&self) -> &BTreeMap<UploaderId, GenrePreference> {
        &self.preferences
    }

    pub fn video_latent(&self, video: VideoId) -> Option<&[f64]> {
        self.video_latents.get(&video).map(Vec::as_slice)
    }

    pub fn music_latent(&self, music: MusicId) -> Option<&[f64]> {
        self.music_latents.get(&music).map(Vec::as_slice)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let mut emit = |rec: TruthRecord| -> Result<()> {
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n").map_err(|e| Error::io("<truth stream>", e))
        };
        for (id, l) in &self.video_latents {
            emit(TruthRecord::TrueLatent {
                modality: Modality::Video,
                id: id.0,
                latent: l.clone(),
            })?;
        }
        for (id, l) in &self.music_latents {
            emit(TruthRecord::TrueLatent {
                modality: Modality::Music,
                id: id.0,
                latent: l.clone(),
            })?;
        }
        for (u, p) in &self.preferences {
            emit(TruthRecord::Preference {
                uploader_id: *u,
                probs: p.clone(),
            })?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R, origin: &Path) -> Result<Self> {
        let mut truth = GroundTruth::default();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::io(origin, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TruthRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            match rec {
                TruthRecord::TrueLatent {
                    modality: Modality::Video,
                    id,
                    latent,
                } => {
                    truth.video_latents.insert(VideoId(id), latent);
                }
                TruthRecord::TrueLatent {
                    modality: Modality::Music,
                    id,
                    latent,
                } => {
                    truth.music_latents.insert(MusicId(id), latent);
                }
                TruthRecord::Preference { uploader_id, probs } => {
                    truth.preferences.insert(uploader_id, probs);
                }
            }
        }
        Ok(truth)
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
