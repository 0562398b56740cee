//! Line-delimited dataset format: one JSON object per line, discriminated by a
//! `record` field. The first line is the header.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    Dataset, DatasetKind, FeatureVector, InteractionTriplet, MicroVideo, MusicClip, MusicId,
    Uploader, UploaderId, VideoId,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeaderRecord {
    pub kind: DatasetKind,
    #[serde(rename = "F_video")]
    pub f_video: usize,
    #[serde(rename = "F_music")]
    pub f_music: usize,
    #[serde(rename = "N_g")]
    pub n_genres: usize,
    pub genre_names: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum DatasetRecord {
    Header(HeaderRecord),
    Video {
        video_id: VideoId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        uploader_id: Option<UploaderId>,
        feature: FeatureVector,
    },
    Music {
        music_id: MusicId,
        genre: usize,
        popularity: usize,
        feature: FeatureVector,
    },
    Uploader {
        uploader_id: UploaderId,
        history: Vec<MusicId>,
    },
    Interaction {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        uploader_id: Option<UploaderId>,
        video_id: VideoId,
        music_id: MusicId,
        y: u8,
    },
}

pub fn write_dataset<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    let mut emit = |rec: DatasetRecord| -> Result<()> {
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")
            .map_err(|e| Error::io("<dataset stream>", e))
    };
    emit(DatasetRecord::Header(HeaderRecord {
        kind: dataset.kind(),
        f_video: dataset.f_video(),
        f_music: dataset.f_music(),
        n_genres: dataset.n_genres(),
        genre_names: dataset.genre_names().to_vec(),
    }))?;
    for m in dataset.music() {
        emit(DatasetRecord::Music {
            music_id: m.music_id,
            genre: m.genre,
            popularity: m.popularity,
            feature: m.feature.clone(),
        })?;
    }
    for u in dataset.uploaders() {
        emit(DatasetRecord::Uploader {
            uploader_id: u.uploader_id,
            history: u.history.clone(),
        })?;
    }
    for v in dataset.videos() {
        emit(DatasetRecord::Video {
            video_id: v.video_id,
            uploader_id: v.uploader_id,
            feature: v.feature.clone(),
        })?;
    }
    for t in dataset.interactions() {
        emit(DatasetRecord::Interaction {
            uploader_id: t.uploader_id,
            video_id: t.video_id,
            music_id: t.music_id,
            y: t.y,
        })?;
    }
    Ok(())
}

/// Parses a dataset stream. `origin` is used in error messages only.
pub fn read_dataset<R: BufRead>(input: R, origin: &Path) -> Result<Dataset> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut header: Option<HeaderRecord> = None;
    let mut videos = Vec::new();
    let mut music = Vec::new();
    let mut declared_popularity = Vec::new();
    let mut uploaders = Vec::new();
    let mut interactions = Vec::new();

    for (i, line) in input.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        if header.is_none() && !matches!(rec, DatasetRecord::Header(_)) {
            return Err(parse_err(lineno, "first record must be the header".into()));
        }
        match rec {
            DatasetRecord::Header(h) => {
                if header.is_some() {
                    return Err(parse_err(lineno, "duplicate header".into()));
                }
                if h.genre_names.len() != h.n_genres {
                    return Err(parse_err(
                        lineno,
                        format!(
                            "N_g = {} but {} genre names given",
                            h.n_genres,
                            h.genre_names.len()
                        ),
                    ));
                }
                header = Some(h);
            }
            DatasetRecord::Video {
                video_id,
                uploader_id,
                feature,
            } => videos.push(MicroVideo {
                video_id,
                feature,
                uploader_id,
            }),
            DatasetRecord::Music {
                music_id,
                genre,
                popularity,
                feature,
            } => {
                declared_popularity.push((music_id, popularity));
                music.push(MusicClip {
                    music_id,
                    feature,
                    genre,
                    popularity,
                })
            }
            DatasetRecord::Uploader {
                uploader_id,
                history,
            } => uploaders.push(Uploader {
                uploader_id,
                history,
            }),
            DatasetRecord::Interaction {
                uploader_id,
                video_id,
                music_id,
                y,
            } => interactions.push(InteractionTriplet {
                uploader_id,
                video_id,
                music_id,
                y,
            }),
        }
    }
    let h = header.ok_or_else(|| parse_err(0, "missing header".into()))?;
    let ds = Dataset::new(
        h.kind,
        h.f_video,
        h.f_music,
        h.genre_names,
        videos,
        music,
        uploaders,
        interactions,
    )?;
    for (id, declared) in declared_popularity {
        let actual = ds.music_clip(id).map(|m| m.popularity).unwrap_or(0);
        if actual != declared {
            return Err(Error::Integrity(format!(
                "music {id} declares popularity {declared} but has {actual} interactions"
            )));
        }
    }
    Ok(ds)
}

impl Dataset {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        write_dataset(self, &mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        read_dataset(std::io::BufReader::new(file), path)
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::toy_ugc;
    use super::*;

    #[test]
    fn round_trip_preserves_dataset() {
        let ds = toy_ugc(3, &[0, 1, 2, 2], &[&[0, 3], &[1, 2, 2]]);
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn header_line_shape() {
        let ds = toy_ugc(2, &[0, 1], &[&[0]]);
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let first = String::from_utf8(buf).unwrap();
        let first = first.lines().next().unwrap();
        let v: serde_json::Value = serde_json::from_str(first).unwrap();
        assert_eq!(v["record"], "header");
        assert_eq!(v["kind"], "UGC");
        assert_eq!(v["F_video"], 3);
        assert_eq!(v["F_music"], 2);
        assert_eq!(v["N_g"], 2);
    }

    #[test]
    fn missing_header_rejected() {
        let text = r#"{"record":"uploader","uploader_id":0,"history":[]}"#;
        assert!(matches!(
            read_dataset(text.as_bytes(), Path::new("mem")),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn wrong_popularity_rejected() {
        let ds = toy_ugc(2, &[0, 1], &[&[0]]);
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf)
            .unwrap()
            .replace(r#""popularity":1"#, r#""popularity":4"#);
        assert!(matches!(
            read_dataset(text.as_bytes(), Path::new("mem")),
            Err(Error::Integrity(_))
        ));
    }
}
