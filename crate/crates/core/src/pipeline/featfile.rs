//! One binary feature file per video, plus an optional JSON metadata sidecar.
//!
//! Layout (little-endian): magic `GVGF`, `u16` version, `u32` P, F, K,
//! `u32` label count and labels, then P x F `f32` global features, then for
//! each frame K `f32` confidences (descending) and K x F `f32` object
//! features. The video id is the file stem.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::record::{VideoMeta, VideoRecord};
use crate::error::{Error, Result};
use crate::kernel::Mat;

pub const MAGIC: &[u8; 4] = b"GVGF";
pub const VERSION: u16 = 1;
pub const EXTENSION: &str = "gvgf";
pub const META_SUFFIX: &str = ".meta.json";

pub fn video_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.{EXTENSION}"))
}

fn meta_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}{META_SUFFIX}"))
}

fn push_f32s(buf: &mut Vec<u8>, values: &[f64]) {
    for &x in values {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

pub fn encode(video: &VideoRecord) -> Vec<u8> {
    let (p, f) = video.global_feats.shape();
    let k = video.objects_per_frame();
    let mut buf = Vec::with_capacity(32 + 4 * p * (f + k + k * f));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for n in [p, f, k, video.labels.len()] {
        buf.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for &l in &video.labels {
        buf.extend_from_slice(&(l as u32).to_le_bytes());
    }
    push_f32s(&mut buf, video.global_feats.data());
    for (docs, objs) in video.object_docs.iter().zip(&video.object_feats) {
        push_f32s(&mut buf, docs);
        push_f32s(&mut buf, objs.data());
    }
    buf
}

/// Bounds-checked little-endian cursor; errors name the field being read.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Reader {
            bytes,
            pos: 0,
            path,
        }
    }

    pub(crate) fn error(&self, field: &'static str, detail: String) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            field,
            detail,
        }
    }

    pub(crate) fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.error(field, format!("truncated at byte {}", self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, field: &'static str) -> Result<[u8; N]> {
        Ok(self.take(N, field)?.try_into().expect("exact length"))
    }

    pub(crate) fn u16(&mut self, field: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(field)?))
    }

    pub(crate) fn u32(&mut self, field: &'static str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.array(field)?) as usize)
    }

    pub(crate) fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(field)?))
    }

    pub(crate) fn f64(&mut self, field: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(field)?))
    }

    fn f32s(&mut self, n: usize, field: &'static str) -> Result<Vec<f64>> {
        let bytes = self.take(n.saturating_mul(4), field)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect())
    }

    pub(crate) fn f64s(&mut self, n: usize, field: &'static str) -> Result<Vec<f64>> {
        let bytes = self.take(n.saturating_mul(8), field)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    /// Fails on trailing bytes.
    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.error(
                "payload",
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

/// Parses and validates one feature file's bytes.
pub fn decode(bytes: &[u8], id: &str, path: &Path) -> Result<VideoRecord> {
    let mut r = Reader::new(bytes, path);
    if r.take(4, "magic")? != MAGIC {
        return Err(r.error("magic", "not a GVGF feature file".into()));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(r.error("version", format!("unsupported version {version}")));
    }
    let (p, f, k) = (r.u32("P")?, r.u32("F")?, r.u32("K")?);
    if p == 0 || f == 0 || k == 0 {
        return Err(r.error(
            "header",
            format!("P={p}, F={f}, K={k} must all be positive"),
        ));
    }
    let n_labels = r.u32("labels")?;
    let labels = (0..n_labels)
        .map(|_| r.u32("labels"))
        .collect::<Result<Vec<_>>>()?;
    let global = Mat::from_vec(p, f, r.f32s(p * f, "global_feats")?)?;
    let mut object_docs = Vec::with_capacity(p);
    let mut object_feats = Vec::with_capacity(p);
    for _ in 0..p {
        object_docs.push(r.f32s(k, "object_docs")?);
        object_feats.push(Mat::from_vec(k, f, r.f32s(k * f, "object_feats")?)?);
    }
    r.finish()?;
    let video = VideoRecord {
        id: id.to_string(),
        labels,
        global_feats: global,
        object_feats,
        object_docs,
        meta: None,
    };
    video.validate(path)?;
    Ok(video)
}

/// Writes the feature file and, when present, the metadata sidecar.
pub fn save_video(dir: &Path, video: &VideoRecord) -> Result<()> {
    let path = video_path(dir, &video.id);
    let mut w = BufWriter::new(fs::File::create(&path)?);
    w.write_all(&encode(video))?;
    w.flush()?;
    if let Some(meta) = &video.meta {
        fs::write(meta_path(dir, &video.id), serde_json::to_string(meta)?)?;
    }
    Ok(())
}

pub fn load_video(path: &Path) -> Result<VideoRecord> {
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            field: "id",
            detail: "file name is not a valid video id".into(),
        })?
        .to_string();
    let bytes = fs::read(path)?;
    let mut video = decode(&bytes, &id, path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mpath = meta_path(dir, &id);
    if mpath.exists() {
        let meta: VideoMeta = serde_json::from_str(&fs::read_to_string(&mpath)?)?;
        video.meta = Some(meta);
        video.validate(&mpath)?;
    }
    Ok(video)
}

pub fn save_dataset(dir: &Path, videos: &[VideoRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for v in videos {
        save_video(dir, v)?;
    }
    Ok(())
}

/// A file that failed to load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub path: PathBuf,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedDataset {
    /// Valid videos, ordered by file name.
    pub videos: Vec<VideoRecord>,
    pub rejected: Vec<Rejection>,
}

/// Loads every feature file in `dir`; bad files are rejected individually.
pub fn load_dataset(dir: &Path) -> Result<LoadedDataset> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == EXTENSION));
    paths.sort();
    if paths.is_empty() {
        log::warn!("no .{EXTENSION} files in {}", dir.display());
    }
    let mut out = LoadedDataset::default();
    for path in paths {
        match load_video(&path) {
            Ok(v) => out.videos.push(v),
            Err(e) => {
                log::warn!("rejected {}: {e}", path.display());
                out.rejected.push(Rejection {
                    path,
                    kind: e.kind().to_string(),
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}
