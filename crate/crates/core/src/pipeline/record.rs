use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Mat;

/// Bounding box and detector class name for one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMeta {
    pub bbox: [f32; 4],
    pub class_name: String,
}

/// Per-frame, per-object metadata (`objects[p][k]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub objects: Vec<Vec<ObjectMeta>>,
}

/// Precomputed features of one video.
///
/// `global_feats` holds one backbone feature per frame (P x F). For every
/// frame there is a K x F object feature matrix whose rows are sorted by
/// descending detector confidence, with the confidences in `object_docs`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub labels: Vec<usize>,
    pub global_feats: Mat,
    pub object_feats: Vec<Mat>,
    pub object_docs: Vec<Vec<f64>>,
    pub meta: Option<VideoMeta>,
}

impl VideoRecord {
    pub fn frames(&self) -> usize {
        self.global_feats.rows()
    }

    pub fn dims(&self) -> usize {
        self.global_feats.cols()
    }

    pub fn objects_per_frame(&self) -> usize {
        self.object_feats.first().map_or(0, Mat::rows)
    }

    /// The single class of a single-label video.
    pub fn label(&self) -> Result<usize> {
        match self.labels.as_slice() {
            [g] => Ok(*g),
            other => Err(Error::Mode(format!(
                "video {} has {} labels, single-label mode needs exactly one",
                self.id,
                other.len()
            ))),
        }
    }

    /// Checks shape, ordering and non-degeneracy. The error names the
    /// offending field; `path` is used for diagnostics only.
    pub fn validate(&self, path: &std::path::Path) -> Result<()> {
        let bad = |field: &'static str, detail: String| Error::Format {
            path: path.to_path_buf(),
            field,
            detail,
        };
        let (p, f) = self.global_feats.shape();
        if p == 0 {
            return Err(bad("P", "video has no frames".into()));
        }
        if f == 0 {
            return Err(bad("F", "feature dimension is zero".into()));
        }
        if self.object_feats.len() != p || self.object_docs.len() != p {
            return Err(bad(
                "object_feats",
                format!(
                    "{} object blocks and {} DoC vectors for {p} frames",
                    self.object_feats.len(),
                    self.object_docs.len()
                ),
            ));
        }
        let k = self.objects_per_frame();
        if k == 0 {
            return Err(bad("K", "frames carry no objects".into()));
        }
        for (i, row) in self.global_feats.iter_rows().enumerate() {
            check_row(row).map_err(|d| bad("global_feats", format!("frame {i}: {d}")))?;
        }
        for (i, (objs, docs)) in self.object_feats.iter().zip(&self.object_docs).enumerate() {
            if objs.rows() != k {
                return Err(bad(
                    "K",
                    format!("frame {i} has {} objects, frame 0 has {k}", objs.rows()),
                ));
            }
            if objs.cols() != f {
                return Err(bad(
                    "object_feats",
                    format!("frame {i} objects have dim {}, expected {f}", objs.cols()),
                ));
            }
            if docs.len() != k {
                return Err(bad(
                    "object_docs",
                    format!("frame {i} has {} DoCs for {k} objects", docs.len()),
                ));
            }
            if docs.windows(2).any(|w| !(w[0] >= w[1])) {
                return Err(bad(
                    "object_docs",
                    format!("frame {i} DoCs not sorted descending"),
                ));
            }
            for (j, row) in objs.iter_rows().enumerate() {
                check_row(row)
                    .map_err(|d| bad("object_feats", format!("frame {i} object {j}: {d}")))?;
            }
        }
        if let Some(meta) = &self.meta {
            if meta.objects.len() != p || meta.objects.iter().any(|o| o.len() != k) {
                return Err(bad("meta", "metadata does not match P x K".into()));
            }
        }
        Ok(())
    }
}

fn check_row(row: &[f64]) -> std::result::Result<(), String> {
    if row.iter().any(|x| !x.is_finite()) {
        return Err("non-finite entry".into());
    }
    if row.iter().all(|&x| x == 0.0) {
        return Err("zero-norm feature row".into());
    }
    Ok(())
}
