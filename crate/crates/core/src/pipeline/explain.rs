//! Frame- and object-level explanations from WiD rankings.

use serde::{Deserialize, Serialize};

use super::record::VideoRecord;
use crate::error::{Error, Result};
use crate::gating::ExitRecord;

pub const DEFAULT_TOP_FRAMES: usize = 2;
pub const DEFAULT_TOP_OBJECTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRef {
    pub index: usize,
    pub wid: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f32; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameExplanation {
    pub frame: usize,
    pub wid: f64,
    /// Empty for frames-only explanations.
    pub objects: Vec<ObjectRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub video_id: String,
    pub frames: Vec<FrameExplanation>,
}

/// Indices sorted by descending value, ties to the lower index.
pub fn rank_desc(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// The first `top_frames` policy-selected frames of each video and, when
/// the video carries object metadata, its `top_objects` objects by WiD.
pub fn export_explanations(
    records: &[ExitRecord],
    dataset: &[VideoRecord],
    top_frames: usize,
    top_objects: usize,
) -> Result<Vec<Explanation>> {
    if records.len() != dataset.len() {
        return Err(Error::shape(
            "export_explanations",
            format!("{} records for {} videos", records.len(), dataset.len()),
        ));
    }
    let mut out = Vec::with_capacity(records.len());
    for (r, v) in records.iter().zip(dataset) {
        if r.video_id != v.id {
            return Err(Error::InvalidInput(format!(
                "record {} does not match video {}",
                r.video_id, v.id
            )));
        }
        if v.meta.is_none() {
            log::warn!("{}: no object metadata, frames-only explanation", v.id);
        }
        let frames = r
            .frames_used
            .iter()
            .zip(&r.object_wids)
            .take(top_frames)
            .map(|(&p, wids)| {
                let objects = match &v.meta {
                    None => Vec::new(),
                    Some(meta) => rank_desc(wids)
                        .into_iter()
                        .take(top_objects)
                        .map(|j| ObjectRef {
                            index: j,
                            wid: wids[j],
                            class_name: Some(meta.objects[p][j].class_name.clone()),
                            bbox: Some(meta.objects[p][j].bbox),
                        })
                        .collect(),
                };
                FrameExplanation {
                    frame: p,
                    wid: r.frame_wids[p],
                    objects,
                }
            })
            .collect();
        out.push(Explanation {
            video_id: v.id.clone(),
            frames,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gating::{infer_all, GateBank, GateSchedule};
    use crate::head::{HeadParams, LabelMode};
    use crate::pipeline::cost::CostModel;
    use crate::pipeline::synth::{synth_dataset, SynthSpec};

    fn run(with_meta: bool) -> (Vec<ExitRecord>, Vec<VideoRecord>) {
        let mut d = synth_dataset(&SynthSpec {
            classes: 2,
            videos: 4,
            frames: 8,
            dims: 8,
            objects: 4,
            ..SynthSpec::default()
        })
        .unwrap()
        .videos;
        if !with_meta {
            d.iter_mut().for_each(|v| v.meta = None);
        }
        let schedule = GateSchedule::default();
        let head = HeadParams::init(8, 2, LabelMode::Single, 3);
        let gates = GateBank::init(schedule.gates(), 8, 4);
        let recs = infer_all(&head, &gates, &schedule, &CostModel::default(), &d).unwrap();
        (recs, d)
    }

    #[test]
    fn full_object_ranking_is_a_permutation() {
        let (recs, d) = run(true);
        let ex = export_explanations(&recs, &d, 2, 4).unwrap();
        for (e, r) in ex.iter().zip(&recs) {
            assert_eq!(e.frames.len(), 2);
            for (j, f) in e.frames.iter().enumerate() {
                assert_eq!(f.frame, r.frames_used[j]);
                let mut idx: Vec<usize> = f.objects.iter().map(|o| o.index).collect();
                assert!(f.objects.windows(2).all(|w| w[0].wid >= w[1].wid));
                idx.sort_unstable();
                assert_eq!(idx, vec![0, 1, 2, 3]);
            }
        }
    }

    #[test]
    fn missing_metadata_gives_frames_only() {
        let (recs, d) = run(false);
        let ex = export_explanations(&recs, &d, 3, 3).unwrap();
        for (e, r) in ex.iter().zip(&recs) {
            assert_eq!(e.frames.len(), r.frames_used.len().min(3));
            assert!(e.frames.iter().all(|f| f.objects.is_empty()));
        }
    }

    #[test]
    fn ranking_ties_prefer_lower_index() {
        assert_eq!(rank_desc(&[0.5, 0.9, 0.5, 0.1]), vec![1, 0, 2, 3]);
    }
}
