//! Planted synthetic datasets.
//!
//! An orthonormal basis provides one event direction per class, one
//! class-agnostic activity direction and a few scene directions. A video is
//! a few contiguous scenes, each a tight cluster around its scene
//! direction. Event frames add the activity direction, and in each event
//! frame one salient object carries a strong class signal. Easy videos show
//! the event in most frames and their class in the frame features as well;
//! hard videos show it in only a few scattered frames, and only the salient
//! objects reveal the class. Hard videos also contain a burst of
//! near-identical, more salient frames whose salient objects show a
//! different class with probability `decoy_rate` (the true class
//! otherwise), so the most salient frames are redundant and unreliable.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::record::{ObjectMeta, VideoMeta, VideoRecord};
use crate::error::{Error, Result};
use crate::kernel::ops::l2_norm;
use crate::kernel::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub classes: usize,
    pub videos: usize,
    pub frames: usize,
    pub dims: usize,
    pub objects: usize,
    /// Probability that a video is hard.
    pub hard_fraction: f64,
    /// Length of the salient burst in hard videos.
    pub decoys: usize,
    /// Probability that the burst shows a wrong class.
    pub decoy_rate: f64,
    /// Fixes the class, activity and scene directions.
    pub seed: u64,
    /// Videos of different splits share directions but are drawn independently.
    pub split: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 4,
            videos: 400,
            frames: 30,
            dims: 64,
            objects: 8,
            hard_fraction: 0.3,
            decoys: 2,
            decoy_rate: 0.5,
            seed: 0,
            split: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub videos: Vec<VideoRecord>,
    pub hard: Vec<bool>,
    /// Unit event direction of each class.
    pub event_dirs: Vec<Vec<f64>>,
}

const SCENE_DIRS: usize = 6;
const SCENE_NOISE: f64 = 0.1;
const OBJECT_NOISE: f64 = 0.5;
const ACTIVITY: f64 = 1.0;
const EASY_EVENT: f64 = 1.0;
const EASY_BRIGHTNESS: f64 = 0.3;
const DECOY_BRIGHTNESS: f64 = 0.3;
const DECOY_JITTER: f64 = 0.02;
const SALIENT_SCALE: f64 = 1.5;
const SALIENT_EVENT: f64 = 2.0;

fn gaussian(rng: &mut ChaCha8Rng, dims: usize) -> Vec<f64> {
    (0..dims).map(|_| StandardNormal.sample(rng)).collect()
}

/// `n` orthonormal vectors by Gram-Schmidt on Gaussian draws.
fn orthonormal(rng: &mut ChaCha8Rng, n: usize, dims: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v = gaussian(rng, dims);
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= d * y;
            }
        }
        let norm = l2_norm(&v);
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

fn noise(rng: &mut ChaCha8Rng, dims: usize, scale: f64) -> Vec<f64> {
    // expected norm `scale`
    let k = scale / (dims as f64).sqrt();
    gaussian(rng, dims).into_iter().map(|x| x * k).collect()
}

fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

fn quantize(v: &mut [f64]) {
    for x in v {
        *x = f64::from(*x as f32);
    }
}

struct Basis<'a> {
    events: &'a [Vec<f64>],
    activity: &'a [f64],
    scenes: &'a [Vec<f64>],
}

/// Generates a planted dataset; identical specs give identical datasets.
pub fn synth_dataset(spec: &SynthSpec) -> Result<SynthDataset> {
    let SynthSpec {
        classes: g,
        videos: n,
        frames: p,
        dims: f,
        objects: k,
        ..
    } = *spec;
    if g == 0 || n == 0 || p == 0 || f == 0 || k == 0 {
        return Err(Error::InvalidInput(
            "all synthetic counts must be >= 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&spec.hard_fraction) || !(0.0..=1.0).contains(&spec.decoy_rate) {
        return Err(Error::InvalidInput(
            "hard fraction and decoy rate must lie in [0, 1]".into(),
        ));
    }
    if f < g + 3 {
        return Err(Error::InvalidInput(format!(
            "dims {f} too small for {g} classes, activity and two scenes"
        )));
    }
    let scene_count = SCENE_DIRS.min(f - g - 1);
    let mut basis_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dirs = orthonormal(&mut basis_rng, g + 1 + scene_count, f);
    let basis = Basis {
        events: &dirs[..g],
        activity: &dirs[g],
        scenes: &dirs[g + 1..],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(spec.split + 1);

    let mut videos = Vec::with_capacity(n);
    let mut hard = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % g;
        let is_hard = rng.random::<f64>() < spec.hard_fraction;
        let decoys = if is_hard && g > 1 { spec.decoys } else { 0 };
        let misleads = decoys > 0 && rng.random::<f64>() < spec.decoy_rate;
        videos.push(synth_video(
            &mut rng,
            &basis,
            i,
            label,
            is_hard,
            (decoys, misleads),
            p,
            k,
        ));
        hard.push(is_hard);
    }
    Ok(SynthDataset {
        videos,
        hard,
        event_dirs: basis.events.to_vec(),
    })
}

#[allow(clippy::too_many_arguments)]
fn synth_video(
    rng: &mut ChaCha8Rng,
    basis: &Basis,
    index_in_set: usize,
    label: usize,
    is_hard: bool,
    (decoys, misleads): (usize, bool),
    p: usize,
    k: usize,
) -> VideoRecord {
    let class_dir = &basis.events[label];
    let f = class_dir.len();
    // contiguous scenes
    let n_scenes = rng.random_range(2..=3usize).min(basis.scenes.len()).min(p);
    let scene_ids = index::sample(rng, basis.scenes.len(), n_scenes).into_vec();
    let mut cuts: Vec<usize> = index::sample(rng, p.max(2) - 1, n_scenes - 1)
        .into_iter()
        .map(|c| c + 1)
        .collect();
    cuts.sort_unstable();
    let scene_of = |frame: usize| scene_ids[cuts.iter().filter(|&&c| frame >= c).count()];

    let g = basis.events.len();
    let decoys = decoys.min(p.saturating_sub(1));
    let burst_start = rng.random_range(0..=p - decoys);
    let burst = burst_start..burst_start + decoys;
    let decoy_class = (label + rng.random_range(1..g.max(2))) % g;
    let burst_class = if misleads { decoy_class } else { label };
    let decoy_base = noise(rng, f, SCENE_NOISE);
    let free: Vec<usize> = (0..p).filter(|i| !burst.contains(i)).collect();
    let n_events = if is_hard {
        rng.random_range(3..=4usize)
    } else {
        (p as f64 * rng.random_range(0.5..0.8)).round() as usize
    }
    .clamp(1, free.len());
    let event_frames: Vec<usize> = index::sample(rng, free.len(), n_events)
        .into_iter()
        .map(|i| free[i])
        .collect();
    let (class_strength, brightness) = if is_hard {
        (0.0, 0.0)
    } else {
        (EASY_EVENT, EASY_BRIGHTNESS)
    };

    let mut global = Mat::zeros(p, f);
    let mut object_feats = Vec::with_capacity(p);
    let mut object_docs = Vec::with_capacity(p);
    let mut meta = Vec::with_capacity(p);
    for frame in 0..p {
        let scene = &basis.scenes[scene_of(frame)];
        let shown = if burst.contains(&frame) {
            Some(burst_class)
        } else if event_frames.contains(&frame) {
            Some(label)
        } else {
            None
        };
        let mut gamma;
        if burst.contains(&frame) {
            gamma = noise(rng, f, DECOY_JITTER);
            axpy(&mut gamma, 1.0, &decoy_base);
            axpy(&mut gamma, 1.0 + DECOY_BRIGHTNESS, scene);
            axpy(&mut gamma, ACTIVITY, basis.activity);
        } else if shown.is_some() {
            gamma = noise(rng, f, SCENE_NOISE);
            axpy(&mut gamma, 1.0 + brightness, scene);
            axpy(&mut gamma, ACTIVITY, basis.activity);
            axpy(&mut gamma, class_strength, class_dir);
        } else {
            gamma = noise(rng, f, SCENE_NOISE);
            axpy(&mut gamma, 1.0, scene);
        }
        quantize(&mut gamma);

        let salient = shown.map(|c| (rng.random_range(0..k), c));
        let mut objs = Mat::zeros(k, f);
        let mut names = Vec::with_capacity(k);
        for j in 0..k {
            let row = objs.row_mut(j);
            row.copy_from_slice(&noise(rng, f, OBJECT_NOISE));
            if let Some((_, c)) = salient.filter(|&(at, _)| at == j) {
                axpy(row, SALIENT_SCALE, &gamma);
                axpy(row, SALIENT_EVENT, &basis.events[c]);
                names.push(if c == label {
                    format!("event{c}")
                } else {
                    format!("decoy{c}")
                });
            } else {
                axpy(row, 1.0, &gamma);
                names.push("background".to_string());
            }
            quantize(row);
        }
        let mut docs: Vec<f64> = (0..k).map(|_| f64::from(rng.random::<f32>())).collect();
        docs.sort_by(|a, b| b.total_cmp(a));
        let boxes = (0..k)
            .map(|j| {
                let x0: f32 = rng.random_range(0.0..0.7);
                let y0: f32 = rng.random_range(0.0..0.7);
                let w: f32 = rng.random_range(0.05..0.3);
                let h: f32 = rng.random_range(0.05..0.3);
                ObjectMeta {
                    bbox: [x0, y0, x0 + w, y0 + h],
                    class_name: names[j].clone(),
                }
            })
            .collect();
        global.row_mut(frame).copy_from_slice(&gamma);
        object_feats.push(objs);
        object_docs.push(docs);
        meta.push(boxes);
    }
    let tag = if is_hard { "hard" } else { "easy" };
    VideoRecord {
        id: format!("v{index_in_set:05}-{tag}"),
        labels: vec![label],
        global_feats: global,
        object_feats,
        object_docs,
        meta: Some(VideoMeta { objects: meta }),
    }
}

/// Whether a synthetic video id marks a hard video.
pub fn is_hard_id(id: &str) -> bool {
    id.ends_with("-hard")
}

/// Shuffles a copy of `videos` deterministically.
pub fn shuffled(videos: &[VideoRecord], seed: u64) -> Vec<VideoRecord> {
    let mut v = videos.to_vec();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}
