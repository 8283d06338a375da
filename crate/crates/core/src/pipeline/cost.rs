//! Abstract compute accounting, in GFLOP-like units.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gating::ExitRecord;

/// Per-component costs. The defaults make the local branch (detector plus
/// per-object backbone passes) dominate, and reproduce the published
/// all-frames / gated compute ratios for 30-frame and 120-frame videos
/// with 50 objects per frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub cost_backbone_frame: f64,
    pub cost_detector_frame: f64,
    pub cost_backbone_object: f64,
    pub cost_head_block: f64,
    pub cost_gate: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            cost_backbone_frame: 17.5,
            cost_detector_frame: 120.0,
            cost_backbone_object: 17.5,
            cost_head_block: 0.2,
            cost_gate: 0.25,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.cost_backbone_frame,
            self.cost_detector_frame,
            self.cost_backbone_object,
            self.cost_head_block,
            self.cost_gate,
        ];
        if all.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Config(
                "cost constants must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Detector and object backbone passes for one frame.
    pub fn local_frame_cost(&self, k: usize) -> f64 {
        self.cost_detector_frame + k as f64 * self.cost_backbone_object
    }

    /// Backbone and detector work only, with `frames` frames on the local branch.
    pub fn heavy_cost(&self, p: usize, k: usize, frames: usize) -> f64 {
        p as f64 * self.cost_backbone_frame + frames as f64 * self.local_frame_cost(k)
    }

    /// Gated run: one global block, one object block per local frame, one
    /// local pooling block and one gate per evaluated gate.
    pub fn gated_cost(&self, p: usize, k: usize, frames: usize, gates: usize) -> f64 {
        self.heavy_cost(p, k, frames)
            + self.cost_head_block * (1 + frames + gates) as f64
            + self.cost_gate * gates as f64
    }

    /// Ungated head on all frames.
    pub fn baseline_cost(&self, p: usize, k: usize) -> f64 {
        self.heavy_cost(p, k, p) + self.cost_head_block * (p + 2) as f64
    }
}

/// Cost of one inference trace on a video with `p` frames and `k` objects per frame.
pub fn account_cost(model: &CostModel, record: &ExitRecord, p: usize, k: usize) -> f64 {
    model.gated_cost(p, k, record.frames_used.len(), record.gate_outputs.len())
}
