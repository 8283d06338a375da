//! Run configuration, read from TOML. Every section is optional.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ablation::Metric;
use super::cost::CostModel;
use super::explain::{DEFAULT_TOP_FRAMES, DEFAULT_TOP_OBJECTS};
use super::synth::SynthSpec;
use crate::error::{Error, Result};
use crate::gating::{GateSchedule, GateTrainConfig};
use crate::head::{HeadTrainConfig, LabelMode};
use crate::policy::PolicyKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub policies: Vec<PolicyKind>,
    pub budgets: Vec<usize>,
    /// Geometric beta grid for the gated row: `[lo, hi]` with `beta_steps` points.
    pub beta_range: [f64; 2],
    pub beta_steps: usize,
    pub gated: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            policies: PolicyKind::ALL.to_vec(),
            budgets: vec![10, 20, 30],
            beta_range: [0.01, 1.0],
            beta_steps: 7,
            gated: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    pub top_frames: usize,
    pub top_objects: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            top_frames: DEFAULT_TOP_FRAMES,
            top_objects: DEFAULT_TOP_OBJECTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub classes: usize,
    pub label_mode: LabelMode,
    pub metric: Metric,
    pub caching: bool,
    pub synth: SynthSpec,
    pub schedule: GateSchedule,
    pub head_train: HeadTrainConfig,
    pub gate_train: GateTrainConfig,
    pub cost: CostModel,
    pub ablation: AblationConfig,
    pub explain: ExplainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthSpec::default();
        RunConfig {
            seed: 0,
            classes: synth.classes,
            label_mode: LabelMode::Single,
            metric: Metric::Top1,
            caching: true,
            synth,
            schedule: GateSchedule::default(),
            head_train: HeadTrainConfig::default(),
            gate_train: GateTrainConfig::default(),
            cost: CostModel::default(),
            ablation: AblationConfig::default(),
            explain: ExplainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule
            .validate()
            .map_err(|e| Error::Config(format!("schedule: {e}")))?;
        self.cost.validate()?;
        if self.classes == 0 {
            return Err(Error::Config("classes must be >= 1".into()));
        }
        if self.head_train.epochs == 0 || self.head_train.batch_size == 0 {
            return Err(Error::Config(
                "head_train needs epochs and batch_size >= 1".into(),
            ));
        }
        if self.gate_train.epochs == 0 || self.gate_train.batch_size == 0 {
            return Err(Error::Config(
                "gate_train needs epochs and batch_size >= 1".into(),
            ));
        }
        let [lo, hi] = self.ablation.beta_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) || self.ablation.beta_steps == 0 {
            return Err(Error::Config(
                "ablation beta_range must satisfy 0 < lo <= hi".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> Result<[u8; 32]> {
        Ok(Sha256::digest(self.to_toml()?.as_bytes()).into())
    }
}
