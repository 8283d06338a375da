//! Frame-selection ablation: a metric for each (policy, frame budget) cell.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cost::CostModel;
use super::metrics::{mean_ap, top1};
use super::record::VideoRecord;
use crate::error::{Error, Result};
use crate::gating::{infer_all, train_gates_on, GateExample, GateSchedule, GateTrainConfig};
use crate::head::HeadParams;
use crate::kernel::Mat;
use crate::policy::{baseline_select, PolicyKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Top1,
    #[default]
    MeanAp,
}

impl Metric {
    pub fn eval(self, scores: &[Vec<f64>], labels: &[Vec<usize>]) -> Result<f64> {
        match self {
            Metric::Top1 => top1(scores, labels),
            Metric::MeanAp => mean_ap(scores, labels),
        }
    }
}

/// Per-video seed for the random policies.
pub fn video_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64)
        .wrapping_add(1)
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn rows_of(m: &Mat, idx: &[usize]) -> Result<Mat> {
    Mat::from_rows(&idx.iter().map(|&i| m.row(i)).collect::<Vec<_>>())
}

/// Scores of one video when only `theta` frames feed the local branch
/// (and, for the first two variants, the global branch too).
pub fn policy_scores(
    head: &HeadParams,
    video: &VideoRecord,
    kind: PolicyKind,
    theta: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let gamma = &video.global_feats;
    let full = head.global_path(gamma)?;
    let theta = theta.min(video.frames());
    let frames = baseline_select(kind, &full.wids, gamma, theta, seed)?;
    let delta = if kind.global_uses_all_frames() {
        full.delta
    } else {
        head.global_path(&rows_of(gamma, &frames)?)?.delta
    };
    let etas: Vec<Vec<f64>> = frames
        .iter()
        .map(|&p| head.local_frame(&video.object_feats[p]).map(|l| l.eta))
        .collect::<Result<_>>()?;
    let rho = head.local_video(&Mat::from_rows(&etas)?)?;
    Ok((head.classify(&delta, &rho)?, frames))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub budget: usize,
    pub metric: f64,
    /// Mean frames per video actually used (gated row).
    pub realized_frames: Option<f64>,
    pub beta: Option<f64>,
    /// Whether the realized frames are within one of the budget.
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub policy: String,
    pub cells: Vec<AblationCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub metric: Metric,
    pub budgets: Vec<usize>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, policy: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.policy == policy)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("policy");
        for b in &self.budgets {
            s.push_str(&format!(",theta_{b}"));
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.policy);
            for c in &r.cells {
                s.push_str(&format!(",{:.6}", c.metric));
            }
            s.push('\n');
        }
        s
    }
}

/// Settings for the gated row: gates are retrained for each `beta` on
/// precomputed training examples, and each budget takes the `beta` whose
/// realized mean frame count lands closest.
#[derive(Debug, Clone)]
pub struct GatedSweep<'a> {
    pub train_examples: &'a [GateExample],
    pub schedule: GateSchedule,
    pub train: GateTrainConfig,
    pub betas: Vec<f64>,
}

/// Geometric grid of `n` values from `lo` to `hi`.
pub fn beta_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    let r = (hi / lo).ln() / (n - 1) as f64;
    (0..n).map(|i| lo * (r * i as f64).exp()).collect()
}

pub fn ablation_run(
    dataset: &[VideoRecord],
    head: &HeadParams,
    policies: &[PolicyKind],
    budgets: &[usize],
    metric: Metric,
    seed: u64,
    gated: Option<&GatedSweep>,
) -> Result<AblationTable> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput(
            "ablation needs at least one video".into(),
        ));
    }
    let labels: Vec<Vec<usize>> = dataset.iter().map(|v| v.labels.clone()).collect();
    let mut rows = Vec::new();
    for &kind in policies {
        let mut cells = Vec::new();
        for &theta in budgets {
            let scores: Vec<Vec<f64>> = dataset
                .par_iter()
                .enumerate()
                .map(|(i, v)| policy_scores(head, v, kind, theta, video_seed(seed, i)).map(|r| r.0))
                .collect::<Result<_>>()?;
            cells.push(AblationCell {
                budget: theta,
                metric: metric.eval(&scores, &labels)?,
                realized_frames: None,
                beta: None,
                matched: true,
            });
        }
        rows.push(AblationRow {
            policy: kind.name().to_string(),
            cells,
        });
    }
    if let Some(sweep) = gated {
        rows.push(gated_row(dataset, head, budgets, metric, &labels, sweep)?);
    }
    Ok(AblationTable {
        metric,
        budgets: budgets.to_vec(),
        rows,
    })
}

fn gated_row(
    dataset: &[VideoRecord],
    head: &HeadParams,
    budgets: &[usize],
    metric: Metric,
    labels: &[Vec<usize>],
    sweep: &GatedSweep,
) -> Result<AblationRow> {
    let cost = CostModel::default();
    let mut points = Vec::with_capacity(sweep.betas.len());
    for &beta in &sweep.betas {
        let schedule = GateSchedule {
            beta,
            ..sweep.schedule.clone()
        };
        let gates =
            train_gates_on(sweep.train_examples, head.dim(), &schedule, &sweep.train)?.gates;
        let records = infer_all(head, &gates, &schedule, &cost, dataset)?;
        let frames = records.iter().map(|r| r.frames_used.len()).sum::<usize>() as f64
            / records.len() as f64;
        let scores: Vec<Vec<f64>> = records.into_iter().map(|r| r.scores).collect();
        let m = metric.eval(&scores, labels)?;
        log::info!("gated sweep: beta {beta:.4} -> {frames:.2} frames, metric {m:.4}");
        points.push((beta, frames, m));
    }
    let cells = budgets
        .iter()
        .map(|&theta| {
            let &(beta, frames, m) = points
                .iter()
                .min_by(|a, b| {
                    (a.1 - theta as f64)
                        .abs()
                        .total_cmp(&(b.1 - theta as f64).abs())
                })
                .ok_or_else(|| Error::InvalidInput("empty beta grid".into()))?;
            let matched = (frames - theta as f64).abs() <= 1.0;
            if !matched {
                log::warn!("no beta reaches {theta} frames on average; closest is {frames:.2}");
            }
            Ok(AblationCell {
                budget: theta,
                metric: m,
                realized_frames: Some(frames),
                beta: Some(beta),
                matched,
            })
        })
        .collect::<Result<_>>()?;
    Ok(AblationRow {
        policy: "gated".to_string(),
        cells,
    })
}
