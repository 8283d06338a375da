//! Per-gate statistics and cost totals for one inference run.

use serde::{Deserialize, Serialize};

use super::ablation::Metric;
use super::cost::CostModel;
use super::record::VideoRecord;
use crate::error::{Error, Result};
use crate::gating::{ExitRecord, GateSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateStat {
    /// 1-based gate index.
    pub gate: usize,
    /// Frames on the local branch at this gate.
    pub frames: usize,
    /// Videos that exited here.
    pub videos: usize,
    /// Metric over the videos that exited here; `None` when it is undefined
    /// for that subset (no videos, or no positives for mAP).
    pub metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub metric_name: Metric,
    pub videos: usize,
    pub gates: Vec<GateStat>,
    pub metric: f64,
    pub avg_frames: f64,
    pub total_cost: f64,
    pub per_video_cost: f64,
    pub baseline_total_cost: f64,
    /// `baseline_total_cost / total_cost`.
    pub cost_ratio: f64,
    /// Backbone and detector work only, without head and gate terms.
    pub heavy_total_cost: f64,
    pub heavy_baseline_total_cost: f64,
    pub heavy_cost_ratio: f64,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The per-gate table as CSV.
    pub fn gates_csv(&self) -> String {
        let mut s = String::from("gate,frames,videos,metric\n");
        for g in &self.gates {
            let m = g.metric.map_or(String::new(), |m| format!("{m:.6}"));
            s.push_str(&format!("{},{},{},{m}\n", g.gate, g.frames, g.videos));
        }
        s
    }
}

/// Assembles the report from exit records in dataset order.
pub fn build_report(
    records: &[ExitRecord],
    dataset: &[VideoRecord],
    schedule: &GateSchedule,
    cost: &CostModel,
    metric: Metric,
) -> Result<RunReport> {
    if records.len() != dataset.len() {
        return Err(Error::shape(
            "build_report",
            format!("{} records for {} videos", records.len(), dataset.len()),
        ));
    }
    if records.is_empty() {
        return Err(Error::Empty("build_report"));
    }
    for (r, v) in records.iter().zip(dataset) {
        if r.video_id != v.id {
            return Err(Error::InvalidInput(format!(
                "record {} does not match video {}",
                r.video_id, v.id
            )));
        }
    }
    let n = records.len();
    let labels: Vec<Vec<usize>> = dataset.iter().map(|v| v.labels.clone()).collect();
    let scores: Vec<Vec<f64>> = records.iter().map(|r| r.scores.clone()).collect();

    let mut gates = Vec::with_capacity(schedule.gates());
    for s in 1..=schedule.gates() {
        let idx: Vec<usize> = (0..n).filter(|&i| records[i].exit_gate == s).collect();
        let sub_metric = if idx.is_empty() {
            None
        } else {
            let sc: Vec<Vec<f64>> = idx.iter().map(|&i| scores[i].clone()).collect();
            let lb: Vec<Vec<usize>> = idx.iter().map(|&i| labels[i].clone()).collect();
            metric.eval(&sc, &lb).ok()
        };
        gates.push(GateStat {
            gate: s,
            frames: schedule.count(s)?,
            videos: idx.len(),
            metric: sub_metric,
        });
    }

    let (mut total, mut base, mut heavy, mut heavy_base) = (0.0, 0.0, 0.0, 0.0);
    for (r, v) in records.iter().zip(dataset) {
        let (p, k) = (v.frames(), v.objects_per_frame());
        total += r.cost_units;
        base += cost.baseline_cost(p, k);
        heavy += cost.heavy_cost(p, k, r.frames_used.len());
        heavy_base += cost.heavy_cost(p, k, p);
    }
    let frames: usize = records.iter().map(|r| r.frames_used.len()).sum();
    Ok(RunReport {
        metric_name: metric,
        videos: n,
        gates,
        metric: metric.eval(&scores, &labels)?,
        avg_frames: frames as f64 / n as f64,
        total_cost: total,
        per_video_cost: total / n as f64,
        baseline_total_cost: base,
        cost_ratio: base / total,
        heavy_total_cost: heavy,
        heavy_baseline_total_cost: heavy_base,
        heavy_cost_ratio: heavy_base / heavy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gating::{infer_all, GateBank};
    use crate::head::{HeadParams, LabelMode};
    use crate::pipeline::synth::{synth_dataset, SynthSpec};

    #[test]
    fn counts_and_frames_are_consistent() {
        let d = synth_dataset(&SynthSpec {
            classes: 3,
            videos: 20,
            frames: 12,
            dims: 10,
            objects: 3,
            ..SynthSpec::default()
        })
        .unwrap();
        let schedule = GateSchedule::default();
        let head = HeadParams::init(10, 3, LabelMode::Single, 1);
        let gates = GateBank::init(schedule.gates(), 10, 2);
        let cost = CostModel::default();
        let recs = infer_all(&head, &gates, &schedule, &cost, &d.videos).unwrap();
        let rep = build_report(&recs, &d.videos, &schedule, &cost, Metric::Top1).unwrap();
        assert_eq!(rep.gates.iter().map(|g| g.videos).sum::<usize>(), 20);
        let from_gates: usize = rep.gates.iter().map(|g| g.videos * g.frames).sum();
        assert!((rep.avg_frames - from_gates as f64 / 20.0).abs() < 1e-12);
        let gate_cost: f64 = recs
            .iter()
            .map(|r| r.gate_outputs.len() as f64 * cost.cost_gate)
            .sum();
        assert!(rep.total_cost <= rep.baseline_total_cost + gate_cost);
        assert!((rep.cost_ratio - rep.baseline_total_cost / rep.total_cost).abs() < 1e-12);
        assert!(rep
            .gates_csv()
            .starts_with("gate,frames,videos,metric\n1,2,"));
    }

    #[test]
    fn mismatched_records_are_rejected() {
        let d = synth_dataset(&SynthSpec {
            classes: 2,
            videos: 2,
            frames: 4,
            dims: 6,
            objects: 2,
            ..SynthSpec::default()
        })
        .unwrap();
        let schedule = GateSchedule::new(vec![2, 4], 0.3, 0.5).unwrap();
        let head = HeadParams::init(6, 2, LabelMode::Single, 1);
        let gates = GateBank::init(2, 6, 2);
        let cost = CostModel::default();
        let mut recs = infer_all(&head, &gates, &schedule, &cost, &d.videos).unwrap();
        assert!(build_report(&recs[..1], &d.videos, &schedule, &cost, Metric::Top1).is_err());
        recs.swap(0, 1);
        assert!(build_report(&recs, &d.videos, &schedule, &cost, Metric::Top1).is_err());
    }
}
