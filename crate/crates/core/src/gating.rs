//! Early-exit gates.
//!
//! Gate `s` sees `Z = [delta; rho_1; ...; rho_s]`, the video embedding from
//! all frames stacked on the local embeddings computed after each previous
//! gate, and emits a probability that the evidence so far suffices. Gates
//! are trained with the head frozen, against pseudolabels that mark whether
//! the head's loss at that gate is already below a growing threshold.

use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::{
    checksum_of, gat_block, loss_from_scores, scores_from_logits, GatBlockParams, GatBlockVars,
    HeadParams, GAT_LAYERS,
};
use crate::kernel::optim::{LrSchedule, Optimizer, OptimizerKind};
use crate::kernel::{self, uniform_mat, Mat, Parameters, Tape, Var};
use crate::pipeline::cost::{account_cost, CostModel};
use crate::pipeline::record::VideoRecord;
use crate::policy::PolicyState;

/// Gate count, per-gate frame budgets, threshold scale and exit threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateSchedule {
    /// Frames available to gate `s` (strictly ascending).
    pub counts: Vec<usize>,
    pub beta: f64,
    pub threshold: f64,
}

impl Default for GateSchedule {
    fn default() -> Self {
        GateSchedule {
            counts: vec![2, 4, 6, 8, 10],
            beta: 0.3,
            threshold: 0.5,
        }
    }
}

impl GateSchedule {
    pub fn new(counts: Vec<usize>, beta: f64, threshold: f64) -> Result<Self> {
        let s = GateSchedule {
            counts,
            beta,
            threshold,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.is_empty() {
            return Err(Error::Config("gate schedule has no gates".into()));
        }
        if self.counts[0] == 0 || self.counts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "frame counts {:?} must be positive and strictly ascending",
                self.counts
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "exit threshold {} outside [0, 1)",
                self.threshold
            )));
        }
        Ok(())
    }

    pub fn gates(&self) -> usize {
        self.counts.len()
    }

    /// Frame budget of gate `s` (1-based).
    pub fn count(&self, s: usize) -> Result<usize> {
        self.check_gate(s)?;
        Ok(self.counts[s - 1])
    }

    /// Largest loss at gate `s` that still counts as an exit: `beta * exp(s / 2)`.
    pub fn epsilon(&self, s: usize) -> Result<f64> {
        self.check_gate(s)?;
        Ok(self.beta * (s as f64 / 2.0).exp())
    }

    fn check_gate(&self, s: usize) -> Result<()> {
        if s == 0 || s > self.gates() {
            return Err(Error::Index {
                index: s,
                len: self.gates(),
            });
        }
        Ok(())
    }
}

/// 1 when `loss <= eps`, else 0.
pub fn pseudolabel(loss: f64, eps: f64) -> u8 {
    u8::from(loss <= eps)
}

/// Mean binary cross-entropy of gate outputs against pseudolabels.
pub fn gate_loss(outputs: &[f64], labels: &[u8]) -> Result<f64> {
    if outputs.len() != labels.len() || outputs.is_empty() {
        return Err(Error::shape(
            "gate_loss",
            format!("{} outputs, {} pseudolabels", outputs.len(), labels.len()),
        ));
    }
    let sum: f64 = outputs
        .iter()
        .zip(labels)
        .map(|(&g, &o)| kernel::bce(g, f64::from(o)))
        .sum();
    Ok(sum / outputs.len() as f64)
}

/// Weights of gate `s`: width-3 convolution over the row axis, attention
/// block, dense layer to one logit.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    /// 1-based gate index; the gate accepts `s + 1` input rows.
    pub s: usize,
    /// `3F x F`: taps for the previous, current and next row.
    pub conv_kernel: Mat,
    pub conv_bias: Mat,
    pub gat: GatBlockParams,
    /// `F x 1`
    pub dense: Mat,
    pub dense_bias: Mat,
}

impl GateParams {
    pub fn init(s: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GateParams {
            s,
            conv_kernel: uniform_mat(&mut rng, 3 * dim, dim, 1.0 / ((3 * dim) as f64).sqrt()),
            conv_bias: Mat::zeros(1, dim),
            gat: GatBlockParams::init(dim, seed.wrapping_add(1)),
            dense: uniform_mat(&mut rng, dim, 1, 1.0 / (dim as f64).sqrt()),
            dense_bias: Mat::zeros(1, 1),
        }
    }

    pub fn zeros(s: usize, dim: usize) -> Self {
        let mut g = GateParams::init(s, dim, 0);
        for t in g.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        g
    }

    pub fn dim(&self) -> usize {
        self.conv_kernel.cols()
    }

    pub fn bind(&self, tape: &mut Tape) -> GateVars {
        let leaves = self.leaves(tape);
        GateVars::from_slice(&leaves)
    }

    /// Exit probability for `z` (`(s + 1) x F`).
    pub fn forward(&self, z: &Mat) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let zv = tape.leaf(z.clone());
        let out = gate_forward(&mut tape, &vars, self.s, zv)?;
        tape.value(out).item()
    }
}

impl Parameters for GateParams {
    fn tensors(&self) -> Vec<&Mat> {
        let mut v = vec![&self.conv_kernel, &self.conv_bias];
        v.extend(self.gat.tensors());
        v.push(&self.dense);
        v.push(&self.dense_bias);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut v = vec![&mut self.conv_kernel, &mut self.conv_bias];
        v.extend(self.gat.tensors_mut());
        v.push(&mut self.dense);
        v.push(&mut self.dense_bias);
        v
    }
}

const GATE_TENSORS: usize = 4 + 1 + GAT_LAYERS;

/// Tape handles for a bound [`GateParams`].
#[derive(Debug, Clone)]
pub struct GateVars {
    pub conv_kernel: Var,
    pub conv_bias: Var,
    pub gat: GatBlockVars,
    pub dense: Var,
    pub dense_bias: Var,
}

impl GateVars {
    pub fn from_slice(v: &[Var]) -> Self {
        let n = v.len();
        GateVars {
            conv_kernel: v[0],
            conv_bias: v[1],
            gat: GatBlockVars::from_slice(&v[2..n - 2]),
            dense: v[n - 2],
            dense_bias: v[n - 1],
        }
    }
}

/// Gate forward on the tape; returns a `1 x 1` probability.
pub fn gate_forward(tape: &mut Tape, gate: &GateVars, s: usize, z: Var) -> Result<Var> {
    let (rows, cols) = tape.value(z).shape();
    let dim = tape.value(gate.conv_kernel).cols();
    if rows != s + 1 || cols != dim {
        return Err(Error::shape(
            "gate_forward",
            format!("gate {s} expects {} x {dim}, got {rows} x {cols}", s + 1),
        ));
    }
    let prev = tape.shift_rows(z, 1);
    let next = tape.shift_rows(z, -1);
    let taps = tape.concat_cols(&[prev, z, next])?;
    let conv = tape.matmul(taps, gate.conv_kernel)?;
    let conv = tape.add_row(conv, gate.conv_bias)?;
    let h = tape.relu(conv);
    let pooled = gat_block(tape, &gate.gat, h)?.pooled;
    let logit = tape.matmul(pooled, gate.dense)?;
    let logit = tape.add_row(logit, gate.dense_bias)?;
    Ok(tape.sigmoid(logit))
}

/// The gates of one schedule, gate 1 first.
#[derive(Debug, Clone, PartialEq)]
pub struct GateBank {
    pub gates: Vec<GateParams>,
}

impl GateBank {
    pub fn init(count: usize, dim: usize, seed: u64) -> Self {
        GateBank {
            gates: (1..=count)
                .map(|s| GateParams::init(s, dim, seed.wrapping_add(100 * s as u64)))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    pub fn checksum(&self) -> String {
        checksum_of(self.tensors())
    }

    fn check(&self, schedule: &GateSchedule, dim: usize) -> Result<()> {
        if self.len() != schedule.gates() {
            return Err(Error::Contract(format!(
                "{} gates for a {}-gate schedule",
                self.len(),
                schedule.gates()
            )));
        }
        for (i, g) in self.gates.iter().enumerate() {
            if g.s != i + 1 || g.dim() != dim {
                return Err(Error::Contract(format!(
                    "gate {} has index {} and dim {}, expected dim {dim}",
                    i + 1,
                    g.s,
                    g.dim()
                )));
            }
        }
        Ok(())
    }
}

impl Parameters for GateBank {
    fn tensors(&self) -> Vec<&Mat> {
        self.gates.iter().flat_map(|g| g.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        self.gates
            .iter_mut()
            .flat_map(|g| g.tensors_mut())
            .collect()
    }
}

/// Frozen-head quantities for one training video at every gate.
#[derive(Debug, Clone, PartialEq)]
pub struct GateExample {
    /// `(S + 1) x F`: `delta` then `rho` at each gate; gate `s` reads rows `0..=s`.
    pub z: Mat,
    /// Head loss at each gate.
    pub losses: Vec<f64>,
}

impl GateExample {
    pub fn input(&self, s: usize) -> Mat {
        let f = self.z.cols();
        Mat::from_vec(s + 1, f, self.z.data()[..(s + 1) * f].to_vec()).expect("prefix rows")
    }

    pub fn pseudolabels(&self, schedule: &GateSchedule) -> Result<Vec<u8>> {
        self.losses
            .iter()
            .enumerate()
            .map(|(i, &l)| Ok(pseudolabel(l, schedule.epsilon(i + 1)?)))
            .collect()
    }
}

/// Runs the frozen head on every gate's frame selection for each video.
pub fn gate_examples(
    head: &HeadParams,
    dataset: &[VideoRecord],
    schedule: &GateSchedule,
) -> Result<Vec<GateExample>> {
    schedule.validate()?;
    dataset
        .par_iter()
        .map(|video| {
            let mut walk = GateWalk::new(head, video, true)?;
            let mut rows = vec![walk.delta().to_vec()];
            let mut losses = Vec::with_capacity(schedule.gates());
            for &q in &schedule.counts {
                let rho = walk.advance(q)?;
                let logits = head.logits(walk.delta(), &rho)?;
                losses.push(loss_from_scores(&logits, &video.labels, head.mode)?);
                rows.push(rho);
            }
            Ok(GateExample {
                z: Mat::from_rows(&rows)?,
                losses,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateTrainConfig {
    pub epochs: usize,
    pub lr: LrSchedule,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for GateTrainConfig {
    fn default() -> Self {
        GateTrainConfig {
            epochs: 40,
            lr: LrSchedule {
                initial: 1e-4,
                decay: 0.1,
                milestones: vec![16, 35],
            },
            batch_size: 1,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedGates {
    pub gates: GateBank,
    /// Mean gate loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains gates against the frozen head.
pub fn train_gates(
    head: &HeadParams,
    dataset: &[VideoRecord],
    schedule: &GateSchedule,
    config: &GateTrainConfig,
) -> Result<TrainedGates> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput(
            "cannot train gates on an empty dataset".into(),
        ));
    }
    let examples = gate_examples(head, dataset, schedule)?;
    train_gates_on(&examples, head.dim(), schedule, config)
}

/// Trains gates on precomputed examples; every gate sees every video.
pub fn train_gates_on(
    examples: &[GateExample],
    dim: usize,
    schedule: &GateSchedule,
    config: &GateTrainConfig,
) -> Result<TrainedGates> {
    schedule.validate()?;
    if examples.is_empty() {
        return Err(Error::InvalidInput(
            "cannot train gates on an empty dataset".into(),
        ));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be positive".into()));
    }
    let gates_n = schedule.gates();
    let targets: Vec<Vec<f64>> = examples
        .iter()
        .map(|e| {
            if e.losses.len() != gates_n || e.z.rows() != gates_n + 1 {
                return Err(Error::shape(
                    "train_gates",
                    format!("example built for {} gates", e.losses.len()),
                ));
            }
            Ok(e.pseudolabels(schedule)?
                .into_iter()
                .map(f64::from)
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut bank = GateBank::init(gates_n, dim, config.seed);
    let mut opt = Optimizer::new(config.optimizer, &bank.zeros_like());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6a7e);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let lr = config.lr.at_epoch(epoch);
        let mut sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, grads) = crate::head::batch_gradients(&bank, batch, |tape, leaves, i| {
                let ex = &examples[i];
                let mut outs = Vec::with_capacity(gates_n);
                for (s, vars) in leaves.chunks(GATE_TENSORS).enumerate() {
                    let vars = GateVars::from_slice(vars);
                    let z = tape.leaf(ex.input(s + 1));
                    outs.push(gate_forward(tape, &vars, s + 1, z)?);
                }
                let outs = tape.stack_rows(&outs)?;
                tape.bce(outs, &targets[i])
            })?;
            sum += loss * batch.len() as f64;
            opt.step(bank.tensors_mut(), &grads, lr);
        }
        let mean = sum / examples.len() as f64;
        log::debug!("gate epoch {epoch}: loss {mean:.5}");
        epoch_losses.push(mean);
    }
    Ok(TrainedGates {
        gates: bank,
        epoch_losses,
    })
}

/// Inference trace of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitRecord {
    pub video_id: String,
    /// 1-based gate at which the video exited.
    pub exit_gate: usize,
    /// Local-branch frames, in selection order.
    pub frames_used: Vec<usize>,
    pub scores: Vec<f64>,
    pub gate_outputs: Vec<f64>,
    pub cost_units: f64,
    /// Global WiD of every frame.
    pub frame_wids: Vec<f64>,
    /// Object WiDs of each frame in `frames_used`.
    pub object_wids: Vec<Vec<f64>>,
}

/// Incremental frame selection plus local embeddings for one video.
struct GateWalk<'a> {
    head: &'a HeadParams,
    video: &'a VideoRecord,
    delta: Vec<f64>,
    frame_wids: Vec<f64>,
    policy: PolicyState,
    local: Vec<crate::head::FrameLocalSummary>,
    caching: bool,
}

impl<'a> GateWalk<'a> {
    fn new(head: &'a HeadParams, video: &'a VideoRecord, caching: bool) -> Result<Self> {
        let global = head.global_path(&video.global_feats)?;
        let policy = PolicyState::new(&global.wids, &video.global_feats)?;
        Ok(GateWalk {
            head,
            video,
            delta: global.delta,
            frame_wids: global.wids,
            policy,
            local: Vec::new(),
            caching,
        })
    }

    fn delta(&self) -> &[f64] {
        &self.delta
    }

    /// Extends the selection to `q` frames and pools their local embeddings.
    fn advance(&mut self, q: usize) -> Result<Vec<f64>> {
        let q = q.min(self.policy.frames());
        let selected = self.policy.select_for_gate(q)?.to_vec();
        if !self.caching {
            self.local.clear();
        }
        for &p in &selected[self.local.len()..] {
            self.local
                .push(self.head.local_frame(&self.video.object_feats[p])?);
        }
        let etas: Vec<&[f64]> = self.local.iter().map(|l| l.eta.as_slice()).collect();
        self.head.local_video(&Mat::from_rows(&etas)?)
    }
}

/// Runs gates in order until one opens; the last gate always classifies.
pub fn infer(
    head: &HeadParams,
    gates: &GateBank,
    schedule: &GateSchedule,
    cost: &CostModel,
    video: &VideoRecord,
) -> Result<ExitRecord> {
    infer_with(head, gates, schedule, cost, video, true)
}

/// [`infer`], optionally recomputing every local embedding at every gate.
pub fn infer_with(
    head: &HeadParams,
    gates: &GateBank,
    schedule: &GateSchedule,
    cost: &CostModel,
    video: &VideoRecord,
    caching: bool,
) -> Result<ExitRecord> {
    schedule.validate()?;
    gates.check(schedule, head.dim())?;
    let mut walk = GateWalk::new(head, video, caching)?;
    let mut rows = vec![walk.delta().to_vec()];
    let mut gate_outputs = Vec::new();
    let mut rho = Vec::new();
    for (i, gate) in gates.gates.iter().enumerate() {
        rho = walk.advance(schedule.counts[i])?;
        rows.push(rho.clone());
        let g = gate.forward(&Mat::from_rows(&rows)?)?;
        gate_outputs.push(g);
        if g > schedule.threshold {
            break;
        }
    }
    let logits = head.logits(walk.delta(), &rho)?;
    let mut record = ExitRecord {
        video_id: video.id.clone(),
        exit_gate: gate_outputs.len(),
        frames_used: walk.policy.selected().to_vec(),
        scores: scores_from_logits(&logits, head.mode),
        gate_outputs,
        cost_units: 0.0,
        frame_wids: walk.frame_wids,
        object_wids: walk.local.into_iter().map(|l| l.obj_wids).collect(),
    };
    record.cost_units = account_cost(cost, &record, video.frames(), video.objects_per_frame());
    Ok(record)
}

/// [`infer`] over a dataset, in dataset order.
pub fn infer_all(
    head: &HeadParams,
    gates: &GateBank,
    schedule: &GateSchedule,
    cost: &CostModel,
    dataset: &[VideoRecord],
) -> Result<Vec<ExitRecord>> {
    infer_all_with(head, gates, schedule, cost, dataset, true)
}

pub fn infer_all_with(
    head: &HeadParams,
    gates: &GateBank,
    schedule: &GateSchedule,
    cost: &CostModel,
    dataset: &[VideoRecord],
    caching: bool,
) -> Result<Vec<ExitRecord>> {
    dataset
        .par_iter()
        .map(|v| infer_with(head, gates, schedule, cost, v, caching))
        .collect()
}
