//! Graph-attention recognition head.
//!
//! Three attention blocks share one structure: block 1 pools the per-frame
//! backbone features of a whole video, block 2 pools the objects of one
//! frame, block 3 pools the per-frame local embeddings of the selected
//! frames. Each block also reports a weighted in-degree (WiD) per node, the
//! normalized column mean of its first attention matrix, which serves as
//! the node's salience score. A dense layer classifies the concatenation of
//! the global and local video embeddings.

use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::optim::{LrSchedule, Optimizer, OptimizerKind};
use crate::kernel::{self, uniform_mat, Mat, Parameters, Tape, Var};
use crate::pipeline::record::VideoRecord;

/// Graph-convolution layers per attention block.
pub const GAT_LAYERS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    /// One class per video, softmax scores.
    #[default]
    Single,
    /// Any number of classes per video, independent sigmoid scores.
    Multi,
}

/// Weights of one attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct GatBlockParams {
    pub attn_proj: Mat,
    pub layer_weights: Vec<Mat>,
    pub seed: u64,
}

impl GatBlockParams {
    pub fn init(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (dim as f64).sqrt();
        let attn_proj = uniform_mat(&mut rng, dim, dim, bound);
        let layer_weights = (0..GAT_LAYERS)
            .map(|_| uniform_mat(&mut rng, dim, dim, bound))
            .collect();
        GatBlockParams {
            attn_proj,
            layer_weights,
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.attn_proj.rows()
    }

    pub fn bind(&self, tape: &mut Tape) -> GatBlockVars {
        GatBlockVars {
            attn_proj: tape.leaf(self.attn_proj.clone()),
            layers: self
                .layer_weights
                .iter()
                .map(|w| tape.leaf(w.clone()))
                .collect(),
        }
    }

    /// Plain forward pass: pooled feature and per-node WiDs.
    pub fn forward(&self, nodes: &Mat) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let x = tape.leaf(nodes.clone());
        let out = gat_block(&mut tape, &vars, x)?;
        Ok((
            tape.value(out.pooled).data().to_vec(),
            tape.value(out.wids).data().to_vec(),
        ))
    }
}

impl Parameters for GatBlockParams {
    fn tensors(&self) -> Vec<&Mat> {
        std::iter::once(&self.attn_proj)
            .chain(&self.layer_weights)
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        std::iter::once(&mut self.attn_proj)
            .chain(&mut self.layer_weights)
            .collect()
    }
}

/// Tape handles for a bound [`GatBlockParams`].
#[derive(Debug, Clone)]
pub struct GatBlockVars {
    pub attn_proj: Var,
    pub layers: Vec<Var>,
}

impl GatBlockVars {
    pub fn from_slice(vars: &[Var]) -> Self {
        GatBlockVars {
            attn_proj: vars[0],
            layers: vars[1..].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GatOutput {
    /// `1 x F`
    pub pooled: Var,
    /// `1 x M`, in `[0, 1]`
    pub wids: Var,
}

/// Attention block on the tape.
///
/// Per layer: `A = row_softmax((X Wa)(X Wa)^T / sqrt(F))`, `X <- relu(A X W)`.
/// WiDs are the min-max normalized column means of the first layer's `A`;
/// the output is the WiD-weighted mean of the final node features (plain
/// mean when every WiD is zero).
pub fn gat_block(tape: &mut Tape, block: &GatBlockVars, nodes: Var) -> Result<GatOutput> {
    let (m, f) = tape.value(nodes).shape();
    if m == 0 {
        return Err(Error::Empty("gat_block"));
    }
    let inv_sqrt_f = 1.0 / (f as f64).sqrt();
    let mut x = nodes;
    let mut wids = None;
    for &w in &block.layers {
        let q = tape.matmul(x, block.attn_proj)?;
        let scores = tape.matmul_bt(q, q)?;
        let scores = tape.scale(scores, inv_sqrt_f);
        let adj = tape.row_softmax(scores);
        if wids.is_none() {
            let in_degree = tape.col_mean(adj)?;
            wids = Some(tape.minmax(in_degree)?);
        }
        let mixed = tape.matmul(adj, x)?;
        let h = tape.matmul(mixed, w)?;
        x = tape.relu(h);
    }
    let wids = wids.ok_or_else(|| Error::Contract("attention block without layers".into()))?;
    let pooled = tape.weighted_pool(wids, x)?;
    Ok(GatOutput { pooled, wids })
}

/// Video embedding and per-frame WiDs from all frames.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalSummary {
    pub delta: Vec<f64>,
    pub wids: Vec<f64>,
}

/// Local embedding and per-object WiDs of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLocalSummary {
    pub eta: Vec<f64>,
    pub obj_wids: Vec<f64>,
}

/// All head weights.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub omega1: GatBlockParams,
    pub omega2: GatBlockParams,
    pub omega3: GatBlockParams,
    /// `2F x G`, applied to `[delta; rho]`.
    pub classifier: Mat,
    /// `1 x G`
    pub bias: Mat,
    pub mode: LabelMode,
}

impl HeadParams {
    pub fn init(dim: usize, classes: usize, mode: LabelMode, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / ((2 * dim) as f64).sqrt();
        HeadParams {
            omega1: GatBlockParams::init(dim, seed.wrapping_add(1)),
            omega2: GatBlockParams::init(dim, seed.wrapping_add(2)),
            omega3: GatBlockParams::init(dim, seed.wrapping_add(3)),
            classifier: uniform_mat(&mut rng, 2 * dim, classes, bound),
            bias: uniform_mat(&mut rng, 1, classes, bound),
            mode,
        }
    }

    pub fn dim(&self) -> usize {
        self.omega1.dim()
    }

    pub fn classes(&self) -> usize {
        self.classifier.cols()
    }

    pub fn bind(&self, tape: &mut Tape) -> HeadVars {
        HeadVars {
            omega1: self.omega1.bind(tape),
            omega2: self.omega2.bind(tape),
            omega3: self.omega3.bind(tape),
            classifier: tape.leaf(self.classifier.clone()),
            bias: tape.leaf(self.bias.clone()),
            mode: self.mode,
        }
    }

    fn check_dim(&self, m: &Mat, what: &'static str) -> Result<()> {
        if m.cols() != self.dim() {
            return Err(Error::shape(
                what,
                format!("features of dim {}, head expects {}", m.cols(), self.dim()),
            ));
        }
        Ok(())
    }

    pub fn global_path(&self, gamma: &Mat) -> Result<GlobalSummary> {
        self.check_dim(gamma, "global_path")?;
        let (delta, wids) = self.omega1.forward(gamma)?;
        Ok(GlobalSummary { delta, wids })
    }

    /// `objects` rows must be sorted by descending detector confidence.
    pub fn local_frame(&self, objects: &Mat) -> Result<FrameLocalSummary> {
        self.check_dim(objects, "local_frame")?;
        let (eta, obj_wids) = self.omega2.forward(objects)?;
        Ok(FrameLocalSummary { eta, obj_wids })
    }

    /// Pools the local embeddings of the selected frames (rows in selection order).
    pub fn local_video(&self, etas: &Mat) -> Result<Vec<f64>> {
        self.check_dim(etas, "local_video")?;
        Ok(self.omega3.forward(etas)?.0)
    }

    pub fn logits(&self, delta: &[f64], rho: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let w = tape.leaf(self.classifier.clone());
        let b = tape.leaf(self.bias.clone());
        let d = tape.leaf(Mat::row_vector(delta));
        let r = tape.leaf(Mat::row_vector(rho));
        let z = classifier_logits(&mut tape, w, b, d, r)?;
        Ok(tape.value(z).data().to_vec())
    }

    /// Class confidences in `[0, 1]` for `[delta; rho]`.
    pub fn classify(&self, delta: &[f64], rho: &[f64]) -> Result<Vec<f64>> {
        let logits = self.logits(delta, rho)?;
        Ok(scores_from_logits(&logits, self.mode))
    }

    /// SHA-256 over every weight's bit pattern.
    pub fn checksum(&self) -> String {
        checksum_of(self.tensors())
    }
}

impl Parameters for HeadParams {
    fn tensors(&self) -> Vec<&Mat> {
        let mut v = self.omega1.tensors();
        v.extend(self.omega2.tensors());
        v.extend(self.omega3.tensors());
        v.push(&self.classifier);
        v.push(&self.bias);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut v = self.omega1.tensors_mut();
        v.extend(self.omega2.tensors_mut());
        v.extend(self.omega3.tensors_mut());
        v.push(&mut self.classifier);
        v.push(&mut self.bias);
        v
    }
}

pub(crate) fn checksum_of(tensors: Vec<&Mat>) -> String {
    let mut h = Sha256::new();
    for m in tensors {
        h.update((m.rows() as u64).to_le_bytes());
        h.update((m.cols() as u64).to_le_bytes());
        for x in m.data() {
            h.update(x.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn scores_from_logits(logits: &[f64], mode: LabelMode) -> Vec<f64> {
    match mode {
        LabelMode::Single => kernel::softmax(logits),
        LabelMode::Multi => logits.iter().map(|&z| kernel::sigmoid(z)).collect(),
    }
}

/// Tape handles for a bound [`HeadParams`].
#[derive(Debug, Clone)]
pub struct HeadVars {
    pub omega1: GatBlockVars,
    pub omega2: GatBlockVars,
    pub omega3: GatBlockVars,
    pub classifier: Var,
    pub bias: Var,
    pub mode: LabelMode,
}

fn classifier_logits(tape: &mut Tape, w: Var, b: Var, delta: Var, rho: Var) -> Result<Var> {
    let zeta = tape.concat_cols(&[delta, rho])?;
    let z = tape.matmul(zeta, w)?;
    tape.add_row(z, b)
}

impl HeadVars {
    pub fn logits(&self, tape: &mut Tape, delta: Var, rho: Var) -> Result<Var> {
        classifier_logits(tape, self.classifier, self.bias, delta, rho)
    }

    /// Recognition loss of `logits` for a video with the given labels.
    pub fn loss(&self, tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
        video_loss(tape, logits, labels, self.mode)
    }

    /// Full-video forward on every frame: returns the logits node.
    pub fn forward_all_frames(&self, tape: &mut Tape, video: &VideoRecord) -> Result<Var> {
        let gamma = tape.leaf(video.global_feats.clone());
        let global = gat_block(tape, &self.omega1, gamma)?;
        let mut etas = Vec::with_capacity(video.frames());
        for objs in &video.object_feats {
            let x = tape.leaf(objs.clone());
            etas.push(gat_block(tape, &self.omega2, x)?.pooled);
        }
        let h = tape.stack_rows(&etas)?;
        let rho = gat_block(tape, &self.omega3, h)?.pooled;
        self.logits(tape, global.pooled, rho)
    }
}

/// Softmax cross-entropy (single label) or mean per-class binary
/// cross-entropy on sigmoid scores (multilabel).
pub fn video_loss(tape: &mut Tape, logits: Var, labels: &[usize], mode: LabelMode) -> Result<Var> {
    match mode {
        LabelMode::Single => {
            let [label] = labels else {
                return Err(Error::Mode(format!(
                    "single-label loss needs one label, got {}",
                    labels.len()
                )));
            };
            tape.softmax_cross_entropy(logits, *label)
        }
        LabelMode::Multi => {
            let g = tape.value(logits).cols();
            let mut targets = vec![0.0; g];
            for &l in labels {
                *targets
                    .get_mut(l)
                    .ok_or(Error::Index { index: l, len: g })? = 1.0;
            }
            let p = tape.sigmoid(logits);
            tape.bce(p, &targets)
        }
    }
}

/// Plain-value version of [`video_loss`] on already computed scores.
pub fn loss_from_scores(logits: &[f64], labels: &[usize], mode: LabelMode) -> Result<f64> {
    let mut tape = Tape::new();
    let z = tape.leaf(Mat::row_vector(logits));
    let l = video_loss(&mut tape, z, labels, mode)?;
    tape.value(l).item()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadTrainConfig {
    pub epochs: usize,
    pub lr: LrSchedule,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for HeadTrainConfig {
    fn default() -> Self {
        HeadTrainConfig {
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
pub struct TrainedHead {
    pub params: HeadParams,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mean loss and summed gradients over a batch, reduced in batch order.
pub(crate) fn batch_gradients<P, F>(
    params: &P,
    batch: &[usize],
    per_item: F,
) -> Result<(f64, Vec<Mat>)>
where
    P: Parameters + Sync,
    F: Fn(&mut Tape, &[Var], usize) -> Result<Var> + Sync,
{
    let results: Vec<Result<(f64, Vec<Mat>)>> = batch
        .par_iter()
        .map(|&i| {
            let mut tape = Tape::new();
            let leaves = params.leaves(&mut tape);
            let loss = per_item(&mut tape, &leaves, i)?;
            let grads = tape.grad(loss)?;
            Ok((
                tape.value(loss).item()?,
                leaves
                    .iter()
                    .map(|&v| grads.get_or_zeros(v, &tape))
                    .collect(),
            ))
        })
        .collect();
    let mut total = 0.0;
    let mut acc = params.zeros_like();
    for r in results {
        let (loss, grads) = r?;
        total += loss;
        for (a, g) in acc.iter_mut().zip(&grads) {
            a.add_assign(g);
        }
    }
    let inv = 1.0 / batch.len() as f64;
    for a in acc.iter_mut() {
        *a = a.scale(inv);
    }
    Ok((total * inv, acc))
}

pub fn head_vars_from_leaves(leaves: &[Var], mode: LabelMode) -> HeadVars {
    let per_block = 1 + GAT_LAYERS;
    HeadVars {
        omega1: GatBlockVars::from_slice(&leaves[0..per_block]),
        omega2: GatBlockVars::from_slice(&leaves[per_block..2 * per_block]),
        omega3: GatBlockVars::from_slice(&leaves[2 * per_block..3 * per_block]),
        classifier: leaves[3 * per_block],
        bias: leaves[3 * per_block + 1],
        mode,
    }
}

/// Trains all head weights on every frame of every video (no gating).
pub fn train_head(
    dataset: &[VideoRecord],
    classes: usize,
    mode: LabelMode,
    config: &HeadTrainConfig,
) -> Result<TrainedHead> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot train on an empty dataset".into()))?;
    if config.batch_size == 0 || classes == 0 {
        return Err(Error::InvalidInput(
            "batch size and class count must be positive".into(),
        ));
    }
    let mut params = HeadParams::init(first.dims(), classes, mode, config.seed);
    let mut opt = Optimizer::new(config.optimizer, &params.zeros_like());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_4ead);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let lr = config.lr.at_epoch(epoch);
        let mut sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, grads) = batch_gradients(&params, batch, |tape, leaves, i| {
                let vars = head_vars_from_leaves(leaves, mode);
                let logits = vars.forward_all_frames(tape, &dataset[i])?;
                vars.loss(tape, logits, &dataset[i].labels)
            })?;
            sum += loss * batch.len() as f64;
            opt.step(params.tensors_mut(), &grads, lr);
        }
        let mean = sum / dataset.len() as f64;
        log::debug!("head epoch {epoch}: loss {mean:.5}");
        epoch_losses.push(mean);
    }
    Ok(TrainedHead {
        params,
        epoch_losses,
    })
}

/// Scores of the head on all frames of a video (the ungated reference).
pub fn classify_all_frames(head: &HeadParams, video: &VideoRecord) -> Result<Vec<f64>> {
    let global = head.global_path(&video.global_feats)?;
    let etas: Vec<Vec<f64>> = video
        .object_feats
        .iter()
        .map(|objs| head.local_frame(objs).map(|s| s.eta))
        .collect::<Result<_>>()?;
    let rho = head.local_video(&Mat::from_rows(&etas)?)?;
    head.classify(&global.delta, &rho)
}
