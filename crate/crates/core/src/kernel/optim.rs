//! First-order optimizers and the step learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::Mat;

/// Learning rate multiplied by `decay` at each milestone epoch (0-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay: f64,
    pub milestones: Vec<usize>,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        LrSchedule {
            initial: lr,
            decay: 1.0,
            milestones: Vec::new(),
        }
    }

    pub fn at_epoch(&self, epoch: usize) -> f64 {
        let hits = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.initial * self.decay.powi(hits as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer state for one parameter set.
pub struct Optimizer {
    kind: OptimizerKind,
    step: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, shapes: &[Mat]) -> Self {
        let zeros = || {
            shapes
                .iter()
                .map(|m| Mat::zeros(m.rows(), m.cols()))
                .collect()
        };
        Optimizer {
            kind,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update; `grads[i]` matches `params[i]` in shape.
    pub fn step(&mut self, params: Vec<&mut Mat>, grads: &[Mat], lr: f64) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - BETA1.powi(t);
                let c2 = 1.0 - BETA2.powi(t);
                for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
                    let m = self.m[i].data_mut();
                    let v = self.v[i].data_mut();
                    for (k, (w, &d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[k] = BETA1 * m[k] + (1.0 - BETA1) * d;
                        v[k] = BETA2 * v[k] + (1.0 - BETA2) * d * d;
                        *w -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}
