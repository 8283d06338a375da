//! Dense numeric primitives and the reverse-mode tape used for training.

pub mod gradcheck;
mod mat;
pub mod ops;
pub mod optim;
mod tape;

pub use mat::Mat;
pub use ops::{bce, cross_entropy, dissimilarity, minmax_norm, row_softmax, sigmoid, softmax};
pub use tape::{Gradients, Tape, Var};

use rand::Rng;

/// Uniform matrix in `[-bound, bound]`.
pub fn uniform_mat<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Mat {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Mat::from_vec(rows, cols, data).expect("sized buffer")
}

/// Anything that exposes its trainable matrices in a fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&Mat>;
    fn tensors_mut(&mut self) -> Vec<&mut Mat>;

    /// Records every tensor as a tape leaf, in [`Parameters::tensors`] order.
    fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors()
            .into_iter()
            .map(|m| tape.leaf(m.clone()))
            .collect()
    }

    fn zeros_like(&self) -> Vec<Mat> {
        self.tensors()
            .into_iter()
            .map(|m| Mat::zeros(m.rows(), m.cols()))
            .collect()
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::gradcheck::check_gradients;
    use super::*;
    use crate::error::Result;

    pub fn random_mat<R: Rng>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Mat {
        uniform_mat(rng, rows, cols, bound)
    }

    pub fn assert_grad_matches<F>(inputs: &[Mat], f: F)
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    {
        let check = check_gradients(inputs, f).unwrap();
        assert!(
            check.max_rel_error() < 1e-4,
            "gradient mismatch: {:?}",
            check.rel_errors
        );
    }
}
