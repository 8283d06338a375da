//! Central finite-difference checking of tape gradients.

use super::{Mat, Tape, Var};
use crate::error::Result;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-4;

/// Outcome of comparing reverse-mode gradients to central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Per input: `|g_tape - g_fd| / max(|g_tape|, |g_fd|)` in Frobenius norm.
    pub rel_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Evaluates `f` on fresh leaves built from `inputs` and compares the tape
/// gradient of its scalar output with the five-point central difference of
/// step [`FD_STEP`] (error O(h^4), so the step can stay large enough to keep
/// round-off small next to tiny gradients).
pub fn check_gradients<F>(inputs: &[Mat], f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Mat]| -> Result<f64> {
        let mut t = Tape::new();
        let vars: Vec<Var> = values.iter().map(|m| t.leaf(m.clone())).collect();
        let out = f(&mut t, &vars)?;
        t.value(out).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.grad(out)?;

    let mut work: Vec<Mat> = inputs.to_vec();
    let mut rel_errors = Vec::with_capacity(inputs.len());
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(v, &tape);
        let mut numeric = Mat::zeros(analytic.rows(), analytic.cols());
        for k in 0..work[i].data().len() {
            let orig = work[i].data()[k];
            let mut at = |d: f64| -> Result<f64> {
                work[i].data_mut()[k] = orig + d * FD_STEP;
                eval(&work)
            };
            let (p1, m1, p2, m2) = (at(1.0)?, at(-1.0)?, at(2.0)?, at(-2.0)?);
            work[i].data_mut()[k] = orig;
            numeric.data_mut()[k] = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * FD_STEP);
        }
        let diff = analytic
            .data()
            .iter()
            .zip(numeric.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = analytic.norm().max(numeric.norm());
        // Both sides vanish: nothing to compare beyond rounding noise.
        let rel = if scale < 1e-10 { 0.0 } else { diff / scale };
        rel_errors.push(rel);
    }
    Ok(GradCheck { rel_errors })
}
