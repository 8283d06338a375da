//! Frame selection.
//!
//! The proposed policy picks the frame with the highest working WiD, then
//! rescales every frame's WiD by how dissimilar it is to that pick, so the
//! next pick favours salient frames that look different from the last one.
//! Selections only ever grow, which lets each gate reuse the frames (and
//! their local features) chosen for the previous gate.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::ops::{dot, l2_norm};
use crate::kernel::{minmax_norm, Mat};

/// Working state of the salience + diversity policy for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    selected: Vec<usize>,
    u_work: Vec<f64>,
    unit_gamma: Mat,
    alpha: Option<Vec<f64>>,
    warnings: Vec<String>,
}

impl PolicyState {
    /// `u` holds one WiD per frame, `gamma` one global feature row per frame.
    pub fn new(u: &[f64], gamma: &Mat) -> Result<Self> {
        if u.is_empty() {
            return Err(Error::Empty("policy"));
        }
        if u.len() != gamma.rows() {
            return Err(Error::shape(
                "PolicyState::new",
                format!("{} WiDs for {} frames", u.len(), gamma.rows()),
            ));
        }
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite WiD".into()));
        }
        let mut unit_gamma = gamma.clone();
        for p in 0..unit_gamma.rows() {
            let row = unit_gamma.row_mut(p);
            let n = l2_norm(row);
            if n == 0.0 {
                return Err(Error::InvalidInput(format!(
                    "frame {p} has a zero-norm global feature"
                )));
            }
            for x in row.iter_mut() {
                *x /= n;
            }
        }
        Ok(PolicyState {
            selected: Vec::new(),
            u_work: u.to_vec(),
            unit_gamma,
            alpha: None,
            warnings: Vec::new(),
        })
    }

    pub fn frames(&self) -> usize {
        self.u_work.len()
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn working_wids(&self) -> &[f64] {
        &self.u_work
    }

    /// Dissimilarity of every frame to the latest pick.
    pub fn dissimilarities(&self) -> Option<&[f64]> {
        self.alpha.as_deref()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// One iteration: pick the best unselected frame, then reweight.
    pub fn select_next(&mut self) -> Result<usize> {
        let p = self.frames();
        if self.selected.len() >= p {
            return Err(Error::Exhausted(p));
        }
        let mut best: Option<usize> = None;
        for i in 0..p {
            if self.selected.contains(&i) {
                continue;
            }
            match best {
                Some(b) if self.u_work[i] <= self.u_work[b] => {}
                _ => best = Some(i),
            }
        }
        let pick = best.expect("an unselected frame exists");

        let anchor = self.unit_gamma.row(pick);
        let alpha: Vec<f64> = self
            .unit_gamma
            .iter_rows()
            .map(|g| 0.5 * (1.0 - dot(anchor, g)))
            .collect();
        let u_norm = minmax_norm(&self.u_work);
        let a_norm = minmax_norm(&alpha);
        for ((u, un), an) in self.u_work.iter_mut().zip(&u_norm).zip(&a_norm) {
            *u = un * an;
        }
        self.alpha = Some(alpha);
        self.selected.push(pick);
        Ok(pick)
    }

    /// Extends the selection to `q_target` frames and returns all picks so far.
    ///
    /// A target above the frame count is clamped to it and a warning is kept.
    pub fn select_for_gate(&mut self, q_target: usize) -> Result<&[usize]> {
        if q_target < self.selected.len() {
            return Err(Error::InvalidInput(format!(
                "gate target {q_target} is below the {} frames already selected",
                self.selected.len()
            )));
        }
        let target = if q_target > self.frames() {
            let msg = format!(
                "gate target {q_target} exceeds {} frames; clamped",
                self.frames()
            );
            log::warn!("{msg}");
            self.warnings.push(msg);
            self.frames()
        } else {
            q_target
        };
        while self.selected.len() < target {
            self.select_next()?;
        }
        Ok(&self.selected)
    }
}

/// Frame selection variants compared in the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Random frames for both the global and local paths.
    Random,
    /// Top-WiD frames for both paths.
    WidTopK,
    /// Global path on all frames, random frames for the local path.
    RandomLocal,
    /// Global path on all frames, top-WiD frames for the local path.
    WidLocal,
    /// Global path on all frames, salience + diversity frames for the local path.
    Proposed,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Random,
        PolicyKind::WidTopK,
        PolicyKind::RandomLocal,
        PolicyKind::WidLocal,
        PolicyKind::Proposed,
    ];

    /// Whether the global path still sees every frame.
    pub fn global_uses_all_frames(self) -> bool {
        !matches!(self, PolicyKind::Random | PolicyKind::WidTopK)
    }

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::WidTopK => "wid_top_k",
            PolicyKind::RandomLocal => "random_local",
            PolicyKind::WidLocal => "wid_local",
            PolicyKind::Proposed => "proposed",
        }
    }
}

/// Indices of the `theta` largest WiDs, largest first, ties to the lower index.
pub fn top_k_by_wid(u: &[f64], theta: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..u.len()).collect();
    idx.sort_by(|&a, &b| u[b].total_cmp(&u[a]).then(a.cmp(&b)));
    idx.truncate(theta);
    idx
}

/// Selects `theta` frames with the given policy variant.
pub fn baseline_select(
    kind: PolicyKind,
    u: &[f64],
    gamma: &Mat,
    theta: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let p = u.len();
    if gamma.rows() != p {
        return Err(Error::shape(
            "baseline_select",
            format!("{p} WiDs for {} frames", gamma.rows()),
        ));
    }
    if theta > p {
        return Err(Error::InvalidInput(format!(
            "budget {theta} exceeds {p} frames"
        )));
    }
    Ok(match kind {
        PolicyKind::Random | PolicyKind::RandomLocal => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            index::sample(&mut rng, p, theta).into_vec()
        }
        PolicyKind::WidTopK | PolicyKind::WidLocal => top_k_by_wid(u, theta),
        PolicyKind::Proposed => {
            let mut state = PolicyState::new(u, gamma)?;
            state.select_for_gate(theta)?.to_vec()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gamma(rows: &[[f64; 2]]) -> Mat {
        Mat::from_rows(rows).unwrap()
    }

    #[test]
    fn first_pick_is_argmax() {
        let g = gamma(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let mut s = PolicyState::new(&[0.2, 0.9, 0.5], &g).unwrap();
        assert_eq!(s.select_next().unwrap(), 1);
    }

    #[test]
    fn two_frames_forced_order() {
        let g = gamma(&[[1.0, 0.3], [0.2, 1.0]]);
        let mut s = PolicyState::new(&[0.7, 0.4], &g).unwrap();
        assert_eq!(s.select_for_gate(2).unwrap(), &[0, 1]);
        assert!(matches!(s.select_next(), Err(Error::Exhausted(2))));
    }

    #[test]
    fn near_duplicate_is_suppressed() {
        // u~ = [1, .875, 0, .125]; alpha~ = [0, 5e-5, 1, .4]; product peaks at frame 3
        let g = gamma(&[[1.0, 0.0], [1.0, 0.01], [0.0, 1.0], [0.6, 0.8]]);
        let mut s = PolicyState::new(&[0.9, 0.8, 0.1, 0.2], &g).unwrap();
        assert_eq!(s.select_next().unwrap(), 0);
        assert_eq!(s.select_next().unwrap(), 3);
        let u = s.working_wids().to_vec();
        assert!(u[1] < u[2] || u[1] < 1e-3);
    }

    #[test]
    fn select_for_gate_schedules() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        use rand::Rng;
        for schedule in [vec![2, 4, 6, 8, 10], vec![9, 12, 16, 20, 25, 30]] {
            let p = 30;
            let rows: Vec<Vec<f64>> = (0..p)
                .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let u: Vec<f64> = (0..p).map(|_| rng.random()).collect();
            let mut s = PolicyState::new(&u, &Mat::from_rows(&rows).unwrap()).unwrap();
            let mut prev: Vec<usize> = Vec::new();
            for &q in &schedule {
                let got = s.select_for_gate(q).unwrap().to_vec();
                assert_eq!(got.len(), q);
                assert_eq!(&got[..prev.len()], &prev[..]);
                prev = got;
            }
            // idempotent at the current size
            let again = s.select_for_gate(prev.len()).unwrap().to_vec();
            assert_eq!(again, prev);
        }
    }

    #[test]
    fn target_above_frames_is_clamped() {
        let g = gamma(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let mut s = PolicyState::new(&[0.1, 0.2, 0.3], &g).unwrap();
        assert_eq!(s.select_for_gate(10).unwrap().len(), 3);
        assert_eq!(s.warnings().len(), 1);
        assert!(s.select_for_gate(1).is_err());
    }

    #[test]
    fn rejects_zero_norm_frames() {
        let g = gamma(&[[1.0, 0.0], [0.0, 0.0]]);
        assert!(matches!(
            PolicyState::new(&[0.1, 0.2], &g),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn baselines() {
        let g = gamma(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, -1.0]]);
        let u = [0.1, 0.9, 0.5, 0.7];
        assert_eq!(
            baseline_select(PolicyKind::WidTopK, &u, &g, 2, 0).unwrap(),
            vec![1, 3]
        );
        let a = baseline_select(PolicyKind::Random, &u, &g, 3, 17).unwrap();
        let b = baseline_select(PolicyKind::Random, &u, &g, 3, 17).unwrap();
        assert_eq!(a, b);
        for kind in PolicyKind::ALL {
            let mut all = baseline_select(kind, &u, &g, 4, 5).unwrap();
            all.sort();
            assert_eq!(all, vec![0, 1, 2, 3]);
        }
        assert!(baseline_select(PolicyKind::Random, &u, &g, 5, 0).is_err());
    }

    #[test]
    fn topk_ties_to_lower_index() {
        assert_eq!(top_k_by_wid(&[0.5, 0.7, 0.7, 0.5], 3), vec![1, 2, 0]);
    }

    /// Two tight clusters; both top-WiD frames sit in the first one.
    #[test]
    fn diversity_beats_top_k() {
        let g = gamma(&[
            [1.0, 0.0],
            [0.999, 0.01],
            [0.998, -0.01],
            [0.0, 1.0],
            [0.01, 0.999],
        ]);
        let u = [0.9, 0.85, 0.3, 0.6, 0.2];
        let cluster = |i: usize| usize::from(i >= 3);
        let top = top_k_by_wid(&u, 2);
        assert_eq!(cluster(top[0]), cluster(top[1]));
        let ours = baseline_select(PolicyKind::Proposed, &u, &g, 2, 0).unwrap();
        assert_ne!(cluster(ours[0]), cluster(ours[1]));
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>)> {
        (1usize..12, 1usize..8).prop_flat_map(|(p, f)| {
            (
                prop::collection::vec(0.0f64..1.0, p),
                prop::collection::vec(prop::collection::vec(0.05f64..1.0, f).prop_map(|v| v), p),
            )
        })
    }

    proptest! {
        #[test]
        fn no_duplicates_and_first_is_argmax((u, rows) in instance()) {
            let g = Mat::from_rows(&rows).unwrap();
            let mut s = PolicyState::new(&u, &g).unwrap();
            let all = s.select_for_gate(u.len()).unwrap().to_vec();
            let mut sorted = all.clone();
            sorted.sort();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), u.len());
            prop_assert_eq!(all[0], top_k_by_wid(&u, 1)[0]);
            prop_assert!(s.working_wids().iter().all(|x| x.is_finite()));
        }

        #[test]
        fn scale_invariant((u, rows) in instance(), k in 0.1f64..10.0) {
            let g = Mat::from_rows(&rows).unwrap();
            let scaled = g.scale(k);
            let a = baseline_select(PolicyKind::Proposed, &u, &g, u.len(), 0).unwrap();
            let b = baseline_select(PolicyKind::Proposed, &u, &scaled, u.len(), 0).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn deterministic((u, rows) in instance()) {
            let g = Mat::from_rows(&rows).unwrap();
            let a = baseline_select(PolicyKind::Proposed, &u, &g, u.len(), 0).unwrap();
            let b = baseline_select(PolicyKind::Proposed, &u, &g, u.len(), 0).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
