//! Plain numeric functions. The tape versions in [`super::tape`] call the
//! same helpers so forward values agree bit for bit.

use super::Mat;
use crate::error::{Error, Result};

/// Clamp applied to probabilities before taking logarithms in [`bce`].
pub const BCE_EPS: f64 = 1e-7;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of one slice.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    out
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// `log softmax(v)[i]` without forming the softmax.
pub(crate) fn log_softmax_at(v: &[f64], i: usize) -> f64 {
    let mut top = 0;
    for (j, &x) in v.iter().enumerate() {
        if x > v[top] {
            top = j;
        }
    }
    let max = v[top];
    // ln(1 + rest) keeps precision when one score dominates
    let rest: f64 = v
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != top)
        .map(|(_, x)| (x - max).exp())
        .sum();
    v[i] - max - rest.ln_1p()
}

/// Softmax of every row, with max subtraction.
pub fn row_softmax(m: &Mat) -> Mat {
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

/// Rescales `v` to `[0, 1]`; a constant vector maps to all zeros.
pub fn minmax_norm(v: &[f64]) -> Vec<f64> {
    minmax_parts(v).0
}

/// Normalized vector plus `(argmin, argmax, range)`; `range == 0` for a constant input.
pub(crate) fn minmax_parts(v: &[f64]) -> (Vec<f64>, usize, usize, f64) {
    let (mut lo, mut hi) = (0usize, 0usize);
    for (i, &x) in v.iter().enumerate() {
        if x < v[lo] {
            lo = i;
        }
        if x > v[hi] {
            hi = i;
        }
    }
    if v.is_empty() {
        return (Vec::new(), 0, 0, 0.0);
    }
    let (min, range) = (v[lo], v[hi] - v[lo]);
    if range > 0.0 {
        (v.iter().map(|x| (x - min) / range).collect(), lo, hi, range)
    } else {
        (vec![0.0; v.len()], lo, hi, 0.0)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `(1 - cos(a, b)) / 2`, in `[0, 1]`.
pub fn dissimilarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "dissimilarity",
            format!("lengths {} and {}", a.len(), b.len()),
        ));
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidInput(
            "dissimilarity of a zero-norm vector".into(),
        ));
    }
    let cos = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
    Ok((1.0 - cos) / 2.0)
}

/// `-log softmax(scores)[label]`.
pub fn cross_entropy(scores: &[f64], label: usize) -> Result<f64> {
    if label >= scores.len() {
        return Err(Error::Index {
            index: label,
            len: scores.len(),
        });
    }
    Ok(-log_softmax_at(scores, label))
}

/// Binary cross-entropy with the prediction clamped to `[BCE_EPS, 1 - BCE_EPS]`.
pub fn bce(prediction: f64, target: f64) -> f64 {
    let p = prediction.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn softmax_examples() {
        let m = Mat::from_rows(&[[0.0, 0.0]]).unwrap();
        assert_eq!(row_softmax(&m).data(), &[0.5, 0.5]);

        let m = Mat::from_rows(&[[1000.0, 1000.0, 1000.0]]).unwrap();
        for &x in row_softmax(&m).data() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }

        let m = Mat::from_rows(&[[0.0, 3f64.ln()]]).unwrap();
        let s = row_softmax(&m);
        assert!((s.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((s.get(0, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(minmax_norm(&[1.0, 3.0, 5.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(minmax_norm(&[2.5, 2.5, 2.5]), vec![0.0; 3]);
        assert_eq!(minmax_norm(&[7.0]), vec![0.0]);
    }

    #[test]
    fn dissimilarity_examples() {
        let v = [0.3, -1.2, 2.0];
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!(dissimilarity(&v, &v).unwrap().abs() < 1e-15);
        assert!((dissimilarity(&v, &neg).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(dissimilarity(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.5);
        assert!(matches!(
            dissimilarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn cross_entropy_examples() {
        for g in 1..6 {
            let ce = cross_entropy(&vec![0.3; g], 0).unwrap();
            assert!((ce - (g as f64).ln()).abs() < 1e-12);
        }
        // -log(e^10 / (e^10 + e^-10)) = log(1 + e^-20)
        let ce = cross_entropy(&[10.0, -10.0], 0).unwrap();
        assert!((ce - (-20f64).exp().ln_1p()).abs() < 1e-20);
        assert!((ce / 2.0611536e-9 - 1.0).abs() < 1e-6);
        assert!((cross_entropy(&[0.0, 0.0], 1).unwrap() - LN2).abs() < 1e-15);
        assert!(matches!(
            cross_entropy(&[0.0, 0.0], 2),
            Err(Error::Index { index: 2, len: 2 })
        ));
    }

    #[test]
    fn bce_examples() {
        assert!((bce(0.5, 1.0) - LN2).abs() < 1e-15);
        assert!(bce(1.0 - 1e-12, 1.0) < 1e-6);
        assert!((bce(0.9, 0.0) - std::f64::consts::LN_10).abs() < 1e-12);
        assert!(bce(0.0, 1.0).is_finite());
        assert!(bce(1.0, 0.0).is_finite());
    }

    fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0f64..50.0, 1..12)
    }

    proptest! {
        #[test]
        fn minmax_affine_invariant(v in vec_strategy(), a in 0.01f64..100.0, b in -100.0f64..100.0) {
            let base = minmax_norm(&v);
            let moved: Vec<f64> = v.iter().map(|x| a * x + b).collect();
            let got = minmax_norm(&moved);
            // A near-constant input can collapse to exactly constant after the transform.
            let spread = v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
            prop_assume!(spread > 1e-6);
            for (x, y) in base.iter().zip(&got) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn minmax_range_and_order(v in vec_strategy()) {
            let n = minmax_norm(&v);
            for &x in &n {
                prop_assert!((0.0..=1.0).contains(&x));
            }
            for i in 0..v.len() {
                for j in 0..v.len() {
                    if v[i] < v[j] {
                        prop_assert!(n[i] <= n[j]);
                    }
                }
            }
        }

        #[test]
        fn dissimilarity_symmetric_and_scale_free(
            a in prop::collection::vec(-5.0f64..5.0, 4),
            b in prop::collection::vec(-5.0f64..5.0, 4),
            k in 0.01f64..100.0,
        ) {
            prop_assume!(l2_norm(&a) > 1e-3 && l2_norm(&b) > 1e-3);
            let d = dissimilarity(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert!((d - dissimilarity(&b, &a).unwrap()).abs() < 1e-15);
            let ka: Vec<f64> = a.iter().map(|x| x * k).collect();
            prop_assert!((d - dissimilarity(&ka, &b).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn softmax_rows_sum_to_one(v in prop::collection::vec(-1e6f64..1e6, 1..10)) {
            let s = row_softmax(&Mat::row_vector(&v));
            prop_assert!((s.sum() - 1.0).abs() < 1e-9);
            prop_assert!(s.data().iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn cross_entropy_non_negative(v in vec_strategy(), idx in 0usize..12) {
            let label = idx % v.len();
            prop_assert!(cross_entropy(&v, label).unwrap() >= 0.0);
        }
    }
}
