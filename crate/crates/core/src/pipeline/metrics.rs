//! Recognition metrics.

use crate::error::{Error, Result};

/// Index of the largest score, ties to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Fraction of videos whose top-scoring class is their label.
pub fn top1(scores: &[Vec<f64>], labels: &[Vec<usize>]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            "top1",
            format!("{} score rows, {} label sets", scores.len(), labels.len()),
        ));
    }
    if scores.is_empty() {
        return Err(Error::Empty("top1"));
    }
    let mut hits = 0usize;
    for (s, l) in scores.iter().zip(labels) {
        let [label] = l.as_slice() else {
            return Err(Error::Mode(format!(
                "top-1 accuracy needs one label per video, got {}",
                l.len()
            )));
        };
        hits += usize::from(argmax(s) == *label);
    }
    Ok(hits as f64 / scores.len() as f64)
}

/// Mean of the precision at each positive's rank; `None` without positives.
///
/// Items are ranked by descending score, ties broken by lower index.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let (mut hits, mut sum) = (0usize, 0.0);
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Per-class average precision over an `N x G` score table.
pub fn class_aps(scores: &[Vec<f64>], labels: &[Vec<usize>]) -> Result<Vec<Option<f64>>> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            "mean_ap",
            format!("{} score rows, {} label sets", scores.len(), labels.len()),
        ));
    }
    let g = scores.first().map_or(0, Vec::len);
    if scores.iter().any(|s| s.len() != g) {
        return Err(Error::shape("mean_ap", "ragged score rows"));
    }
    for l in labels.iter().flatten() {
        if *l >= g {
            return Err(Error::Index { index: *l, len: g });
        }
    }
    Ok((0..g)
        .map(|c| {
            let col: Vec<f64> = scores.iter().map(|s| s[c]).collect();
            let pos: Vec<bool> = labels.iter().map(|l| l.contains(&c)).collect();
            average_precision(&col, &pos)
        })
        .collect())
}

/// Mean average precision over classes with at least one positive.
pub fn mean_ap(scores: &[Vec<f64>], labels: &[Vec<usize>]) -> Result<f64> {
    let aps = class_aps(scores, labels)?;
    let skipped: Vec<usize> = (0..aps.len()).filter(|&c| aps[c].is_none()).collect();
    if !skipped.is_empty() {
        log::warn!("classes without positives excluded from mAP: {skipped:?}");
    }
    let present: Vec<f64> = aps.into_iter().flatten().collect();
    if present.is_empty() {
        return Err(Error::InvalidInput("no class has a positive video".into()));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot_rows(rows: &[&[f64]]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn top1_examples() {
        let s = one_hot_rows(&[&[0.9, 0.1], &[0.2, 0.8], &[0.6, 0.4]]);
        assert_eq!(top1(&s, &[vec![0], vec![1], vec![0]]).unwrap(), 1.0);
        assert_eq!(top1(&s, &[vec![1], vec![0], vec![1]]).unwrap(), 0.0);
        assert!((top1(&s, &[vec![0], vec![1], vec![1]]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            top1(&s, &[vec![0, 1], vec![1], vec![1]]),
            Err(Error::Mode(_))
        ));
    }

    #[test]
    fn ap_examples() {
        let ap = average_precision(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&[0.1, 0.2], &[false, false]), None);
        // tie: index 0 ranks first
        assert_eq!(average_precision(&[0.5, 0.5], &[true, false]), Some(1.0));
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]), Some(0.5));
    }

    #[test]
    fn perfect_ranking_is_one() {
        let s = one_hot_rows(&[&[0.9, 0.1, 0.0], &[0.1, 0.9, 0.2], &[0.8, 0.3, 0.7]]);
        let l = vec![vec![0], vec![1], vec![0, 2]];
        assert_eq!(mean_ap(&s, &l).unwrap(), 1.0);
    }

    #[test]
    fn class_without_positives_is_skipped() {
        let s = one_hot_rows(&[&[0.9, 0.1], &[0.8, 0.2]]);
        let l = vec![vec![0], vec![0]];
        assert_eq!(class_aps(&s, &l).unwrap()[1], None);
        assert_eq!(mean_ap(&s, &l).unwrap(), 1.0);
        assert!(mean_ap(&s, &[vec![], vec![]]).is_err());
        assert!(matches!(
            mean_ap(&s, &[vec![2], vec![0]]),
            Err(Error::Index { .. })
        ));
    }
}
