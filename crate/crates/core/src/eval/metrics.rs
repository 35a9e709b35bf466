use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::dataset::{Outcome, RowOutcomes};
use crate::error::{Result, StageError};
use crate::util::rng_from_seed;

/// F1 on the +1 class. With no positives predicted or present the score is
/// 1; with true positives absent but some error it is 0.
pub fn f1_positive(pred: &[i8], truth: &[i8]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(StageError::shape(format!(
            "{} predictions for {} truths",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(StageError::validation("F1 needs at least one row"));
    }
    if truth.iter().any(|t| *t != 1 && *t != -1) {
        return Err(StageError::validation("truth must be +1 or -1"));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (p, t) in pred.iter().zip(truth) {
        match (*p == 1, *t == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return Ok(if fp + fn_ == 0 { 1.0 } else { 0.0 });
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
}

/// Stratification key per row: observed depth crossed with the outcome at
/// that depth.
pub fn fold_keys(rows: &RowOutcomes) -> Vec<usize> {
    (0..rows.len())
        .map(|i| {
            let o = match rows.outcome[i] {
                None => 0,
                Some(Outcome::Pass) => 1,
                Some(Outcome::Reject) => 2,
            };
            rows.depth[i] * 3 + o
        })
        .collect()
}

/// Fold index in `0..k` for each row. Each key group is shuffled and dealt
/// round robin, continuing where the previous group stopped so fold sizes
/// differ by at most one.
pub fn stratified_kfold(keys: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(StageError::validation(format!("k-fold needs k >= 2, got {k}")));
    }
    if keys.len() < k {
        return Err(StageError::validation(format!("{} rows cannot fill {k} folds", keys.len())));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, key) in keys.iter().enumerate() {
        groups.entry(*key).or_default().push(i);
    }
    let mut rng = rng_from_seed(seed);
    let mut fold = vec![0; keys.len()];
    let mut next = 0;
    for (_, mut idx) in groups {
        idx.shuffle(&mut rng);
        for i in idx {
            fold[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(fold)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_examples() {
        assert_eq!(f1_positive(&[1, -1, 1], &[1, -1, 1]).unwrap(), 1.0);
        let p = [1, 1, 1, -1, -1];
        let t = [1, 1, -1, 1, -1];
        assert!((f1_positive(&p, &t).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(f1_positive(&[-1, -1], &[1, -1]).unwrap(), 0.0);
        assert_eq!(f1_positive(&[-1, -1], &[-1, -1]).unwrap(), 1.0);
        assert!(f1_positive(&[1], &[1, 1]).is_err());
    }

    #[test]
    fn folds_are_balanced_within_groups() {
        let keys: Vec<usize> = (0..103).map(|i| usize::from(i % 10 == 0)).collect();
        let folds = stratified_kfold(&keys, 10, 1).unwrap();
        for f in 0..10 {
            let size = folds.iter().filter(|x| **x == f).count();
            assert!((10..=11).contains(&size));
            let rare = (0..103).filter(|&i| folds[i] == f && keys[i] == 1).count();
            assert!((1..=2).contains(&rare));
        }
        assert_eq!(folds, stratified_kfold(&keys, 10, 1).unwrap());
    }

    #[test]
    fn kfold_needs_two_folds() {
        assert!(stratified_kfold(&[0, 1, 2], 1, 0).is_err());
        assert!(stratified_kfold(&[0, 1], 3, 0).is_err());
    }
}
