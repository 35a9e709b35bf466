use ndarray::{Array2, ArrayView2};

use crate::error::{Result, StageError};

fn same_shape(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(StageError::shape(format!("scores {:?} and labels {:?} differ", a.dim(), b.dim())));
    }
    Ok(())
}

/// Label-consistency loss `||Yhat - Y||_F^2`. With `mask_missing`, cells
/// where `Y = 0` are skipped.
pub fn lc_loss(yhat: ArrayView2<f64>, y: ArrayView2<f64>, mask_missing: bool) -> Result<f64> {
    same_shape(&yhat, &y)?;
    Ok(yhat
        .iter()
        .zip(y.iter())
        .filter(|(_, t)| !(mask_missing && **t == 0.0))
        .map(|(p, t)| (p - t) * (p - t))
        .sum())
}

pub(crate) fn lc_grad(yhat: ArrayView2<f64>, y: ArrayView2<f64>, mask_missing: bool) -> Array2<f64> {
    let mut g = &yhat - &y;
    g.zip_mut_with(&y, |g, t| {
        *g = if mask_missing && *t == 0.0 { 0.0 } else { 2.0 * *g };
    });
    g
}

/// Sequence-consistency penalty `1/4 sum_rows sum_{i<j} (1 - y_i)(1 + y_j)`:
/// mass on a reject at an earlier stage paired with an approval later.
pub fn tc_loss(yhat: ArrayView2<f64>) -> f64 {
    let mut total = 0.0;
    for row in yhat.rows() {
        // running sum of (1 - y_i) over earlier stages
        let mut before = 0.0;
        for &y in row {
            total += before * (1.0 + y);
            before += 1.0 - y;
        }
    }
    0.25 * total
}

/// `d tc / d y_k = 1/4 [sum_{i<k} (1 - y_i) - sum_{j>k} (1 + y_j)]`.
pub(crate) fn tc_grad(yhat: ArrayView2<f64>) -> Array2<f64> {
    let mut g = Array2::<f64>::zeros(yhat.raw_dim());
    for (row, mut out) in yhat.rows().into_iter().zip(g.rows_mut()) {
        let mut after: f64 = row.iter().map(|y| 1.0 + y).sum();
        let mut before = 0.0;
        for (k, &y) in row.iter().enumerate() {
            after -= 1.0 + y;
            out[k] = 0.25 * (before - after);
            before += 1.0 - y;
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn lc_values() {
        let y = array![[1.0, -1.0]];
        assert_eq!(lc_loss(y.view(), y.view(), true).unwrap(), 0.0);
        assert_eq!(lc_loss(array![[-1.0, -1.0]].view(), y.view(), true).unwrap(), 4.0);
        let y = array![[1.0, 0.0]];
        let p = array![[1.0, 0.7]];
        assert_eq!(lc_loss(p.view(), y.view(), true).unwrap(), 0.0);
        assert_abs_diff_eq!(lc_loss(p.view(), y.view(), false).unwrap(), 0.49, epsilon = 1e-12);
    }

    #[test]
    fn tc_values() {
        assert_eq!(tc_loss(array![[1.0, 1.0, -1.0, -1.0]].view()), 0.0);
        assert_eq!(tc_loss(array![[-1.0, 1.0]].view()), 1.0);
        assert_eq!(tc_loss(array![[-1.0, 1.0, 1.0]].view()), 2.0);
        assert_eq!(tc_loss(array![[0.0, 0.0]].view()), 0.25);
    }

    fn brute_tc(row: &[f64]) -> f64 {
        let mut t = 0.0;
        for i in 0..row.len() {
            for j in i + 1..row.len() {
                t += (1.0 - row[i]) * (1.0 + row[j]);
            }
        }
        0.25 * t
    }

    proptest! {
        #[test]
        fn tc_matches_pairwise_sum(row in prop::collection::vec(-1.0f64..1.0, 1..8)) {
            let a = ndarray::Array2::from_shape_vec((1, row.len()), row.clone()).unwrap();
            prop_assert!((tc_loss(a.view()) - brute_tc(&row)).abs() < 1e-12);
            prop_assert!(tc_loss(a.view()) >= 0.0);
        }

        #[test]
        fn masked_lc_ignores_missing_cells(
            p in prop::collection::vec(-1.0f64..1.0, 6),
            q in prop::collection::vec(-1.0f64..1.0, 6),
        ) {
            let y = array![[1.0, 0.0, -1.0], [0.0, 0.0, 1.0]];
            let a = Array2::from_shape_vec((2, 3), p).unwrap();
            let mut b = Array2::from_shape_vec((2, 3), q).unwrap();
            // b agrees with a everywhere the label is known
            for ((i, j), v) in b.indexed_iter_mut() {
                if y[(i, j)] != 0.0 {
                    *v = a[(i, j)];
                }
            }
            prop_assert_eq!(lc_loss(a.view(), y.view(), true).unwrap(), lc_loss(b.view(), y.view(), true).unwrap());
        }
    }
}
