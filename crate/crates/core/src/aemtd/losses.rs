//! Reconstruction, feature-net and adversarial losses.

use ndarray::{Array2, ArrayView2};

use crate::dataset::FunnelDataset;
use crate::error::{Result, StageError};
use crate::nn::DenseNet;
use crate::schema::ColumnKind;

/// Lower bound applied to every logarithm argument.
pub const LOG_FLOOR: f64 = 1e-12;

fn check_shapes(x: &ArrayView2<f64>, xhat: &ArrayView2<f64>, kinds: &[ColumnKind], mask: &ArrayView2<bool>) -> Result<()> {
    if x.dim() != xhat.dim() || x.dim() != mask.dim() {
        return Err(StageError::shape(format!(
            "targets {:?}, predictions {:?} and mask {:?} differ",
            x.dim(),
            xhat.dim(),
            mask.dim()
        )));
    }
    if kinds.len() != x.ncols() {
        return Err(StageError::shape(format!(
            "{} column kinds for {} columns",
            kinds.len(),
            x.ncols()
        )));
    }
    Ok(())
}

/// Sum of the per-cell feature loss over masked cells: squared error on
/// continuous columns, `-x ln x̂` on binary columns (`x̂` is a probability).
/// Unmasked cells are never read.
pub fn masked_feature_loss(
    x: ArrayView2<f64>,
    xhat: ArrayView2<f64>,
    kinds: &[ColumnKind],
    mask: ArrayView2<bool>,
) -> Result<f64> {
    check_shapes(&x, &xhat, kinds, &mask)?;
    let mut total = 0.0;
    for ((i, j), &m) in mask.indexed_iter() {
        if !m {
            continue;
        }
        let (t, p) = (x[(i, j)], xhat[(i, j)]);
        total += match kinds[j] {
            ColumnKind::Continuous => (p - t) * (p - t),
            ColumnKind::Binary => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(StageError::Numeric(format!(
                        "binary prediction {p} at ({i}, {j}) is not a probability"
                    )));
                }
                -t * p.max(LOG_FLOOR).ln()
            }
        };
    }
    Ok(total)
}

/// Gradient of [`masked_feature_loss`] with respect to the decoder head's
/// pre-activation output (`x̂ = sigmoid(z)` on binary columns).
pub(crate) fn masked_feature_grad(
    x: ArrayView2<f64>,
    xhat: ArrayView2<f64>,
    kinds: &[ColumnKind],
    mask: ArrayView2<bool>,
    scale: f64,
) -> Array2<f64> {
    let mut g = Array2::<f64>::zeros(x.raw_dim());
    for ((i, j), &m) in mask.indexed_iter() {
        if !m {
            continue;
        }
        let (t, p) = (x[(i, j)], xhat[(i, j)]);
        g[(i, j)] = scale
            * match kinds[j] {
                ColumnKind::Continuous => 2.0 * (p - t),
                ColumnKind::Binary => {
                    if p < LOG_FLOOR {
                        0.0
                    } else {
                        -t * (1.0 - p)
                    }
                }
            };
    }
    g
}

/// Reconstruction loss over the cells in `mask`.
pub fn rec_loss(
    x: ArrayView2<f64>,
    xhat: ArrayView2<f64>,
    kinds: &[ColumnKind],
    mask: ArrayView2<bool>,
) -> Result<f64> {
    masked_feature_loss(x, xhat, kinds, mask)
}

/// Cells reconstructed when `rows` are presented at stage `stage`: the
/// stage's prefix `0..d^stage`, limited to what each row observed.
pub fn reconstruction_mask(ds: &FunnelDataset, rows: &[usize], stage: usize) -> Array2<bool> {
    let d = ds.schema().total_width();
    let w = ds.schema().width(stage);
    Array2::from_shape_fn((rows.len(), d), |(r, j)| j < w && ds.is_observed(rows[r], j))
}

/// Feature-net targets for `rows` presented at `stage`: columns
/// `d^stage..d^S` that the row actually observed.
pub fn future_mask(ds: &FunnelDataset, rows: &[usize], stage: usize) -> Array2<bool> {
    let d = ds.schema().total_width();
    let w = ds.schema().width(stage);
    Array2::from_shape_fn((rows.len(), d), |(r, j)| j >= w && ds.is_observed(rows[r], j))
}

/// Feature-net loss of `future_output` (one row per entry of `rows`) at
/// `stage`. Zero when no row extends beyond the stage.
pub fn fn_loss(
    ds: &FunnelDataset,
    rows: &[usize],
    stage: usize,
    future_output: ArrayView2<f64>,
) -> Result<f64> {
    if stage > ds.num_stages() {
        return Err(StageError::validation(format!("stage {stage} beyond the schema")));
    }
    let mask = future_mask(ds, rows, stage);
    let targets = ds.features().select(ndarray::Axis(0), rows);
    masked_feature_loss(targets.view(), future_output, ds.schema().column_kinds(), mask.view())
}

/// Discriminator and generator losses.
///
/// The discriminator loss `-mean ln D(prior) - mean ln(1 - D(encoded))` is
/// what the discriminator minimises; the generator loss is the
/// non-saturating `-mean ln D(encoded)`.
pub fn gan_losses(
    prior_samples: ArrayView2<f64>,
    encoded_samples: ArrayView2<f64>,
    discriminator: &DenseNet,
) -> Result<(f64, f64)> {
    if prior_samples.nrows() == 0 || encoded_samples.nrows() == 0 {
        return Err(StageError::validation("adversarial losses need non-empty batches"));
    }
    let dp = discriminator.forward(prior_samples)?;
    let de = discriminator.forward(encoded_samples)?;
    Ok((
        discriminator_loss_from_outputs(dp.view(), de.view()),
        generator_loss_from_outputs(de.view()),
    ))
}

pub(crate) fn discriminator_loss_from_outputs(dp: ArrayView2<f64>, de: ArrayView2<f64>) -> f64 {
    let real = dp.iter().map(|p| p.max(LOG_FLOOR).ln()).sum::<f64>() / dp.len() as f64;
    let fake = de.iter().map(|p| (1.0 - p).max(LOG_FLOOR).ln()).sum::<f64>() / de.len() as f64;
    -(real + fake)
}

pub(crate) fn generator_loss_from_outputs(de: ArrayView2<f64>) -> f64 {
    -de.iter().map(|p| p.max(LOG_FLOOR).ln()).sum::<f64>() / de.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};

    #[test]
    fn identical_continuous_is_zero() {
        let x = array![[0.3, -1.0]];
        let mask = Array2::from_elem((1, 2), true);
        let l = rec_loss(x.view(), x.view(), &[ColumnKind::Continuous; 2], mask.view()).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn unit_squares_sum() {
        let x = array![[0.0, 0.0]];
        let xh = array![[1.0, 1.0]];
        let mask = Array2::from_elem((1, 2), true);
        let l = rec_loss(x.view(), xh.view(), &[ColumnKind::Continuous; 2], mask.view()).unwrap();
        assert_eq!(l, 2.0);
    }

    #[test]
    fn binary_half_is_ln2() {
        let l = rec_loss(
            array![[1.0]].view(),
            array![[0.5]].view(),
            &[ColumnKind::Binary],
            array![[true]].view(),
        )
        .unwrap();
        assert_abs_diff_eq!(l, std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn binary_outside_unit_interval_is_numeric_error() {
        let r = rec_loss(
            array![[1.0]].view(),
            array![[1.5]].view(),
            &[ColumnKind::Binary],
            array![[true]].view(),
        );
        assert!(matches!(r, Err(StageError::Numeric(_))));
    }

    #[test]
    fn masked_cells_are_not_read() {
        let x = array![[1.0, f64::NAN]];
        let xh = array![[1.0, 3.0]];
        let l = rec_loss(
            x.view(),
            xh.view(),
            &[ColumnKind::Continuous; 2],
            array![[true, false]].view(),
        )
        .unwrap();
        assert_eq!(l, 0.0);
    }

    fn constant_discriminator(p: f64) -> DenseNet {
        // zero weights, bias = logit(p), sigmoid output
        DenseNet::from_layers(vec![Layer {
            weights: Array2::zeros((2, 1)),
            bias: Array1::from(vec![(p / (1.0 - p)).ln()]),
            activation: Activation::Sigmoid,
        }])
        .unwrap()
    }

    #[test]
    fn uninformative_discriminator_values() {
        let d = constant_discriminator(0.5);
        let a = array![[0.1, 0.2], [0.3, -0.4]];
        let (dl, gl) = gan_losses(a.view(), a.view(), &d).unwrap();
        assert_abs_diff_eq!(dl, 2.0 * std::f64::consts::LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(gl, std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn perfect_discrimination_tends_to_zero() {
        let dp = array![[1.0 - 1e-13]];
        let de = array![[1e-13]];
        assert!(discriminator_loss_from_outputs(dp.view(), de.view()) < 1e-12);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let d = constant_discriminator(0.5);
        let empty = Array2::<f64>::zeros((0, 2));
        let a = array![[0.0, 0.0]];
        assert!(gan_losses(empty.view(), a.view(), &d).is_err());
    }
}
