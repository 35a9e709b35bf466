use crate::error::{Result, StageError};

/// Compare an analytic gradient against central finite differences.
///
/// `loss` maps a flat parameter vector to `(value, analytic gradient)`.
/// Returns the largest `|g_fd - g_an| / max(1, |g_fd| + |g_an|)` over all
/// parameters.
pub fn grad_check<F>(loss: F, point: &[f64], eps: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(StageError::validation(format!(
            "finite-difference step {eps} outside [1e-7, 1e-3]"
        )));
    }
    let (value, analytic) = loss(point)?;
    if !value.is_finite() {
        return Err(StageError::Numeric("loss is not finite at the check point".into()));
    }
    if analytic.len() != point.len() {
        return Err(StageError::shape(format!(
            "analytic gradient has {} entries for {} parameters",
            analytic.len(),
            point.len()
        )));
    }
    let mut p = point.to_vec();
    let mut worst = 0.0f64;
    for k in 0..p.len() {
        let orig = p[k];
        p[k] = orig + eps;
        let (up, _) = loss(&p)?;
        p[k] = orig - eps;
        let (down, _) = loss(&p)?;
        p[k] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(StageError::Numeric(format!(
                "loss is not finite when perturbing parameter {k}"
            )));
        }
        let fd = (up - down) / (2.0 * eps);
        let an = analytic[k];
        let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1.0);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(w: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((w.iter().map(|v| v * v).sum(), w.iter().map(|v| 2.0 * v).collect()))
    }

    #[test]
    fn quadratic_is_exact() {
        let err = grad_check(quadratic, &[1.0, 2.0], 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let bad = |w: &[f64]| -> Result<(f64, Vec<f64>)> {
            Ok((w.iter().map(|v| v * v).sum(), w.to_vec()))
        };
        assert!(grad_check(bad, &[1.0, 2.0], 1e-5).unwrap() > 0.1);
    }

    #[test]
    fn step_bounds_are_enforced() {
        assert!(grad_check(quadratic, &[1.0], 1e-2).is_err());
        assert!(grad_check(quadratic, &[1.0], 1e-9).is_err());
    }

    #[test]
    fn non_finite_perturbation_is_a_numeric_error() {
        let log = |w: &[f64]| -> Result<(f64, Vec<f64>)> {
            let v = if w[0] > 0.0 { w[0].ln() } else { f64::NAN };
            Ok((v, vec![1.0 / w[0]]))
        };
        assert!(matches!(grad_check(log, &[1e-8], 1e-6), Err(StageError::Numeric(_))));
    }
}
