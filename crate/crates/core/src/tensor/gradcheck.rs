use crate::error::{Error, Result};

use super::DenseMatrix;

/// Compares analytic gradients with central finite differences.
///
/// Returns the maximum over all parameter entries of
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(
    mut loss: F,
    params: &[DenseMatrix],
    analytic: &[DenseMatrix],
    epsilon: f64,
) -> Result<f64>
where
    F: FnMut(&[DenseMatrix]) -> Result<f64>,
{
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if params.len() != analytic.len()
        || params.iter().zip(analytic).any(|(p, g)| p.shape() != g.shape())
    {
        return Err(Error::shape("grad_check", "gradients do not match parameter shapes"));
    }
    let base = loss(params)?;
    if !base.is_finite() {
        return Err(Error::NonFinite("loss at the check point".into()));
    }
    let mut work: Vec<DenseMatrix> = params.to_vec();
    let mut worst = 0.0f64;
    for k in 0..params.len() {
        for idx in 0..params[k].as_slice().len() {
            let orig = params[k].as_slice()[idx];
            work[k].as_mut_slice()[idx] = orig + epsilon;
            let plus = loss(&work)?;
            work[k].as_mut_slice()[idx] = orig - epsilon;
            let minus = loss(&work)?;
            work[k].as_mut_slice()[idx] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("loss near parameter {k}[{idx}]")));
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = (analytic[k].as_slice()[idx] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
