//! Central-difference gradient checking. The one numerical oracle every
//! analytic backward pass in the crate is validated against.

use super::NnError;

/// Denominator floor for the componentwise relative error.
const DENOM_FLOOR: f64 = 1e-8;

/// Compare `analytic_grad` against central finite differences of
/// `loss_fn` around `params`, returning the max componentwise relative
/// error |a − n| / max(|a|, |n|, 1e-8).
pub fn grad_check<F>(
    mut loss_fn: F,
    params: &[f64],
    analytic_grad: &[f64],
    eps: f64,
) -> Result<f64, NnError>
where
    F: FnMut(&[f64]) -> Result<f64, NnError>,
{
    if params.len() != analytic_grad.len() {
        return Err(NnError::shape(
            "grad_check",
            format!(
                "{} params vs {} gradient entries",
                params.len(),
                analytic_grad.len()
            ),
        ));
    }
    if !eps.is_finite() || eps <= 0.0 {
        return Err(NnError::Config(format!("eps must be positive, got {eps}")));
    }
    let mut scratch = params.to_vec();
    let mut max_rel = 0.0f64;
    for idx in 0..params.len() {
        scratch[idx] = params[idx] + eps;
        let plus = loss_fn(&scratch)?;
        scratch[idx] = params[idx] - eps;
        let minus = loss_fn(&scratch)?;
        scratch[idx] = params[idx];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NnError::Numerical(format!(
                "loss non-finite near parameter {idx}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = analytic_grad[idx];
        let denom = analytic.abs().max(numeric.abs()).max(DENOM_FLOOR);
        max_rel = max_rel.max((analytic - numeric).abs() / denom);
    }
    Ok(max_rel)
}
