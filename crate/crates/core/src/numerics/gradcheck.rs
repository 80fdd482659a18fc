use super::{Gradient, ParamSet};
use crate::error::{Error, Result};

/// Largest `|central difference - analytic| / max(1, |analytic|)` over every
/// entry of every parameter in `analytic`.
///
/// Parameters absent from `analytic` are not perturbed.
pub fn grad_check<F>(f: F, params: &ParamSet, analytic: &Gradient, eps: f64) -> Result<f64>
where
    F: Fn(&ParamSet) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!("grad_check: eps {eps} outside [1e-7, 1e-3]")));
    }
    analytic.check_against(params)?;
    let mut work = params.clone();
    let mut worst = 0.0f64;
    for (name, grad) in analytic.iter() {
        for i in 0..grad.len() {
            let orig = work.get(name)?.data()[i];
            work.get_mut(name)?.data_mut()[i] = orig + eps;
            let plus = f(&work)?;
            work.get_mut(name)?.data_mut()[i] = orig - eps;
            let minus = f(&work)?;
            work.get_mut(name)?.data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "objective at perturbed `{name}`[{i}]; unstable test point"
                )));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[i];
            worst = worst.max((numeric - a).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}
