use super::LossOutput;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

fn check_eps(eps: f64) -> Result<()> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("finite-difference step {eps} outside [1e-7, 1e-3]")));
    }
    Ok(())
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Central-difference check of a function over a flat parameter vector.
///
/// `f` returns the loss and its analytic gradient. The result is the max over
/// coordinates of `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check_flat<F>(mut f: F, x: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    check_eps(eps)?;
    let (_, analytic) = f(x)?;
    if analytic.len() != x.len() {
        return Err(Error::Shape(format!("gradient has {} entries for {} parameters", analytic.len(), x.len())));
    }
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for k in 0..x.len() {
        probe[k] = x[k] + eps;
        let (plus, _) = f(&probe)?;
        probe[k] = x[k] - eps;
        let (minus, _) = f(&probe)?;
        probe[k] = x[k];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss at perturbed coordinate {k}")));
        }
        worst = worst.max(rel_err(analytic[k], (plus - minus) / (2.0 * eps)));
    }
    Ok(worst)
}

/// [`grad_check_flat`] over a list of matrix inputs, matched against
/// `LossOutput::grads` in order.
pub fn grad_check<F>(mut loss_fn: F, inputs: &[Matrix], eps: f64) -> Result<f64>
where
    F: FnMut(&[Matrix]) -> Result<LossOutput>,
{
    let shapes: Vec<(usize, usize)> = inputs.iter().map(|m| m.dim()).collect();
    let flat: Vec<f64> = inputs.iter().flat_map(|m| m.iter().copied()).collect();
    let unflatten = |x: &[f64]| -> Vec<Matrix> {
        let mut offset = 0;
        shapes
            .iter()
            .map(|&(r, c)| {
                let m = Matrix::from_shape_vec((r, c), x[offset..offset + r * c].to_vec()).unwrap();
                offset += r * c;
                m
            })
            .collect()
    };
    grad_check_flat(
        |x| {
            let out = loss_fn(&unflatten(x))?;
            if out.grads.len() != shapes.len() || out.grads.iter().zip(&shapes).any(|(g, s)| g.dim() != *s) {
                return Err(Error::Shape("gradient shapes do not match inputs".into()));
            }
            Ok((out.loss, out.grads.iter().flat_map(|g| g.iter().copied()).collect()))
        },
        &flat,
        eps,
    )
}
