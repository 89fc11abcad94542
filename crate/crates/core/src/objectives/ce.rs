use ndarray::Axis;

use super::LossOutput;
use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, Matrix};

/// Mean softmax cross-entropy over rows; gradient is w.r.t. the logits.
pub fn ce_loss(logits: &Matrix, labels: &[usize]) -> Result<LossOutput> {
    let (n, classes) = logits.dim();
    if n == 0 || n != labels.len() {
        return Err(Error::Shape(format!("{n} logit rows for {} labels", labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let mut grad = Matrix::zeros((n, classes));
    let mut total = 0.0;
    for ((row, mut g), &label) in logits.axis_iter(Axis(0)).zip(grad.axis_iter_mut(Axis(0))).zip(labels) {
        let lse = log_sum_exp(row.iter().copied());
        total += lse - row[label];
        for (gj, &x) in g.iter_mut().zip(row.iter()) {
            *gj = (x - lse).exp() / n as f64;
        }
        g[label] -= 1.0 / n as f64;
    }
    Ok(LossOutput { loss: total / n as f64, grads: vec![grad] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_logits_give_ln_c() {
        let out = ce_loss(&Matrix::zeros((3, 4)), &[0, 1, 3]).unwrap();
        assert!((out.loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_class_closed_form() {
        // ln(1 + e^-2), evaluated by hand.
        let out = ce_loss(&array![[2.0, 0.0]], &[0]).unwrap();
        assert!((out.loss - 0.126_928_011_042_973).abs() < 1e-12);
    }

    #[test]
    fn saturates() {
        let out = ce_loss(&array![[1e6, 0.0, 0.0]], &[0]).unwrap();
        assert!(out.loss < 1e-9);
        assert!(out.grad().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(
            ce_loss(&Matrix::zeros((1, 2)), &[2]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }
}
