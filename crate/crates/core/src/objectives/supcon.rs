use ndarray::Axis;

use super::{Batch, LossOutput};
use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, Matrix};

/// Supervised contrastive loss, positives averaged outside the log.
///
/// For anchor `i` with positives `P(i)` (same label, `j != i`):
/// `l_i = logsumexp_{a != i}(s_ia) - mean_{p in P(i)} s_ip`, `s = z z^T / tau`.
/// Rows are expected to be L2-normalized; the gradient is w.r.t. the rows as given.
pub fn supcon_loss(batch: &Batch, temperature: f64) -> Result<LossOutput> {
    if !(temperature > 0.0) {
        return Err(Error::Temperature(temperature));
    }
    let z = &batch.embeddings;
    let n = batch.len();
    if n < 2 {
        return Err(Error::Shape(format!("contrastive batch needs at least 2 rows, got {n}")));
    }
    let sim = z.dot(&z.t()) / temperature;

    // coef[i][a] = d l_i / d s_ia
    let mut coef = Matrix::zeros((n, n));
    let mut total = 0.0;
    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&j| j != i && batch.labels[j] == batch.labels[i]).collect();
        if positives.is_empty() {
            return Err(Error::NoPositive(batch.labels[i]));
        }
        let row = sim.row(i);
        let lse = log_sum_exp((0..n).filter(|&a| a != i).map(|a| row[a]));
        let pos_mean = positives.iter().map(|&p| row[p]).sum::<f64>() / positives.len() as f64;
        total += lse - pos_mean;
        for a in (0..n).filter(|&a| a != i) {
            coef[[i, a]] = (row[a] - lse).exp();
        }
        for &p in &positives {
            coef[[i, p]] -= 1.0 / positives.len() as f64;
        }
    }
    let sym = &coef + &coef.t();
    let grad = sym.dot(z) / (n as f64 * temperature);
    debug_assert_eq!(grad.len_of(Axis(0)), n);
    Ok(LossOutput { loss: total / n as f64, grads: vec![grad] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn lone_identical_positive_is_zero() {
        let batch = Batch::new(array![[1.0, 0.0], [1.0, 0.0]], vec![3, 3]).unwrap();
        let out = supcon_loss(&batch, 0.1).unwrap();
        assert!(out.loss.abs() < 1e-12);
    }

    #[test]
    fn two_pair_closed_form() {
        let batch = Batch::new(
            array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]],
            vec![0, 0, 1, 1],
        )
        .unwrap();
        let out = supcon_loss(&batch, 0.5).unwrap();
        let expected = (1.0 + 2.0 * (-2f64).exp()).ln();
        assert!((out.loss - expected).abs() < 1e-12);
        assert!((out.loss - 0.2395).abs() < 1e-4);
    }

    #[test]
    fn missing_positive_names_label() {
        let batch = Batch::new(array![[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]], vec![7, 1, 1]).unwrap();
        assert!(matches!(supcon_loss(&batch, 0.1), Err(Error::NoPositive(7))));
    }

    #[test]
    fn rejects_bad_temperature() {
        let batch = Batch::new(array![[1.0, 0.0], [1.0, 0.0]], vec![0, 0]).unwrap();
        assert!(matches!(supcon_loss(&batch, 0.0), Err(Error::Temperature(_))));
        assert!(matches!(supcon_loss(&batch, -1.0), Err(Error::Temperature(_))));
    }
}
