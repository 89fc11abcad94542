use super::LossOutput;
use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, Matrix};

/// Symmetric NT-Xent (image-text contrastive) loss over paired rows.
///
/// Row `i` of `text` and `image` form the positive pair; every other row in
/// the batch is a negative. Returns `[d text, d image]`.
pub fn ntxent_itc_loss(text: &Matrix, image: &Matrix, temperature: f64) -> Result<LossOutput> {
    if !(temperature > 0.0) {
        return Err(Error::Temperature(temperature));
    }
    if text.dim() != image.dim() {
        return Err(Error::Shape(format!("text {:?} vs image {:?}", text.dim(), image.dim())));
    }
    let n = text.nrows();
    if n < 2 {
        return Err(Error::Shape(format!("NT-Xent needs at least 2 pairs, got {n}")));
    }
    let logits = text.dot(&image.t()) / temperature;
    let mut coef = Matrix::zeros((n, n));
    let mut total = 0.0;
    for i in 0..n {
        let row = logits.row(i);
        let lse = log_sum_exp(row.iter().copied());
        total += lse - row[i];
        for j in 0..n {
            coef[[i, j]] += (row[j] - lse).exp();
        }
        coef[[i, i]] -= 1.0;
    }
    for j in 0..n {
        let col = logits.column(j);
        let lse = log_sum_exp(col.iter().copied());
        total += lse - col[j];
        for i in 0..n {
            coef[[i, j]] += (col[i] - lse).exp();
        }
        coef[[j, j]] -= 1.0;
    }
    let scale = 1.0 / (2.0 * n as f64 * temperature);
    let d_text = coef.dot(image) * scale;
    let d_image = coef.t().dot(text) * scale;
    Ok(LossOutput { loss: total / (2.0 * n as f64), grads: vec![d_text, d_image] })
}
