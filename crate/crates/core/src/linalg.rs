//! Small dense helpers over `ndarray` matrices.

use ndarray::{Array2, ArrayView1, ArrayViewMut1, Axis};

pub type Matrix = Array2<f64>;

pub fn dot(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn norm(v: ArrayView1<'_, f64>) -> f64 {
    dot(v, v).sqrt()
}

/// Scale `v` to unit length. Returns the original norm; zero rows are left as is.
pub fn normalize(mut v: ArrayViewMut1<'_, f64>) -> f64 {
    let n = norm(v.view());
    if n > 0.0 {
        v.mapv_inplace(|x| x / n);
    }
    n
}

/// Normalize every row in place and return the original row norms.
pub fn normalize_rows(m: &mut Matrix) -> Vec<f64> {
    m.axis_iter_mut(Axis(0)).map(normalize).collect()
}

pub fn normalized_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    normalize_rows(&mut out);
    out
}

pub fn rows_are_unit(m: &Matrix, tol: f64) -> bool {
    m.axis_iter(Axis(0)).all(|r| (norm(r) - 1.0).abs() <= tol)
}

/// Numerically stable `log(sum(exp(xs)))`.
pub fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
