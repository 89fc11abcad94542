use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, Array1, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::linalg::{normalize, sigmoid, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionStrategy {
    Mean,
    Concat,
    Attention,
    Gated,
}

impl FusionStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionStrategy::Mean => "mean",
            FusionStrategy::Concat => "concat",
            FusionStrategy::Attention => "attention",
            FusionStrategy::Gated => "gated",
        }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(FusionStrategy::Mean),
            "concat" => Ok(FusionStrategy::Concat),
            "attention" => Ok(FusionStrategy::Attention),
            "gated" => Ok(FusionStrategy::Gated),
            other => Err(Error::Config(format!("unknown fusion strategy `{other}`"))),
        }
    }
}

/// `g = sigmoid(W_g [t; v] + b_g)`, `out = g * (W_t t) + (1 - g) * (W_v v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedParams {
    /// D x 2D
    pub w_gate: Matrix,
    pub b_gate: Array1<f64>,
    /// D x D
    pub w_text: Matrix,
    /// D x D
    pub w_image: Matrix,
}

/// Single-head self-attention over the two tokens `{t, v}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_query: Matrix,
    pub w_key: Matrix,
    pub w_value: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FusionParams {
    Gated(GatedParams),
    Attention(AttentionParams),
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let bound = 1.0 / (cols as f64).sqrt();
    Matrix::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..bound))
}

impl FusionParams {
    /// Seeded initialization for a learned strategy. Value projections start
    /// at the identity so an untrained fusion stays close to averaging.
    pub fn init(strategy: FusionStrategy, dim: usize, seed: u64) -> Option<FusionParams> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match strategy {
            FusionStrategy::Gated => Some(FusionParams::Gated(GatedParams {
                w_gate: uniform(&mut rng, dim, 2 * dim),
                b_gate: Array1::zeros(dim),
                w_text: Matrix::eye(dim),
                w_image: Matrix::eye(dim),
            })),
            FusionStrategy::Attention => Some(FusionParams::Attention(AttentionParams {
                w_query: uniform(&mut rng, dim, dim),
                w_key: uniform(&mut rng, dim, dim),
                w_value: Matrix::eye(dim),
            })),
            FusionStrategy::Mean | FusionStrategy::Concat => None,
        }
    }
}

fn gated_row<'a>(p: &GatedParams, t: ArrayView1<'a, f64>, v: ArrayView1<'a, f64>) -> Array1<f64> {
    let tv = concatenate(Axis(0), &[t, v]).expect("1-d concat");
    let gate = (p.w_gate.dot(&tv) + &p.b_gate).mapv(sigmoid);
    let wt = p.w_text.dot(&t);
    let wv = p.w_image.dot(&v);
    &gate * &wt + &(1.0 - &gate) * &wv
}

fn attention_row<'a>(p: &AttentionParams, t: ArrayView1<'a, f64>, v: ArrayView1<'a, f64>) -> Array1<f64> {
    let tokens = ndarray::stack(Axis(0), &[t, v]).expect("same length");
    let q = tokens.dot(&p.w_query);
    let k = tokens.dot(&p.w_key);
    let vals = tokens.dot(&p.w_value);
    let scale = 1.0 / (tokens.ncols() as f64).sqrt();
    let mut scores = q.dot(&k.t()) * scale;
    for mut row in scores.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    scores.dot(&vals).mean_axis(Axis(0)).expect("two tokens")
}

fn check_square(name: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.dim() != (rows, cols) {
        return Err(Error::Shape(format!("{name} is {:?}, expected {:?}", m.dim(), (rows, cols))));
    }
    Ok(())
}

/// Combine aligned text and image rows; every output row is re-normalized.
pub fn fuse(
    text: &EmbeddingMatrix,
    image: &EmbeddingMatrix,
    strategy: FusionStrategy,
    params: Option<&FusionParams>,
) -> Result<EmbeddingMatrix> {
    if text.len() != image.len() {
        return Err(Error::Shape(format!("{} text rows vs {} image rows", text.len(), image.len())));
    }
    if let Some((row, (l, r))) = text.ids.iter().zip(&image.ids).enumerate().find(|(_, (l, r))| l != r) {
        return Err(Error::Misaligned { row, left: l.clone(), right: r.clone() });
    }
    let (dt, dv) = (text.dim(), image.dim());
    if strategy != FusionStrategy::Concat && dt != dv {
        return Err(Error::Dimension { expected: dt, got: dv });
    }
    let mut data = match strategy {
        FusionStrategy::Mean => (&text.data + &image.data) * 0.5,
        FusionStrategy::Concat => concatenate(Axis(1), &[text.data.view(), image.data.view()])
            .map_err(|e| Error::Shape(e.to_string()))?,
        FusionStrategy::Gated => {
            let Some(FusionParams::Gated(p)) = params else {
                return Err(Error::MissingFusionParams("gated"));
            };
            check_square("w_gate", &p.w_gate, dt, 2 * dt)?;
            check_square("w_text", &p.w_text, dt, dt)?;
            check_square("w_image", &p.w_image, dt, dt)?;
            if p.b_gate.len() != dt {
                return Err(Error::Shape(format!("b_gate has {} entries, expected {dt}", p.b_gate.len())));
            }
            let rows: Vec<Array1<f64>> =
                text.data.rows().into_iter().zip(image.data.rows()).map(|(t, v)| gated_row(p, t, v)).collect();
            stack_rows(&rows, dt)
        }
        FusionStrategy::Attention => {
            let Some(FusionParams::Attention(p)) = params else {
                return Err(Error::MissingFusionParams("attention"));
            };
            for (name, m) in [("w_query", &p.w_query), ("w_key", &p.w_key), ("w_value", &p.w_value)] {
                check_square(name, m, dt, dt)?;
            }
            let rows: Vec<Array1<f64>> = text
                .data
                .rows()
                .into_iter()
                .zip(image.data.rows())
                .map(|(t, v)| attention_row(p, t, v))
                .collect();
            stack_rows(&rows, dt)
        }
    };
    for row in data.rows_mut() {
        normalize(row);
    }
    let mut out = EmbeddingMatrix::new(text.ids.clone(), data, false)?;
    out.normalized = out.zero_rows().is_empty();
    Ok(out)
}

fn stack_rows(rows: &[Array1<f64>], dim: usize) -> Matrix {
    let mut m = Matrix::zeros((rows.len(), dim));
    for (mut dst, src) in m.rows_mut().into_iter().zip(rows) {
        dst.assign(src);
    }
    m
}
