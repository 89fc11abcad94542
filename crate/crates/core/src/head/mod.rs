//! Trainable projection + linear classifier over fixed input embeddings.
//!
//! `u = x W_proj + b_proj` is the representation; logits are
//! `u W_cls + b_cls`. Cross-entropy acts on the logits, SupCon and Triplet on
//! the L2-normalized `u`, which is also what [`encode`] returns for retrieval.

mod checkpoint;
mod optimizer;
mod train;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedder::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::linalg::{dot, normalize, Matrix};
use crate::objectives::{
    ce_loss, joint_loss, supcon_loss, triplet_batch_loss, Batch, GradGroup, LossKind, LossTerm, LossWeights,
};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use optimizer::{lr_at, AdamW};
pub use train::{batches, train_head, EpochRecord, TrainData, TrainHistory, Trainer};

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// D x H
    pub w_proj: Matrix,
    pub b_proj: Array1<f64>,
    /// H x V
    pub w_cls: Matrix,
    pub b_cls: Array1<f64>,
}

impl HeadParams {
    pub fn input_dim(&self) -> usize {
        self.w_proj.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_proj.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.w_cls.ncols()
    }

    /// `(input_dim, hidden_dim, num_classes)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.input_dim(), self.hidden_dim(), self.num_classes())
    }

    pub fn num_params(&self) -> usize {
        self.w_proj.len() + self.b_proj.len() + self.w_cls.len() + self.b_cls.len()
    }

    /// Parameters in the order `w_proj, b_proj, w_cls, b_cls`, row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend(self.w_proj.iter());
        out.extend(self.b_proj.iter());
        out.extend(self.w_cls.iter());
        out.extend(self.b_cls.iter());
        out
    }

    pub fn from_flat(d: usize, h: usize, v: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != d * h + h + h * v + v {
            return Err(Error::Shape(format!("{} values for head ({d}, {h}, {v})", flat.len())));
        }
        let (wp, rest) = flat.split_at(d * h);
        let (bp, rest) = rest.split_at(h);
        let (wc, bc) = rest.split_at(h * v);
        Ok(HeadParams {
            w_proj: Matrix::from_shape_vec((d, h), wp.to_vec()).unwrap(),
            b_proj: Array1::from(bp.to_vec()),
            w_cls: Matrix::from_shape_vec((h, v), wc.to_vec()).unwrap(),
            b_cls: Array1::from(bc.to_vec()),
        })
    }

    /// Mask over [`Self::to_flat`]: true for weights, false for biases.
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend(std::iter::repeat(true).take(self.w_proj.len()));
        out.extend(std::iter::repeat(false).take(self.b_proj.len()));
        out.extend(std::iter::repeat(true).take(self.w_cls.len()));
        out.extend(std::iter::repeat(false).take(self.b_cls.len()));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|x| x.is_finite())
    }
}

/// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
pub fn init_head(d: usize, h: usize, v: usize, seed: u64) -> Result<HeadParams> {
    if d == 0 || h == 0 || v == 0 {
        return Err(Error::Config(format!("head dimensions must be positive, got ({d}, {h}, {v})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |rows: usize, cols: usize| {
        let bound = 1.0 / (rows as f64).sqrt();
        Matrix::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..bound))
    };
    Ok(HeadParams {
        w_proj: uniform(d, h),
        b_proj: Array1::zeros(h),
        w_cls: uniform(h, v),
        b_cls: Array1::zeros(v),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Ce,
    CeSupcon,
    CeTriplet,
    Supcon,
    Triplet,
}

impl Objective {
    pub fn uses_ce(self) -> bool {
        matches!(self, Objective::Ce | Objective::CeSupcon | Objective::CeTriplet)
    }

    pub fn uses_supcon(self) -> bool {
        matches!(self, Objective::CeSupcon | Objective::Supcon)
    }

    pub fn uses_triplet(self) -> bool {
        matches!(self, Objective::CeTriplet | Objective::Triplet)
    }

    pub fn is_contrastive(self) -> bool {
        self.uses_supcon() || self.uses_triplet()
    }

    /// Configured weights with the terms this objective does not use zeroed.
    pub fn weights(self, base: &LossWeights) -> LossWeights {
        LossWeights {
            ce: if self.uses_ce() { base.ce } else { 0.0 },
            supcon: if self.uses_supcon() { base.supcon } else { 0.0 },
            triplet: if self.uses_triplet() { base.triplet } else { 0.0 },
            itc: 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Ce => "ce",
            Objective::CeSupcon => "ce_supcon",
            Objective::CeTriplet => "ce_triplet",
            Objective::Supcon => "supcon",
            Objective::Triplet => "triplet",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['+', '-'], "_").as_str() {
            "ce" => Ok(Objective::Ce),
            "ce_supcon" => Ok(Objective::CeSupcon),
            "ce_triplet" => Ok(Objective::CeTriplet),
            "supcon" => Ok(Objective::Supcon),
            "triplet" => Ok(Objective::Triplet),
            other => Err(Error::Config(format!("unknown objective `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub triplet_margin: f64,
    pub in_batch_negatives: usize,
    pub loss_weights: LossWeights,
    pub hidden_dim: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            warmup_steps: 100,
            batch_size: 32,
            temperature: 0.1,
            triplet_margin: 1.0,
            in_batch_negatives: 5,
            loss_weights: LossWeights::default(),
            hidden_dim: 256,
            max_epochs: 50,
            patience: 10,
            seed: 1111,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, objective: Objective) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("temperature", self.temperature),
            ("triplet_margin", self.triplet_margin),
            ("adam_eps", self.adam_eps),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("{name} must be positive, got {v}")));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.batch_size == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("batch_size and hidden_dim must be positive".into()));
        }
        if objective.is_contrastive() && self.batch_size < 2 {
            return Err(Error::Config("contrastive objectives need batch_size >= 2".into()));
        }
        objective.weights(&self.loss_weights).validate()
    }
}

/// Loss of the composed head objective and its gradient w.r.t. the head
/// parameters, laid out like [`HeadParams::to_flat`].
pub fn head_loss(
    params: &HeadParams,
    x: &Matrix,
    labels: &[usize],
    objective: Objective,
    config: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    if x.ncols() != params.input_dim() {
        return Err(Error::Dimension { expected: params.input_dim(), got: x.ncols() });
    }
    let weights = objective.weights(&config.loss_weights);
    let u = x.dot(&params.w_proj) + &params.b_proj;

    let mut terms = Vec::new();
    if objective.uses_ce() {
        let logits = u.dot(&params.w_cls) + &params.b_cls;
        terms.push(LossTerm { kind: LossKind::Ce, output: ce_loss(&logits, labels)? });
    }
    let mut z = u.clone();
    let norms: Vec<f64> = z.rows_mut().into_iter().map(normalize).collect();
    if objective.is_contrastive() {
        let batch = Batch::new(z.clone(), labels.to_vec())?;
        if objective.uses_supcon() {
            terms.push(LossTerm { kind: LossKind::SupCon, output: supcon_loss(&batch, config.temperature)? });
        }
        if objective.uses_triplet() {
            let out = triplet_batch_loss(&batch, config.triplet_margin, config.in_batch_negatives)?;
            terms.push(LossTerm { kind: LossKind::Triplet, output: out });
        }
    }
    let joint = joint_loss(&terms, &weights)?;

    let mut du = Matrix::zeros(u.dim());
    let mut d_wcls = Matrix::zeros(params.w_cls.dim());
    let mut d_bcls = Array1::zeros(params.num_classes());
    if let Some(g) = joint.grads.get(&GradGroup::Logits) {
        let d_logits = &g[0];
        du += &d_logits.dot(&params.w_cls.t());
        d_wcls = u.t().dot(d_logits);
        d_bcls = d_logits.sum_axis(Axis(0));
    }
    if let Some(g) = joint.grads.get(&GradGroup::Representation) {
        // d normalize(u) = (I - z z^T) / |u|
        let dz = &g[0];
        for (i, &r) in norms.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            let (zi, dzi) = (z.row(i), dz.row(i));
            let proj = dot(zi, dzi);
            let mut dui = du.row_mut(i);
            dui.scaled_add(1.0 / r, &dzi);
            dui.scaled_add(-proj / r, &zi);
        }
    }
    let d_wproj = x.t().dot(&du);
    let d_bproj = du.sum_axis(Axis(0));

    let mut grad = Vec::with_capacity(params.num_params());
    grad.extend(d_wproj.iter());
    grad.extend(d_bproj.iter());
    grad.extend(d_wcls.iter());
    grad.extend(d_bcls.iter());
    Ok((joint.loss, grad))
}

fn check_dim(params: &HeadParams, m: &EmbeddingMatrix) -> Result<()> {
    if m.dim() != params.input_dim() {
        return Err(Error::Dimension { expected: params.input_dim(), got: m.dim() });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub logits: Matrix,
    pub labels: Vec<usize>,
}

/// Argmax with ties resolved to the smallest class index.
pub fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

pub fn predict(params: &HeadParams, embeddings: &EmbeddingMatrix) -> Result<Predictions> {
    check_dim(params, embeddings)?;
    let u = embeddings.data.dot(&params.w_proj) + &params.b_proj;
    let logits = u.dot(&params.w_cls) + &params.b_cls;
    let labels = argmax_rows(&logits);
    Ok(Predictions { logits, labels })
}

/// L2-normalized projection output, keyed by the input ids.
pub fn encode(params: &HeadParams, embeddings: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    check_dim(params, embeddings)?;
    let u = embeddings.data.dot(&params.w_proj) + &params.b_proj;
    let mut out = EmbeddingMatrix::new(embeddings.ids.clone(), u, false)?;
    out.normalize();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::grad_check_flat;

    fn toy(n: usize, d: usize, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_shape_simple_fn((n, d), || rng.gen_range(-1.0..1.0));
        let labels = (0..n).map(|i| i % 3).collect();
        (x, labels)
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_head(5, 4, 3, 1).unwrap();
        assert_eq!(a, init_head(5, 4, 3, 1).unwrap());
        assert!(a.b_proj.iter().chain(a.b_cls.iter()).all(|&b| b == 0.0));
        assert_ne!(a.w_proj, init_head(5, 4, 3, 2).unwrap().w_proj);
    }

    #[test]
    fn flat_roundtrip() {
        let p = init_head(3, 4, 2, 9).unwrap();
        assert_eq!(HeadParams::from_flat(3, 4, 2, &p.to_flat()).unwrap(), p);
    }

    #[test]
    fn zero_head_predicts_class_zero() {
        let mut p = init_head(2, 2, 3, 0).unwrap();
        p.w_proj.fill(0.0);
        p.w_cls.fill(0.0);
        let x = EmbeddingMatrix::new(vec!["a".into(), "b".into()], Matrix::ones((2, 2)), false).unwrap();
        let pred = predict(&p, &x).unwrap();
        assert!(pred.logits.iter().all(|&l| l == 0.0));
        assert_eq!(pred.labels, vec![0, 0]);
    }

    #[test]
    fn argmax_shift_invariant() {
        let logits = Matrix::from_shape_fn((4, 5), |(i, j)| ((i * 5 + j) as f64 * 1.7).cos());
        assert_eq!(argmax_rows(&logits), argmax_rows(&(&logits + 42.0)));
    }

    #[test]
    fn identity_encode_is_passthrough() {
        let mut p = init_head(3, 3, 2, 0).unwrap();
        p.w_proj = Matrix::eye(3);
        let x = EmbeddingMatrix::new(vec!["a".into()], ndarray::array![[0.6, 0.0, 0.8]], true).unwrap();
        let out = encode(&p, &x).unwrap();
        assert!((&out.data - &x.data).iter().all(|v| v.abs() < 1e-15));
        assert!(out.rows_are_unit());
    }

    #[test]
    fn dimension_mismatch() {
        let p = init_head(3, 3, 2, 0).unwrap();
        let x = EmbeddingMatrix::new(vec!["a".into()], Matrix::ones((1, 4)), false).unwrap();
        assert!(matches!(predict(&p, &x), Err(Error::Dimension { expected: 3, got: 4 })));
        assert!(matches!(encode(&p, &x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn composed_gradient_checks() {
        let (x, labels) = toy(9, 4, 3);
        let p = init_head(4, 5, 3, 4).unwrap();
        let cfg = TrainConfig { temperature: 0.5, ..Default::default() };
        for objective in [Objective::Ce, Objective::CeSupcon, Objective::Supcon, Objective::CeTriplet] {
            let err = grad_check_flat(
                |flat| head_loss(&HeadParams::from_flat(4, 5, 3, flat)?, &x, &labels, objective, &cfg),
                &p.to_flat(),
                1e-5,
            )
            .unwrap();
            assert!(err <= 1e-4, "{objective}: {err}");
        }
    }
}
