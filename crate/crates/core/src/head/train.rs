use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax_rows, head_loss, lr_at, AdamW, HeadParams, Objective, TrainConfig};
use crate::error::{Error, Result};
use crate::linalg::{dot, normalize, Matrix};
use crate::metrics::classification_report;

/// Input rows with dense class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub x: Matrix,
    pub labels: Vec<usize>,
}

impl TrainData {
    pub fn new(x: Matrix, labels: Vec<usize>) -> Result<Self> {
        if x.nrows() != labels.len() {
            return Err(Error::Shape(format!("{} rows for {} labels", x.nrows(), labels.len())));
        }
        Ok(TrainData { x, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn rows(&self, idx: &[usize]) -> (Matrix, Vec<usize>) {
        (self.x.select(ndarray::Axis(0), idx), idx.iter().map(|&i| self.labels[i]).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_macro_f1: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned; 0 when none ran.
    pub selected_epoch: usize,
}

impl TrainHistory {
    /// The history with wall-clock fields zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> TrainHistory {
        let mut out = self.clone();
        out.epochs.iter_mut().for_each(|e| e.wall_ms = 0.0);
        out
    }
}

/// One epoch of batches in which every label present appears at least twice,
/// unless it has a single row overall.
///
/// Each label's rows are shuffled and cut into chunks of two (three for an odd
/// remainder); the chunks are shuffled and packed greedily into batches of at
/// most `batch_size` rows.
pub fn batches(labels: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    let mut chunks: Vec<Vec<usize>> = Vec::new();
    for mut rows in by_label.into_values() {
        rows.shuffle(rng);
        let mut start = 0;
        while start < rows.len() {
            let remaining = rows.len() - start;
            let take = if remaining == 3 { 3 } else { remaining.min(2) };
            chunks.push(rows[start..start + take].to_vec());
            start += take;
        }
    }
    chunks.shuffle(rng);
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for chunk in chunks {
        if !current.is_empty() && current.len() + chunk.len() > batch_size {
            out.push(std::mem::take(&mut current));
        }
        current.extend(chunk);
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Serial optimizer state for one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub params: HeadParams,
    config: TrainConfig,
    objective: Objective,
    optimizer: AdamW,
    flat: Vec<f64>,
    step: usize,
    total_steps: usize,
}

impl Trainer {
    pub fn new(params: HeadParams, config: &TrainConfig, objective: Objective, total_steps: usize) -> Result<Self> {
        config.validate(objective)?;
        let optimizer =
            AdamW::new(config.beta1, config.beta2, config.adam_eps, config.weight_decay, params.decay_mask());
        let flat = params.to_flat();
        Ok(Trainer { params, config: config.clone(), objective, optimizer, flat, step: 0, total_steps })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        lr_at(self.config.lr, self.step.max(1), self.config.warmup_steps, self.total_steps)
    }

    /// One AdamW step on `(x, labels)`; returns the loss before the update.
    pub fn step(&mut self, x: &Matrix, labels: &[usize]) -> Result<f64> {
        let (loss, grad) = head_loss(&self.params, x, labels, self.objective, &self.config)?;
        self.step += 1;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("training step {}", self.step)));
        }
        let lr = lr_at(self.config.lr, self.step, self.config.warmup_steps, self.total_steps);
        self.optimizer.step(&mut self.flat, &grad, lr);
        let (d, h, v) = (self.params.input_dim(), self.params.hidden_dim(), self.params.num_classes());
        self.params = HeadParams::from_flat(d, h, v, &self.flat)?;
        Ok(loss)
    }
}

fn check_singletons(batch: &[usize], labels: &[usize], index: usize) -> Result<()> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &i in batch {
        *counts.entry(labels[i]).or_default() += 1;
    }
    match counts.into_iter().find(|&(_, c)| c < 2) {
        Some((label, _)) => Err(Error::SingletonLabel { batch: index, label }),
        None => Ok(()),
    }
}

fn projections(params: &HeadParams, x: &Matrix) -> Matrix {
    let mut u = x.dot(&params.w_proj) + &params.b_proj;
    for row in u.rows_mut() {
        normalize(row);
    }
    u
}

/// Predicted labels for selection: classifier argmax when the objective
/// trains the classifier, nearest training-class centroid otherwise.
fn selection_predictions(params: &HeadParams, train: &TrainData, eval: &TrainData, objective: Objective) -> Vec<usize> {
    if objective.uses_ce() {
        let logits = projections_raw(params, &eval.x).dot(&params.w_cls) + &params.b_cls;
        return argmax_rows(&logits);
    }
    let v = params.num_classes();
    let z_train = projections(params, &train.x);
    let mut centroids = Matrix::zeros((v, z_train.ncols()));
    let mut seen = vec![false; v];
    for (row, &l) in z_train.rows().into_iter().zip(&train.labels) {
        centroids.row_mut(l).scaled_add(1.0, &row);
        seen[l] = true;
    }
    for row in centroids.rows_mut() {
        normalize(row);
    }
    projections(params, &eval.x)
        .rows()
        .into_iter()
        .map(|z| {
            (0..v)
                .filter(|&c| seen[c])
                .map(|c| (c, dot(z, centroids.row(c))))
                .fold((0, f64::NEG_INFINITY), |best, (c, s)| if s > best.1 { (c, s) } else { best })
                .0
        })
        .collect()
}

fn projections_raw(params: &HeadParams, x: &Matrix) -> Matrix {
    x.dot(&params.w_proj) + &params.b_proj
}

/// Train with AdamW under warmup + linear decay, returning the parameters of
/// the epoch with the best validation macro-F1 (earliest on ties).
///
/// `val` defaults to the training data when absent or empty. A `patience` of 0
/// disables early stopping.
pub fn train_head(
    params: HeadParams,
    train: &TrainData,
    val: Option<&TrainData>,
    config: &TrainConfig,
    objective: Objective,
) -> Result<(HeadParams, TrainHistory)> {
    config.validate(objective)?;
    let v = params.num_classes();
    for data in std::iter::once(train).chain(val) {
        if data.x.ncols() != params.input_dim() {
            return Err(Error::Dimension { expected: params.input_dim(), got: data.x.ncols() });
        }
        if let Some(&label) = data.labels.iter().find(|&&l| l >= v) {
            return Err(Error::LabelOutOfRange { label, classes: v });
        }
    }
    if config.max_epochs == 0 || train.is_empty() {
        return Ok((params, TrainHistory::default()));
    }
    let val = val.filter(|v| !v.is_empty()).unwrap_or(train);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let plans: Vec<Vec<Vec<usize>>> =
        (0..config.max_epochs).map(|_| batches(&train.labels, config.batch_size, &mut rng)).collect();
    let total_steps = plans.iter().map(Vec::len).sum();
    let mut trainer = Trainer::new(params.clone(), config, objective, total_steps)?;

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, HeadParams)> = None;
    let mut global_batch = 0usize;
    for (epoch_idx, plan) in plans.iter().enumerate() {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        for batch in plan {
            if objective.is_contrastive() {
                check_singletons(batch, &train.labels, global_batch)?;
            }
            let (x, labels) = train.rows(batch);
            loss_sum += trainer.step(&x, &labels)?;
            global_batch += 1;
        }
        let epoch = epoch_idx + 1;
        let preds = selection_predictions(&trainer.params, train, val, objective);
        let macro_f1 = classification_report(&preds, &val.labels)?.macro_f1;
        let val_loss = head_loss(&trainer.params, &val.x, &val.labels, objective, config).ok().map(|(l, _)| l);
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / plan.len() as f64,
            val_loss,
            val_macro_f1: macro_f1,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        if best.as_ref().is_none_or(|(f1, _)| macro_f1 > *f1) {
            best = Some((macro_f1, trainer.params.clone()));
            history.selected_epoch = epoch;
        }
        if config.patience > 0 && epoch - history.selected_epoch >= config.patience {
            break;
        }
    }
    let (_, params) = best.expect("at least one epoch ran");
    Ok((params, history))
}
