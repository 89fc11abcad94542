//! Training objectives with hand-derived gradients.
//!
//! Every loss returns a [`LossOutput`] holding the scalar loss and one
//! gradient matrix per differentiated input, in argument order.

mod ce;
mod gradcheck;
mod joint;
mod ntxent;
mod supcon;
mod triplet;

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;

pub use ce::ce_loss;
pub use gradcheck::{grad_check, grad_check_flat};
pub use joint::{joint_loss, GradGroup, JointOutput, LossTerm};
pub use ntxent::ntxent_itc_loss;
pub use supcon::supcon_loss;
pub use triplet::{mine_triplets, triplet_batch_loss, triplet_loss, Triplet};

/// In-batch negatives per anchor used by the triplet miner.
pub const IN_BATCH_NEGATIVES: usize = 5;
pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_MARGIN: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grads: Vec<Matrix>,
}

impl LossOutput {
    /// Gradient w.r.t. the first input.
    pub fn grad(&self) -> &Matrix {
        &self.grads[0]
    }
}

/// Embeddings with vendor labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub embeddings: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(embeddings: Matrix, labels: Vec<usize>) -> crate::Result<Self> {
        if embeddings.nrows() != labels.len() {
            return Err(crate::Error::Shape(format!(
                "{} rows but {} labels",
                embeddings.nrows(),
                labels.len()
            )));
        }
        Ok(Batch { embeddings, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub ce: f64,
    pub supcon: f64,
    pub triplet: f64,
    pub itc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { ce: 1.0, supcon: 1.0, triplet: 1.0, itc: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Ce,
    SupCon,
    Triplet,
    Itc,
}

impl LossWeights {
    pub fn get(&self, kind: LossKind) -> f64 {
        match kind {
            LossKind::Ce => self.ce,
            LossKind::SupCon => self.supcon,
            LossKind::Triplet => self.triplet,
            LossKind::Itc => self.itc,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let all = [self.ce, self.supcon, self.triplet, self.itc];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(crate::Error::Config(format!("loss weights must be non-negative: {self:?}")));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(crate::Error::ZeroWeights);
        }
        Ok(())
    }
}
