use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{LossKind, LossOutput, LossWeights};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Which tensor a loss differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GradGroup {
    /// Classifier logits.
    Logits,
    /// Normalized projection output.
    Representation,
    /// Paired text/image inputs.
    Alignment,
}

impl LossKind {
    pub fn group(self) -> GradGroup {
        match self {
            LossKind::Ce => GradGroup::Logits,
            LossKind::SupCon | LossKind::Triplet => GradGroup::Representation,
            LossKind::Itc => GradGroup::Alignment,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossTerm {
    pub kind: LossKind,
    pub output: LossOutput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointOutput {
    pub loss: f64,
    pub grads: BTreeMap<GradGroup, Vec<Matrix>>,
}

/// Weighted sum of component losses; gradients are summed within each group.
pub fn joint_loss(parts: &[LossTerm], weights: &LossWeights) -> Result<JointOutput> {
    weights.validate()?;
    let mut loss = 0.0;
    let mut grads: BTreeMap<GradGroup, Vec<Matrix>> = BTreeMap::new();
    for term in parts {
        let w = weights.get(term.kind);
        if w == 0.0 {
            continue;
        }
        loss += w * term.output.loss;
        match grads.get_mut(&term.kind.group()) {
            Some(acc) => {
                if acc.len() != term.output.grads.len()
                    || acc.iter().zip(&term.output.grads).any(|(a, g)| a.dim() != g.dim())
                {
                    return Err(Error::Shape(format!("{:?} gradient shapes do not match its group", term.kind)));
                }
                for (a, g) in acc.iter_mut().zip(&term.output.grads) {
                    a.scaled_add(w, g);
                }
            }
            None => {
                let scaled = term.output.grads.iter().map(|g| g * w).collect();
                grads.insert(term.kind.group(), scaled);
            }
        }
    }
    Ok(JointOutput { loss, grads })
}
