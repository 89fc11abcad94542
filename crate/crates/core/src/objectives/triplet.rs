use ndarray::{Array1, Axis};

use super::{Batch, LossOutput};
use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};

/// Row indices of one mined triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Mean hinge `max(0, |a-p| - |a-n| + margin)` over aligned rows.
///
/// Grads are `[d anchors, d positives, d negatives]`. At the hinge boundary
/// and at zero distances the subgradient 0 is used.
pub fn triplet_loss(anchors: &Matrix, positives: &Matrix, negatives: &Matrix, margin: f64) -> Result<LossOutput> {
    if anchors.dim() != positives.dim() || anchors.dim() != negatives.dim() {
        return Err(Error::Shape(format!(
            "triplet inputs differ: {:?}, {:?}, {:?}",
            anchors.dim(),
            positives.dim(),
            negatives.dim()
        )));
    }
    let t = anchors.nrows();
    let mut ga = Matrix::zeros(anchors.dim());
    let mut gp = Matrix::zeros(anchors.dim());
    let mut gn = Matrix::zeros(anchors.dim());
    if t == 0 {
        return Ok(LossOutput { loss: 0.0, grads: vec![ga, gp, gn] });
    }
    let mut total = 0.0;
    for i in 0..t {
        let ap: Array1<f64> = &anchors.row(i) - &positives.row(i);
        let an: Array1<f64> = &anchors.row(i) - &negatives.row(i);
        let (d_ap, d_an) = (norm(ap.view()), norm(an.view()));
        let hinge = d_ap - d_an + margin;
        if hinge <= 0.0 {
            continue;
        }
        total += hinge;
        let scale = 1.0 / t as f64;
        if d_ap > 0.0 {
            let u = &ap * (scale / d_ap);
            ga.row_mut(i).scaled_add(1.0, &u);
            gp.row_mut(i).scaled_add(-1.0, &u);
        }
        if d_an > 0.0 {
            let u = &an * (scale / d_an);
            ga.row_mut(i).scaled_add(-1.0, &u);
            gn.row_mut(i).scaled_add(1.0, &u);
        }
    }
    Ok(LossOutput { loss: total / t as f64, grads: vec![ga, gp, gn] })
}

fn sq_dist(z: &Matrix, i: usize, j: usize) -> f64 {
    z.row(i).iter().zip(z.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Every (anchor, positive) pair combined with the anchor's `negatives`
/// closest different-label rows (ties broken by row index).
pub fn mine_triplets(batch: &Batch, negatives: usize) -> Vec<Triplet> {
    let z = &batch.embeddings;
    let n = batch.len();
    let mut out = Vec::new();
    for a in 0..n {
        let mut negs: Vec<(f64, usize)> = (0..n)
            .filter(|&j| batch.labels[j] != batch.labels[a])
            .map(|j| (sq_dist(z, a, j), j))
            .collect();
        negs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        negs.truncate(negatives);
        for p in (0..n).filter(|&p| p != a && batch.labels[p] == batch.labels[a]) {
            out.extend(negs.iter().map(|&(_, neg)| Triplet { anchor: a, positive: p, negative: neg }));
        }
    }
    out
}

/// Triplet loss over in-batch mined triplets; gradient is w.r.t. the batch rows.
pub fn triplet_batch_loss(batch: &Batch, margin: f64, negatives: usize) -> Result<LossOutput> {
    let triplets = mine_triplets(batch, negatives);
    let d = batch.embeddings.ncols();
    let gather = |pick: fn(&Triplet) -> usize| -> Matrix {
        let rows: Vec<usize> = triplets.iter().map(pick).collect();
        if rows.is_empty() {
            Matrix::zeros((0, d))
        } else {
            batch.embeddings.select(Axis(0), &rows)
        }
    };
    let (a, p, n) = (gather(|t| t.anchor), gather(|t| t.positive), gather(|t| t.negative));
    let out = triplet_loss(&a, &p, &n, margin)?;
    let mut grad = Matrix::zeros(batch.embeddings.dim());
    for (k, t) in triplets.iter().enumerate() {
        grad.row_mut(t.anchor).scaled_add(1.0, &out.grads[0].row(k));
        grad.row_mut(t.positive).scaled_add(1.0, &out.grads[1].row(k));
        grad.row_mut(t.negative).scaled_add(1.0, &out.grads[2].row(k));
    }
    Ok(LossOutput { loss: out.loss, grads: vec![grad] })
}
