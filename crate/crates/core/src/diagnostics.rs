//! Seeded finite-difference checks of every loss and of the composed head
//! objective.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::head::{head_loss, init_head, HeadParams, Objective, TrainConfig};
use crate::linalg::Matrix;
use crate::objectives::{
    ce_loss, grad_check, grad_check_flat, ntxent_itc_loss, supcon_loss, triplet_batch_loss, Batch,
    DEFAULT_MARGIN, DEFAULT_TEMPERATURE, IN_BATCH_NEGATIVES,
};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_INSTANCES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckRow {
    pub loss: String,
    pub instances: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_shape_simple_fn((rows, cols), || scale * rng.sample::<f64, _>(StandardNormal))
}

/// Labels in pairs so every row has a positive; pair count varies by instance.
fn paired_labels(rng: &mut ChaCha8Rng, n_pairs: usize) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..2 * n_pairs).map(|i| i / 2).collect();
    labels.shuffle(rng);
    labels
}

fn head_instance(rng: &mut ChaCha8Rng) -> Result<(HeadParams, Matrix, Vec<usize>)> {
    let (d, h) = (rng.gen_range(3..7), rng.gen_range(3..6));
    let n_pairs = rng.gen_range(3..6);
    let labels = paired_labels(rng, n_pairs);
    let params = init_head(d, h, n_pairs, rng.gen())?;
    Ok((params, gaussian(rng, labels.len(), d, 1.0), labels))
}

/// Runs `instances` seeded random cases per loss and reports the worst
/// relative error for each.
pub fn gradient_suite(instances: usize, eps: f64, seed: u64) -> Result<Vec<GradCheckRow>> {
    type Case = Box<dyn Fn(&mut ChaCha8Rng, f64) -> Result<f64>>;
    let cases: Vec<(&str, Case)> = vec![
        (
            "ce",
            Box::new(|rng, eps| {
                let (n, c) = (rng.gen_range(2..10), rng.gen_range(2..8));
                let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
                grad_check(|m| ce_loss(&m[0], &labels), &[gaussian(rng, n, c, 2.0)], eps)
            }),
        ),
        (
            "supcon",
            Box::new(|rng, eps| {
                let (pairs, d) = (rng.gen_range(2..6), rng.gen_range(3..8));
                let labels = paired_labels(rng, pairs);
                let z = gaussian(rng, labels.len(), d, 0.5);
                grad_check(
                    |m| supcon_loss(&Batch::new(m[0].clone(), labels.clone())?, DEFAULT_TEMPERATURE),
                    &[z],
                    eps,
                )
            }),
        ),
        (
            "triplet",
            Box::new(|rng, eps| {
                let (pairs, d) = (rng.gen_range(3..6), rng.gen_range(3..8));
                let labels = paired_labels(rng, pairs);
                let z = gaussian(rng, labels.len(), d, 0.5);
                grad_check(
                    |m| triplet_batch_loss(&Batch::new(m[0].clone(), labels.clone())?, DEFAULT_MARGIN, IN_BATCH_NEGATIVES),
                    &[z],
                    eps,
                )
            }),
        ),
        (
            "ntxent",
            Box::new(|rng, eps| {
                let (n, d) = (rng.gen_range(2..8), rng.gen_range(3..8));
                let (t, v) = (gaussian(rng, n, d, 0.5), gaussian(rng, n, d, 0.5));
                grad_check(|m| ntxent_itc_loss(&m[0], &m[1], DEFAULT_TEMPERATURE), &[t, v], eps)
            }),
        ),
        (
            "head_ce_supcon",
            Box::new(|rng, eps| {
                let (p, x, labels) = head_instance(rng)?;
                let (d, h, v) = p.dims();
                let cfg = TrainConfig::default();
                grad_check_flat(
                    |flat| head_loss(&HeadParams::from_flat(d, h, v, flat)?, &x, &labels, Objective::CeSupcon, &cfg),
                    &p.to_flat(),
                    eps,
                )
            }),
        ),
        (
            "head_ce_triplet",
            Box::new(|rng, eps| {
                let (p, x, labels) = head_instance(rng)?;
                let (d, h, v) = p.dims();
                let cfg = TrainConfig::default();
                grad_check_flat(
                    |flat| head_loss(&HeadParams::from_flat(d, h, v, flat)?, &x, &labels, Objective::CeTriplet, &cfg),
                    &p.to_flat(),
                    eps,
                )
            }),
        ),
    ];
    cases
        .into_iter()
        .enumerate()
        .map(|(k, (name, case))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
            let mut worst = 0.0f64;
            for _ in 0..instances {
                worst = worst.max(case(&mut rng, eps)?);
            }
            Ok(GradCheckRow {
                loss: name.to_string(),
                instances,
                max_rel_error: worst,
                passed: worst <= GRADCHECK_TOLERANCE,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let rows = gradient_suite(3, GRADCHECK_EPS, 9).unwrap();
        assert_eq!(rows.len(), 6);
        for r in rows {
            assert!(r.passed, "{r:?}");
        }
    }
}
