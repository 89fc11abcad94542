//! Seeded fixtures shared by the benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vendorlink::EmbeddingMatrix;

/// `n` Gaussian rows of width `d` with ids `{prefix}{i}`.
pub fn gaussian_embeddings(prefix: &str, n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(StandardNormal));
    EmbeddingMatrix::new((0..n).map(|i| format!("{prefix}{i}")).collect(), data, false)
        .expect("ids and rows are aligned")
}

/// Labels `0..classes` with every class appearing at least twice.
pub fn balanced_labels(n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|i| (i / 2) % classes).collect()
}
