use serde::{Deserialize, Serialize};
use twox_hash::XxHash64;

use super::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HashEmbedConfig {
    pub dim: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub seed: u64,
    pub signed: bool,
}

impl Default for HashEmbedConfig {
    fn default() -> Self {
        HashEmbedConfig { dim: 256, ngram_min: 3, ngram_max: 5, seed: 0, signed: true }
    }
}

impl HashEmbedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ngram_min < 1 || self.ngram_min > self.ngram_max {
            return Err(Error::Config(format!(
                "n-gram bounds must satisfy 1 <= min <= max, got {}..{}",
                self.ngram_min, self.ngram_max
            )));
        }
        if self.dim < 8 {
            return Err(Error::Config(format!("hash dimension must be >= 8, got {}", self.dim)));
        }
        Ok(())
    }
}

fn accumulate(gram: &str, config: &HashEmbedConfig, row: &mut [f64]) {
    let h = XxHash64::oneshot(config.seed, gram.as_bytes());
    let bucket = (h % config.dim as u64) as usize;
    let sign = if config.signed && (h >> 63) == 1 { -1.0 } else { 1.0 };
    row[bucket] += sign;
}

/// Signed feature hashing of lowercase character n-grams, L2-normalized.
///
/// Texts shorter than `ngram_min` characters hash as a single gram. Empty
/// texts yield zero rows; the matrix is flagged normalized only when there
/// are none.
pub fn hash_embed_text<S: AsRef<str>>(ids: Vec<String>, texts: &[S], config: &HashEmbedConfig) -> Result<EmbeddingMatrix> {
    config.validate()?;
    if ids.len() != texts.len() {
        return Err(Error::Shape(format!("{} ids for {} texts", ids.len(), texts.len())));
    }
    let mut data = Matrix::zeros((texts.len(), config.dim));
    for (text, mut row) in texts.iter().zip(data.rows_mut()) {
        let lower = text.as_ref().to_lowercase();
        let chars: Vec<(usize, char)> = lower.char_indices().collect();
        let row = row.as_slice_mut().expect("rows of a standard-layout matrix are contiguous");
        if chars.is_empty() {
            continue;
        }
        if chars.len() < config.ngram_min {
            accumulate(&lower, config, row);
            continue;
        }
        for n in config.ngram_min..=config.ngram_max.min(chars.len()) {
            for start in 0..=chars.len() - n {
                let begin = chars[start].0;
                let end = chars.get(start + n).map_or(lower.len(), |c| c.0);
                accumulate(&lower[begin..end], config, row);
            }
        }
    }
    let mut out = EmbeddingMatrix::new(ids, data, false)?;
    out.normalize();
    Ok(out)
}
