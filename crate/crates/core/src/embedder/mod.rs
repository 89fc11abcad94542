//! Embedding matrices: the hashing stand-in text encoder, sidecar file
//! formats for externally computed vectors, and modality fusion.

mod fusion;
mod hash;
mod sidecar;

use std::collections::HashSet;

use ndarray::Axis;

use crate::error::{Error, Result};
use crate::linalg::{norm, normalize_rows, Matrix};

pub use fusion::{fuse, AttentionParams, FusionParams, FusionStrategy, GatedParams};
pub use hash::{hash_embed_text, HashEmbedConfig};
pub use sidecar::{
    load_embeddings, read_binary, read_text, save_binary, save_text, write_binary, write_text, BINARY_MAGIC,
    TEXT_MAGIC,
};

/// Row tolerance for the `normalized` flag.
pub const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub ids: Vec<String>,
    pub data: Matrix,
    pub normalized: bool,
}

impl EmbeddingMatrix {
    /// Checks `|ids| == rows` and id uniqueness. `normalized` is taken as given.
    pub fn new(ids: Vec<String>, data: Matrix, normalized: bool) -> Result<Self> {
        if ids.len() != data.nrows() {
            return Err(Error::Shape(format!("{} ids for {} rows", ids.len(), data.nrows())));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::DuplicateId(dup.clone()));
        }
        Ok(EmbeddingMatrix { ids, data, normalized })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// Indices of all-zero rows.
    pub fn zero_rows(&self) -> Vec<usize> {
        self.data
            .axis_iter(Axis(0))
            .enumerate()
            .filter(|(_, r)| r.iter().all(|&x| x == 0.0))
            .map(|(i, _)| i)
            .collect()
    }

    /// L2-normalize every nonzero row. The flag is set only when no zero row remains.
    pub fn normalize(&mut self) {
        normalize_rows(&mut self.data);
        self.normalized = self.zero_rows().is_empty();
    }

    pub fn normalized(mut self) -> Self {
        self.normalize();
        self
    }

    pub fn rows_are_unit(&self) -> bool {
        self.data.axis_iter(Axis(0)).all(|r| (norm(r) - 1.0).abs() <= UNIT_TOLERANCE)
    }

    /// Rows for `ids`, in that order.
    pub fn select(&self, ids: &[String]) -> Result<EmbeddingMatrix> {
        let pos: std::collections::HashMap<&str, usize> =
            self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let rows = ids
            .iter()
            .map(|id| pos.get(id.as_str()).copied().ok_or_else(|| Error::MissingLabel(id.clone())))
            .collect::<Result<Vec<_>>>()?;
        EmbeddingMatrix::new(ids.to_vec(), self.data.select(Axis(0), &rows), self.normalized)
    }
}
