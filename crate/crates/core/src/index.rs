//! Exact cosine top-k search over a flat matrix of unit rows.
//!
//! Scores are computed block-wise as `queries_block * docs^T` so the inner
//! loop runs through an optimized GEMM; the block layout is identical in
//! serial and parallel execution, which keeps their outputs bit-identical.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::path::Path;

use ndarray::{s, ArrayView1, Axis};
use rayon::prelude::*;

use crate::embedder::{self, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::io;
use crate::linalg::{norm, normalize, Matrix};

/// Queries scored per GEMM call.
const QUERY_BLOCK: usize = 64;
/// Below this cutoff top-k uses an insertion buffer instead of selection.
const SMALL_K: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Row of the document in the index.
    pub doc: usize,
    pub score: f64,
}

/// Per-query cutoff.
#[derive(Debug, Clone, PartialEq)]
pub enum Cutoff {
    Uniform(usize),
    PerQuery(Vec<usize>),
}

impl From<usize> for Cutoff {
    fn from(k: usize) -> Self {
        Cutoff::Uniform(k)
    }
}

impl Cutoff {
    fn get(&self, q: usize) -> usize {
        match self {
            Cutoff::Uniform(k) => *k,
            Cutoff::PerQuery(ks) => ks[q],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    doc_ids: Vec<String>,
    matrix: Matrix,
    /// `rank[i]` is the position of `doc_ids[i]` in ascending id order.
    rank: Vec<usize>,
    checksum: String,
}

impl FlatIndex {
    /// Build from document embeddings, normalizing rows.
    pub fn build(docs: &EmbeddingMatrix) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::Shape("cannot index zero documents".into()));
        }
        let mut seen = HashSet::with_capacity(docs.len());
        if let Some(dup) = docs.ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::DuplicateId(dup.clone()));
        }
        let mut matrix = docs.data.as_standard_layout().into_owned();
        for (id, row) in docs.ids.iter().zip(matrix.rows_mut()) {
            if normalize(row) == 0.0 {
                return Err(Error::ZeroRow(id.clone()));
            }
        }
        let mut order: Vec<usize> = (0..docs.len()).collect();
        order.sort_by(|&a, &b| docs.ids[a].cmp(&docs.ids[b]));
        let mut rank = vec![0; docs.len()];
        for (pos, &i) in order.iter().enumerate() {
            rank[i] = pos;
        }
        let checksum = payload_checksum(&matrix);
        Ok(FlatIndex { doc_ids: docs.ids.clone(), matrix, rank, checksum })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_id(&self, doc: usize) -> &str {
        &self.doc_ids[doc]
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    /// Hex SHA-256 over the little-endian row payload.
    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn verify(&self) -> bool {
        payload_checksum(&self.matrix) == self.checksum
    }

    pub fn to_embeddings(&self) -> EmbeddingMatrix {
        EmbeddingMatrix { ids: self.doc_ids.clone(), data: self.matrix.clone(), normalized: true }
    }

    /// Persist as an `EMBB v1` sidecar (the id table carries the doc ids).
    pub fn save(&self, path: &Path) -> Result<()> {
        embedder::save_binary(&self.to_embeddings(), path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m = embedder::read_binary(&io::read_bytes(path)?, None)?;
        if !m.normalized || !m.rows_are_unit() {
            return Err(Error::Format("index file rows are not unit-norm".into()));
        }
        FlatIndex::build(&m)
    }

    /// `a` ranks before `b`: higher score, then smaller doc id.
    fn better(&self, a: &Hit, b: &Hit) -> bool {
        match a.score.total_cmp(&b.score) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => self.rank[a.doc] < self.rank[b.doc],
        }
    }

    fn order(&self, a: &Hit, b: &Hit) -> Ordering {
        b.score.total_cmp(&a.score).then(self.rank[a.doc].cmp(&self.rank[b.doc]))
    }

    fn top_k(&self, scores: ArrayView1<'_, f64>, k: usize) -> Vec<Hit> {
        if k == 0 {
            return Vec::new();
        }
        if k <= SMALL_K {
            let mut top: Vec<Hit> = Vec::with_capacity(k + 1);
            for (doc, &score) in scores.iter().enumerate() {
                // `+ 0.0` folds -0.0 into 0.0 so signed zeros tie.
                let hit = Hit { doc, score: score + 0.0 };
                if top.len() == k && !self.better(&hit, &top[k - 1]) {
                    continue;
                }
                let pos = top.partition_point(|h| self.better(h, &hit));
                top.insert(pos, hit);
                top.truncate(k);
            }
            top
        } else {
            let mut all: Vec<Hit> = scores.iter().enumerate().map(|(doc, &score)| Hit { doc, score: score + 0.0 }).collect();
            if k < all.len() {
                all.select_nth_unstable_by(k - 1, |a, b| self.order(a, b));
                all.truncate(k);
            }
            all.sort_by(|a, b| self.order(a, b));
            all
        }
    }

    fn prepare(&self, queries: &EmbeddingMatrix, k: &Cutoff) -> Result<Matrix> {
        if queries.dim() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: queries.dim() });
        }
        if let Cutoff::PerQuery(ks) = k {
            if ks.len() != queries.len() {
                return Err(Error::Shape(format!("{} cutoffs for {} queries", ks.len(), queries.len())));
            }
        }
        for q in 0..queries.len() {
            let kq = k.get(q);
            if kq > self.len() {
                return Err(Error::Cutoff { k: kq, n: self.len() });
            }
        }
        let mut q = queries.data.as_standard_layout().into_owned();
        if !queries.normalized {
            for row in q.rows_mut() {
                normalize(row);
            }
        }
        Ok(q)
    }

    fn search_block(&self, q: &Matrix, start: usize, k: &Cutoff) -> Vec<Vec<Hit>> {
        let end = (start + QUERY_BLOCK).min(q.nrows());
        let scores = q.slice(s![start..end, ..]).dot(&self.matrix.t());
        scores
            .axis_iter(Axis(0))
            .enumerate()
            .map(|(i, row)| self.top_k(row, k.get(start + i)))
            .collect()
    }

    /// Exact top-k per query; hits ordered by descending score, ties by
    /// ascending doc id. Query rows are normalized unless flagged so.
    pub fn search(&self, queries: &EmbeddingMatrix, k: impl Into<Cutoff>) -> Result<Vec<Vec<Hit>>> {
        let k = k.into();
        let q = self.prepare(queries, &k)?;
        Ok((0..q.nrows()).step_by(QUERY_BLOCK).flat_map(|start| self.search_block(&q, start, &k)).collect())
    }

    /// [`Self::search`] with query blocks sharded over `workers` threads.
    pub fn search_parallel(
        &self,
        queries: &EmbeddingMatrix,
        k: impl Into<Cutoff>,
        workers: usize,
    ) -> Result<Vec<Vec<Hit>>> {
        let k = k.into();
        let q = self.prepare(queries, &k)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        let starts: Vec<usize> = (0..q.nrows()).step_by(QUERY_BLOCK).collect();
        let blocks: Vec<Vec<Vec<Hit>>> =
            pool.install(|| starts.par_iter().map(|&start| self.search_block(&q, start, &k)).collect());
        Ok(blocks.into_iter().flatten().collect())
    }

    /// Cosine between two indexed documents.
    pub fn pair_score(&self, a: usize, b: usize) -> f64 {
        crate::linalg::dot(self.matrix.row(a), self.matrix.row(b))
    }

    pub fn row_norm(&self, doc: usize) -> f64 {
        norm(self.matrix.row(doc))
    }
}

fn payload_checksum(m: &Matrix) -> String {
    let mut bytes = Vec::with_capacity(m.len() * 8);
    for v in m.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    io::checksum_hex(&bytes)
}

pub fn build_index(docs: &EmbeddingMatrix) -> Result<FlatIndex> {
    FlatIndex::build(docs)
}

pub fn search(idx: &FlatIndex, queries: &EmbeddingMatrix, k: impl Into<Cutoff>) -> Result<Vec<Vec<Hit>>> {
    idx.search(queries, k)
}
