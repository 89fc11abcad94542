//! Query-centred similarity graphs for investigative linking.
//!
//! A graph holds one query node, the documents retrieved for it and
//! cosine-weighted edges: query to every retrieved document, plus document
//! pairs whose similarity reaches a threshold.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use ndarray::{ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::embedder::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::index::FlatIndex;

pub const DEFAULT_THETA: f64 = 0.5;
pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    /// Cutoff is the query vendor's relevant-document count.
    RPrecision,
    /// Cutoff is a fixed K.
    MrrK,
}

impl FromStr for GraphMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "r_precision" | "rprecision" | "r-precision" => Ok(GraphMode::RPrecision),
            "mrr" | "mrr_k" | "mrr-k" => Ok(GraphMode::MrrK),
            other => Err(Error::Config(format!("unknown graph mode `{other}`"))),
        }
    }
}

impl fmt::Display for GraphMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraphMode::RPrecision => "r_precision",
            GraphMode::MrrK => "mrr_k",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Query,
    Retrieved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub role: NodeRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: String,
    pub b: String,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMetadata {
    pub mode: GraphMode,
    pub cutoff: usize,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub metadata: GraphMetadata,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Dot,
    Json,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dot" => Ok(ExportFormat::Dot),
            "json" => Ok(ExportFormat::Json),
            other => Err(Error::Config(format!("unknown graph format `{other}`"))),
        }
    }
}

impl KnowledgeGraph {
    pub fn query(&self) -> &str {
        &self.nodes[0].id
    }

    pub fn retrieved(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().filter(|n| n.role == NodeRole::Retrieved).map(|n| n.id.as_str())
    }

    /// Checks the structural invariants; used after parsing.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Format(m));
        let queries = self.nodes.iter().filter(|n| n.role == NodeRole::Query).count();
        if queries != 1 || self.nodes.first().map(|n| n.role) != Some(NodeRole::Query) {
            return bad(format!("expected exactly one leading query node, found {queries}"));
        }
        let ids: BTreeSet<&str> = self.nodes.iter().map(|n| n.id.as_str()).collect();
        if ids.len() != self.nodes.len() {
            return bad("duplicate node ids".into());
        }
        let mut pairs = BTreeSet::new();
        for e in &self.edges {
            if e.a == e.b {
                return bad(format!("self-loop on {}", e.a));
            }
            if !ids.contains(e.a.as_str()) || !ids.contains(e.b.as_str()) {
                return bad(format!("edge {}--{} references an unknown node", e.a, e.b));
            }
            if !(-1.0..=1.0).contains(&e.w) {
                return bad(format!("edge weight {} outside [-1, 1]", e.w));
            }
            let key = if e.a < e.b { (&e.a, &e.b) } else { (&e.b, &e.a) };
            if !pairs.insert(key) {
                return bad(format!("duplicate edge {}--{}", e.a, e.b));
            }
        }
        let q = self.query();
        for r in self.retrieved() {
            if !self.edges.iter().any(|e| (e.a == q && e.b == r) || (e.b == q && e.a == r)) {
                return bad(format!("retrieved node {r} has no edge to the query"));
            }
        }
        Ok(())
    }
}

fn clamp_cosine(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Retrieve `cutoff` documents for the query and connect them.
///
/// A document carrying the query's own id is skipped so the graph never
/// holds a self-loop.
pub fn build_graph(
    idx: &FlatIndex,
    query_id: &str,
    query: ArrayView1<'_, f64>,
    mode: GraphMode,
    cutoff: usize,
    theta: f64,
) -> Result<KnowledgeGraph> {
    if !theta.is_finite() {
        return Err(Error::Config(format!("theta must be finite, got {theta}")));
    }
    let self_in_index = idx.doc_ids().iter().any(|d| d == query_id);
    let available = idx.len() - usize::from(self_in_index);
    if cutoff > available {
        return Err(Error::Cutoff { k: cutoff, n: available });
    }
    let q = EmbeddingMatrix::new(vec![query_id.to_string()], query.to_owned().insert_axis(Axis(0)), false)?;
    let fetch = (cutoff + usize::from(self_in_index)).min(idx.len());
    let hits: Vec<_> = idx
        .search(&q, fetch)?
        .remove(0)
        .into_iter()
        .filter(|h| idx.doc_id(h.doc) != query_id)
        .take(cutoff)
        .collect();

    let mut retrieved: Vec<(usize, &str)> = hits.iter().map(|h| (h.doc, idx.doc_id(h.doc))).collect();
    retrieved.sort_by(|a, b| a.1.cmp(b.1));
    let mut nodes = vec![Node { id: query_id.to_string(), role: NodeRole::Query }];
    nodes.extend(retrieved.iter().map(|(_, id)| Node { id: id.to_string(), role: NodeRole::Retrieved }));

    let mut star: Vec<Edge> = hits
        .iter()
        .map(|h| Edge { a: query_id.to_string(), b: idx.doc_id(h.doc).to_string(), w: clamp_cosine(h.score) })
        .collect();
    star.sort_by(|x, y| x.b.cmp(&y.b));
    let mut edges = star;
    for (i, &(da, ida)) in retrieved.iter().enumerate() {
        for &(db, idb) in &retrieved[i + 1..] {
            let w = clamp_cosine(idx.pair_score(da, db));
            if w >= theta {
                edges.push(Edge { a: ida.to_string(), b: idb.to_string(), w });
            }
        }
    }
    Ok(KnowledgeGraph { nodes, edges, metadata: GraphMetadata { mode, cutoff, theta } })
}

fn dot_id(id: &str) -> String {
    format!("\"{}\"", id.replace('\\', "\\\\").replace('"', "\\\""))
}

pub fn export_dot(g: &KnowledgeGraph) -> String {
    let mut out = String::new();
    let m = &g.metadata;
    let _ = writeln!(out, "graph knowledge {{");
    let _ = writeln!(out, "  // mode={} cutoff={} theta={}", m.mode, m.cutoff, m.theta);
    let _ = writeln!(out, "  node [shape=ellipse];");
    for n in &g.nodes {
        match n.role {
            NodeRole::Query => {
                let _ = writeln!(out, "  {} [shape=doublecircle, style=filled, fillcolor=red, fontcolor=white];", dot_id(&n.id));
            }
            NodeRole::Retrieved => {
                let _ = writeln!(out, "  {};", dot_id(&n.id));
            }
        }
    }
    for e in &g.edges {
        let _ = writeln!(out, "  {} -- {} [label=\"{:.4}\", weight={:.4}];", dot_id(&e.a), dot_id(&e.b), e.w, e.w);
    }
    out.push_str("}\n");
    out
}

pub fn export_json(g: &KnowledgeGraph) -> Result<String> {
    let mut s = serde_json::to_string_pretty(g)?;
    s.push('\n');
    Ok(s)
}

pub fn export_graph(g: &KnowledgeGraph, format: ExportFormat) -> Result<String> {
    match format {
        ExportFormat::Dot => Ok(export_dot(g)),
        ExportFormat::Json => export_json(g),
    }
}

pub fn parse_graph_json(text: &str) -> Result<KnowledgeGraph> {
    let g: KnowledgeGraph = serde_json::from_str(text)?;
    g.validate()?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn index() -> FlatIndex {
        let m = EmbeddingMatrix::new(
            vec!["d1".into(), "d2".into(), "d3".into(), "d4".into()],
            array![[1.0, 0.0], [0.8, 0.6], [0.0, 1.0], [-1.0, 0.0]],
            false,
        )
        .unwrap();
        FlatIndex::build(&m).unwrap()
    }

    #[test]
    fn zero_cutoff_is_a_lone_query() {
        let g = build_graph(&index(), "q", array![1.0, 0.0].view(), GraphMode::MrrK, 0, 0.5).unwrap();
        assert_eq!(g.nodes.len(), 1);
        assert!(g.edges.is_empty());
        let dot = export_dot(&g);
        assert!(dot.starts_with("graph knowledge {") && dot.ends_with("}\n"));
        assert!(dot.contains("fillcolor=red"));
    }

    #[test]
    fn identical_document_has_unit_weight() {
        let g = build_graph(&index(), "q", array![0.8, 0.6].view(), GraphMode::MrrK, 1, 0.5).unwrap();
        assert_eq!(g.edges, vec![Edge { a: "q".into(), b: "d2".into(), w: 1.0 }]);
    }

    #[test]
    fn threshold_monotone() {
        let idx = index();
        let mut prev = usize::MAX;
        for theta in [-1.0, 0.0, 0.5, 0.7, 0.9, 1.0] {
            let g = build_graph(&idx, "q", array![0.6, 0.8].view(), GraphMode::MrrK, 4, theta).unwrap();
            g.validate().unwrap();
            assert!(g.edges.len() <= prev);
            assert!(g.edges.len() >= 4 && g.edges.len() <= 10);
            prev = g.edges.len();
        }
    }

    #[test]
    fn query_in_index_is_skipped() {
        let g = build_graph(&index(), "d1", array![1.0, 0.0].view(), GraphMode::RPrecision, 3, 0.5).unwrap();
        assert_eq!(g.nodes.len(), 4);
        assert!(g.retrieved().all(|id| id != "d1"));
        assert!(build_graph(&index(), "d1", array![1.0, 0.0].view(), GraphMode::RPrecision, 4, 0.5).is_err());
    }

    #[test]
    fn cutoff_larger_than_index() {
        let r = build_graph(&index(), "q", array![1.0, 0.0].view(), GraphMode::MrrK, 5, 0.5);
        assert!(matches!(r, Err(Error::Cutoff { k: 5, n: 4 })));
    }

    #[test]
    fn json_roundtrip_is_byte_identical() {
        let g = build_graph(&index(), "q", array![0.3, 0.7].view(), GraphMode::MrrK, 3, 0.1).unwrap();
        let text = export_json(&g).unwrap();
        let back = parse_graph_json(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(export_json(&back).unwrap(), text);
    }

    #[test]
    fn invalid_graphs_are_rejected() {
        let mut g = build_graph(&index(), "q", array![1.0, 0.0].view(), GraphMode::MrrK, 2, 0.5).unwrap();
        g.edges.push(g.edges[0].clone());
        assert!(g.validate().is_err());
    }
}
