//! Retrieval metrics aggregated per vendor, and classification metrics.
//!
//! Every retrieval metric is computed per query, averaged within each vendor,
//! and reported as the mean and population standard deviation over vendors.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MRR_CUTOFF: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedQuery {
    pub query_id: String,
    pub vendor: usize,
    /// Retrieved doc ids, best first.
    pub ranked: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalRun {
    pub queries: Vec<RankedQuery>,
    pub doc_vendor: BTreeMap<String, usize>,
    docs_per_vendor: BTreeMap<usize, usize>,
}

impl RetrievalRun {
    pub fn new(queries: Vec<RankedQuery>, doc_vendor: BTreeMap<String, usize>) -> Result<Self> {
        for q in &queries {
            let mut seen = HashSet::with_capacity(q.ranked.len());
            for d in &q.ranked {
                if !seen.insert(d.as_str()) {
                    return Err(Error::DuplicateId(format!("{} in ranking of {}", d, q.query_id)));
                }
                if !doc_vendor.contains_key(d) {
                    return Err(Error::MissingLabel(d.clone()));
                }
            }
        }
        let mut docs_per_vendor = BTreeMap::new();
        for &v in doc_vendor.values() {
            *docs_per_vendor.entry(v).or_insert(0) += 1;
        }
        Ok(RetrievalRun { queries, doc_vendor, docs_per_vendor })
    }

    /// Number of documents sharing `vendor` (the cutoff X).
    pub fn relevant_count(&self, vendor: usize) -> usize {
        self.docs_per_vendor.get(&vendor).copied().unwrap_or(0)
    }

    fn hits_in_prefix(&self, q: &RankedQuery, len: usize) -> usize {
        q.ranked.iter().take(len).filter(|d| self.doc_vendor[*d] == q.vendor).count()
    }

    /// A run restricted to the queries matching `keep`; documents are unchanged.
    pub fn filter_queries(&self, keep: impl Fn(&RankedQuery) -> bool) -> RetrievalRun {
        RetrievalRun {
            queries: self.queries.iter().filter(|q| keep(q)).cloned().collect(),
            doc_vendor: self.doc_vendor.clone(),
            docs_per_vendor: self.docs_per_vendor.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub per_vendor: BTreeMap<usize, f64>,
    /// Queries contributing to each vendor value.
    pub support: BTreeMap<usize, usize>,
    pub flags: Vec<String>,
}

impl MetricReport {
    /// Mean and population std over per-vendor values. An empty input yields
    /// zeros and an `empty` flag.
    pub fn from_per_vendor(metric: &str, per_vendor: BTreeMap<usize, f64>, support: BTreeMap<usize, usize>) -> Self {
        let mut flags = Vec::new();
        let (mean, std) = if per_vendor.is_empty() {
            flags.push("empty".to_string());
            (0.0, 0.0)
        } else {
            mean_std(per_vendor.values().copied())
        };
        MetricReport { metric: metric.to_string(), mean, std, per_vendor, support, flags }
    }

    pub fn num_vendors(&self) -> usize {
        self.per_vendor.len()
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

fn per_vendor_mean(per_query: &[(usize, f64)]) -> (BTreeMap<usize, f64>, BTreeMap<usize, usize>) {
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for &(v, x) in per_query {
        let e = sums.entry(v).or_insert((0.0, 0));
        e.0 += x;
        e.1 += 1;
    }
    let per_vendor = sums.iter().map(|(&v, &(s, n))| (v, s / n as f64)).collect();
    let support = sums.iter().map(|(&v, &(_, n))| (v, n)).collect();
    (per_vendor, support)
}

/// Reciprocal rank of the first same-vendor document within the top `k`.
///
/// Queries whose vendor has no documents score 0 and are counted; a flag
/// records how many there were.
pub fn mrr_at_k(run: &RetrievalRun, k: usize) -> MetricReport {
    let mut orphans = 0;
    let per_query: Vec<(usize, f64)> = run
        .queries
        .iter()
        .map(|q| {
            if run.relevant_count(q.vendor) == 0 {
                orphans += 1;
            }
            let rr = q
                .ranked
                .iter()
                .take(k)
                .position(|d| run.doc_vendor[d] == q.vendor)
                .map_or(0.0, |pos| 1.0 / (pos + 1) as f64);
            (q.vendor, rr)
        })
        .collect();
    let (per_vendor, support) = per_vendor_mean(&per_query);
    let mut report = MetricReport::from_per_vendor(&format!("mrr@{k}"), per_vendor, support);
    if orphans > 0 {
        report.flags.push(format!("{orphans} queries have no relevant documents (scored 0)"));
    }
    report
}

fn cutoff(run: &RetrievalRun, q: &RankedQuery) -> Result<usize> {
    match run.relevant_count(q.vendor) {
        0 => Err(Error::NoRelevant(q.query_id.clone())),
        x => Ok(x),
    }
}

/// Hits in the top X over X, with X the query vendor's document count.
pub fn r_precision_at_x(run: &RetrievalRun) -> Result<MetricReport> {
    let per_query = run
        .queries
        .iter()
        .map(|q| {
            let x = cutoff(run, q)?;
            Ok((q.vendor, run.hits_in_prefix(q, x) as f64 / x as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    let (per_vendor, support) = per_vendor_mean(&per_query);
    Ok(MetricReport::from_per_vendor("r_precision@x", per_vendor, support))
}

fn f1(hits: usize, retrieved: usize, relevant: usize) -> f64 {
    let p = if retrieved == 0 { 0.0 } else { hits as f64 / retrieved as f64 };
    let r = if relevant == 0 { 0.0 } else { hits as f64 / relevant as f64 };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Per-vendor F1 over the pooled top-X retrievals of the vendor's queries,
/// averaged over vendors.
pub fn macro_f1_at_x(run: &RetrievalRun) -> Result<MetricReport> {
    // vendor -> (hits, retrieved, relevant slots, queries)
    let mut pooled: BTreeMap<usize, (usize, usize, usize, usize)> = BTreeMap::new();
    for q in &run.queries {
        let x = cutoff(run, q)?;
        let e = pooled.entry(q.vendor).or_default();
        e.0 += run.hits_in_prefix(q, x);
        e.1 += q.ranked.len().min(x);
        e.2 += x;
        e.3 += 1;
    }
    let per_vendor = pooled.iter().map(|(&v, &(h, ret, rel, _))| (v, f1(h, ret, rel))).collect();
    let support = pooled.iter().map(|(&v, e)| (v, e.3)).collect();
    Ok(MetricReport::from_per_vendor("macro_f1@x", per_vendor, support))
}

/// Sensitivity variant of [`macro_f1_at_x`]: F1 per query, then averaged
/// within each vendor.
pub fn macro_f1_at_x_per_query(run: &RetrievalRun) -> Result<MetricReport> {
    let per_query = run
        .queries
        .iter()
        .map(|q| {
            let x = cutoff(run, q)?;
            Ok((q.vendor, f1(run.hits_in_prefix(q, x), q.ranked.len().min(x), x)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (per_vendor, support) = per_vendor_mean(&per_query);
    Ok(MetricReport::from_per_vendor("macro_f1@x_per_query", per_vendor, support))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub micro_f1: f64,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    pub per_class_f1: BTreeMap<usize, f64>,
    pub support: usize,
}

/// Standard single-label metrics. Macro-F1 averages over every class seen in
/// either `truth` or `preds`; balanced accuracy averages recall over the
/// classes in `truth`.
pub fn classification_report(preds: &[usize], truth: &[usize]) -> Result<ClassificationReport> {
    if preds.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", preds.len(), truth.len())));
    }
    let n = truth.len();
    if n == 0 {
        return Err(Error::Shape("classification report over zero samples".into()));
    }
    let classes: BTreeSet<usize> = truth.iter().chain(preds).copied().collect();
    let mut tp: BTreeMap<usize, usize> = BTreeMap::new();
    let mut pred_count: BTreeMap<usize, usize> = BTreeMap::new();
    let mut true_count: BTreeMap<usize, usize> = BTreeMap::new();
    for (&p, &t) in preds.iter().zip(truth) {
        *pred_count.entry(p).or_default() += 1;
        *true_count.entry(t).or_default() += 1;
        if p == t {
            *tp.entry(t).or_default() += 1;
        }
    }
    let get = |m: &BTreeMap<usize, usize>, c: usize| m.get(&c).copied().unwrap_or(0);
    let per_class_f1: BTreeMap<usize, f64> = classes
        .iter()
        .map(|&c| (c, f1(get(&tp, c), get(&pred_count, c), get(&true_count, c))))
        .collect();
    let correct: usize = tp.values().sum();
    let accuracy = correct as f64 / n as f64;
    let macro_f1 = per_class_f1.values().sum::<f64>() / classes.len() as f64;
    let weighted_f1 = true_count.iter().map(|(&c, &s)| per_class_f1[&c] * s as f64).sum::<f64>() / n as f64;
    let balanced_accuracy =
        true_count.iter().map(|(&c, &s)| get(&tp, c) as f64 / s as f64).sum::<f64>() / true_count.len() as f64;
    Ok(ClassificationReport {
        accuracy,
        balanced_accuracy,
        micro_f1: accuracy,
        weighted_f1,
        macro_f1,
        per_class_f1,
        support: n,
    })
}
