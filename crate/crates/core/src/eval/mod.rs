//! Experiment orchestration: identification, verification retrieval,
//! out-of-distribution averaging and the shared/unique vendor breakdown.

mod pipeline;
pub mod synthetic;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedder::FusionStrategy;
use crate::error::{Error, Result};
use crate::head::{Objective, TrainConfig, TrainHistory};
use crate::metrics::{self, ClassificationReport, MetricReport, RetrievalRun};
use crate::records::{Region, DEFAULT_RATIOS, DEFAULT_SEED};

pub use pipeline::{
    class_map, evaluate, region_features, retrieval_run, run_identification, run_verification_retrieval,
    train_model, Encoder, Features, RegionFeatures, TrainedModel,
};
pub use synthetic::{generate_synthetic, Corpus, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Vision,
    Multimodal,
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "text" => Ok(Modality::Text),
            "vision" | "image" => Ok(Modality::Vision),
            "multimodal" => Ok(Modality::Multimodal),
            other => Err(Error::Config(format!("unknown modality `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalMode {
    T2t,
    I2i,
    Multimodal,
}

impl RetrievalMode {
    pub fn modality(self) -> Modality {
        match self {
            RetrievalMode::T2t => Modality::Text,
            RetrievalMode::I2i => Modality::Vision,
            RetrievalMode::Multimodal => Modality::Multimodal,
        }
    }
}

impl From<Modality> for RetrievalMode {
    fn from(m: Modality) -> Self {
        match m {
            Modality::Text => RetrievalMode::T2t,
            Modality::Vision => RetrievalMode::I2i,
            Modality::Multimodal => RetrievalMode::Multimodal,
        }
    }
}

impl FromStr for RetrievalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t2t" => Ok(RetrievalMode::T2t),
            "i2i" => Ok(RetrievalMode::I2i),
            "multimodal" => Ok(RetrievalMode::Multimodal),
            other => Err(Error::Config(format!("unknown retrieval mode `{other}`"))),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Text => "text",
            Modality::Vision => "vision",
            Modality::Multimodal => "multimodal",
        })
    }
}

/// Run configuration. Loadable from TOML; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train_region: Region,
    /// Regions to evaluate; those other than `train_region` are out-of-distribution.
    pub eval_regions: Vec<Region>,
    /// Head input.
    pub modality: Modality,
    pub fusion: FusionStrategy,
    pub objective: Objective,
    pub train: TrainConfig,
    pub retrieval: RetrievalMode,
    /// Split and fusion-initialization seed.
    pub seed: u64,
    pub ratios: (f64, f64, f64),
    pub min_ads_per_vendor: usize,
    pub mrr_k: usize,
    /// Skip the head and retrieve with normalized input embeddings.
    pub zero_shot: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train_region: Region::South,
            eval_regions: vec![Region::South],
            modality: Modality::Text,
            fusion: FusionStrategy::Mean,
            objective: Objective::Ce,
            train: TrainConfig::default(),
            retrieval: RetrievalMode::T2t,
            seed: DEFAULT_SEED,
            ratios: DEFAULT_RATIOS,
            min_ads_per_vendor: 1,
            mrr_k: metrics::MRR_CUTOFF,
            zero_shot: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eval_regions.is_empty() {
            return Err(Error::Config("eval_regions must not be empty".into()));
        }
        if self.mrr_k == 0 {
            return Err(Error::Config("mrr_k must be positive".into()));
        }
        self.train.validate(self.objective)
    }

    pub fn ood_regions(&self) -> Vec<Region> {
        let set: BTreeSet<Region> = self.eval_regions.iter().copied().filter(|r| *r != self.train_region).collect();
        set.into_iter().collect()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// MRR@k, R-Precision@X and Macro-F1@X over one set of queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalScores {
    pub queries: usize,
    pub mrr: MetricReport,
    pub r_precision: MetricReport,
    pub macro_f1: MetricReport,
}

/// Scores a run. Queries whose vendor has no documents score 0 on MRR and
/// are left out of the two cutoff metrics, which are flagged accordingly.
pub fn score_run(run: &RetrievalRun, mrr_k: usize) -> Result<RetrievalScores> {
    let mrr = metrics::mrr_at_k(run, mrr_k);
    let covered = run.filter_queries(|q| run.relevant_count(q.vendor) > 0);
    let dropped = run.queries.len() - covered.queries.len();
    let mut r_precision = metrics::r_precision_at_x(&covered)?;
    let mut macro_f1 = metrics::macro_f1_at_x(&covered)?;
    if dropped > 0 {
        let flag = format!("{dropped} queries without documents excluded");
        r_precision.flags.push(flag.clone());
        macro_f1.flags.push(flag);
    }
    Ok(RetrievalScores { queries: run.queries.len(), mrr, r_precision, macro_f1 })
}

/// Unweighted mean over regions of each report's mean; std is the mean of
/// the per-region stds.
pub fn ood_average(reports: &[&MetricReport]) -> Result<MetricReport> {
    if reports.is_empty() {
        return Err(Error::Degenerate("OOD average over zero regions".into()));
    }
    let n = reports.len() as f64;
    Ok(MetricReport {
        metric: reports[0].metric.clone(),
        mean: reports.iter().map(|r| r.mean).sum::<f64>() / n,
        std: reports.iter().map(|r| r.std).sum::<f64>() / n,
        per_vendor: Default::default(),
        support: Default::default(),
        flags: vec![format!("average over {} regions", reports.len())],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodAverage {
    pub regions: Vec<Region>,
    pub mrr: MetricReport,
    pub r_precision: MetricReport,
    pub macro_f1: MetricReport,
}

impl OodAverage {
    pub fn from_regions(reports: &[&RegionReport]) -> Result<Self> {
        let pick = |f: fn(&RetrievalScores) -> &MetricReport| -> Result<MetricReport> {
            ood_average(&reports.iter().map(|r| f(&r.scores)).collect::<Vec<_>>())
        };
        Ok(OodAverage {
            regions: reports.iter().map(|r| r.region).collect(),
            mrr: pick(|s| &s.mrr)?,
            r_precision: pick(|s| &s.r_precision)?,
            macro_f1: pick(|s| &s.macro_f1)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub shared: RetrievalScores,
    pub unique: RetrievalScores,
}

/// Partition queries by whether their vendor also appears in the training
/// region and score each part.
pub fn shared_unique_breakdown(
    run: &RetrievalRun,
    train_vendors: &BTreeSet<usize>,
    ood_vendors: &BTreeSet<usize>,
    mrr_k: usize,
) -> Result<Breakdown> {
    if train_vendors.is_empty() || ood_vendors.is_empty() {
        return Err(Error::Degenerate("shared/unique breakdown needs nonempty vendor sets".into()));
    }
    let shared = run.filter_queries(|q| train_vendors.contains(&q.vendor));
    let unique = run.filter_queries(|q| !train_vendors.contains(&q.vendor));
    Ok(Breakdown { shared: score_run(&shared, mrr_k)?, unique: score_run(&unique, mrr_k)? })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub region: Region,
    pub in_distribution: bool,
    pub documents: usize,
    pub vendors: usize,
    pub scores: RetrievalScores,
    pub breakdown: Option<Breakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub classes: usize,
    pub test_samples: usize,
    pub metrics: Option<ClassificationReport>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub crate_version: String,
    pub split_seed: u64,
    pub train_seed: u64,
    /// SHA-256 over the corpus ids, labels and embedding payloads.
    pub corpus_digest: String,
}

/// Everything an evaluation run produces. Contains no timings, so it is a
/// pure function of corpus and configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ExperimentConfig,
    pub provenance: Provenance,
    pub identification: Option<IdentificationReport>,
    pub regions: Vec<RegionReport>,
    pub ood_average: Option<OodAverage>,
    pub train_history: Option<TrainHistory>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn region(&self, r: Region) -> Option<&RegionReport> {
        self.regions.iter().find(|x| x.region == r)
    }

    /// One row per (region, metric) for spreadsheets.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["region", "metric", "mean", "std", "vendors", "queries"])?;
        for r in &self.regions {
            for m in [&r.scores.mrr, &r.scores.r_precision, &r.scores.macro_f1] {
                w.write_record([
                    r.region.as_str(),
                    &m.metric,
                    &m.mean.to_string(),
                    &m.std.to_string(),
                    &m.num_vendors().to_string(),
                    &r.scores.queries.to_string(),
                ])?;
            }
        }
        if let Some(avg) = &self.ood_average {
            for m in [&avg.mrr, &avg.r_precision, &avg.macro_f1] {
                w.write_record(["ood_average", &m.metric, &m.mean.to_string(), &m.std.to_string(), "", ""])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }
}
