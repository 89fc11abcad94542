use std::collections::{BTreeMap, BTreeSet, HashMap};

use ndarray::Axis;

use super::{
    Breakdown, Corpus, EvalReport, ExperimentConfig, IdentificationReport, Modality, OodAverage, Provenance,
    RegionReport, score_run, shared_unique_breakdown,
};
use crate::communities::{filter_min_ads, VendorCommunities};
use crate::embedder::{fuse, EmbeddingMatrix, FusionParams};
use crate::error::{Error, Result};
use crate::head::{self, init_head, train_head, HeadParams, TrainData, TrainHistory};
use crate::index::{Cutoff, FlatIndex};
use crate::io::checksum_hex;
use crate::metrics::{classification_report, RankedQuery, RetrievalRun};
use crate::records::{split_dataset, MaskedAd, MultimodalSample, Region};

/// Sample-level inputs for one modality, with vendor labels aligned to rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub emb: EmbeddingMatrix,
    pub vendors: Vec<usize>,
}

impl Features {
    fn subset(&self, keep: impl Fn(usize) -> bool) -> Result<Features> {
        let rows: Vec<usize> = (0..self.vendors.len()).filter(|&i| keep(self.vendors[i])).collect();
        Ok(Features {
            emb: EmbeddingMatrix::new(
                rows.iter().map(|&i| self.emb.ids[i].clone()).collect(),
                self.emb.data.select(Axis(0), &rows),
                self.emb.normalized,
            )?,
            vendors: rows.iter().map(|&i| self.vendors[i]).collect(),
        })
    }
}

/// One region's documents (train split), validation and queries (test split).
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeatures {
    pub region: Region,
    pub train: Features,
    pub val: Features,
    pub test: Features,
    pub vendors: BTreeSet<usize>,
}

struct Prepared<'a> {
    corpus: &'a Corpus,
    labels: VendorCommunities,
    ads: BTreeMap<&'a str, &'a MaskedAd>,
    text_rows: HashMap<&'a str, usize>,
}

impl<'a> Prepared<'a> {
    fn new(corpus: &'a Corpus, min_ads: usize) -> Self {
        let labels = filter_min_ads(&corpus.communities, min_ads);
        let ads = corpus.ads.iter().filter(|a| labels.label(&a.id).is_some()).map(|a| (a.id.as_str(), a)).collect();
        let text_rows = corpus.text.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        Prepared { corpus, labels, ads, text_rows }
    }

    fn region_ids(&self, region: Region) -> Vec<String> {
        self.ads.values().filter(|a| a.region == region).map(|a| a.id.clone()).collect()
    }

    fn features(&self, ad_ids: &[String], modality: Modality, config: &ExperimentConfig) -> Result<Features> {
        let mut sample_ids = Vec::new();
        let mut text_idx = Vec::new();
        let mut vendors = Vec::new();
        for id in ad_ids {
            let ad = self.ads.get(id.as_str()).ok_or_else(|| Error::MissingLabel(id.clone()))?;
            if ad.image_refs.is_empty() {
                return Err(Error::NoImages(id.clone()));
            }
            let row = *self.text_rows.get(id.as_str()).ok_or_else(|| Error::MissingLabel(id.clone()))?;
            let vendor = self.labels.label(id).ok_or_else(|| Error::MissingLabel(id.clone()))?;
            for pos in 0..ad.image_refs.len() {
                sample_ids.push(MultimodalSample::sample_id(id, pos));
                text_idx.push(row);
                vendors.push(vendor);
            }
        }
        let text = || {
            EmbeddingMatrix::new(
                sample_ids.clone(),
                self.corpus.text.data.select(Axis(0), &text_idx),
                self.corpus.text.normalized,
            )
        };
        let emb = match modality {
            Modality::Text => text()?,
            Modality::Vision => self.corpus.image.select(&sample_ids)?,
            Modality::Multimodal => {
                let t = text()?;
                let params = FusionParams::init(config.fusion, t.dim(), config.seed);
                fuse(&t, &self.corpus.image.select(&sample_ids)?, config.fusion, params.as_ref())?
            }
        };
        Ok(Features { emb, vendors })
    }

    fn region(&self, region: Region, modality: Modality, config: &ExperimentConfig) -> Result<RegionFeatures> {
        let ids = self.region_ids(region);
        let vendors: BTreeSet<usize> = ids.iter().filter_map(|id| self.labels.label(id)).collect();
        if vendors.len() < 2 {
            return Err(Error::Degenerate(format!("region {region} has {} vendors, need at least 2", vendors.len())));
        }
        let split = split_dataset(&ids, config.ratios, config.seed)?;
        Ok(RegionFeatures {
            region,
            train: self.features(&split.train_ids, modality, config)?,
            val: self.features(&split.val_ids, modality, config)?,
            test: self.features(&split.test_ids, modality, config)?,
            vendors,
        })
    }

    fn digest(&self) -> String {
        let mut bytes = Vec::new();
        for (id, label) in self.labels.labels() {
            bytes.extend_from_slice(id.as_bytes());
            bytes.extend_from_slice(&(*label as u64).to_le_bytes());
        }
        for m in [&self.corpus.text, &self.corpus.image] {
            for id in &m.ids {
                bytes.extend_from_slice(id.as_bytes());
                bytes.push(0);
            }
            bytes.extend(m.data.iter().flat_map(|v| v.to_le_bytes()));
        }
        checksum_hex(&bytes)
    }
}

/// Split and featurize one region after the configured vendor filter.
pub fn region_features(
    corpus: &Corpus,
    config: &ExperimentConfig,
    region: Region,
    modality: Modality,
) -> Result<RegionFeatures> {
    Prepared::new(corpus, config.min_ads_per_vendor).region(region, modality, config)
}

/// Sorted vendor labels of the training rows; a vendor's class index is its
/// position here.
pub fn class_map(train_vendors: &[usize]) -> Vec<usize> {
    let set: BTreeSet<usize> = train_vendors.iter().copied().collect();
    set.into_iter().collect()
}

/// [`class_map`] without vendors that have a single training row when the
/// objective needs in-batch positives.
fn trainable_classes(train_vendors: &[usize], config: &ExperimentConfig) -> Vec<usize> {
    if !config.objective.is_contrastive() {
        return class_map(train_vendors);
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &v in train_vendors {
        *counts.entry(v).or_default() += 1;
    }
    counts.into_iter().filter(|&(_, n)| n >= 2).map(|(v, _)| v).collect()
}

fn dense(classes: &[usize], f: &Features) -> Result<TrainData> {
    let kept = f.subset(|v| classes.binary_search(&v).is_ok())?;
    let labels = kept.vendors.iter().map(|v| classes.binary_search(v).expect("filtered")).collect();
    TrainData::new(kept.emb.data, labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: HeadParams,
    pub history: TrainHistory,
    pub classes: Vec<usize>,
}

/// Train a head on the training region's train split, selecting the epoch on
/// its validation split.
pub fn train_model(config: &ExperimentConfig, corpus: &Corpus) -> Result<TrainedModel> {
    config.validate()?;
    let rf = region_features(corpus, config, config.train_region, config.modality)?;
    let classes = trainable_classes(&rf.train.vendors, config);
    if classes.len() < 2 {
        return Err(Error::Degenerate(format!("{} trainable classes in the training split", classes.len())));
    }
    let train = dense(&classes, &rf.train)?;
    let val = dense(&classes, &rf.val)?;
    let params = init_head(train.x.ncols(), config.train.hidden_dim, classes.len(), config.train.seed)?;
    let (params, history) = train_head(params, &train, Some(&val), &config.train, config.objective)?;
    Ok(TrainedModel { params, history: history.without_timing(), classes })
}

/// How documents and queries are embedded for retrieval.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    Head(HeadParams),
    /// Normalized input embeddings, untouched.
    Passthrough,
}

impl Encoder {
    pub fn encode(&self, emb: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        match self {
            Encoder::Head(p) => head::encode(p, emb),
            Encoder::Passthrough => Ok(emb.clone().normalized()),
        }
    }
}

/// Retrieve every query against the documents, keeping enough of each
/// ranking for MRR@`mrr_k` and for R-Precision at the query vendor's cutoff.
pub fn retrieval_run(
    docs: &EmbeddingMatrix,
    doc_vendors: &[usize],
    queries: &EmbeddingMatrix,
    query_vendors: &[usize],
    mrr_k: usize,
) -> Result<RetrievalRun> {
    if docs.len() != doc_vendors.len() || queries.len() != query_vendors.len() {
        return Err(Error::Shape("vendor labels must align with rows".into()));
    }
    let index = FlatIndex::build(docs)?;
    let doc_vendor: BTreeMap<String, usize> = docs.ids.iter().cloned().zip(doc_vendors.iter().copied()).collect();
    let mut per_vendor: HashMap<usize, usize> = HashMap::new();
    for &v in doc_vendors {
        *per_vendor.entry(v).or_default() += 1;
    }
    let cutoffs: Vec<usize> = query_vendors
        .iter()
        .map(|v| per_vendor.get(v).copied().unwrap_or(0).max(mrr_k).min(index.len()))
        .collect();
    let hits = index.search(queries, Cutoff::PerQuery(cutoffs))?;
    let ranked = queries
        .ids
        .iter()
        .zip(query_vendors)
        .zip(hits)
        .map(|((id, &vendor), hits)| RankedQuery {
            query_id: id.clone(),
            vendor,
            ranked: hits.iter().map(|h| index.doc_id(h.doc).to_string()).collect(),
        })
        .collect();
    RetrievalRun::new(ranked, doc_vendor)
}

fn identification(
    prepared: &Prepared<'_>,
    config: &ExperimentConfig,
    params: &HeadParams,
    trained: bool,
) -> Result<IdentificationReport> {
    let rf = prepared.region(config.train_region, config.modality, config)?;
    let classes = trainable_classes(&rf.train.vendors, config);
    if classes.len() != params.num_classes() {
        return Err(Error::Dimension { expected: classes.len(), got: params.num_classes() });
    }
    let test = dense(&classes, &rf.test)?;
    let mut flags = Vec::new();
    let dropped = rf.test.vendors.len() - test.len();
    if dropped > 0 {
        flags.push(format!("{dropped} test samples of vendors absent from training excluded"));
    }
    if !trained {
        flags.push("untrained head".to_string());
    }
    let metrics = if test.is_empty() {
        flags.push("no test samples".to_string());
        None
    } else {
        let emb = EmbeddingMatrix::new((0..test.len()).map(|i| i.to_string()).collect(), test.x, false)?;
        Some(classification_report(&head::predict(params, &emb)?.labels, &test.labels)?)
    };
    Ok(IdentificationReport { classes: classes.len(), test_samples: test.labels.len(), metrics, flags })
}

fn region_report(
    prepared: &Prepared<'_>,
    config: &ExperimentConfig,
    encoder: &Encoder,
    region: Region,
    train_vendors: &BTreeSet<usize>,
) -> Result<RegionReport> {
    let rf = prepared.region(region, config.retrieval.modality(), config)?;
    let docs = encoder.encode(&rf.train.emb)?;
    let queries = encoder.encode(&rf.test.emb)?;
    let run = retrieval_run(&docs, &rf.train.vendors, &queries, &rf.test.vendors, config.mrr_k)?;
    let in_distribution = region == config.train_region;
    let breakdown: Option<Breakdown> = if in_distribution {
        None
    } else {
        Some(shared_unique_breakdown(&run, train_vendors, &rf.vendors, config.mrr_k)?)
    };
    Ok(RegionReport {
        region,
        in_distribution,
        documents: docs.len(),
        vendors: rf.vendors.len(),
        scores: score_run(&run, config.mrr_k)?,
        breakdown,
    })
}

fn provenance(prepared: &Prepared<'_>, config: &ExperimentConfig) -> Provenance {
    Provenance {
        crate_version: crate::VERSION.to_string(),
        split_seed: config.seed,
        train_seed: config.train.seed,
        corpus_digest: prepared.digest(),
    }
}

fn retrieval_reports(
    prepared: &Prepared<'_>,
    config: &ExperimentConfig,
    encoder: &Encoder,
) -> Result<(Vec<RegionReport>, Option<OodAverage>)> {
    let train_vendors: BTreeSet<usize> = prepared
        .region_ids(config.train_region)
        .iter()
        .filter_map(|id| prepared.labels.label(id))
        .collect();
    let mut regions = Vec::new();
    if config.eval_regions.contains(&config.train_region) {
        regions.push(region_report(prepared, config, encoder, config.train_region, &train_vendors)?);
    }
    for region in config.ood_regions() {
        regions.push(region_report(prepared, config, encoder, region, &train_vendors)?);
    }
    let ood: Vec<&RegionReport> = regions.iter().filter(|r| !r.in_distribution).collect();
    let ood_average = if ood.is_empty() { None } else { Some(OodAverage::from_regions(&ood)?) };
    Ok((regions, ood_average))
}

/// Identification on the training region's test split plus retrieval over
/// every configured region. `encoder` is ignored in favour of pass-through
/// when the config asks for zero-shot evaluation.
pub fn evaluate(
    config: &ExperimentConfig,
    corpus: &Corpus,
    encoder: &Encoder,
    history: Option<&TrainHistory>,
) -> Result<EvalReport> {
    config.validate()?;
    let prepared = Prepared::new(corpus, config.min_ads_per_vendor);
    let encoder = if config.zero_shot { &Encoder::Passthrough } else { encoder };
    let identification = match encoder {
        Encoder::Head(p) => {
            let trained = history.is_some_and(|h| !h.epochs.is_empty());
            Some(identification(&prepared, config, p, trained)?)
        }
        Encoder::Passthrough => None,
    };
    let (regions, ood_average) = retrieval_reports(&prepared, config, encoder)?;
    Ok(EvalReport {
        config: config.clone(),
        provenance: provenance(&prepared, config),
        identification,
        regions,
        ood_average,
        train_history: history.cloned(),
    })
}

/// Train on the training region and report closed-set classification.
pub fn run_identification(config: &ExperimentConfig, corpus: &Corpus) -> Result<EvalReport> {
    let model = train_model(config, corpus)?;
    let prepared = Prepared::new(corpus, config.min_ads_per_vendor);
    let trained = !model.history.epochs.is_empty();
    Ok(EvalReport {
        config: config.clone(),
        provenance: provenance(&prepared, config),
        identification: Some(identification(&prepared, config, &model.params, trained)?),
        regions: Vec::new(),
        ood_average: None,
        train_history: Some(model.history),
    })
}

/// Documents/queries retrieval over every configured region.
pub fn run_verification_retrieval(config: &ExperimentConfig, corpus: &Corpus, encoder: &Encoder) -> Result<EvalReport> {
    config.validate()?;
    let prepared = Prepared::new(corpus, config.min_ads_per_vendor);
    let encoder = if config.zero_shot { &Encoder::Passthrough } else { encoder };
    let (regions, ood_average) = retrieval_reports(&prepared, config, encoder)?;
    Ok(EvalReport {
        config: config.clone(),
        provenance: provenance(&prepared, config),
        identification: None,
        regions,
        ood_average,
        train_history: None,
    })
}
