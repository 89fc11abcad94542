use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use serde_json::json;
use vendorlink::diagnostics::{gradient_suite, GRADCHECK_TOLERANCE};
use vendorlink::embedder::{self, hash_embed_text, BINARY_MAGIC};
use vendorlink::eval::synthetic::{IMAGE_FILE, LABELS_FILE, MASKED_FILE, TEXT_FILE};
use vendorlink::eval::{self, Corpus, Encoder, EvalReport, ExperimentConfig};
use vendorlink::graph::{build_graph, export_graph, ExportFormat, GraphMode};
use vendorlink::head::{self, TrainHistory, CHECKPOINT_MAGIC};
use vendorlink::records::{self, InputFormat, MaskedAd};
use vendorlink::{build_communities, filter_min_ads, io, EmbeddingMatrix, FlatIndex, MetricReport, Region, VendorCommunities};

use crate::args::*;
use crate::config::FileConfig;
use crate::{CliResult, Failure};

pub fn run(cli: Cli) -> CliResult {
    if let Some(n) = cli.global.workers {
        if n == 0 {
            return Err(Failure::Usage("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot size thread pool: {e}")))?;
    }
    let cfg = FileConfig::load(cli.global.config.as_deref(), cli.global.seed)?;
    let out = Output { json: cli.global.json };
    match cli.command {
        Command::Ingest(a) => ingest(a, &out),
        Command::Communities(a) => communities(a, &out),
        Command::Embed(a) => embed(a, cfg, &out),
        Command::Synth(a) => synth(a, cfg, &out),
        Command::Train(a) => train(a, cfg, &out),
        Command::Eval(a) => evaluate(a, cfg, &out),
        Command::Retrieve(a) => retrieve(a, &out),
        Command::Graph(a) => graph(a),
        Command::Gradcheck(a) => gradcheck(a, cfg, &out),
        Command::Verify(a) => verify(a, &out),
    }
}

struct Output {
    json: bool,
}

impl Output {
    /// Prints `value` as JSON, or `table` as aligned columns.
    fn emit<T: Serialize>(&self, value: &T, header: &[&str], rows: Vec<Vec<String>>) -> CliResult {
        if self.json {
            let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Data(e.to_string()))?;
            println!("{text}");
        } else {
            print!("{}", table(header, &rows));
        }
        Ok(())
    }
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        format!("{}\n", padded.join("  ").trim_end())
    };
    let mut out = line(header.to_vec());
    out.push_str(&line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(|s| s.as_str()).collect()));
    for row in rows {
        out.push_str(&line(row.iter().map(|s| s.as_str()).collect()));
    }
    out
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn parse_flag<T: FromStr>(value: &Option<String>) -> CliResult<Option<T>>
where
    T::Err: std::fmt::Display,
{
    value.as_deref().map(T::from_str).transpose().map_err(usage)
}

fn read_masked(path: &Path) -> CliResult<Vec<MaskedAd>> {
    Ok(records::read_masked_jsonl(io::open(path)?)?)
}

fn fmt4(x: f64) -> String {
    format!("{x:.4}")
}

fn ingest(a: IngestArgs, out: &Output) -> CliResult {
    let format = match a.format {
        Some(AdFormat::Csv) => InputFormat::Csv,
        Some(AdFormat::Jsonl) => InputFormat::Jsonl,
        None if a.input.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) => InputFormat::Csv,
        None => InputFormat::Jsonl,
    };
    let raw = records::parse_ads(io::open(&a.input)?, format)
        .map_err(|e| Failure::Data(format!("{}: {e}", a.input.display())))?;
    let masked: Vec<MaskedAd> = raw.iter().map(records::mask_ad).collect();
    let total = masked.len();
    let kept: Vec<MaskedAd> = masked
        .into_iter()
        .filter(|m| a.keep_all || (!m.identifiers.is_empty() && !m.image_refs.is_empty()))
        .collect();
    io::write_atomic(&a.output, |w| records::write_masked_jsonl(&kept, w))?;
    let summary = json!({ "read": total, "kept": kept.len(), "dropped": total - kept.len() });
    out.emit(
        &summary,
        &["read", "kept", "dropped"],
        vec![vec![total.to_string(), kept.len().to_string(), (total - kept.len()).to_string()]],
    )
}

fn communities(a: CommunitiesArgs, out: &Output) -> CliResult {
    let ads = read_masked(&a.input)?;
    let all = build_communities(&ads)?;
    let labels = filter_min_ads(&all, a.min_ads);
    io::write_atomic(&a.output, |w| labels.write_csv(w))?;
    let summary = json!({ "ads": labels.num_ads(), "vendors": labels.num_vendors(), "dropped_vendors": all.num_vendors() - labels.num_vendors() });
    out.emit(
        &summary,
        &["ads", "vendors", "dropped_vendors"],
        vec![vec![
            labels.num_ads().to_string(),
            labels.num_vendors().to_string(),
            (all.num_vendors() - labels.num_vendors()).to_string(),
        ]],
    )
}

fn embed(a: EmbedArgs, mut cfg: FileConfig, out: &Output) -> CliResult {
    let m = if let Some(path) = &a.import {
        embedder::load_embeddings(path, a.expect_dim)
            .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?
    } else {
        let input = a.input.as_ref().expect("clap enforces --input or --import");
        let ec = &mut cfg.embed;
        ec.dim = a.dim.unwrap_or(ec.dim);
        ec.ngram_min = a.ngram_min.unwrap_or(ec.ngram_min);
        ec.ngram_max = a.ngram_max.unwrap_or(ec.ngram_max);
        ec.validate().map_err(usage)?;
        let ads = read_masked(input)?;
        let ids = ads.iter().map(|ad| ad.id.clone()).collect();
        let texts: Vec<&str> = ads.iter().map(|ad| ad.text.as_str()).collect();
        hash_embed_text(ids, &texts, ec)?
    };
    match a.format {
        SidecarFormat::Binary => embedder::save_binary(&m, &a.output)?,
        SidecarFormat::Text => embedder::save_text(&m, &a.output)?,
    }
    let zero = m.zero_rows().len();
    let summary = json!({ "rows": m.len(), "dim": m.dim(), "normalized": m.normalized, "zero_rows": zero });
    out.emit(
        &summary,
        &["rows", "dim", "normalized", "zero_rows"],
        vec![vec![m.len().to_string(), m.dim().to_string(), m.normalized.to_string(), zero.to_string()]],
    )
}

fn synth(a: SynthArgs, mut cfg: FileConfig, out: &Output) -> CliResult {
    let s = &mut cfg.synth;
    s.vendors = a.vendors.unwrap_or(s.vendors);
    s.ads_per_vendor = a.ads_per_vendor.unwrap_or(s.ads_per_vendor);
    s.images_per_ad = a.images_per_ad.unwrap_or(s.images_per_ad);
    s.rho = a.rho.unwrap_or(s.rho);
    s.spread = a.spread.unwrap_or(s.spread);
    s.dim = a.dim.unwrap_or(s.dim);
    s.shared_vendor_fraction = a.shared_fraction.unwrap_or(s.shared_vendor_fraction);
    if let Some(regions) = &a.regions {
        s.regions = regions.iter().map(|r| Region::from_str(r.trim())).collect::<Result<_, _>>().map_err(usage)?;
    }
    s.validate().map_err(usage)?;
    let corpus = eval::generate_synthetic(s)?;
    corpus.save_dir(&a.output)?;
    let rows: Vec<Vec<String>> = corpus
        .regions()
        .into_iter()
        .map(|r| {
            let ads: Vec<&MaskedAd> = corpus.ads.iter().filter(|ad| ad.region == r).collect();
            let vendors: std::collections::BTreeSet<usize> =
                ads.iter().filter_map(|ad| corpus.communities.label(&ad.id)).collect();
            vec![r.to_string(), ads.len().to_string(), vendors.len().to_string()]
        })
        .collect();
    let summary = json!({
        "output": a.output,
        "ads": corpus.ads.len(),
        "vendors": corpus.communities.num_vendors(),
        "samples": corpus.image.len(),
        "dim": corpus.text.dim(),
        "regions": rows.iter().map(|r| json!({ "region": r[0], "ads": r[1].parse::<usize>().unwrap_or(0), "vendors": r[2].parse::<usize>().unwrap_or(0) })).collect::<Vec<_>>(),
    });
    out.emit(&summary, &["region", "ads", "vendors"], rows)
}

fn apply_experiment(e: &ExperimentArgs, cfg: &mut ExperimentConfig) -> CliResult {
    if let Some(o) = parse_flag(&e.objective)? {
        cfg.objective = o;
    }
    if let Some(m) = parse_flag(&e.modality)? {
        cfg.modality = m;
    }
    if let Some(f) = parse_flag(&e.fusion)? {
        cfg.fusion = f;
    }
    if let Some(r) = parse_flag(&e.train_region)? {
        cfg.train_region = r;
    }
    let t = &mut cfg.train;
    t.max_epochs = e.epochs.unwrap_or(t.max_epochs);
    t.lr = e.lr.unwrap_or(t.lr);
    t.batch_size = e.batch_size.unwrap_or(t.batch_size);
    t.hidden_dim = e.hidden_dim.unwrap_or(t.hidden_dim);
    t.patience = e.patience.unwrap_or(t.patience);
    cfg.validate().map_err(usage)
}

fn load_corpus(dir: &Path) -> CliResult<Corpus> {
    if !dir.is_dir() {
        return Err(Failure::Data(format!("{}: not a corpus directory", dir.display())));
    }
    for f in [MASKED_FILE, LABELS_FILE, TEXT_FILE, IMAGE_FILE] {
        if !dir.join(f).is_file() {
            return Err(Failure::Data(format!("{}: missing {f}", dir.display())));
        }
    }
    Ok(Corpus::load_dir(dir)?)
}

fn train(a: TrainArgs, mut cfg: FileConfig, out: &Output) -> CliResult {
    apply_experiment(&a.experiment, &mut cfg.experiment)?;
    let corpus = load_corpus(&a.experiment.data)?;
    let model = eval::train_model(&cfg.experiment, &corpus)?;
    let checkpoint = head::write_checkpoint(&model.params);
    let history = match &a.history {
        Some(_) => {
            let mut text = serde_json::to_string_pretty(&model.history).map_err(|e| Failure::Data(e.to_string()))?;
            text.push('\n');
            Some(text)
        }
        None => None,
    };
    io::write_bytes_atomic(&a.checkpoint, &checkpoint)?;
    if let (Some(path), Some(text)) = (&a.history, history) {
        io::write_bytes_atomic(path, text.as_bytes())?;
    }
    let (d, h, v) = model.params.dims();
    let rows = model
        .history
        .epochs
        .iter()
        .map(|e| {
            vec![
                e.epoch.to_string(),
                fmt4(e.train_loss),
                e.val_loss.map_or_else(|| "-".into(), fmt4),
                fmt4(e.val_macro_f1),
                if e.epoch == model.history.selected_epoch { "*".into() } else { String::new() },
            ]
        })
        .collect();
    let summary = json!({
        "checkpoint": a.checkpoint,
        "input_dim": d,
        "hidden_dim": h,
        "classes": v,
        "history": model.history,
    });
    out.emit(&summary, &["epoch", "train_loss", "val_loss", "val_macro_f1", "selected"], rows)
}

fn metric_cells(m: &MetricReport) -> String {
    format!("{:.4} ± {:.4}", m.mean, m.std)
}

fn evaluate(a: EvalArgs, mut cfg: FileConfig, out: &Output) -> CliResult {
    let exp = &mut cfg.experiment;
    if let Some(r) = parse_flag(&a.retrieval)? {
        exp.retrieval = r;
    }
    if let Some(regions) = &a.eval_regions {
        exp.eval_regions = regions.iter().map(|r| Region::from_str(r.trim())).collect::<Result<_, _>>().map_err(usage)?;
    }
    exp.zero_shot |= a.zero_shot;
    apply_experiment(&a.experiment, exp)?;
    let corpus = load_corpus(&a.experiment.data)?;
    let encoder = match (&a.checkpoint, exp.zero_shot) {
        (_, true) | (None, _) => Encoder::Passthrough,
        (Some(path), false) => Encoder::Head(
            head::load_checkpoint(path, None).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?,
        ),
    };
    let history: Option<TrainHistory> = match &a.history {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
            Some(serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?)
        }
        None => None,
    };
    let report = eval::evaluate(exp, &corpus, &encoder, history.as_ref())?;
    let mut text = report.to_json()?;
    text.push('\n');
    let csv = a.csv.as_ref().map(|_| report.to_csv()).transpose()?;
    io::write_bytes_atomic(&a.output, text.as_bytes())?;
    if let (Some(path), Some(csv)) = (&a.csv, csv) {
        io::write_bytes_atomic(path, csv.as_bytes())?;
    }
    report_table(&report, out)
}

fn report_table(report: &EvalReport, out: &Output) -> CliResult {
    if !out.json {
        if let Some(m) = report.identification.as_ref().and_then(|i| i.metrics.as_ref()) {
            println!(
                "identification: accuracy {:.4}  balanced {:.4}  micro-F1 {:.4}  weighted-F1 {:.4}  macro-F1 {:.4}\n",
                m.accuracy, m.balanced_accuracy, m.micro_f1, m.weighted_f1, m.macro_f1
            );
        }
    }
    let mut rows: Vec<Vec<String>> = report
        .regions
        .iter()
        .map(|r| {
            vec![
                r.region.to_string(),
                if r.in_distribution { "in".into() } else { "ood".into() },
                r.scores.queries.to_string(),
                metric_cells(&r.scores.mrr),
                metric_cells(&r.scores.r_precision),
                metric_cells(&r.scores.macro_f1),
            ]
        })
        .collect();
    if let Some(avg) = &report.ood_average {
        rows.push(vec![
            "OOD average".into(),
            "ood".into(),
            String::new(),
            metric_cells(&avg.mrr),
            metric_cells(&avg.r_precision),
            metric_cells(&avg.macro_f1),
        ]);
    }
    out.emit(report, &["region", "split", "queries", "MRR@10", "R-Precision@X", "Macro-F1@X"], rows)
}

fn load_index(path: &Path) -> CliResult<FlatIndex> {
    let docs = embedder::load_embeddings(path, None).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    Ok(FlatIndex::build(&docs)?)
}

fn load_queries(path: &Path, dim: usize) -> CliResult<EmbeddingMatrix> {
    embedder::load_embeddings(path, Some(dim)).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn retrieve(a: RetrieveArgs, out: &Output) -> CliResult {
    if a.k == 0 {
        return Err(Failure::Usage("--k must be positive".into()));
    }
    let idx = load_index(&a.index)?;
    let mut queries = load_queries(&a.queries, idx.dim())?;
    if !a.query_ids.is_empty() {
        queries = queries.select(&a.query_ids)?;
    }
    let hits = idx.search(&queries, a.k)?;
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for (qid, hits) in queries.ids.iter().zip(&hits) {
        let list: Vec<_> = hits.iter().map(|h| json!({ "doc": idx.doc_id(h.doc), "score": h.score })).collect();
        for (rank, h) in hits.iter().enumerate() {
            rows.push(vec![qid.clone(), (rank + 1).to_string(), idx.doc_id(h.doc).to_string(), format!("{:.6}", h.score)]);
        }
        results.push(json!({ "query": qid, "hits": list }));
    }
    out.emit(&results, &["query", "rank", "doc", "score"], rows)
}

/// Ad id of a sample id (`ad#pos`), or the id itself.
fn ad_of(id: &str) -> &str {
    id.split_once('#').map_or(id, |(ad, _)| ad)
}

fn relevant_cutoff(labels: &VendorCommunities, idx: &FlatIndex, query_id: &str) -> CliResult<usize> {
    let vendor = labels
        .label(ad_of(query_id))
        .ok_or_else(|| Failure::Data(format!("query `{query_id}` has no vendor label")))?;
    let x = idx
        .doc_ids()
        .iter()
        .filter(|d| d.as_str() != query_id && labels.label(ad_of(d)) == Some(vendor))
        .count();
    if x == 0 {
        return Err(Failure::Data(format!("query `{query_id}` has no relevant documents in the index")));
    }
    Ok(x)
}

fn graph(a: GraphArgs) -> CliResult {
    let mode = match a.mode {
        GraphModeArg::Mrr => GraphMode::MrrK,
        GraphModeArg::RPrecision => GraphMode::RPrecision,
    };
    let labels_path = match (mode, &a.labels) {
        (GraphMode::RPrecision, None) => return Err(Failure::Usage("--mode r-precision requires --labels".into())),
        (_, p) => p.clone(),
    };
    if mode == GraphMode::MrrK && a.k == 0 {
        return Err(Failure::Usage("--k must be positive".into()));
    }
    let idx = load_index(&a.index)?;
    let queries = load_queries(&a.queries, idx.dim())?;
    let row = queries
        .ids
        .iter()
        .position(|id| *id == a.query_id)
        .ok_or_else(|| Failure::Data(format!("{}: no row `{}`", a.queries.display(), a.query_id)))?;
    let cutoff = match mode {
        GraphMode::MrrK => a.k,
        GraphMode::RPrecision => {
            let path = labels_path.expect("checked above");
            let labels = VendorCommunities::read_csv(io::open(&path)?)
                .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
            relevant_cutoff(&labels, &idx, &a.query_id)?
        }
    };
    let g = build_graph(&idx, &a.query_id, queries.data.row(row), mode, cutoff, a.theta)?;
    let format = match a.format {
        GraphFormatArg::Dot => ExportFormat::Dot,
        GraphFormatArg::Json => ExportFormat::Json,
    };
    let text = export_graph(&g, format)?;
    match &a.output {
        Some(path) => io::write_bytes_atomic(path, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs, cfg: FileConfig, out: &Output) -> CliResult {
    if a.instances == 0 {
        return Err(Failure::Usage("--instances must be positive".into()));
    }
    if !(a.eps > 0.0 && a.eps.is_finite()) {
        return Err(Failure::Usage("--eps must be positive".into()));
    }
    let rows = gradient_suite(a.instances, a.eps, cfg.experiment.seed)?;
    let table_rows = rows
        .iter()
        .map(|r| {
            vec![
                r.loss.clone(),
                r.instances.to_string(),
                format!("{:.3e}", r.max_rel_error),
                if r.passed { "PASS".into() } else { "FAIL".into() },
            ]
        })
        .collect();
    out.emit(&rows, &["loss", "instances", "max_rel_error", "status"], table_rows)?;
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.loss.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Data(format!(
            "gradient check above {GRADCHECK_TOLERANCE:e} for: {}",
            failed.join(", ")
        )))
    }
}

fn verify_file(path: &Path) -> Result<String, String> {
    let bytes = io::read_bytes(path).map_err(|e| e.to_string())?;
    if bytes.starts_with(BINARY_MAGIC) {
        let m = embedder::read_binary(&bytes, None).map_err(|e| e.to_string())?;
        Ok(format!("embeddings {}x{}", m.len(), m.dim()))
    } else if bytes.starts_with(CHECKPOINT_MAGIC) {
        let p = head::read_checkpoint(&bytes, None).map_err(|e| e.to_string())?;
        let (d, h, v) = p.dims();
        Ok(format!("head {d}->{h}->{v}"))
    } else {
        Err("unrecognized file type".into())
    }
}

fn verify(a: VerifyArgs, out: &Output) -> CliResult {
    let mut results = BTreeMap::new();
    let mut rows = Vec::new();
    let mut failures = 0;
    for path in &a.files {
        let r = verify_file(path);
        let (status, detail) = match &r {
            Ok(d) => ("OK", d.clone()),
            Err(e) => {
                failures += 1;
                ("FAIL", e.clone())
            }
        };
        rows.push(vec![path.display().to_string(), status.to_string(), detail.clone()]);
        results.insert(path.display().to_string(), json!({ "ok": r.is_ok(), "detail": detail }));
    }
    out.emit(&results, &["file", "status", "detail"], rows)?;
    if failures > 0 {
        return Err(Failure::Data(format!("{failures} of {} files failed verification", a.files.len())));
    }
    Ok(())
}
