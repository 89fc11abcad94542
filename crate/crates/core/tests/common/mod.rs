//! Brute-force reference implementations and random instance generators
//! shared by the integration tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vendorlink::metrics::RankedQuery;
use vendorlink::records::MaskedAd;
use vendorlink::{EmbeddingMatrix, Region, RetrievalRun};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal))
}

pub fn unit_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.mapv_inplace(|x| x / n);
    }
    out
}

pub fn embeddings(prefix: &str, data: Array2<f64>) -> EmbeddingMatrix {
    let ids = (0..data.nrows()).map(|i| format!("{prefix}{i:05}")).collect();
    EmbeddingMatrix::new(ids, data, false).unwrap()
}

// ---------------------------------------------------------------- losses

/// SupCon with positives averaged outside the log, as two explicit loops.
pub fn supcon_reference(z: &Array2<f64>, labels: &[usize], tau: f64) -> f64 {
    let n = labels.len();
    let sim = |i: usize, j: usize| (0..z.ncols()).map(|c| z[[i, c]] * z[[j, c]]).sum::<f64>() / tau;
    let mut total = 0.0;
    for i in 0..n {
        let mut denom = 0.0;
        for a in 0..n {
            if a != i {
                denom += sim(i, a).exp();
            }
        }
        let mut acc = 0.0;
        let mut count = 0.0;
        for p in 0..n {
            if p != i && labels[p] == labels[i] {
                acc += (sim(i, p).exp() / denom).ln();
                count += 1.0;
            }
        }
        total += -acc / count;
    }
    total / n as f64
}

// ----------------------------------------------------------------- index

/// Full scan: normalize, score every document, sort by score then id.
pub fn naive_search(docs: &EmbeddingMatrix, queries: &EmbeddingMatrix, k: usize) -> Vec<Vec<(String, f64)>> {
    let d = unit_rows(&docs.data);
    let q = unit_rows(&queries.data);
    (0..q.nrows())
        .map(|qi| {
            let mut scored: Vec<(String, f64)> = (0..d.nrows())
                .map(|di| {
                    let s = (0..d.ncols()).map(|c| q[[qi, c]] * d[[di, c]]).sum::<f64>();
                    (docs.ids[di].clone(), s)
                })
                .collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
            scored.truncate(k);
            scored
        })
        .collect()
}

// --------------------------------------------------------------- metrics

/// A random run over at most `max_vendors` vendors and `max_docs` documents.
/// Every query's vendor owns at least one document; rankings are random
/// permutations truncated to a random length.
pub fn random_run(rng: &mut ChaCha8Rng, max_vendors: usize, max_docs: usize) -> RetrievalRun {
    let vendors = rng.gen_range(1..=max_vendors);
    let n_docs = rng.gen_range(vendors..=max_docs.max(vendors));
    let mut doc_vendor = BTreeMap::new();
    for i in 0..n_docs {
        let v = if i < vendors { i } else { rng.gen_range(0..vendors) };
        doc_vendor.insert(format!("d{i:04}"), v);
    }
    let ids: Vec<String> = doc_vendor.keys().cloned().collect();
    let n_queries = rng.gen_range(1..=30);
    let queries = (0..n_queries)
        .map(|i| {
            let mut ranked = ids.clone();
            ranked.shuffle(rng);
            ranked.truncate(rng.gen_range(0..=n_docs));
            RankedQuery { query_id: format!("q{i}"), vendor: rng.gen_range(0..vendors), ranked }
        })
        .collect();
    RetrievalRun::new(queries, doc_vendor).unwrap()
}

fn relevant_set(run: &RetrievalRun, vendor: usize) -> BTreeSet<&str> {
    run.doc_vendor.iter().filter(|(_, &v)| v == vendor).map(|(d, _)| d.as_str()).collect()
}

fn group_by_vendor(values: Vec<(usize, f64)>) -> BTreeMap<usize, Vec<f64>> {
    let mut g: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (v, x) in values {
        g.entry(v).or_default().push(x);
    }
    g
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Per-vendor means, then mean and population std over vendors.
pub fn aggregate(per_query: Vec<(usize, f64)>) -> (BTreeMap<usize, f64>, f64, f64) {
    let per_vendor: BTreeMap<usize, f64> =
        group_by_vendor(per_query).into_iter().map(|(v, xs)| (v, mean(&xs))).collect();
    let vals: Vec<f64> = per_vendor.values().copied().collect();
    let m = mean(&vals);
    let var = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
    (per_vendor, m, var.sqrt())
}

pub fn mrr_reference(run: &RetrievalRun, k: usize) -> (BTreeMap<usize, f64>, f64, f64) {
    let per_query = run
        .queries
        .iter()
        .map(|q| {
            let rel = relevant_set(run, q.vendor);
            let mut rr = 0.0;
            for (rank, d) in q.ranked.iter().enumerate() {
                if rank >= k {
                    break;
                }
                if rel.contains(d.as_str()) {
                    rr = 1.0 / (rank as f64 + 1.0);
                    break;
                }
            }
            (q.vendor, rr)
        })
        .collect();
    aggregate(per_query)
}

pub fn r_precision_reference(run: &RetrievalRun) -> (BTreeMap<usize, f64>, f64, f64) {
    let per_query = run
        .queries
        .iter()
        .map(|q| {
            let rel = relevant_set(run, q.vendor);
            let x = rel.len();
            let top: BTreeSet<&str> = q.ranked.iter().take(x).map(String::as_str).collect();
            (q.vendor, top.intersection(&rel).count() as f64 / x as f64)
        })
        .collect();
    aggregate(per_query)
}

/// Pooled confusion counts per vendor, then F1, then a plain average.
pub fn macro_f1_reference(run: &RetrievalRun) -> (BTreeMap<usize, f64>, f64, f64) {
    let mut tp: BTreeMap<usize, f64> = BTreeMap::new();
    let mut predicted: BTreeMap<usize, f64> = BTreeMap::new();
    let mut actual: BTreeMap<usize, f64> = BTreeMap::new();
    for q in &run.queries {
        let rel = relevant_set(run, q.vendor);
        let top: Vec<&str> = q.ranked.iter().take(rel.len()).map(String::as_str).collect();
        *tp.entry(q.vendor).or_default() += top.iter().filter(|d| rel.contains(*d)).count() as f64;
        *predicted.entry(q.vendor).or_default() += top.len() as f64;
        *actual.entry(q.vendor).or_default() += rel.len() as f64;
    }
    let per_vendor: Vec<(usize, f64)> = tp
        .iter()
        .map(|(&v, &t)| {
            let p = if predicted[&v] > 0.0 { t / predicted[&v] } else { 0.0 };
            let r = t / actual[&v];
            (v, if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
        })
        .collect();
    aggregate(per_vendor)
}

// ----------------------------------------------------------- communities

/// Ads named `ad000..` with random identifier sets drawn from `n_ids` phones.
pub fn random_bipartite(rng: &mut ChaCha8Rng, max_ads: usize, max_ids: usize) -> Vec<MaskedAd> {
    let n_ads = rng.gen_range(1..=max_ads);
    let n_ids = rng.gen_range(1..=max_ids);
    let mut order: Vec<usize> = (0..n_ads).collect();
    order.shuffle(rng);
    order
        .into_iter()
        .map(|i| {
            let k = rng.gen_range(1..=3);
            let identifiers = (0..k).map(|_| format!("555{:07}", rng.gen_range(0..n_ids))).collect();
            MaskedAd {
                id: format!("ad{i:03}"),
                region: Region::South,
                text: "x [SEP] y".into(),
                identifiers,
                image_refs: vec!["img".into()],
            }
        })
        .collect()
}

/// Connected components by breadth-first search over ads and identifiers,
/// ordered by smallest member id.
pub fn components_reference(ads: &[MaskedAd]) -> Vec<BTreeSet<String>> {
    let mut by_id: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, ad) in ads.iter().enumerate() {
        for p in &ad.identifiers {
            by_id.entry(p.as_str()).or_default().push(i);
        }
    }
    let mut seen = vec![false; ads.len()];
    let mut out = Vec::new();
    for start in 0..ads.len() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = BTreeSet::new();
        let mut queue = VecDeque::from([start]);
        while let Some(a) = queue.pop_front() {
            comp.insert(ads[a].id.clone());
            for p in &ads[a].identifiers {
                for &b in &by_id[p.as_str()] {
                    if !seen[b] {
                        seen[b] = true;
                        queue.push_back(b);
                    }
                }
            }
        }
        out.push(comp);
    }
    out.sort_by(|a, b| a.first().cmp(&b.first()));
    out
}

// --------------------------------------------------------------- masking

const FILLER: [&str; 12] =
    ["call", "me", "new", "in", "town", "ask", "for", "sweet", "xoxo", "[SEP]", "avail", "now"];

fn random_phone(rng: &mut ChaCha8Rng) -> String {
    let d: Vec<u32> = (0..10).map(|_| rng.gen_range(0..10)).collect();
    let s: String = d.iter().map(|x| char::from_digit(*x, 10).unwrap()).collect();
    match rng.gen_range(0..5) {
        0 => s,
        1 => format!("({}) {}-{}", &s[..3], &s[3..6], &s[6..]),
        2 => format!("{}.{}.{}", &s[..3], &s[3..6], &s[6..]),
        3 => format!("+1 {}-{}-{}", &s[..3], &s[3..6], &s[6..]),
        _ => format!("{} {} {}", &s[..3], &s[3..6], &s[6..]),
    }
}

fn random_word(rng: &mut ChaCha8Rng, alphabet: &[u8], len: std::ops::RangeInclusive<usize>) -> String {
    let n = rng.gen_range(len);
    (0..n).map(|_| *alphabet.choose(rng).unwrap() as char).collect()
}

fn random_email(rng: &mut ChaCha8Rng) -> String {
    let local = random_word(rng, b"abcxyz019._+-", 1..=8);
    let local = local.trim_matches(|c: char| !c.is_ascii_alphanumeric()).to_string();
    let local = if local.is_empty() { "a".to_string() } else { local };
    let domain = random_word(rng, b"abcmail0123", 1..=6);
    let tld = ["com", "net", "org", "io", "c0m", "co.uk"].choose(rng).unwrap();
    format!("{local}@{domain}.{tld}")
}

fn random_url(rng: &mut ChaCha8Rng) -> String {
    let host = random_word(rng, b"abcdefgh123", 2..=8);
    let path = random_word(rng, b"abc/xyz09?=&", 0..=10);
    match rng.gen_range(0..3) {
        0 => format!("http://{host}.com/{path}"),
        1 => format!("https://www.{host}.net/{path}"),
        _ => format!("www.{host}.org/{path}"),
    }
}

fn random_date(rng: &mut ChaCha8Rng) -> String {
    let (m, d, y) = (rng.gen_range(1..=12), rng.gen_range(1..=28), rng.gen_range(1990..=2030));
    match rng.gen_range(0..4) {
        0 => format!("{m}/{d}/{y}"),
        1 => format!("{y}-{m:02}-{d:02}"),
        2 => format!("{} {d}th, {y}", ["January", "Feb", "march", "Sept."].choose(rng).unwrap()),
        _ => format!("{d} of {}", ["april", "Dec", "June"].choose(rng).unwrap()),
    }
}

/// One adversarial string mixing filler words with phones, emails, URLs,
/// dates, post ids, bare numbers and punctuation.
pub fn pii_string(rng: &mut ChaCha8Rng) -> String {
    let parts = rng.gen_range(1..=12);
    let mut out = Vec::with_capacity(parts);
    for _ in 0..parts {
        let piece = match rng.gen_range(0..10) {
            0 => random_phone(rng),
            1 => random_email(rng),
            2 => random_url(rng),
            3 => random_date(rng),
            4 => format!("post id: {}", rng.gen_range(1..999_999)),
            5 => rng.gen_range(0..100_000).to_string(),
            6 => random_word(rng, b"a1@.:/-<>#N", 1..=10),
            7 => "<EMAILID-3>".to_string(),
            _ => FILLER.choose(rng).unwrap().to_string(),
        };
        out.push(piece);
    }
    let seps = [" ", " ", ", ", "", "\n", "!"];
    let mut s = String::new();
    for (i, p) in out.iter().enumerate() {
        if i > 0 {
            s.push_str(seps.choose(rng).unwrap());
        }
        s.push_str(p);
    }
    s
}
