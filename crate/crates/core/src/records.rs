//! Ad ingestion: parsing, canonical text, phone extraction, PII masking,
//! multimodal sample expansion and deterministic splits.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::communities::VendorCommunities;
use crate::error::{Error, Result};

/// Separator placed between title and description.
pub const SEP: &str = "[SEP]";
/// Escaped form of a `[SEP]` found inside a title or description.
pub const SEP_ESCAPED: &str = "[SEP\\]";
/// Whitespace-token budget for the built text.
pub const MAX_TEXT_TOKENS: usize = 512;
/// Default train/val/test ratios.
pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.75, 0.05, 0.20);
/// Default split seed.
pub const DEFAULT_SEED: u64 = 1111;

pub const PHONE_MIN_DIGITS: usize = 10;
pub const PHONE_MAX_DIGITS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    South,
    Midwest,
    West,
    Northeast,
    Other,
}

impl Region {
    pub const ALL: [Region; 5] = [
        Region::South,
        Region::Midwest,
        Region::West,
        Region::Northeast,
        Region::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Region::South => "South",
            Region::Midwest => "Midwest",
            Region::West => "West",
            Region::Northeast => "Northeast",
            Region::Other => "Other",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Region::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownRegion(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawAd {
    pub id: String,
    pub region: Region,
    pub title: String,
    pub description: String,
    pub image_refs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedAd {
    pub id: String,
    pub region: Region,
    pub text: String,
    pub identifiers: BTreeSet<String>,
    #[serde(rename = "images")]
    pub image_refs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultimodalSample {
    pub ad_id: String,
    pub text: String,
    pub image_ref: String,
    pub vendor: usize,
}

impl MultimodalSample {
    /// Sample id: `<ad_id>#<image position>`.
    pub fn sample_id(ad_id: &str, position: usize) -> String {
        format!("{ad_id}#{position}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSplit {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub ratios: (f64, f64, f64),
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(InputFormat::Jsonl),
            "csv" => Ok(InputFormat::Csv),
            other => Err(Error::Format(format!("unknown input format `{other}`"))),
        }
    }
}

/// Parse a line-delimited ad stream. Line numbers in errors are 1-based and
/// count the CSV header as line 1.
pub fn parse_ads<R: BufRead>(reader: R, format: InputFormat) -> Result<Vec<RawAd>> {
    let ads = match format {
        InputFormat::Jsonl => parse_jsonl(reader)?,
        InputFormat::Csv => parse_csv(reader)?,
    };
    let mut seen = HashSet::with_capacity(ads.len());
    for ad in &ads {
        if !seen.insert(ad.id.as_str()) {
            return Err(Error::DuplicateId(ad.id.clone()));
        }
    }
    Ok(ads)
}

fn parse_jsonl<R: BufRead>(reader: R) -> Result<Vec<RawAd>> {
    let mut ads = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse { line: line_no, reason: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: line_no, reason: e.to_string() })?;
        let obj = value.as_object().ok_or_else(|| Error::Parse {
            line: line_no,
            reason: "expected a JSON object".into(),
        })?;
        let field = |name: &str| -> Result<String> {
            match obj.get(name) {
                Some(serde_json::Value::String(s)) => Ok(s.clone()),
                Some(_) => Err(Error::Parse { line: line_no, reason: format!("field `{name}` is not a string") }),
                None => Err(Error::Parse { line: line_no, reason: format!("missing field `{name}`") }),
            }
        };
        let id = field("id")?;
        let region = field("region")?.parse()?;
        let title = field("title")?;
        let description = field("description")?;
        let image_refs = match obj.get("images") {
            None | Some(serde_json::Value::Null) => Vec::new(),
            Some(serde_json::Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_str().map(str::to_string).ok_or_else(|| Error::Parse {
                        line: line_no,
                        reason: "`images` must contain strings".into(),
                    })
                })
                .collect::<Result<_>>()?,
            Some(_) => {
                return Err(Error::Parse { line: line_no, reason: "`images` must be an array".into() })
            }
        };
        if id.is_empty() {
            return Err(Error::Parse { line: line_no, reason: "empty id".into() });
        }
        ads.push(RawAd { id, region, title, description, image_refs });
    }
    Ok(ads)
}

/// CSV images column holds `;`-separated references.
fn parse_csv<R: BufRead>(reader: R) -> Result<Vec<RawAd>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (id_c, region_c, title_c, desc_c) = (col("id"), col("region"), col("title"), col("description"));
    let images_c = col("images");
    let mut ads = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let line_no = idx + 2;
        let record = record.map_err(|e| Error::Parse { line: line_no, reason: e.to_string() })?;
        let get = |c: Option<usize>, name: &str| -> Result<String> {
            c.and_then(|c| record.get(c))
                .map(str::to_string)
                .ok_or_else(|| Error::Parse { line: line_no, reason: format!("missing field `{name}`") })
        };
        let id = get(id_c, "id")?;
        if id.is_empty() {
            return Err(Error::Parse { line: line_no, reason: "empty id".into() });
        }
        let region = get(region_c, "region")?.parse()?;
        let title = get(title_c, "title")?;
        let description = get(desc_c, "description")?;
        let image_refs = images_c
            .and_then(|c| record.get(c))
            .map(|s| s.split(';').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect())
            .unwrap_or_default();
        ads.push(RawAd { id, region, title, description, image_refs });
    }
    Ok(ads)
}

/// `title [SEP] description`, at most [`MAX_TEXT_TOKENS`] whitespace tokens.
///
/// Literal `[SEP]` inside either part is escaped so the result holds exactly
/// one separator. When truncating, the separator is always kept and the title
/// is served first.
pub fn build_ad_text(title: &str, description: &str) -> String {
    let title = title.replace(SEP, SEP_ESCAPED);
    let description = description.replace(SEP, SEP_ESCAPED);
    let t_tokens: Vec<&str> = title.split_whitespace().collect();
    let d_tokens: Vec<&str> = description.split_whitespace().collect();
    if t_tokens.len() + d_tokens.len() < MAX_TEXT_TOKENS {
        return format!("{title} {SEP} {description}");
    }
    let budget = MAX_TEXT_TOKENS - 1;
    let t_keep = t_tokens.len().min(budget);
    let d_keep = d_tokens.len().min(budget - t_keep);
    format!("{} {SEP} {}", t_tokens[..t_keep].join(" "), d_tokens[..d_keep].join(" "))
}

const DIGIT_WORDS: [(&str, char); 10] = [
    ("zero", '0'),
    ("one", '1'),
    ("two", '2'),
    ("three", '3'),
    ("four", '4'),
    ("five", '5'),
    ("six", '6'),
    ("seven", '7'),
    ("eight", '8'),
    ("nine", '9'),
];

/// Characters allowed between digits of one phone number.
fn is_phone_separator(c: char) -> bool {
    c.is_whitespace() || matches!(c, '-' | '.' | '(' | ')' | '/' | '*' | '_' | '+' | '~' | '|' | '[' | ']')
}

/// Longest separator run tolerated inside a phone number.
const MAX_SEPARATOR_RUN: usize = 3;

fn word_digit(word: &str) -> Option<char> {
    DIGIT_WORDS
        .iter()
        .find(|(w, _)| w.eq_ignore_ascii_case(word))
        .map(|&(_, d)| d)
}

/// Rule-based phone extraction over title and description.
pub fn extract_identifiers(ad: &RawAd) -> BTreeSet<String> {
    let mut found = BTreeSet::new();
    extract_phones_into(&ad.title, &mut found);
    extract_phones_into(&ad.description, &mut found);
    found
}

/// Phones found in free text, canonicalized to digits.
///
/// The text is scanned into digit groups (ASCII digits or spelled-out digit
/// words) joined by short separator runs. Consecutive groups are greedily
/// packed into one candidate while it stays within 15 digits; candidates of
/// 10..=15 digits are kept.
pub fn extract_phones(text: &str) -> BTreeSet<String> {
    let mut found = BTreeSet::new();
    extract_phones_into(text, &mut found);
    found
}

fn extract_phones_into(text: &str, out: &mut BTreeSet<String>) {
    // Each inner Vec is one chain of groups connected by separators.
    let mut chains: Vec<Vec<String>> = Vec::new();
    let mut chain: Vec<String> = Vec::new();
    let mut group = String::new();
    let mut sep_run = 0usize;

    let close_group = |group: &mut String, chain: &mut Vec<String>| {
        if !group.is_empty() {
            chain.push(std::mem::take(group));
        }
    };

    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_ascii_digit() {
            group.push(c);
            sep_run = 0;
            i += 1;
        } else if c.is_alphabetic() {
            let start = i;
            while i < chars.len() && chars[i].is_alphabetic() {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            close_group(&mut group, &mut chain);
            match word_digit(&word) {
                Some(d) => {
                    chain.push(d.to_string());
                    sep_run = 0;
                }
                None => {
                    chains.push(std::mem::take(&mut chain));
                    sep_run = 0;
                }
            }
        } else if is_phone_separator(c) {
            close_group(&mut group, &mut chain);
            sep_run += 1;
            if sep_run > MAX_SEPARATOR_RUN {
                chains.push(std::mem::take(&mut chain));
            }
            i += 1;
        } else {
            close_group(&mut group, &mut chain);
            chains.push(std::mem::take(&mut chain));
            sep_run = 0;
            i += 1;
        }
    }
    close_group(&mut group, &mut chain);
    chains.push(chain);

    for chain in chains {
        let mut candidate = String::new();
        for g in chain {
            if !candidate.is_empty() && candidate.len() + g.len() > PHONE_MAX_DIGITS {
                keep_candidate(&candidate, out);
                candidate.clear();
            }
            candidate.push_str(&g);
        }
        keep_candidate(&candidate, out);
    }
}

fn keep_candidate(candidate: &str, out: &mut BTreeSet<String>) {
    if (PHONE_MIN_DIGITS..=PHONE_MAX_DIGITS).contains(&candidate.len()) {
        out.insert(candidate.to_string());
    }
}

// Masking patterns. Dates and post ids are not pinned down by any upstream
// source; these lists are the documented contract.

pub static LINK_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)(?:https?://|www\.)\S+").unwrap());

/// Domain labels and TLD accept digits so that an address cannot reappear
/// after digits are rewritten to `N`.
pub static EMAIL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)[a-z0-9._%+-]+@[a-z0-9-]+(?:\.[a-z0-9-]+)*\.[a-z0-9]{2,}").unwrap());

pub static DATE_RES: LazyLock<Vec<Regex>> = LazyLock::new(|| {
    const MONTH: &str = r"(?:jan|feb|mar|apr|may|jun|jul|aug|sep|sept|oct|nov|dec)[a-z]*\.?";
    [
        // 12/05/2016, 2016-04-05, 5.4.16
        r"\b\d{1,4}[/.-]\d{1,2}[/.-]\d{1,4}\b".to_string(),
        // April 5th, 2016 / Apr 5
        format!(r"(?i)\b{MONTH}\s+\d{{1,2}}(?:st|nd|rd|th)?(?:,?\s+\d{{4}})?\b"),
        // 5th April 2016 / 5 apr
        format!(r"(?i)\b\d{{1,2}}(?:st|nd|rd|th)?\s+(?:of\s+)?{MONTH}(?:,?\s+\d{{4}})?\b"),
    ]
    .iter()
    .map(|p| Regex::new(p).unwrap())
    .collect()
});

pub static POST_ID_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bpost[\s_-]*id\s*[:#]?\s*\d+").unwrap());

static DIGIT_OR_EMAIL_TOKEN_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"<EMAILID-\d+>|\d").unwrap());

pub const LINK_TOKEN: &str = "<LINK>";
pub const DATE_TOKEN: &str = "<DATES>";
pub const POST_ID_TOKEN: &str = "POST_ID: NNNNN";

/// Mask links, emails, dates, post ids, then every remaining digit.
///
/// Emails become `<EMAILID-k>` with `k` counting distinct addresses within
/// this text (repeats of an address reuse its number). The digits of those
/// tokens are the only digits that survive.
pub fn mask_text(text: &str) -> String {
    let text = LINK_RE.replace_all(text, LINK_TOKEN);

    let mut addresses: Vec<String> = Vec::new();
    let text = EMAIL_RE.replace_all(&text, |caps: &regex::Captures<'_>| {
        let addr = caps[0].to_ascii_lowercase();
        let k = match addresses.iter().position(|a| *a == addr) {
            Some(pos) => pos + 1,
            None => {
                addresses.push(addr);
                addresses.len()
            }
        };
        format!("<EMAILID-{k}>")
    });

    let mut text = text.into_owned();
    for re in DATE_RES.iter() {
        text = re.replace_all(&text, DATE_TOKEN).into_owned();
    }
    let text = POST_ID_RE.replace_all(&text, POST_ID_TOKEN);
    DIGIT_OR_EMAIL_TOKEN_RE
        .replace_all(&text, |caps: &regex::Captures<'_>| {
            let m = &caps[0];
            if m.len() == 1 {
                "N".to_string()
            } else {
                m.to_string()
            }
        })
        .into_owned()
}

/// True when `masked` carries no link, email or run of two or more digits
/// outside `<EMAILID-k>` tokens.
pub fn is_clean(masked: &str) -> bool {
    if LINK_RE.is_match(masked) || EMAIL_RE.is_match(masked) {
        return false;
    }
    let stripped = DIGIT_OR_EMAIL_TOKEN_RE.replace_all(masked, |caps: &regex::Captures<'_>| {
        if caps[0].len() == 1 { caps[0].to_string() } else { String::new() }
    });
    !stripped
        .as_bytes()
        .windows(2)
        .any(|w| w[0].is_ascii_digit() && w[1].is_ascii_digit())
}

/// Build, extract and mask one ad.
pub fn mask_ad(ad: &RawAd) -> MaskedAd {
    let identifiers = extract_identifiers(ad);
    MaskedAd {
        id: ad.id.clone(),
        region: ad.region,
        text: mask_text(&build_ad_text(&ad.title, &ad.description)),
        identifiers,
        image_refs: ad.image_refs.clone(),
    }
}

/// Inverse of the JSONL branch of [`parse_ads`].
pub fn write_raw_jsonl<W: Write>(ads: &[RawAd], mut out: W) -> Result<()> {
    for ad in ads {
        let line = serde_json::json!({
            "id": ad.id,
            "region": ad.region.as_str(),
            "title": ad.title,
            "description": ad.description,
            "images": ad.image_refs,
        });
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::io("<raw ads>", e))?;
    }
    Ok(())
}

pub fn write_masked_jsonl<W: Write>(ads: &[MaskedAd], mut out: W) -> Result<()> {
    for ad in ads {
        serde_json::to_writer(&mut out, ad)?;
        out.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}

pub fn read_masked_jsonl<R: BufRead>(reader: R) -> Result<Vec<MaskedAd>> {
    let mut ads = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse { line: line_no, reason: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let ad: MaskedAd = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: line_no, reason: e.to_string() })?;
        if !seen.insert(ad.id.clone()) {
            return Err(Error::DuplicateId(ad.id));
        }
        ads.push(ad);
    }
    Ok(ads)
}

/// One sample per (ad, image) pair, in ad order then image order.
pub fn expand_samples(ads: &[MaskedAd], labels: &VendorCommunities) -> Result<Vec<MultimodalSample>> {
    let mut samples = Vec::with_capacity(ads.iter().map(|a| a.image_refs.len()).sum());
    for ad in ads {
        if ad.image_refs.is_empty() {
            return Err(Error::NoImages(ad.id.clone()));
        }
        let vendor = labels.label(&ad.id).ok_or_else(|| Error::MissingLabel(ad.id.clone()))?;
        samples.extend(ad.image_refs.iter().map(|image| MultimodalSample {
            ad_id: ad.id.clone(),
            text: ad.text.clone(),
            image_ref: image.clone(),
            vendor,
        }));
    }
    Ok(samples)
}

/// Seeded shuffle of the sorted ids followed by a contiguous partition.
///
/// Train and validation sizes are `round(ratio * n)`; test takes the rest.
pub fn split_dataset(ids: &[String], ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let (r_train, r_val, r_test) = ratios;
    if [r_train, r_val, r_test].iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::Split(format!("ratios must lie in [0, 1], got {ratios:?}")));
    }
    if (r_train + r_val + r_test - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!("ratios must sum to 1, got {ratios:?}")));
    }
    let mut sorted: Vec<String> = ids.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != ids.len() {
        return Err(Error::Split("ids must be unique".into()));
    }
    if sorted.len() < 3 {
        return Err(Error::Split(format!("need at least 3 ids, got {}", sorted.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);

    let n = sorted.len();
    let n_train = ((r_train * n as f64).round() as usize).min(n);
    let n_val = ((r_val * n as f64).round() as usize).min(n - n_train);
    let test_ids = sorted.split_off(n_train + n_val);
    let val_ids = sorted.split_off(n_train);
    Ok(DatasetSplit { train_ids: sorted, val_ids, test_ids, ratios, seed })
}
