use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use std::path::Path;

use crate::communities::{build_communities, VendorCommunities};
use crate::embedder::{load_embeddings, save_binary, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::io;
use crate::linalg::{normalize, Matrix};
use crate::records::{
    mask_ad, read_masked_jsonl, write_masked_jsonl, write_raw_jsonl, MaskedAd, MultimodalSample, RawAd, Region,
};

/// Parameters of the synthetic corpus.
///
/// Every vendor owns a text center and an image center on the unit sphere.
/// Each center mixes a vendor-specific direction (weight `sqrt(rho)`) with a
/// direction shared by a confusion group (weight `sqrt(1 - rho)`), so two
/// centers in one group have cosine about `1 - rho`. Text groups are runs of
/// consecutive vendors and image groups are strided, so the vendors one
/// modality confuses are told apart by the other. `rho = 1` aligns both
/// modalities' clusters one-to-one with vendors.
///
/// Text vectors live in the first `dim / 2` coordinates and image vectors in
/// the rest, so the modalities are orthogonal like the outputs of two
/// independently trained encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub vendors: usize,
    pub ads_per_vendor: usize,
    pub images_per_ad: usize,
    /// Norm of the Gaussian noise added to a center before re-normalizing.
    pub spread: f64,
    pub rho: f64,
    pub dim: usize,
    /// Vendors per confusion group.
    pub group_size: usize,
    /// Regions to populate, the first being the training region.
    pub regions: Vec<Region>,
    /// Fraction of each non-first region's vendors drawn from the first region.
    pub shared_vendor_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            vendors: 40,
            ads_per_vendor: 10,
            images_per_ad: 5,
            spread: 1.0,
            rho: 0.7,
            dim: 128,
            group_size: 4,
            regions: vec![Region::South],
            shared_vendor_fraction: 0.5,
            seed: 1111,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.vendors < 2 {
            return fail(format!("need at least 2 vendors, got {}", self.vendors));
        }
        if self.ads_per_vendor < 2 {
            return fail(format!("need at least 2 ads per vendor, got {}", self.ads_per_vendor));
        }
        if self.images_per_ad == 0 {
            return fail("images_per_ad must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return fail(format!("rho must lie in [0, 1], got {}", self.rho));
        }
        if !(0.0..=1.0).contains(&self.shared_vendor_fraction) {
            return fail(format!("shared_vendor_fraction must lie in [0, 1], got {}", self.shared_vendor_fraction));
        }
        if !self.spread.is_finite() || self.spread < 0.0 {
            return fail(format!("spread must be finite and non-negative, got {}", self.spread));
        }
        if self.dim < 2 || self.dim % 2 != 0 {
            return fail(format!("dim must be even and at least 2, got {}", self.dim));
        }
        if self.group_size == 0 {
            return fail("group_size must be positive".into());
        }
        if self.regions.is_empty() {
            return fail("at least one region is required".into());
        }
        let mut seen = self.regions.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.regions.len() {
            return fail("regions must be distinct".into());
        }
        Ok(())
    }
}

/// Ads with their ground truth and per-modality embeddings.
///
/// Text rows are keyed by ad id; image rows by sample id (`ad#position`).
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub raw: Vec<RawAd>,
    pub ads: Vec<MaskedAd>,
    pub communities: VendorCommunities,
    pub text: EmbeddingMatrix,
    pub image: EmbeddingMatrix,
}

pub const RAW_FILE: &str = "raw.jsonl";
pub const MASKED_FILE: &str = "masked.jsonl";
pub const LABELS_FILE: &str = "labels.csv";
pub const TEXT_FILE: &str = "text.embb";
pub const IMAGE_FILE: &str = "image.embb";

impl Corpus {
    /// Write the corpus as a directory of sidecar files, each atomically.
    /// Raw ads are written only when present.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if !self.raw.is_empty() {
            io::write_atomic(&dir.join(RAW_FILE), |w| write_raw_jsonl(&self.raw, w))?;
        }
        io::write_atomic(&dir.join(MASKED_FILE), |w| write_masked_jsonl(&self.ads, w))?;
        io::write_atomic(&dir.join(LABELS_FILE), |w| self.communities.write_csv(w))?;
        save_binary(&self.text, &dir.join(TEXT_FILE))?;
        save_binary(&self.image, &dir.join(IMAGE_FILE))
    }

    /// Read a directory written by [`Corpus::save_dir`]; raw ads are not loaded.
    pub fn load_dir(dir: &Path) -> Result<Corpus> {
        let ads = read_masked_jsonl(io::open(&dir.join(MASKED_FILE))?)?;
        let communities = VendorCommunities::read_csv(io::open(&dir.join(LABELS_FILE))?)?;
        let text = load_embeddings(&dir.join(TEXT_FILE), None)?;
        let image = load_embeddings(&dir.join(IMAGE_FILE), Some(text.dim()))?;
        Ok(Corpus { raw: Vec::new(), ads, communities, text, image })
    }

    pub fn samples(&self) -> Result<Vec<MultimodalSample>> {
        crate::records::expand_samples(&self.ads, &self.communities)
    }

    pub fn regions(&self) -> Vec<Region> {
        let mut r: Vec<Region> = self.ads.iter().map(|a| a.region).collect();
        r.sort();
        r.dedup();
        r
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v = ndarray::Array1::from(gaussian(rng, dim));
        if normalize(v.view_mut()) > 1e-12 {
            return v.to_vec();
        }
    }
}

/// `v` placed in coordinate block `block` (0 or 1) of a vector twice its length.
fn embed_block(v: &[f64], block: usize) -> Vec<f64> {
    let mut out = vec![0.0; 2 * v.len()];
    out[block * v.len()..(block + 1) * v.len()].copy_from_slice(v);
    out
}

fn mix(a: &[f64], wa: f64, b: &[f64], wb: f64) -> Vec<f64> {
    let mut v = ndarray::Array1::from_iter(a.iter().zip(b).map(|(x, y)| wa * x + wb * y));
    normalize(v.view_mut());
    v.to_vec()
}

fn noisy(rng: &mut ChaCha8Rng, center: &[f64], spread: f64) -> Vec<f64> {
    let scale = spread / (center.len() as f64).sqrt();
    let noise = gaussian(rng, center.len());
    mix(center, 1.0, &noise, scale)
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
    let len = rng.gen_range(4..9);
    (0..len).map(|_| LETTERS[rng.gen_range(0..LETTERS.len())] as char).collect()
}

/// Ten-digit phone strings, injective in `n`.
fn phone(n: u64) -> String {
    let x = (1_000_003u64.wrapping_mul(n + 1)) % 1_000_000_000;
    let digits = format!("2{x:09}");
    format!("({}) {}-{}", &digits[..3], &digits[3..6], &digits[6..])
}

struct Vendor {
    text_center: Vec<f64>,
    image_center: Vec<f64>,
    words: Vec<String>,
    phones: [String; 2],
}

const COMMON_WORDS: &[&str] = &["new", "in", "town", "sweet", "available", "now", "call", "today", "friendly", "visit"];

/// Deterministic synthetic corpus. Vendor labels come from the phone numbers
/// planted in each ad, through the regular masking and community pipeline.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let half = spec.dim / 2;
    let n_groups = spec.vendors.div_ceil(spec.group_size);
    let text_groups: Vec<Vec<f64>> = (0..n_groups).map(|_| unit(&mut rng, half)).collect();
    let image_groups: Vec<Vec<f64>> = (0..n_groups).map(|_| unit(&mut rng, half)).collect();
    let (w_own, w_group) = (spec.rho.sqrt(), (1.0 - spec.rho).sqrt());
    let mut next_phone = 0u64;
    let mut new_vendor = |rng: &mut ChaCha8Rng, slot: usize| {
        let text_center = mix(&unit(rng, half), w_own, &text_groups[slot / spec.group_size % n_groups], w_group);
        let image_center = mix(&unit(rng, half), w_own, &image_groups[slot % n_groups], w_group);
        let words = (0..6).map(|_| pseudo_word(rng)).collect();
        let phones = [phone(next_phone), phone(next_phone + 1)];
        next_phone += 2;
        Vendor { text_center, image_center, words, phones }
    };

    let home: Vec<Vendor> = (0..spec.vendors).map(|slot| new_vendor(&mut rng, slot)).collect();
    let mut extra: Vec<Vendor> = Vec::new();
    let mut raw = Vec::new();
    let mut text_rows = Vec::new();
    let mut image_rows = Vec::new();
    let mut image_ids = Vec::new();
    let mut ad_counter = 0usize;

    for (region_idx, &region) in spec.regions.iter().enumerate() {
        let roster: Vec<(bool, usize)> = if region_idx == 0 {
            (0..spec.vendors).map(|i| (true, i)).collect()
        } else {
            let n_shared = (spec.shared_vendor_fraction * spec.vendors as f64).round() as usize;
            let mut pool: Vec<usize> = (0..spec.vendors).collect();
            pool.shuffle(&mut rng);
            let mut roster: Vec<(bool, usize)> = pool[..n_shared].iter().map(|&i| (true, i)).collect();
            roster.sort();
            for slot in n_shared..spec.vendors {
                extra.push(new_vendor(&mut rng, slot));
                roster.push((false, extra.len() - 1));
            }
            roster
        };
        for (is_home, idx) in roster {
            let vendor = if is_home { &home[idx] } else { &extra[idx] };
            for j in 0..spec.ads_per_vendor {
                ad_counter += 1;
                let id = format!("{}-{ad_counter:05}", region.as_str().to_ascii_lowercase());
                let mut words: Vec<&str> = vendor.words.iter().map(String::as_str).collect();
                words.shuffle(&mut rng);
                words.truncate(4);
                words.extend(COMMON_WORDS.choose_multiple(&mut rng, 3));
                let contact = if j == 0 {
                    format!("{} or {}", vendor.phones[0], vendor.phones[1])
                } else {
                    vendor.phones[j % 2].clone()
                };
                let title = words[..3].join(" ");
                let description = format!("{} call {contact}", words[3..].join(" "));
                let image_refs: Vec<String> = (0..spec.images_per_ad).map(|k| format!("img/{id}-{k}.jpg")).collect();
                text_rows.push(embed_block(&noisy(&mut rng, &vendor.text_center, spec.spread), 0));
                for pos in 0..spec.images_per_ad {
                    image_ids.push(MultimodalSample::sample_id(&id, pos));
                    image_rows.push(embed_block(&noisy(&mut rng, &vendor.image_center, spec.spread), 1));
                }
                raw.push(RawAd { id, region, title, description, image_refs });
            }
        }
    }

    let ads: Vec<MaskedAd> = raw.iter().map(mask_ad).collect();
    let communities = build_communities(&ads)?;
    let to_matrix = |rows: &[Vec<f64>]| {
        Matrix::from_shape_vec((rows.len(), spec.dim), rows.concat()).map_err(|e| Error::Shape(e.to_string()))
    };
    let text = EmbeddingMatrix::new(raw.iter().map(|a| a.id.clone()).collect(), to_matrix(&text_rows)?, true)?;
    let image = EmbeddingMatrix::new(image_ids, to_matrix(&image_rows)?, true)?;
    Ok(Corpus { raw, ads, communities, text, image })
}
