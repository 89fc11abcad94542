//! Vendor ground truth: connected components of the ad/identifier graph.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::records::MaskedAd;

/// Disjoint sets over `0..n` with path compression and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    /// Returns true when two distinct sets were merged.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }
}

/// Ad id to dense vendor label, plus the inverse.
///
/// Labels are `0..V` in ascending order of each community's smallest ad id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VendorCommunities {
    labels: BTreeMap<String, usize>,
    members: Vec<BTreeSet<String>>,
}

impl VendorCommunities {
    /// Build from arbitrary groups of ad ids, relabeling densely.
    pub fn from_groups(groups: impl IntoIterator<Item = BTreeSet<String>>) -> Result<Self> {
        let mut members: Vec<BTreeSet<String>> = groups.into_iter().filter(|g| !g.is_empty()).collect();
        members.sort_by(|a, b| a.first().cmp(&b.first()));
        let mut labels = BTreeMap::new();
        for (label, group) in members.iter().enumerate() {
            for id in group {
                if labels.insert(id.clone(), label).is_some() {
                    return Err(Error::DuplicateId(id.clone()));
                }
            }
        }
        Ok(VendorCommunities { labels, members })
    }

    pub fn label(&self, ad_id: &str) -> Option<usize> {
        self.labels.get(ad_id).copied()
    }

    pub fn labels(&self) -> &BTreeMap<String, usize> {
        &self.labels
    }

    pub fn members(&self, label: usize) -> Option<&BTreeSet<String>> {
        self.members.get(label)
    }

    pub fn communities(&self) -> &[BTreeSet<String>] {
        &self.members
    }

    pub fn num_vendors(&self) -> usize {
        self.members.len()
    }

    pub fn num_ads(&self) -> usize {
        self.labels.len()
    }

    /// `ad_id,vendor_label` rows sorted by ad id, with a header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["ad_id", "vendor_label"])?;
        for (id, label) in &self.labels {
            wtr.write_record([id.as_str(), &label.to_string()])?;
        }
        wtr.flush().map_err(|e| Error::io("<labels>", e))?;
        Ok(())
    }

    /// Import precomputed labels. Labels are re-densified with the usual rule,
    /// so any integer labelling is accepted.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut groups: BTreeMap<i64, BTreeSet<String>> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for (idx, record) in rdr.records().enumerate() {
            let line = idx + 2;
            let record = record.map_err(|e| Error::Parse { line, reason: e.to_string() })?;
            let (Some(id), Some(label)) = (record.get(0), record.get(1)) else {
                return Err(Error::Parse { line, reason: "expected `ad_id,vendor_label`".into() });
            };
            let label: i64 = label
                .trim()
                .parse()
                .map_err(|_| Error::Parse { line, reason: format!("bad label `{label}`") })?;
            if !seen.insert(id.to_string()) {
                return Err(Error::DuplicateId(id.to_string()));
            }
            groups.entry(label).or_default().insert(id.to_string());
        }
        Self::from_groups(groups.into_values())
    }
}

/// Union ads that share any identifier.
pub fn build_communities(ads: &[MaskedAd]) -> Result<VendorCommunities> {
    let mut uf = UnionFind::new(ads.len());
    let mut owner: HashMap<&str, usize> = HashMap::new();
    let mut seen_ids = BTreeSet::new();
    for (i, ad) in ads.iter().enumerate() {
        if !seen_ids.insert(ad.id.as_str()) {
            return Err(Error::DuplicateId(ad.id.clone()));
        }
        if ad.identifiers.is_empty() {
            return Err(Error::NoIdentifiers(ad.id.clone()));
        }
        for ident in &ad.identifiers {
            match owner.get(ident.as_str()) {
                Some(&j) => {
                    uf.union(i, j);
                }
                None => {
                    owner.insert(ident, i);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for (i, ad) in ads.iter().enumerate() {
        groups.entry(uf.find(i)).or_default().insert(ad.id.clone());
    }
    VendorCommunities::from_groups(groups.into_values())
}

/// Drop communities with fewer than `min_count` ads and relabel densely.
pub fn filter_min_ads(c: &VendorCommunities, min_count: usize) -> VendorCommunities {
    let min_count = min_count.max(1);
    let kept = c.communities().iter().filter(|g| g.len() >= min_count).cloned();
    VendorCommunities::from_groups(kept).expect("communities are already disjoint")
}
