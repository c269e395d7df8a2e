//! Datasets: ingestion of raw rating/trust files, implicit-feedback
//! preprocessing, splitting, synthetic generation and the on-disk format.

mod ingest;
mod preprocess;
mod store;
mod synth;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use crate::error::{HsrError, Result};
use crate::model::SocialGraph;

pub use ingest::{ingest, parse_ratings, parse_trust, IdMap, RawRatings, RawTrust};
pub use preprocess::{largest_remainder, preprocess, split, DEFAULT_THRESHOLD};
pub(crate) use preprocess::sample_unrated;
pub use store::{
    parse_idmap, parse_meta, parse_records, parse_social, read_dataset, write_dataset, Meta,
};
pub use synth::{synth_generate, SynthConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub const ALL: [SplitTag; 3] = [SplitTag::Train, SplitTag::Val, SplitTag::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitTag {
    type Err = HsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "val" => Ok(SplitTag::Val),
            "test" => Ok(SplitTag::Test),
            other => Err(HsrError::Input(format!("unknown split '{other}'"))),
        }
    }
}

/// One labeled `(user, item)` pair. Label 1 is an observed positive, label 0
/// a sampled unrated item.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabeledRecord {
    pub user: usize,
    pub item: usize,
    pub label: bool,
    pub split: SplitTag,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionData {
    pub num_users: usize,
    pub num_items: usize,
    /// Sorted by `(user, item)`.
    pub records: Vec<LabeledRecord>,
    pub social: SocialGraph,
    pub user_tokens: Vec<String>,
    pub item_tokens: Vec<String>,
}

impl InteractionData {
    /// Checks id ranges and that every user has one record per item at most
    /// and at least one trust link.
    pub fn validate(&self) -> Result<()> {
        if self.social.num_users() != self.num_users {
            return Err(HsrError::Input(format!(
                "social graph has {} users, dataset has {}",
                self.social.num_users(),
                self.num_users
            )));
        }
        if self.user_tokens.len() != self.num_users || self.item_tokens.len() != self.num_items {
            return Err(HsrError::Input("id maps do not match the dataset counts".into()));
        }
        let mut seen = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            if r.user >= self.num_users || r.item >= self.num_items {
                return Err(HsrError::Input(format!(
                    "record ({}, {}) is outside the dataset",
                    r.user, r.item
                )));
            }
            if !seen.insert((r.user, r.item)) {
                return Err(HsrError::Input(format!(
                    "pair ({}, {}) is labeled more than once",
                    r.user, r.item
                )));
            }
        }
        let isolated = self.isolated_users();
        if let Some(&u) = isolated.first() {
            return Err(HsrError::Input(format!(
                "{} users have no social links (first: {u})",
                isolated.len()
            )));
        }
        Ok(())
    }

    fn isolated_users(&self) -> Vec<usize> {
        let indeg = self.social.in_degrees();
        (0..self.num_users)
            .filter(|&u| self.social.out_degree(u) == 0 && indeg[u] == 0)
            .collect()
    }

    pub fn records_in(&self, split: SplitTag) -> impl Iterator<Item = &LabeledRecord> + '_ {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Per-user sorted positive items restricted to `split`.
    pub fn positives(&self, split: SplitTag) -> Vec<Vec<usize>> {
        self.positives_where(|r| r.split == split)
    }

    /// Per-user sorted positive items across every split.
    pub fn all_positives(&self) -> Vec<Vec<usize>> {
        self.positives_where(|_| true)
    }

    fn positives_where(&self, keep: impl Fn(&LabeledRecord) -> bool) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_users];
        for r in self.records.iter().filter(|r| r.label && keep(r)) {
            out[r.user].push(r.item);
        }
        for list in &mut out {
            list.sort_unstable();
        }
        out
    }

    pub fn split_counts(&self) -> BTreeMap<SplitTag, usize> {
        let mut counts: BTreeMap<SplitTag, usize> = SplitTag::ALL.iter().map(|&s| (s, 0)).collect();
        for r in &self.records {
            *counts.get_mut(&r.split).unwrap() += 1;
        }
        counts
    }

    pub fn num_positives(&self) -> usize {
        self.records.iter().filter(|r| r.label).count()
    }

    /// Copy with every trust edge mirrored.
    pub fn symmetrized(&self) -> Self {
        InteractionData {
            social: self.social.symmetrized(),
            ..self.clone()
        }
    }

    /// Reverse of preprocessing: positives become ratings at `threshold`,
    /// labeled negatives become ratings below it.
    pub fn to_raw(&self, threshold: f64) -> (RawRatings, RawTrust) {
        let users = IdMap::from_tokens(self.user_tokens.clone());
        let items = IdMap::from_tokens(self.item_tokens.clone());
        let records = self
            .records
            .iter()
            .map(|r| (r.user, r.item, if r.label { threshold } else { threshold - 1.0 }))
            .collect();
        let ratings = RawRatings {
            users,
            items,
            records,
            duplicates: 0,
        };
        let trust = RawTrust {
            pairs: self.social.edges().collect(),
            dropped: 0,
        };
        (ratings, trust)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DegreeKind {
    UserInteractions,
    ItemInteractions,
    Social,
}

impl FromStr for DegreeKind {
    type Err = HsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "user_interactions" | "users" => Ok(DegreeKind::UserInteractions),
            "item_interactions" | "items" => Ok(DegreeKind::ItemInteractions),
            "social" => Ok(DegreeKind::Social),
            other => Err(HsrError::Input(format!("unknown degree kind '{other}'"))),
        }
    }
}

/// Exact `(degree, count)` histogram over nodes with nonzero degree, sorted
/// by degree. Interaction degrees count positive records in every split;
/// social degree is out-degree.
pub fn degree_histogram(data: &InteractionData, which: DegreeKind) -> Vec<(usize, usize)> {
    let degrees: Vec<usize> = match which {
        DegreeKind::UserInteractions => {
            let mut d = vec![0; data.num_users];
            data.records.iter().filter(|r| r.label).for_each(|r| d[r.user] += 1);
            d
        }
        DegreeKind::ItemInteractions => {
            let mut d = vec![0; data.num_items];
            data.records.iter().filter(|r| r.label).for_each(|r| d[r.item] += 1);
            d
        }
        DegreeKind::Social => (0..data.num_users).map(|u| data.social.out_degree(u)).collect(),
    };
    histogram(&degrees)
}

pub(crate) fn histogram(degrees: &[usize]) -> Vec<(usize, usize)> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &d in degrees.iter().filter(|&&d| d > 0) {
        *counts.entry(d).or_default() += 1;
    }
    counts.into_iter().collect()
}

/// Slope of a least-squares line through the log-binned degree density,
/// `log p(k)` against `log k`. Bins grow by `ratio` and empty bins are
/// skipped.
pub fn log_binned_slope(hist: &[(usize, usize)], ratio: f64) -> Option<f64> {
    let total: usize = hist.iter().map(|&(_, c)| c).sum();
    let max_k = hist.last()?.0 as f64;
    if total == 0 || ratio <= 1.0 {
        return None;
    }
    let by_degree: HashMap<usize, usize> = hist.iter().copied().collect();
    let mut points = Vec::new();
    let mut lo = 1.0_f64;
    while lo <= max_k {
        let hi = (lo * ratio).ceil().max(lo + 1.0);
        let (a, b) = (lo as usize, hi as usize);
        let count: usize = (a..b).filter_map(|k| by_degree.get(&k)).sum();
        if count > 0 {
            let width = (b - a) as f64;
            let center = ((a as f64) * ((b - 1) as f64)).sqrt();
            points.push((center.ln(), (count as f64 / (width * total as f64)).ln()));
        }
        lo = hi;
    }
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}
