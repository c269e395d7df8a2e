//! Evaluation: CTR metrics on labeled records, top-K ranking against sampled
//! unrated items, sparsity bins, embedding-norm hierarchy and attention export.

mod analysis;
mod metrics;
pub mod report;

use std::collections::{BTreeMap, HashSet};

use log::warn;
use rayon::prelude::*;

use crate::data::{sample_unrated, InteractionData, SplitTag};
use crate::error::{HsrError, Result};
use crate::model::Model;
use crate::objective::stream_rng;

pub use analysis::{attention_export, hierarchy_analysis, sparsity_bins, AttentionExport, HierarchyGroup};
pub use metrics::{accuracy, auc, precision_recall_at, RankedList};

pub const DEFAULT_KS: [usize; 4] = [5, 10, 15, 20];
pub const DEFAULT_NEGATIVES: usize = 500;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

const TOPK_STREAM: u64 = 0x70_4b;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    pub negatives: usize,
    pub threshold: f64,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ks: DEFAULT_KS.to_vec(),
            negatives: DEFAULT_NEGATIVES,
            threshold: DEFAULT_THRESHOLD,
            repeats: 1,
            seed: 0,
        }
    }
}

/// CTR and top-K metrics. Undefined values (for instance AUC of a group with
/// one class) are `None`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub auc: Option<f64>,
    pub accuracy: Option<f64>,
    pub precision: BTreeMap<usize, f64>,
    pub recall: BTreeMap<usize, f64>,
    /// Users that contributed to the top-K averages.
    pub ranked_users: usize,
    pub records: usize,
}

/// Top-K outcome of one user for one candidate draw.
#[derive(Clone, Debug, PartialEq)]
pub struct UserTopK {
    pub user: usize,
    pub num_positives: usize,
    /// Hits at each K of the requested grid, same order.
    pub hits: Vec<usize>,
}

/// Scores `(ŷ, label)` for every record of `split`, in record order.
pub fn score_records(model: &Model<'_>, data: &InteractionData, split: SplitTag) -> Result<Vec<(f64, bool)>> {
    let recs: Vec<_> = data.records_in(split).collect();
    recs.par_iter()
        .map(|r| Ok((model.predict(r.user, r.item)?, r.label)))
        .collect()
}

/// AUC and accuracy over labeled records.
pub fn ctr_metrics(scored: &[(f64, bool)], threshold: f64) -> (Option<f64>, Option<f64>) {
    (auc(scored).ok(), accuracy(scored, threshold).ok())
}

/// Ranks each user's test positives among `negatives` sampled unrated items.
/// Users without test positives are skipped. Each user draws candidates from
/// its own stream of `(seed, repeat)`, so the result does not depend on the
/// thread count.
pub fn topk_per_user(
    model: &Model<'_>,
    data: &InteractionData,
    ks: &[usize],
    negatives: usize,
    seed: u64,
    repeat: u64,
) -> Result<Vec<UserTopK>> {
    if ks.iter().any(|&k| k == 0) {
        return Err(HsrError::Usage("K must be positive".into()));
    }
    let rated: Vec<HashSet<usize>> = data
        .all_positives()
        .into_iter()
        .map(|v| v.into_iter().collect())
        .collect();
    let test = data.positives(SplitTag::Test);
    let users: Vec<usize> = (0..data.num_users).filter(|&u| !test[u].is_empty()).collect();
    let short = users
        .iter()
        .filter(|&&u| data.num_items - rated[u].len() < negatives)
        .count();
    if short > 0 {
        warn!("{short} users have fewer than {negatives} unrated items; using all of them");
    }
    users
        .par_iter()
        .map(|&u| {
            let mut rng = stream_rng(seed, TOPK_STREAM + repeat, u as u64);
            let available = data.num_items - rated[u].len();
            let mut candidates = sample_unrated(&mut rng, data.num_items, &rated[u], negatives.min(available));
            candidates.extend_from_slice(&test[u]);
            let scores = model.score_items(u, &candidates)?;
            let list = RankedList::new(u, &candidates, &scores);
            let positives: HashSet<usize> = test[u].iter().copied().collect();
            Ok(UserTopK {
                user: u,
                num_positives: positives.len(),
                hits: ks.iter().map(|&k| list.hits_at(k, &positives)).collect(),
            })
        })
        .collect()
}

/// Macro-averaged `(precision@K, recall@K)` over `rows`.
pub fn summarize_topk(rows: &[&UserTopK], ks: &[usize]) -> (BTreeMap<usize, f64>, BTreeMap<usize, f64>) {
    let mut precision = BTreeMap::new();
    let mut recall = BTreeMap::new();
    if rows.is_empty() {
        return (precision, recall);
    }
    let n = rows.len() as f64;
    for (slot, &k) in ks.iter().enumerate() {
        let p: f64 = rows.iter().map(|r| r.hits[slot] as f64 / k as f64).sum();
        let r: f64 = rows.iter().map(|r| r.hits[slot] as f64 / r.num_positives as f64).sum();
        precision.insert(k, p / n);
        recall.insert(k, r / n);
    }
    (precision, recall)
}

/// Per-repeat top-K rows plus CTR scores on the test split.
pub struct Evaluation {
    pub scored: Vec<(f64, bool)>,
    pub record_users: Vec<usize>,
    pub topk: Vec<Vec<UserTopK>>,
    pub options: EvalOptions,
}

impl Evaluation {
    pub fn run(model: &Model<'_>, data: &InteractionData, options: &EvalOptions) -> Result<Self> {
        if options.repeats == 0 {
            return Err(HsrError::Usage("repeats must be at least 1".into()));
        }
        let scored = score_records(model, data, SplitTag::Test)?;
        let record_users = data.records_in(SplitTag::Test).map(|r| r.user).collect();
        let topk = (0..options.repeats as u64)
            .map(|r| topk_per_user(model, data, &options.ks, options.negatives, options.seed, r))
            .collect::<Result<_>>()?;
        Ok(Evaluation {
            scored,
            record_users,
            topk,
            options: options.clone(),
        })
    }

    /// Metrics restricted to users for which `keep` holds, averaged over repeats.
    pub fn report_for(&self, keep: impl Fn(usize) -> bool) -> MetricReport {
        let scored: Vec<(f64, bool)> = self
            .scored
            .iter()
            .zip(&self.record_users)
            .filter(|(_, &u)| keep(u))
            .map(|(s, _)| *s)
            .collect();
        let (auc, accuracy) = ctr_metrics(&scored, self.options.threshold);
        let mut precision: BTreeMap<usize, f64> = BTreeMap::new();
        let mut recall: BTreeMap<usize, f64> = BTreeMap::new();
        let mut ranked_users = 0;
        for rows in &self.topk {
            let rows: Vec<&UserTopK> = rows.iter().filter(|r| keep(r.user)).collect();
            ranked_users = rows.len();
            let (p, r) = summarize_topk(&rows, &self.options.ks);
            for (k, v) in p {
                *precision.entry(k).or_default() += v / self.topk.len() as f64;
            }
            for (k, v) in r {
                *recall.entry(k).or_default() += v / self.topk.len() as f64;
            }
        }
        MetricReport {
            auc,
            accuracy,
            precision,
            recall,
            ranked_users,
            records: scored.len(),
        }
    }

    pub fn report(&self) -> MetricReport {
        self.report_for(|_| true)
    }
}

/// Evaluation of one sparsity bin.
#[derive(Clone, Debug, PartialEq)]
pub struct BinReport {
    pub bin: usize,
    pub users: usize,
    pub interactions: usize,
    pub min_count: usize,
    pub max_count: usize,
    pub metrics: MetricReport,
}

/// Groups users by training interaction count (see [`sparsity_bins`]) and
/// evaluates each group.
pub fn bin_reports(evaluation: &Evaluation, data: &InteractionData, num_bins: usize) -> Result<Vec<BinReport>> {
    let counts: Vec<usize> = data.positives(SplitTag::Train).iter().map(Vec::len).collect();
    let bins = sparsity_bins(&counts, num_bins)?;
    Ok((0..num_bins)
        .map(|b| {
            let members: Vec<usize> = (0..data.num_users).filter(|&u| bins[u] == b).collect();
            let member_counts = members.iter().map(|&u| counts[u]);
            BinReport {
                bin: b + 1,
                users: members.len(),
                interactions: member_counts.clone().sum(),
                min_count: member_counts.clone().min().unwrap_or(0),
                max_count: member_counts.max().unwrap_or(0),
                metrics: evaluation.report_for(|u| bins[u] == b),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};
    use crate::diff::ParamStore;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture(cfg: &ModelConfig) -> (InteractionData, ParamStore) {
        let data = synth_generate(&SynthConfig::new(60, 700, 2.5), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let ball = cfg.ball().unwrap();
        let params = ParamStore::init(data.num_users, data.num_items, cfg.dim, cfg.layers, Some(&ball), &mut ChaCha8Rng::seed_from_u64(3));
        (data, params)
    }

    #[test]
    fn topk_is_deterministic_and_well_formed() {
        let cfg = ModelConfig {
            dim: 4,
            ..ModelConfig::default()
        };
        let (data, params) = fixture(&cfg);
        let model = Model::new(&params, &data.social, &cfg).unwrap();
        let opts = EvalOptions {
            seed: 5,
            repeats: 2,
            ..EvalOptions::default()
        };
        let a = Evaluation::run(&model, &data, &opts).unwrap();
        let b = Evaluation::run(&model, &data, &opts).unwrap();
        assert_eq!(a.report(), b.report());
        for row in a.topk.iter().flatten() {
            assert!(row.hits.windows(2).all(|w| w[0] <= w[1]));
            for (slot, &k) in opts.ks.iter().enumerate() {
                assert!(row.hits[slot] <= k.min(row.num_positives));
            }
        }
        let rep = a.report();
        let r: Vec<f64> = rep.recall.values().copied().collect();
        assert!(r.windows(2).all(|w| w[0] <= w[1]));
        assert!(rep.precision.values().chain(rep.recall.values()).all(|v| (0.0..=1.0).contains(v)));
        assert!(rep.auc.is_some());
    }

    #[test]
    fn single_thread_matches_pool() {
        let cfg = ModelConfig {
            dim: 4,
            ..ModelConfig::default()
        };
        let (data, params) = fixture(&cfg);
        let model = Model::new(&params, &data.social, &cfg).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let a = one.install(|| topk_per_user(&model, &data, &DEFAULT_KS, 100, 1, 0)).unwrap();
        let b = topk_per_user(&model, &data, &DEFAULT_KS, 100, 1, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_scores_recall_matches_expectation() {
        // One positive among 501 candidates: E[Recall@20] = 20/501.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let trials = 4000;
        let mut hits = 0;
        for _ in 0..trials {
            let items: Vec<usize> = (0..501).collect();
            let scores: Vec<f64> = items.iter().map(|_| rand::Rng::gen::<f64>(&mut rng)).collect();
            let list = RankedList::new(0, &items, &scores);
            hits += list.hits_at(20, &[500].into());
        }
        let observed = hits as f64 / trials as f64;
        let expected = 20.0 / 501.0;
        assert!((observed - expected).abs() < 0.2 * expected, "{observed} vs {expected}");
    }

    #[test]
    fn summary_of_known_rows() {
        let row = UserTopK {
            user: 0,
            num_positives: 2,
            hits: vec![2, 2],
        };
        let (p, r) = summarize_topk(&[&row], &[5, 10]);
        assert_eq!(p[&5], 0.4);
        assert_eq!(r[&5], 1.0);
        assert_eq!(p[&10], 0.2);
    }
}
