//! Synthetic social-recommendation data with a planted hierarchy.
//!
//! Users and items live on the nodes of a complete tree. Social out-degrees
//! follow a discrete power law and the best connected users sit closest to
//! the root. Trust edges prefer popular targets nearby in the tree, and
//! interactions prefer popular items nearby in the tree, so linked users
//! tend to share items.

use std::collections::HashSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::error::{HsrError, Result};
use crate::model::SocialGraph;

use super::{preprocess, InteractionData, LabeledRecord, SplitTag};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_users: usize,
    pub num_items: usize,
    /// Exponent `α` of the out-degree law `P(k) ∝ k^-α`.
    pub exponent: f64,
    pub branching: usize,
    pub depth: usize,
    pub max_degree: usize,
    /// Decay of trust-edge preference per unit of tree distance.
    pub social_locality: f64,
    /// Decay of item preference per unit of tree distance.
    pub item_locality: f64,
    /// Zipf exponent of item popularity.
    pub item_popularity: f64,
    pub base_interactions: usize,
    pub interactions_per_link: usize,
    pub max_interactions: usize,
    pub ratios: [f64; 3],
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_users: 2000,
            num_items: 3000,
            exponent: 2.5,
            branching: 4,
            depth: 3,
            max_degree: 200,
            social_locality: 1.0,
            item_locality: 1.5,
            item_popularity: 0.8,
            base_interactions: 4,
            interactions_per_link: 3,
            max_interactions: 60,
            ratios: [7.0, 1.0, 2.0],
        }
    }
}

impl SynthConfig {
    pub fn new(num_users: usize, num_items: usize, exponent: f64) -> Self {
        SynthConfig {
            num_users,
            num_items,
            exponent,
            ..SynthConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.exponent > 1.0) || !self.exponent.is_finite() {
            return Err(HsrError::Input(format!("exponent must exceed 1, got {}", self.exponent)));
        }
        if self.num_users < 2 || self.num_items < 2 {
            return Err(HsrError::Input("need at least 2 users and 2 items".into()));
        }
        if self.branching < 1 || self.max_degree < 1 {
            return Err(HsrError::Input("branching and max_degree must be positive".into()));
        }
        let finite = [self.social_locality, self.item_locality, self.item_popularity];
        if finite.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(HsrError::Input("locality and popularity must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// A tree node as `(depth, index among the nodes at that depth)`.
#[derive(Clone, Copy, Debug)]
struct TreeNode {
    depth: usize,
    index: usize,
}

struct Tree {
    branching: usize,
}

impl Tree {
    fn ancestor(&self, n: TreeNode, depth: usize) -> usize {
        n.index / self.branching.pow((n.depth - depth) as u32)
    }

    fn dist(&self, a: TreeNode, b: TreeNode) -> usize {
        let mut k = a.depth.min(b.depth);
        while self.ancestor(a, k) != self.ancestor(b, k) {
            k -= 1;
        }
        a.depth + b.depth - 2 * k
    }
}

/// Share of users, by descending out-degree, placed at each depth above the leaves.
const DEPTH_QUANTILES: [f64; 3] = [0.01, 0.06, 0.26];

pub fn synth_generate<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Result<InteractionData> {
    cfg.validate()?;
    let (nu, ni) = (cfg.num_users, cfg.num_items);
    let tree = Tree {
        branching: cfg.branching,
    };
    let leaves = cfg.branching.pow(cfg.depth as u32);
    let kmax = cfg.max_degree.min(nu - 1);

    let degree_law = WeightedIndex::new((1..=kmax).map(|k| (k as f64).powf(-cfg.exponent)))
        .map_err(|e| HsrError::Input(format!("degree law: {e}")))?;
    let degrees: Vec<usize> = (0..nu).map(|_| degree_law.sample(rng) + 1).collect();

    let mut by_degree: Vec<usize> = (0..nu).collect();
    by_degree.sort_by(|&a, &b| degrees[b].cmp(&degrees[a]).then(a.cmp(&b)));
    let mut users = vec![TreeNode { depth: 0, index: 0 }; nu];
    for (rank, &u) in by_degree.iter().enumerate() {
        let q = rank as f64 / nu as f64;
        let depth = DEPTH_QUANTILES
            .iter()
            .take(cfg.depth)
            .position(|&t| q < t)
            .unwrap_or(cfg.depth);
        let leaf = rng.gen_range(0..leaves);
        users[u] = TreeNode {
            depth,
            index: tree.ancestor(TreeNode { depth: cfg.depth, index: leaf }, depth),
        };
    }

    let social_decay: Vec<f64> = (0..=2 * cfg.depth)
        .map(|d| (-cfg.social_locality * d as f64).exp())
        .collect();
    let mut edges = Vec::new();
    for a in 0..nu {
        let weight = |b: usize| {
            if b == a {
                0.0
            } else {
                (degrees[b] + 1) as f64 * social_decay[tree.dist(users[a], users[b])]
            }
        };
        for b in weighted_distinct(rng, nu, weight, degrees[a]) {
            edges.push((a, b));
        }
    }
    let social = SocialGraph::from_edges(nu, edges)?;

    let mut popularity: Vec<f64> = (0..ni)
        .map(|r| ((r + 1) as f64).powf(-cfg.item_popularity))
        .collect();
    popularity.shuffle(rng);
    let items: Vec<TreeNode> = (0..ni)
        .map(|_| TreeNode {
            depth: cfg.depth,
            index: rng.gen_range(0..leaves),
        })
        .collect();
    let item_decay: Vec<f64> = (0..=2 * cfg.depth)
        .map(|d| (-cfg.item_locality * d as f64).exp())
        .collect();

    let mut records = Vec::new();
    for u in 0..nu {
        let n = (cfg.base_interactions + cfg.interactions_per_link * degrees[u])
            .min(cfg.max_interactions)
            .min(ni / 2)
            .max(1);
        let weight = |i: usize| popularity[i] * item_decay[tree.dist(users[u], items[i])];
        let positives = weighted_distinct(rng, ni, weight, n);
        let seen: HashSet<usize> = positives.iter().copied().collect();
        let negatives = preprocess::sample_unrated(rng, ni, &seen, positives.len());
        let rec = |item, label| LabeledRecord {
            user: u,
            item,
            label,
            split: SplitTag::Train,
        };
        records.extend(positives.into_iter().map(|i| rec(i, true)));
        records.extend(negatives.into_iter().map(|i| rec(i, false)));
    }
    records.sort_unstable();

    let data = InteractionData {
        num_users: nu,
        num_items: ni,
        records,
        social,
        user_tokens: (0..nu).map(|u| format!("u{u}")).collect(),
        item_tokens: (0..ni).map(|i| format!("i{i}")).collect(),
    };
    preprocess::split(data, cfg.ratios, rng)
}

/// Up to `amount` distinct indices drawn without replacement in proportion
/// to `weight`, sorted.
fn weighted_distinct<R: Rng>(rng: &mut R, len: usize, weight: impl Fn(usize) -> f64, amount: usize) -> Vec<usize> {
    let positive = (0..len).filter(|&i| weight(i) > 0.0).count();
    let amount = amount.min(positive);
    let mut out: Vec<usize> = index::sample_weighted(rng, len, weight, amount)
        .expect("weights are finite and non-negative")
        .into_iter()
        .collect();
    out.sort_unstable();
    out
}
