//! Training triples and losses.
//!
//! The recommendation loss is pointwise cross-entropy on a positive and a
//! sampled negative item. The social loss is a BPR ranking of a trusted
//! neighbor above a sampled stranger, scored by negative distance between
//! raw user embeddings.

use log::warn;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{InteractionData, SplitTag};
use crate::diff::{NodeId, Tape};
use crate::error::{HsrError, Result};
use crate::model::{Model, SocialGraph, Space, TapedModel};

/// Probabilities are clamped into this window before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RecTriple {
    pub u: usize,
    pub i: usize,
    pub j: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SocialTriple {
    pub u: usize,
    pub p: usize,
    pub q: usize,
}

/// Independent, reproducible random stream for `(seed, purpose, index)`.
pub fn stream_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index);
    rng
}

/// Draws `(u, i, j)` with `(u, i)` uniform over training positives and `j`
/// uniform over items `u` has no training positive for.
#[derive(Clone, Debug)]
pub struct RecSampler {
    pairs: Vec<(usize, usize)>,
    positives: Vec<Vec<usize>>,
    num_items: usize,
}

impl RecSampler {
    pub fn new(data: &InteractionData) -> Self {
        Self::from_positives(data.positives(SplitTag::Train), data.num_items)
    }

    /// `positives[u]` must be sorted.
    pub fn from_positives(positives: Vec<Vec<usize>>, num_items: usize) -> Self {
        let mut pairs = Vec::new();
        let mut saturated = 0;
        for (u, items) in positives.iter().enumerate() {
            if items.len() >= num_items {
                saturated += u64::from(!items.is_empty());
                continue;
            }
            pairs.extend(items.iter().map(|&i| (u, i)));
        }
        if saturated > 0 {
            warn!("{saturated} users have every item as a positive and are skipped by the sampler");
        }
        RecSampler {
            pairs,
            positives,
            num_items,
        }
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn sample<R: Rng>(&self, b: usize, rng: &mut R) -> Vec<RecTriple> {
        if self.pairs.is_empty() {
            return Vec::new();
        }
        (0..b)
            .map(|_| {
                let (u, i) = self.pairs[rng.gen_range(0..self.pairs.len())];
                let j = loop {
                    let j = rng.gen_range(0..self.num_items);
                    if self.positives[u].binary_search(&j).is_err() {
                        break j;
                    }
                };
                RecTriple { u, i, j }
            })
            .collect()
    }
}

/// Draws `(u, p, q)` with `(u, p)` uniform over trust edges and `q` uniform
/// over users that are neither `u` nor trusted by `u`.
#[derive(Clone, Debug)]
pub struct SocialSampler<'a> {
    graph: &'a SocialGraph,
    edges: Vec<(usize, usize)>,
}

impl<'a> SocialSampler<'a> {
    pub fn new(graph: &'a SocialGraph) -> Self {
        let n = graph.num_users();
        let mut saturated = 0;
        let edges = graph
            .edges()
            .filter(|&(u, _)| {
                let full = graph.out_degree(u) + 1 >= n;
                saturated += u64::from(full);
                !full
            })
            .collect();
        if saturated > 0 {
            warn!("social sampler skips edges of users who trust everyone");
        }
        SocialSampler { graph, edges }
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn sample<R: Rng>(&self, b: usize, rng: &mut R) -> Vec<SocialTriple> {
        if self.edges.is_empty() {
            return Vec::new();
        }
        let n = self.graph.num_users();
        (0..b)
            .map(|_| {
                let (u, p) = self.edges[rng.gen_range(0..self.edges.len())];
                let q = loop {
                    let q = rng.gen_range(0..n);
                    if q != u && !self.graph.has_edge(u, q) {
                        break q;
                    }
                };
                SocialTriple { u, p, q }
            })
            .collect()
    }
}

fn check_prob(p: f64) -> Result<()> {
    if p.is_nan() {
        return Err(HsrError::Numeric("predicted probability is NaN".into()));
    }
    Ok(())
}

/// `−Σ [ln ŷ_ui + ln(1 − ŷ_uj)]` over `(ŷ_ui, ŷ_uj)` pairs, with clamping.
pub fn rec_loss_from_probs(pairs: &[(f64, f64)]) -> Result<f64> {
    let mut total = 0.0;
    for &(pos, neg) in pairs {
        check_prob(pos)?;
        check_prob(neg)?;
        let pos = pos.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        let neg = neg.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        total -= pos.ln() + (1.0 - neg).ln();
    }
    Ok(total)
}

/// Taped recommendation loss. Returns `None` for an empty batch.
pub fn rec_loss(tape: &mut Tape, model: &mut TapedModel<'_>, batch: &[RecTriple]) -> Result<Option<NodeId>> {
    let mut terms = Vec::with_capacity(2 * batch.len());
    for t in batch {
        let pos = model.probability(tape, t.u, t.i)?;
        let neg = model.probability(tape, t.u, t.j)?;
        check_prob(tape.scalar_value(pos))?;
        check_prob(tape.scalar_value(neg))?;
        let pos = tape.clamp(pos, PROB_FLOOR, 1.0 - PROB_FLOOR);
        let neg = tape.clamp(neg, PROB_FLOOR, 1.0 - PROB_FLOOR);
        terms.push(tape.ln(pos));
        let neg = tape.neg(neg);
        let one_minus = tape.add_const(neg, 1.0);
        terms.push(tape.ln(one_minus));
    }
    if terms.is_empty() {
        return Ok(None);
    }
    let s = tape.sum(&terms);
    Ok(Some(tape.neg(s)))
}

/// Similarity of two raw user embeddings: `−dist(ua, ub)`.
pub fn social_score(space: &Space, ua: &[f64], ub: &[f64]) -> f64 {
    -space.dist(ua, ub)
}

/// `−Σ ln σ(score(u,p) − score(u,q))` evaluated without a tape.
pub fn social_loss_value(space: &Space, users: impl Fn(usize) -> Vec<f64>, batch: &[SocialTriple]) -> f64 {
    batch
        .iter()
        .map(|t| {
            let (u, p, q) = (users(t.u), users(t.p), users(t.q));
            let gap = social_score(space, &u, &p) - social_score(space, &u, &q);
            -crate::diff::tape::log_sigmoid(gap)
        })
        .sum()
}

/// Taped social loss. Returns `None` for an empty batch.
pub fn social_loss(tape: &mut Tape, model: &mut TapedModel<'_>, batch: &[SocialTriple]) -> Result<Option<NodeId>> {
    let mut terms = Vec::with_capacity(batch.len());
    for t in batch {
        let dp = model.user_distance(tape, t.u, t.p)?;
        let dq = model.user_distance(tape, t.u, t.q)?;
        let gap = tape.sub(dq, dp);
        terms.push(tape.log_sigmoid(gap));
    }
    if terms.is_empty() {
        return Ok(None);
    }
    let s = tape.sum(&terms);
    Ok(Some(tape.neg(s)))
}

/// `Lr + λ·Ls`. With `λ = 0` the social term is dropped entirely.
pub fn total_loss(tape: &mut Tape, rec: Option<NodeId>, social: Option<NodeId>, lambda: f64) -> Result<Option<NodeId>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(HsrError::Usage(format!("lambda must be finite and non-negative, got {lambda}")));
    }
    let social = social.filter(|_| lambda != 0.0).map(|s| tape.scale_const(s, lambda));
    Ok(match (rec, social) {
        (Some(r), Some(s)) => Some(tape.add(r, s)),
        (r, s) => r.or(s),
    })
}

/// Full objective evaluated without a tape; the finite-difference oracle for
/// the taped path.
pub fn objective_value(model: &Model<'_>, rec: &[RecTriple], social: &[SocialTriple], lambda: f64) -> Result<f64> {
    let probs = rec
        .iter()
        .map(|t| Ok((model.predict(t.u, t.i)?, model.predict(t.u, t.j)?)))
        .collect::<Result<Vec<_>>>()?;
    let lr = rec_loss_from_probs(&probs)?;
    if lambda == 0.0 {
        return Ok(lr);
    }
    let params = model.params();
    let ls = social_loss_value(model.space(), |u| params.user(u).to_vec(), social);
    Ok(lr + lambda * ls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ball::PoincareBall;
    use crate::diff::ParamStore;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use std::collections::HashSet;

    #[test]
    fn rec_loss_scalar_examples() {
        let v = rec_loss_from_probs(&[(0.5, 0.5)]).unwrap();
        assert!((v - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!(rec_loss_from_probs(&[(1.0, 0.0)]).unwrap() < 1e-11);
        assert!(rec_loss_from_probs(&[(f64::NAN, 0.0)]).is_err());
        assert!(rec_loss_from_probs(&[(0.0, 1.0)]).unwrap().is_finite());
    }

    #[test]
    fn social_score_examples() {
        let s = Space::Hyperbolic(PoincareBall::new(1.0).unwrap());
        assert_eq!(social_score(&s, &[0.3], &[0.3]), 0.0);
        assert!((social_score(&s, &[0.0], &[0.5]) + 1.0986122886681098).abs() < 1e-12);
        assert_eq!(social_score(&s, &[0.1], &[-0.4]), social_score(&s, &[-0.4], &[0.1]));
    }

    #[test]
    fn social_term_limits() {
        let s = Space::Euclidean;
        let users = |u: usize| vec![[0.0, 0.0, 0.0][u], 0.0];
        let equal = social_loss_value(&s, users, &[SocialTriple { u: 0, p: 1, q: 2 }]);
        assert!((equal - 2f64.ln()).abs() < 1e-15);
        let far = |u: usize| vec![[0.0, 0.0, 50.0][u]];
        assert!(social_loss_value(&s, far, &[SocialTriple { u: 0, p: 1, q: 2 }]) < 1e-20);
        let swapped = |u: usize| vec![[0.0, 50.0, 0.0][u]];
        assert!(social_loss_value(&s, swapped, &[SocialTriple { u: 0, p: 1, q: 2 }]) > 49.0);
    }

    #[test]
    fn total_loss_combination() {
        let mut t = Tape::new();
        let r = t.scalar(1.0);
        let s = t.scalar(2.0);
        let l = total_loss(&mut t, Some(r), Some(s), 1e-2).unwrap().unwrap();
        assert!((t.scalar_value(l) - 1.02).abs() < 1e-15);
        assert_eq!(total_loss(&mut t, Some(r), Some(s), 0.0).unwrap(), Some(r));
        let r2 = t.scalar(3.0);
        let l = total_loss(&mut t, Some(r2), Some(r2), 1.0).unwrap().unwrap();
        assert_eq!(t.scalar_value(l), 6.0);
        assert!(total_loss(&mut t, Some(r), None, -1.0).is_err());
    }

    #[test]
    fn rec_sampler_forced_and_empty() {
        let s = RecSampler::from_positives(vec![vec![0]], 2);
        let mut rng = stream_rng(1, 0, 0);
        assert!(s.sample(0, &mut rng).is_empty());
        assert!(s.sample(50, &mut rng).iter().all(|t| t.i == 0 && t.j == 1));
        let saturated = RecSampler::from_positives(vec![vec![0, 1], vec![1]], 2);
        assert!(saturated.sample(20, &mut rng).iter().all(|t| t.u == 1));
    }

    #[test]
    fn rec_negatives_uniform() {
        let n_items = 20;
        let positives: Vec<Vec<usize>> = (0..10).map(|u| vec![u]).collect();
        let s = RecSampler::from_positives(positives, n_items);
        let mut rng = stream_rng(2, 0, 0);
        let draws = 100_000;
        let mut freq = vec![0usize; n_items];
        for t in s.sample(draws, &mut rng) {
            assert_ne!(t.i, t.j);
            freq[t.j] += 1;
        }
        // Item k is a valid negative for 9 of the 10 users when k < 10, else for all of them.
        for (k, &f) in freq.iter().enumerate() {
            let expected = draws as f64 * if k < 10 { 9.0 } else { 10.0 } / 190.0;
            assert!((f as f64 - expected).abs() < 0.05 * expected, "item {k}: {f} vs {expected}");
        }
    }

    #[test]
    fn social_sampler_matches_brute_force() {
        let g = SocialGraph::from_edges(5, [(0, 1), (0, 2), (1, 0), (2, 3), (3, 4), (4, 0), (4, 1), (4, 2), (4, 3)]).unwrap();
        let valid: HashSet<SocialTriple> = g
            .edges()
            .flat_map(|(u, p)| (0..5).map(move |q| SocialTriple { u, p, q }))
            .filter(|t| t.q != t.u && !g.has_edge(t.u, t.q))
            .collect();
        let s = SocialSampler::new(&g);
        assert_eq!(s.num_edges(), 5);
        let mut rng = stream_rng(3, 1, 0);
        let drawn: HashSet<SocialTriple> = s.sample(5000, &mut rng).into_iter().collect();
        assert_eq!(drawn, valid);
    }

    #[test]
    fn taped_losses_match_values_and_are_permutation_invariant() {
        let cfg = ModelConfig {
            dim: 3,
            ..ModelConfig::default()
        };
        let ball = cfg.ball().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut p = ParamStore::init(4, 5, 3, 1, Some(&ball), &mut rng);
        for u in 0..4 {
            p.get_mut(crate::diff::ParamId::User(u))[0] = 0.1 * u as f64;
        }
        let g = SocialGraph::from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        let rec = vec![RecTriple { u: 0, i: 1, j: 2 }, RecTriple { u: 3, i: 4, j: 0 }, RecTriple { u: 2, i: 2, j: 3 }];
        let soc = vec![SocialTriple { u: 0, p: 1, q: 3 }, SocialTriple { u: 2, p: 3, q: 1 }];
        let eval = |rec: &[RecTriple], soc: &[SocialTriple]| {
            let mut tape = Tape::new();
            let mut m = TapedModel::new(&p, &g, &cfg).unwrap();
            let lr = rec_loss(&mut tape, &mut m, rec).unwrap();
            let ls = social_loss(&mut tape, &mut m, soc).unwrap();
            let l = total_loss(&mut tape, lr, ls, 0.5).unwrap().unwrap();
            tape.scalar_value(l)
        };
        let a = eval(&rec, &soc);
        let mut rr = rec.clone();
        rr.reverse();
        let mut ss = soc.clone();
        ss.reverse();
        assert!((a - eval(&rr, &ss)).abs() < 1e-12);
        let pure = objective_value(&Model::new(&p, &g, &cfg).unwrap(), &rec, &soc, 0.5).unwrap();
        assert!((a - pure).abs() < 1e-12, "{a} vs {pure}");
    }
}
