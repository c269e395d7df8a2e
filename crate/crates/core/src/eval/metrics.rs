use std::collections::HashSet;

use crate::error::{HsrError, Result};

/// Rank-based AUC (Mann–Whitney U). Tied scores share their average rank,
/// so each tied positive/negative pair contributes 1/2.
pub fn auc(scored: &[(f64, bool)]) -> Result<f64> {
    let n_pos = scored.iter().filter(|s| s.1).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(HsrError::UndefinedMetric(format!(
            "AUC needs both classes, got {n_pos} positives and {n_neg} negatives"
        )));
    }
    if scored.iter().any(|s| s.0.is_nan()) {
        return Err(HsrError::Numeric("AUC input contains NaN scores".into()));
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].0.total_cmp(&scored[b].0));
    let mut pos_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scored[order[end]].0 == scored[order[start]].0 {
            end += 1;
        }
        // Ranks start..end (0-based) share the midrank.
        let mid = (start + end + 1) as f64 / 2.0;
        let pos_in_run = order[start..end].iter().filter(|&&k| scored[k].1).count();
        pos_rank_sum += mid * pos_in_run as f64;
        start = end;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Fraction of examples where `score ≥ threshold` agrees with the label.
pub fn accuracy(scored: &[(f64, bool)], threshold: f64) -> Result<f64> {
    if scored.is_empty() {
        return Err(HsrError::UndefinedMetric("accuracy of an empty set".into()));
    }
    let correct = scored.iter().filter(|(s, l)| (*s >= threshold) == *l).count();
    Ok(correct as f64 / scored.len() as f64)
}

/// Candidates of one user ordered by descending score, ties by ascending item id.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedList {
    pub user: usize,
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
}

impl RankedList {
    pub fn new(user: usize, items: &[usize], scores: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(items[a].cmp(&items[b])));
        RankedList {
            user,
            items: order.iter().map(|&k| items[k]).collect(),
            scores: order.iter().map(|&k| scores[k]).collect(),
        }
    }

    /// Positives among the first `k` entries.
    pub fn hits_at(&self, k: usize, positives: &HashSet<usize>) -> usize {
        self.items.iter().take(k).filter(|i| positives.contains(i)).count()
    }
}

/// `(precision@k, recall@k)` for one ranked list.
pub fn precision_recall_at(list: &RankedList, positives: &HashSet<usize>, k: usize) -> Result<(f64, f64)> {
    if positives.is_empty() || k == 0 {
        return Err(HsrError::UndefinedMetric("precision/recall need K ≥ 1 and a positive".into()));
    }
    let hits = list.hits_at(k, positives) as f64;
    Ok((hits / k as f64, hits / positives.len() as f64))
}
