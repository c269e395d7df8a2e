use std::collections::HashSet;

use log::warn;
use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::error::{HsrError, Result};
use crate::model::SocialGraph;

use super::{InteractionData, LabeledRecord, RawRatings, RawTrust, SplitTag};

/// Ratings at or above this value count as positive feedback.
pub const DEFAULT_THRESHOLD: f64 = 4.0;

/// Turns raw ratings into implicit feedback. Users with no trust link in
/// either direction are removed and ids are re-densified in their original
/// order. Each remaining user gets as many labeled negatives as positives,
/// drawn from items they never rated. The item set is left as ingested. All records are tagged `Train`; see
/// [`split`].
pub fn preprocess<R: Rng>(
    ratings: &RawRatings,
    trust: &RawTrust,
    threshold: f64,
    rng: &mut R,
) -> Result<InteractionData> {
    if !threshold.is_finite() {
        return Err(HsrError::Input(format!("rating threshold must be finite, got {threshold}")));
    }
    let n_users = ratings.users.len();
    let mut linked = vec![false; n_users];
    for &(a, b) in &trust.pairs {
        if a >= n_users || b >= n_users {
            return Err(HsrError::Input(format!("trust pair ({a}, {b}) names an unknown user")));
        }
        if a != b {
            linked[a] = true;
            linked[b] = true;
        }
    }
    let user_map = densify(&linked);
    let num_users = user_map.iter().flatten().count();
    if num_users == 0 {
        return Err(HsrError::Input("no user has a trust link".into()));
    }
    let removed = n_users - num_users;
    if removed > 0 {
        warn!("removed {removed} users without social links");
    }

    let num_items = ratings.items.len();

    let mut rated: Vec<Vec<(usize, bool)>> = vec![Vec::new(); num_users];
    for &(u, i, r) in &ratings.records {
        if let Some(u) = user_map[u] {
            rated[u].push((i, r >= threshold));
        }
    }

    let mut records = Vec::new();
    let mut capped = 0;
    for (user, list) in rated.iter_mut().enumerate() {
        list.sort_unstable();
        let positives: Vec<usize> = list.iter().filter(|x| x.1).map(|x| x.0).collect();
        let seen: HashSet<usize> = list.iter().map(|x| x.0).collect();
        let available = num_items - seen.len();
        if positives.len() > available {
            capped += 1;
        }
        let negatives = sample_unrated(rng, num_items, &seen, positives.len().min(available));
        let label = |item, label| LabeledRecord {
            user,
            item,
            label,
            split: SplitTag::Train,
        };
        records.extend(positives.iter().map(|&i| label(i, true)));
        records.extend(negatives.into_iter().map(|i| label(i, false)));
    }
    if capped > 0 {
        warn!("{capped} users have fewer unrated items than positives; their negatives are capped");
    }
    records.sort_unstable();

    let edges = trust
        .pairs
        .iter()
        .filter_map(|&(a, b)| Some((user_map[a]?, user_map[b]?)));
    let social = SocialGraph::from_edges(num_users, edges)?;
    let pick = |map: &[Option<usize>], tokens: &[String]| -> Vec<String> {
        map.iter()
            .zip(tokens)
            .filter(|(m, _)| m.is_some())
            .map(|(_, t)| t.clone())
            .collect()
    };
    Ok(InteractionData {
        num_users,
        num_items,
        records,
        social,
        user_tokens: pick(&user_map, ratings.users.tokens()),
        item_tokens: ratings.items.tokens().to_vec(),
    })
}

fn densify(keep: &[bool]) -> Vec<Option<usize>> {
    let mut next = 0;
    keep.iter()
        .map(|&k| {
            k.then(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

/// `count` distinct items outside `seen`, sorted.
pub(crate) fn sample_unrated<R: Rng>(rng: &mut R, num_items: usize, seen: &HashSet<usize>, count: usize) -> Vec<usize> {
    if count == 0 {
        return Vec::new();
    }
    let mut out: Vec<usize> = if 2 * (seen.len() + count) <= num_items {
        let mut chosen = HashSet::with_capacity(count);
        while chosen.len() < count {
            let i = rng.gen_range(0..num_items);
            if !seen.contains(&i) {
                chosen.insert(i);
            }
        }
        chosen.into_iter().collect()
    } else {
        let pool: Vec<usize> = (0..num_items).filter(|i| !seen.contains(i)).collect();
        index::sample(rng, pool.len(), count).into_iter().map(|k| pool[k]).collect()
    };
    out.sort_unstable();
    out
}

/// Splits `n` into parts proportional to `weights` by the largest-remainder
/// rule. Ties in the remainder go to the earlier part.
pub fn largest_remainder(n: usize, weights: &[f64]) -> Result<Vec<usize>> {
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || total <= 0.0 {
        return Err(HsrError::Input(format!("invalid split ratios {weights:?}")));
    }
    let exact: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut parts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let short = n - parts.iter().sum::<usize>();
    for &k in order.iter().cycle().take(short) {
        parts[k] += 1;
    }
    Ok(parts)
}

/// Assigns every record to train/val/test uniformly at random with sizes
/// fixed by [`largest_remainder`].
pub fn split<R: Rng>(mut data: InteractionData, ratios: [f64; 3], rng: &mut R) -> Result<InteractionData> {
    let sizes = largest_remainder(data.records.len(), &ratios)?;
    let mut order: Vec<usize> = (0..data.records.len()).collect();
    order.shuffle(rng);
    let tags = SplitTag::ALL
        .iter()
        .zip(sizes)
        .flat_map(|(&tag, n)| std::iter::repeat(tag).take(n));
    for (idx, tag) in order.into_iter().zip(tags) {
        data.records[idx].split = tag;
    }
    Ok(data)
}
