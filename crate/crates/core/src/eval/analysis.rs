use crate::diff::ParamStore;
use crate::error::{HsrError, Result};
use crate::model::{Model, SocialGraph, Space};

/// Assigns each user to one of `num_bins` groups of roughly equal interaction
/// mass. Users are ordered by `counts` (ties by id) and a user lands in the
/// bin containing the midpoint of its share of the cumulative mass, so a
/// single heavy user can occupy a bin alone.
pub fn sparsity_bins(counts: &[usize], num_bins: usize) -> Result<Vec<usize>> {
    if num_bins == 0 {
        return Err(HsrError::Usage("need at least one bin".into()));
    }
    let total: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&u| (counts[u], u));
    let mut bins = vec![0; counts.len()];
    if total == 0 {
        return Ok(bins);
    }
    let mut before = 0usize;
    for &u in &order {
        let mid = before as f64 + counts[u] as f64 / 2.0;
        bins[u] = ((mid * num_bins as f64 / total as f64) as usize).min(num_bins - 1);
        before += counts[u];
    }
    Ok(bins)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyGroup {
    /// 1-based; group 1 is closest to the origin.
    pub group: usize,
    pub users: usize,
    pub min_dist: f64,
    pub max_dist: f64,
    pub avg_out_degree: f64,
}

/// Splits users into `num_groups` near-equal groups by distance of their raw
/// embedding from the origin (ties by id) and reports each group's mean
/// out-degree.
pub fn hierarchy_analysis(
    params: &ParamStore,
    space: &Space,
    graph: &SocialGraph,
    num_groups: usize,
) -> Result<Vec<HierarchyGroup>> {
    let n = params.num_users();
    if num_groups == 0 || num_groups > n.max(1) {
        return Err(HsrError::Usage(format!("cannot split {n} users into {num_groups} groups")));
    }
    if graph.num_users() != n {
        return Err(HsrError::Compat("graph and parameters disagree on user count".into()));
    }
    let origin = vec![0.0; params.dim()];
    let dist: Vec<f64> = (0..n).map(|u| space.dist(&origin, params.user(u))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
    let (base, extra) = (n / num_groups, n % num_groups);
    let mut groups = Vec::with_capacity(num_groups);
    let mut start = 0;
    for g in 0..num_groups {
        let size = base + usize::from(g < extra);
        let members = &order[start..start + size];
        start += size;
        let degree: usize = members.iter().map(|&u| graph.out_degree(u)).sum();
        groups.push(HierarchyGroup {
            group: g + 1,
            users: size,
            min_dist: members.first().map_or(f64::NAN, |&u| dist[u]),
            max_dist: members.last().map_or(f64::NAN, |&u| dist[u]),
            avg_out_degree: degree as f64 / size.max(1) as f64,
        });
    }
    Ok(groups)
}

/// First-layer attention of one user: `weights[r][c]` is the weight of
/// `neighbors[c]` when scoring `items[r]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionExport {
    pub user: usize,
    pub neighbors: Vec<usize>,
    pub items: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
}

pub fn attention_export(model: &Model<'_>, user: usize, items: &[usize]) -> Result<AttentionExport> {
    if user >= model.params().num_users() {
        return Err(HsrError::Usage(format!("unknown user id {user}")));
    }
    let neighbors = model.graph().neighbors(user).to_vec();
    if neighbors.is_empty() {
        return Err(HsrError::Input(format!("user {user} has no neighbors; nothing to export")));
    }
    Ok(AttentionExport {
        user,
        neighbors,
        items: items.to_vec(),
        weights: model.first_layer_attention(user, items)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SplitTag, SynthConfig};
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bin_examples() {
        assert_eq!(sparsity_bins(&[1; 8], 4).unwrap(), vec![0, 0, 1, 1, 2, 2, 3, 3]);
        let b = sparsity_bins(&[1, 1, 1, 1, 100], 4).unwrap();
        assert!(b[..4].iter().all(|&x| x != b[4]));
        assert!(sparsity_bins(&[], 4).unwrap().is_empty());
        assert_eq!(sparsity_bins(&[0, 0], 4).unwrap(), vec![0, 0]);
    }

    #[test]
    fn bins_balance_mass_on_power_law_data() {
        let d = synth_generate(&SynthConfig::new(2000, 600, 2.5), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let counts: Vec<usize> = d.positives(SplitTag::Train).iter().map(Vec::len).collect();
        let bins = sparsity_bins(&counts, 4).unwrap();
        let mut mass = [0usize; 4];
        for (u, &b) in bins.iter().enumerate() {
            mass[b] += counts[u];
        }
        let (lo, hi) = (*mass.iter().min().unwrap(), *mass.iter().max().unwrap());
        assert!(lo > 0 && hi <= 2 * lo, "{mass:?}");
    }

    #[test]
    fn hierarchy_groups_sizes_and_ties() {
        let cfg = ModelConfig {
            dim: 2,
            ..ModelConfig::default()
        };
        let users = [0.1, 0.0].repeat(10);
        let p = ParamStore::from_parts(2, users, vec![0.0, 0.0], vec![crate::linalg::Matrix::identity(2)], vec![crate::linalg::Matrix::zeros(4, 2)], true).unwrap();
        let g = SocialGraph::from_edges(10, (0..10).map(|u| (u, (u + 1) % 10))).unwrap();
        let groups = hierarchy_analysis(&p, &cfg.space().unwrap(), &g, 4).unwrap();
        assert_eq!(groups.iter().map(|g| g.users).collect::<Vec<_>>(), vec![3, 3, 2, 2]);
        assert!(groups.iter().all(|g| g.avg_out_degree == 1.0));
        assert!(hierarchy_analysis(&p, &cfg.space().unwrap(), &g, 0).is_err());
    }

    #[test]
    fn attention_rows_are_distributions() {
        let cfg = ModelConfig {
            dim: 3,
            ..ModelConfig::default()
        };
        let ball = cfg.ball().unwrap();
        let p = ParamStore::init(4, 3, 3, 1, Some(&ball), &mut ChaCha8Rng::seed_from_u64(1));
        let g = SocialGraph::from_edges(4, [(0, 1), (0, 2), (0, 3), (1, 0)]).unwrap();
        let m = Model::new(&p, &g, &cfg).unwrap();
        let e = attention_export(&m, 0, &[0, 1, 2]).unwrap();
        assert_eq!(e.neighbors, vec![1, 2, 3]);
        for row in &e.weights {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let single = attention_export(&m, 1, &[0, 2]).unwrap();
        assert!(single.weights.iter().all(|r| r == &vec![1.0]));
        assert!(matches!(attention_export(&m, 2, &[0]), Err(HsrError::Input(_))));
    }
}
