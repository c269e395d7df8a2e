use rand::seq::index;
use rand::Rng;

use crate::error::{HsrError, Result};

/// Directed trust graph: `neighbors(a)` lists every `b` with `s_ab = 1`,
/// sorted ascending, without duplicates or self-loops.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SocialGraph {
    neighbors: Vec<Vec<usize>>,
}

impl SocialGraph {
    pub fn empty(num_users: usize) -> Self {
        SocialGraph {
            neighbors: vec![Vec::new(); num_users],
        }
    }

    /// Builds the graph from `(src, dst)` pairs. Self-loops and repeats are
    /// dropped; ids outside `0..num_users` are an error.
    pub fn from_edges(num_users: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); num_users];
        for (a, b) in edges {
            if a >= num_users || b >= num_users {
                return Err(HsrError::Usage(format!(
                    "edge ({a}, {b}) references a user outside 0..{num_users}"
                )));
            }
            if a != b {
                neighbors[a].push(b);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Ok(SocialGraph { neighbors })
    }

    pub fn num_users(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, a: usize) -> &[usize] {
        &self.neighbors[a]
    }

    pub fn out_degree(&self, a: usize) -> usize {
        self.neighbors[a].len()
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].binary_search(&b).is_ok()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(a, list)| list.iter().map(move |&b| (a, b)))
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_users()];
        for (_, b) in self.edges() {
            deg[b] += 1;
        }
        deg
    }

    /// Adds the reverse of every edge.
    pub fn symmetrized(&self) -> Self {
        let n = self.num_users();
        let edges: Vec<_> = self.edges().flat_map(|(a, b)| [(a, b), (b, a)]).collect();
        SocialGraph::from_edges(n, edges).expect("ids already validated")
    }

    /// Keeps at most `k_max` neighbors per user, subsampled uniformly without
    /// replacement. Users at or below the cap are untouched.
    pub fn truncated<R: Rng>(&self, k_max: usize, rng: &mut R) -> Self {
        let neighbors = self
            .neighbors
            .iter()
            .map(|list| {
                if list.len() <= k_max {
                    return list.clone();
                }
                let mut keep: Vec<usize> = index::sample(rng, list.len(), k_max)
                    .into_iter()
                    .map(|i| list[i])
                    .collect();
                keep.sort_unstable();
                keep
            })
            .collect();
        SocialGraph { neighbors }
    }

    /// Users reachable from `a` within `hops` steps, including `a`, sorted.
    pub fn within_hops(&self, a: usize, hops: usize) -> Vec<usize> {
        let mut seen = vec![a];
        let mut frontier = vec![a];
        for _ in 0..hops {
            let mut next = Vec::new();
            for &u in &frontier {
                for &b in self.neighbors(u) {
                    if !seen.contains(&b) && !next.contains(&b) {
                        next.push(b);
                    }
                }
            }
            seen.extend_from_slice(&next);
            frontier = next;
        }
        seen.sort_unstable();
        seen
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn construction_cleans_and_validates() {
        let g = SocialGraph::from_edges(4, [(0, 2), (0, 1), (0, 2), (1, 1), (3, 0)]).unwrap();
        assert_eq!(g.neighbors(0), &[1, 2]);
        assert_eq!(g.neighbors(1), &[] as &[usize]);
        assert_eq!(g.num_edges(), 3);
        assert!(g.has_edge(3, 0) && !g.has_edge(0, 3));
        assert!(SocialGraph::from_edges(2, [(0, 5)]).is_err());
    }

    #[test]
    fn symmetrize_completes_reverse_edges() {
        let g = SocialGraph::from_edges(3, [(0, 1), (1, 0), (1, 2)]).unwrap();
        let s = g.symmetrized();
        assert_eq!(s.num_edges(), 4);
        assert!(s.has_edge(2, 1));
    }

    #[test]
    fn truncation_caps_degree_and_is_seeded() {
        let edges: Vec<_> = (1..100).map(|b| (0, b)).collect();
        let g = SocialGraph::from_edges(100, edges).unwrap();
        let a = g.truncated(10, &mut ChaCha8Rng::seed_from_u64(4));
        let b = g.truncated(10, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
        assert_eq!(a.out_degree(0), 10);
        assert!(a.neighbors(0).windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn hop_frontier() {
        let g = SocialGraph::from_edges(5, [(0, 1), (1, 2), (2, 3), (4, 0)]).unwrap();
        assert_eq!(g.within_hops(0, 0), vec![0]);
        assert_eq!(g.within_hops(0, 2), vec![0, 1, 2]);
    }
}
