//! Untaped model evaluation on plain slices.

use std::collections::HashMap;

use crate::ball::{BallPoint, PoincareBall};
use crate::diff::ParamStore;
use crate::error::{HsrError, Result};
use crate::linalg::{self, Matrix};

use super::{fermi_dirac, AttentionMode, ModelConfig, SocialGraph, Space};

/// Tangent-space aggregation for one user.
///
/// `a_log` is `log₀` of the user's previous-layer representation; each
/// neighbor contributes its `log₀` and its attention key `W_topᵀ log₀(u_b)`;
/// `query` is `W_bottomᵀ log₀(v_i)`. Returns the aggregated tangent vector
/// and the normalized neighbor weights.
pub(crate) fn tangent_aggregate(
    cfg: &ModelConfig,
    a_log: &[f64],
    neighbor_logs: &[&[f64]],
    neighbor_keys: &[&[f64]],
    query: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut t = a_log.to_vec();
    if neighbor_logs.is_empty() {
        return (t, Vec::new());
    }
    let weights = match cfg.attention {
        AttentionMode::Mean => vec![1.0 / neighbor_logs.len() as f64; neighbor_logs.len()],
        AttentionMode::On => {
            let logits: Vec<f64> = neighbor_logs
                .iter()
                .zip(neighbor_keys)
                .map(|(lb, kb)| attention_logit_from_logs(a_log, lb, kb, query))
                .collect();
            crate::diff::tape::softmax(&logits, 1.0 / cfg.tau)
        }
    };
    for (lb, &w) in neighbor_logs.iter().zip(&weights) {
        linalg::axpy(&mut t, cfg.gamma * w, lb);
    }
    (t, weights)
}

/// `(l_a ⊙ l_b)ᵀ tanh(key_b + query)`.
pub(crate) fn attention_logit_from_logs(a_log: &[f64], b_log: &[f64], b_key: &[f64], query: &[f64]) -> f64 {
    (0..a_log.len())
        .map(|k| a_log[k] * b_log[k] * crate::ball::tanh_clamped(b_key[k] + query[k]))
        .sum()
}

/// Feature update after aggregation: `σ⊗(M ⊗ exp₀(t))`.
pub(crate) fn feature_update(space: &Space, cfg: &ModelConfig, t: &[f64], m: &Matrix) -> Vec<f64> {
    let h = space.exp0(t);
    let mh = space.matvec(m, &h);
    space.activate(&mh, cfg.leaky_slope)
}

/// Attention logit for user `ua`, neighbor `ub`, item `vi` with attention
/// matrix `w` of shape `2d × d`: `(log₀ua ⊙ log₀ub)ᵀ tanh(wᵀ[log₀ub, log₀vi])`.
pub fn attention_logit(space: &Space, ua: &[f64], ub: &[f64], vi: &[f64], w: &Matrix) -> Result<f64> {
    let d = ua.len();
    if ub.len() != d || vi.len() != d || w.rows() != 2 * d || w.cols() != d {
        return Err(HsrError::Usage("attention_logit: dimension mismatch".into()));
    }
    let (la, lb, lv) = (space.log0(ua), space.log0(ub), space.log0(vi));
    let key = w.tr_matvec_block(0, &lb);
    let query = w.tr_matvec_block(d, &lv);
    Ok(attention_logit_from_logs(&la, &lb, &key, &query))
}

/// One aggregation layer for the listed `users`, reading previous-layer
/// representations from `prev` (indexed by user id).
pub fn aggregate_layer(
    space: &Space,
    prev: &[Vec<f64>],
    item: &[f64],
    graph: &SocialGraph,
    m: &Matrix,
    w: &Matrix,
    cfg: &ModelConfig,
    users: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let d = item.len();
    if prev.len() != graph.num_users() {
        return Err(HsrError::Usage("aggregate_layer: prev does not cover every user".into()));
    }
    if m.rows() != d || m.cols() != d || w.rows() != 2 * d || w.cols() != d {
        return Err(HsrError::Usage("aggregate_layer: matrix shape mismatch".into()));
    }
    let logs: HashMap<usize, Vec<f64>> = users
        .iter()
        .flat_map(|&a| std::iter::once(a).chain(graph.neighbors(a).iter().copied()))
        .map(|u| (u, space.log0(&prev[u])))
        .collect();
    let query = w.tr_matvec_block(d, &space.log0(item));
    let out = users
        .iter()
        .map(|&a| {
            let nb = graph.neighbors(a);
            let n_logs: Vec<&[f64]> = nb.iter().map(|b| logs[b].as_slice()).collect();
            let keys: Vec<Vec<f64>> = nb.iter().map(|b| w.tr_matvec_block(0, &logs[b])).collect();
            let n_keys: Vec<&[f64]> = keys.iter().map(Vec::as_slice).collect();
            let (t, _) = tangent_aggregate(cfg, &logs[&a], &n_logs, &n_keys, &query);
            feature_update(space, cfg, &t, m)
        })
        .collect();
    Ok(out)
}

/// Sequential Möbius aggregation `u_a ⊕ (γ ⊗ (((u_b1 ⊕ u_b2) ⊕ u_b3) ⊕ …))`.
/// Order-sensitive: callers pass neighbors in sorted-id order.
pub fn aggregate_exact(ball: &PoincareBall, ua: &BallPoint, neighbors: &[BallPoint], gamma: f64) -> Result<BallPoint> {
    let Some((first, rest)) = neighbors.split_first() else {
        return Ok(ua.clone());
    };
    let mut acc = first.clone();
    for b in rest {
        acc = ball.mobius_add(&acc, b)?;
    }
    ball.mobius_add(ua, &ball.mobius_scalar(gamma, &acc))
}

/// Fermi-Dirac decoding of the user/item distance in the given geometry.
pub fn predict(space: &Space, user_repr: &[f64], item: &[f64], r: f64, t: f64) -> f64 {
    fermi_dirac(space.dist(user_repr, item), r, t)
}

struct Layered {
    rep: Vec<f64>,
    log: Vec<f64>,
}

/// A trained model ready for scoring, with per-user and per-item `log₀`
/// and first-layer attention projections precomputed.
pub struct Model<'a> {
    params: &'a ParamStore,
    graph: &'a SocialGraph,
    cfg: &'a ModelConfig,
    space: Space,
    exact_aggregation: bool,
    user_logs: Vec<Vec<f64>>,
    item_logs: Vec<Vec<f64>>,
    user_keys: Vec<Vec<f64>>,
    item_queries: Vec<Vec<f64>>,
}

impl<'a> Model<'a> {
    pub fn new(params: &'a ParamStore, graph: &'a SocialGraph, cfg: &'a ModelConfig) -> Result<Self> {
        cfg.validate()?;
        if params.dim() != cfg.dim || params.num_layers() != cfg.layers {
            return Err(HsrError::Compat(format!(
                "parameters have dim {} / {} layers, config expects {} / {}",
                params.dim(),
                params.num_layers(),
                cfg.dim,
                cfg.layers
            )));
        }
        if graph.num_users() != params.num_users() {
            return Err(HsrError::Compat(format!(
                "graph has {} users, parameters have {}",
                graph.num_users(),
                params.num_users()
            )));
        }
        let space = cfg.space()?;
        let d = cfg.dim;
        let user_logs: Vec<Vec<f64>> = (0..params.num_users()).map(|u| space.log0(params.user(u))).collect();
        let item_logs: Vec<Vec<f64>> = (0..params.num_items()).map(|i| space.log0(params.item(i))).collect();
        let (user_keys, item_queries) = if cfg.layers > 0 && cfg.attention == AttentionMode::On {
            let w = params.attention(0);
            (
                user_logs.iter().map(|l| w.tr_matvec_block(0, l)).collect(),
                item_logs.iter().map(|l| w.tr_matvec_block(d, l)).collect(),
            )
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(Model {
            params,
            graph,
            cfg,
            space,
            exact_aggregation: false,
            user_logs,
            item_logs,
            user_keys,
            item_queries,
        })
    }

    /// Use the sequential Möbius aggregation instead of the tangent-space one.
    /// Attention is not applied in this mode.
    pub fn with_exact_aggregation(mut self, on: bool) -> Result<Self> {
        if on && self.space.ball().is_none() {
            return Err(HsrError::Usage("exact aggregation needs hyperbolic geometry".into()));
        }
        self.exact_aggregation = on;
        Ok(self)
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn config(&self) -> &ModelConfig {
        self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        self.params
    }

    pub fn graph(&self) -> &SocialGraph {
        self.graph
    }

    fn check_ids(&self, user: usize, item: usize) -> Result<()> {
        if user >= self.params.num_users() {
            return Err(HsrError::Usage(format!("unknown user id {user}")));
        }
        if item >= self.params.num_items() {
            return Err(HsrError::Usage(format!("unknown item id {item}")));
        }
        Ok(())
    }

    /// `ŷ` for one (user, item) pair.
    pub fn predict(&self, user: usize, item: usize) -> Result<f64> {
        self.check_ids(user, item)?;
        let rep = self.user_representation(user, item);
        Ok(predict(
            &self.space,
            &rep,
            self.params.item(item),
            self.cfg.fd_radius,
            self.cfg.fd_temperature,
        ))
    }

    pub fn score_items(&self, user: usize, items: &[usize]) -> Result<Vec<f64>> {
        items.iter().map(|&i| self.predict(user, i)).collect()
    }

    /// Final-layer representation of `user`, conditioned on `item`.
    pub fn user_representation(&self, user: usize, item: usize) -> Vec<f64> {
        let layers = self.cfg.layers;
        if layers == 0 {
            return self.params.user(user).to_vec();
        }
        // need[ℓ] = users whose layer-ℓ representation is required.
        let mut need: Vec<Vec<usize>> = vec![Vec::new(); layers + 1];
        need[layers] = vec![user];
        for l in (0..layers).rev() {
            let mut next: Vec<usize> = need[l + 1]
                .iter()
                .flat_map(|&a| std::iter::once(a).chain(self.graph.neighbors(a).iter().copied()))
                .collect();
            next.sort_unstable();
            next.dedup();
            need[l] = next;
        }
        let mut prev: HashMap<usize, Layered> = HashMap::new();
        for l in 1..=layers {
            let mut cur = HashMap::with_capacity(need[l].len());
            for &a in &need[l] {
                let rep = self.layer_output(l, a, item, &prev);
                let log = self.space.log0(&rep);
                cur.insert(a, Layered { rep, log });
            }
            prev = cur;
        }
        prev.remove(&user).expect("target user is in the last frontier").rep
    }

    fn layer_output(&self, layer: usize, a: usize, item: usize, prev: &HashMap<usize, Layered>) -> Vec<f64> {
        let li = layer - 1;
        let m = self.params.layer(li);
        let nb = self.graph.neighbors(a);
        if self.exact_aggregation {
            let ball = self.space.ball().expect("checked in with_exact_aggregation");
            let rep_of = |u: usize| -> BallPoint {
                let v = if layer == 1 { self.params.user(u).to_vec() } else { prev[&u].rep.clone() };
                ball.project(v).expect("representations are finite")
            };
            let ua = rep_of(a);
            let neighbors: Vec<BallPoint> = nb.iter().map(|&b| rep_of(b)).collect();
            let h = aggregate_exact(ball, &ua, &neighbors, self.cfg.gamma).expect("shared dims");
            let mh = self.space.matvec(m, h.coords());
            return self.space.activate(&mh, self.cfg.leaky_slope);
        }
        let (t, _) = self.aggregate_tangent(layer, a, item, prev);
        feature_update(&self.space, self.cfg, &t, m)
    }

    fn aggregate_tangent(&self, layer: usize, a: usize, item: usize, prev: &HashMap<usize, Layered>) -> (Vec<f64>, Vec<f64>) {
        let nb = self.graph.neighbors(a);
        let attn = self.cfg.attention == AttentionMode::On;
        if layer == 1 {
            let n_logs: Vec<&[f64]> = nb.iter().map(|&b| self.user_logs[b].as_slice()).collect();
            let n_keys: Vec<&[f64]> = if attn {
                nb.iter().map(|&b| self.user_keys[b].as_slice()).collect()
            } else {
                Vec::new()
            };
            let query: &[f64] = if attn { &self.item_queries[item] } else { &[] };
            return tangent_aggregate(self.cfg, &self.user_logs[a], &n_logs, &n_keys, query);
        }
        let w = self.params.attention(layer - 1);
        let d = self.cfg.dim;
        let n_logs: Vec<&[f64]> = nb.iter().map(|b| prev[b].log.as_slice()).collect();
        let keys: Vec<Vec<f64>> = if attn {
            n_logs.iter().map(|l| w.tr_matvec_block(0, l)).collect()
        } else {
            Vec::new()
        };
        let n_keys: Vec<&[f64]> = keys.iter().map(Vec::as_slice).collect();
        let query = if attn { w.tr_matvec_block(d, &self.item_logs[item]) } else { Vec::new() };
        tangent_aggregate(self.cfg, &prev[&a].log, &n_logs, &n_keys, &query)
    }

    /// First-layer normalized attention weights of `user`'s neighbors (sorted
    /// id order) for each item.
    pub fn first_layer_attention(&self, user: usize, items: &[usize]) -> Result<Vec<Vec<f64>>> {
        if self.cfg.layers == 0 {
            return Err(HsrError::Usage("model has no aggregation layers".into()));
        }
        if self.graph.neighbors(user).is_empty() {
            return Err(HsrError::Usage(format!("user {user} has no neighbors to export")));
        }
        items
            .iter()
            .map(|&i| {
                self.check_ids(user, i)?;
                Ok(self.aggregate_tangent(1, user, i, &HashMap::new()).1)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Geometry;

    fn ball1() -> PoincareBall {
        PoincareBall::new(1.0).unwrap()
    }

    #[test]
    fn attention_logit_examples() {
        let space = Space::Hyperbolic(ball1());
        let w = Matrix::from_row_major(2, 1, vec![1.0, 1.0]).unwrap();
        assert_eq!(attention_logit(&space, &[0.0], &[0.4], &[0.2], &w).unwrap(), 0.0);
        let zero = Matrix::zeros(2, 1);
        assert_eq!(attention_logit(&space, &[0.3], &[0.4], &[0.2], &zero).unwrap(), 0.0);
        // Independent scalar evaluation: l = atanh(0.5), logit = l² tanh(2l).
        let l = 0.5f64.atanh();
        let oracle = l * l * (2.0 * l).tanh();
        assert!((oracle - 0.2413898).abs() < 1e-7);
        let got = attention_logit(&space, &[0.5], &[0.5], &[0.5], &w).unwrap();
        assert!((got - oracle).abs() < 1e-14);
        assert!(attention_logit(&space, &[0.5, 0.1], &[0.5], &[0.5], &w).is_err());
    }

    fn cfg1() -> ModelConfig {
        ModelConfig {
            dim: 1,
            gamma: 1.0,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn aggregate_layer_single_neighbor_1d() {
        let space = Space::Hyperbolic(ball1());
        let g = SocialGraph::from_edges(2, [(0, 1)]).unwrap();
        let prev = vec![vec![0.3], vec![0.4]];
        let m = Matrix::identity(1);
        let w = Matrix::from_row_major(2, 1, vec![0.7, -0.2]).unwrap();
        let out = aggregate_layer(&space, &prev, &[0.1], &g, &m, &w, &cfg1(), &[0]).unwrap();
        // exp0(atanh(0.3) + atanh(0.4)) by hand; one neighbor gives weight 1.
        let oracle = (0.3f64.atanh() + 0.4f64.atanh()).tanh();
        assert!((oracle - 0.625).abs() < 1e-12);
        assert!((out[0][0] - oracle).abs() < 1e-12);
        // In 1-D this coincides with the Möbius sum.
        let mobius = (0.3 + 0.4) / (1.0 + 0.3 * 0.4);
        assert!((oracle - mobius).abs() < 1e-12);
    }

    #[test]
    fn aggregate_layer_no_neighbors_positive_coords_unchanged() {
        let space = Space::Hyperbolic(ball1());
        let g = SocialGraph::empty(1);
        let prev = vec![vec![0.2, 0.35]];
        let out = aggregate_layer(
            &space,
            &prev,
            &[0.1, 0.1],
            &g,
            &Matrix::identity(2),
            &Matrix::zeros(4, 2),
            &ModelConfig { dim: 2, ..cfg1() },
            &[0],
        )
        .unwrap();
        assert!(out[0].iter().zip(&prev[0]).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn neighbor_at_origin_contributes_nothing() {
        let cfg = ModelConfig { dim: 2, ..cfg1() };
        let (t, w) = tangent_aggregate(&cfg, &[0.1, -0.2], &[&[0.0, 0.0]], &[&[0.3, 0.3]], &[0.0, 0.0]);
        assert_eq!(t, vec![0.1, -0.2]);
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn aggregate_exact_examples() {
        let b = ball1();
        let ua = b.project(vec![0.1, 0.2]).unwrap();
        let ub = b.project(vec![-0.3, 0.05]).unwrap();
        assert_eq!(aggregate_exact(&b, &ua, &[], 1.0).unwrap(), ua);
        let one = aggregate_exact(&b, &ua, &[ub.clone()], 0.7).unwrap();
        let manual = b.mobius_add(&ua, &b.mobius_scalar(0.7, &ub)).unwrap();
        assert_eq!(one, manual);
    }

    #[test]
    fn predict_examples() {
        let space = Space::Hyperbolic(ball1());
        let p = predict(&space, &[0.2, 0.1], &[0.2, 0.1], 2.0, 1.0);
        assert!((p - 1.0 / ((-2.0f64).exp() + 1.0)).abs() < 1e-15);
        let e = predict(&Space::Euclidean, &[0.0], &[2.0], 2.0, 1.0);
        assert_eq!(e, 0.5);
    }

    #[test]
    fn zero_layers_predicts_from_raw_embeddings() {
        let cfg = ModelConfig {
            dim: 2,
            layers: 0,
            ..ModelConfig::default()
        };
        let params = ParamStore::from_parts(2, vec![0.1, 0.2, -0.1, 0.0], vec![0.3, -0.3], vec![], vec![], true).unwrap();
        let g = SocialGraph::from_edges(2, [(0, 1)]).unwrap();
        let m = Model::new(&params, &g, &cfg).unwrap();
        let b = ball1();
        let direct = fermi_dirac(b.dist_raw(params.user(0), params.item(0)), 2.0, 1.0);
        assert_eq!(m.predict(0, 0).unwrap(), direct);
        assert!(m.predict(2, 0).is_err());
        assert!(m.predict(0, 1).is_err());
    }

    #[test]
    fn model_rejects_mismatched_config() {
        let cfg = ModelConfig {
            dim: 3,
            geometry: Geometry::Euclidean,
            ..ModelConfig::default()
        };
        let params = ParamStore::from_parts(2, vec![0.0; 4], vec![0.0; 2], vec![], vec![], false).unwrap();
        let g = SocialGraph::empty(2);
        assert!(matches!(Model::new(&params, &g, &cfg), Err(HsrError::Compat(_))));
    }
}
