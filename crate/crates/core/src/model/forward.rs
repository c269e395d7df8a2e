//! Taped forward pass used for training. Builds exactly the computation of
//! [`super::infer::Model`] on a [`Tape`], sharing leaves, `log₀` images and
//! first-layer attention projections across every example in one mini-batch.

use std::collections::HashMap;

use crate::diff::{NodeId, ParamId, ParamStore, Tape};
use crate::error::{HsrError, Result};

use super::space::TapeSpace;
use super::{AttentionMode, ModelConfig, SocialGraph};

#[derive(Clone, Copy)]
struct UserNodes {
    rep: NodeId,
    log: NodeId,
    key: Option<NodeId>,
}

/// One mini-batch worth of taped model evaluation. Create one per tape.
pub struct TapedModel<'a> {
    params: &'a ParamStore,
    graph: &'a SocialGraph,
    cfg: &'a ModelConfig,
    space: TapeSpace,
    users: HashMap<usize, UserNodes>,
    items: HashMap<usize, (NodeId, NodeId)>,
    queries: HashMap<usize, NodeId>,
}

impl<'a> TapedModel<'a> {
    pub fn new(params: &'a ParamStore, graph: &'a SocialGraph, cfg: &'a ModelConfig) -> Result<Self> {
        cfg.validate()?;
        if params.dim() != cfg.dim || params.num_layers() != cfg.layers {
            return Err(HsrError::Compat("parameter shapes do not match the model config".into()));
        }
        if graph.num_users() != params.num_users() {
            return Err(HsrError::Compat("graph and parameters disagree on user count".into()));
        }
        Ok(TapedModel {
            params,
            graph,
            cfg,
            space: cfg.space()?.into(),
            users: HashMap::new(),
            items: HashMap::new(),
            queries: HashMap::new(),
        })
    }

    fn attention_on(&self) -> bool {
        self.cfg.attention == AttentionMode::On
    }

    /// Raw (layer-0) embedding leaf of `user`.
    pub fn user_embedding(&mut self, tape: &mut Tape, user: usize) -> NodeId {
        self.user_nodes(tape, user).rep
    }

    fn user_nodes(&mut self, tape: &mut Tape, user: usize) -> UserNodes {
        if let Some(n) = self.users.get(&user) {
            return *n;
        }
        let rep = tape.param(ParamId::User(user), self.params.user(user));
        let log = self.space.log0(tape, rep);
        let key = if self.cfg.layers > 0 && self.attention_on() {
            let w = tape.param(ParamId::Attention(0), self.params.attention(0).as_slice());
            Some(tape.tr_matvec_block(w, log, 0, self.cfg.dim))
        } else {
            None
        };
        let n = UserNodes { rep, log, key };
        self.users.insert(user, n);
        n
    }

    fn item_nodes(&mut self, tape: &mut Tape, item: usize) -> (NodeId, NodeId) {
        if let Some(n) = self.items.get(&item) {
            return *n;
        }
        let rep = tape.param(ParamId::Item(item), self.params.item(item));
        let log = self.space.log0(tape, rep);
        self.items.insert(item, (rep, log));
        (rep, log)
    }

    fn first_layer_query(&mut self, tape: &mut Tape, item: usize) -> NodeId {
        if let Some(&q) = self.queries.get(&item) {
            return q;
        }
        let (_, log) = self.item_nodes(tape, item);
        let w = tape.param(ParamId::Attention(0), self.params.attention(0).as_slice());
        let q = tape.tr_matvec_block(w, log, self.cfg.dim, self.cfg.dim);
        self.queries.insert(item, q);
        q
    }

    /// Distance between two users' raw embeddings.
    pub fn user_distance(&mut self, tape: &mut Tape, a: usize, b: usize) -> Result<NodeId> {
        self.check_user(a)?;
        self.check_user(b)?;
        let ra = self.user_embedding(tape, a);
        let rb = self.user_embedding(tape, b);
        Ok(self.space.dist(tape, ra, rb))
    }

    fn check_user(&self, u: usize) -> Result<()> {
        if u >= self.params.num_users() {
            return Err(HsrError::Usage(format!("unknown user id {u}")));
        }
        Ok(())
    }

    /// `ŷ` node for (user, item).
    pub fn probability(&mut self, tape: &mut Tape, user: usize, item: usize) -> Result<NodeId> {
        self.check_user(user)?;
        if item >= self.params.num_items() {
            return Err(HsrError::Usage(format!("unknown item id {item}")));
        }
        let rep = self.user_representation(tape, user, item);
        let (v, _) = self.item_nodes(tape, item);
        let d = self.space.dist(tape, rep, v);
        let t = self.cfg.fd_temperature;
        let scaled = tape.scale_const(d, -1.0 / t);
        let arg = tape.add_const(scaled, self.cfg.fd_radius / t);
        Ok(tape.sigmoid(arg))
    }

    fn user_representation(&mut self, tape: &mut Tape, user: usize, item: usize) -> NodeId {
        let layers = self.cfg.layers;
        if layers == 0 {
            return self.user_embedding(tape, user);
        }
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
        let mut prev: HashMap<usize, UserNodes> = HashMap::new();
        for l in 1..=layers {
            let mut cur = HashMap::with_capacity(need[l].len());
            for &a in &need[l] {
                let rep = self.layer_output(tape, l, a, item, &prev);
                let log = self.space.log0(tape, rep);
                cur.insert(a, UserNodes { rep, log, key: None });
            }
            prev = cur;
        }
        prev[&user].rep
    }

    fn layer_output(
        &mut self,
        tape: &mut Tape,
        layer: usize,
        a: usize,
        item: usize,
        prev: &HashMap<usize, UserNodes>,
    ) -> NodeId {
        let d = self.cfg.dim;
        let li = layer - 1;
        let attn = self.attention_on();
        let nb = self.graph.neighbors(a);

        let (a_log, n_logs, n_keys, query) = if layer == 1 {
            let a_log = self.user_nodes(tape, a).log;
            let mut logs = Vec::with_capacity(nb.len());
            let mut keys = Vec::with_capacity(nb.len());
            for &b in nb {
                let n = self.user_nodes(tape, b);
                logs.push(n.log);
                keys.extend(n.key);
            }
            let query = if attn && !nb.is_empty() {
                Some(self.first_layer_query(tape, item))
            } else {
                None
            };
            (a_log, logs, keys, query)
        } else {
            let logs: Vec<NodeId> = nb.iter().map(|b| prev[b].log).collect();
            let (keys, query) = if attn && !nb.is_empty() {
                let w = tape.param(ParamId::Attention(li), self.params.attention(li).as_slice());
                let keys = logs.iter().map(|&l| tape.tr_matvec_block(w, l, 0, d)).collect();
                let (_, v_log) = self.item_nodes(tape, item);
                (keys, Some(tape.tr_matvec_block(w, v_log, d, d)))
            } else {
                (Vec::new(), None)
            };
            (prev[&a].log, logs, keys, query)
        };

        let t = if n_logs.is_empty() {
            a_log
        } else {
            let weights = match query {
                Some(q) => {
                    let logits: Vec<NodeId> = n_logs
                        .iter()
                        .zip(&n_keys)
                        .map(|(&lb, &kb)| {
                            let compat = tape.mul(a_log, lb);
                            let pre = tape.add(kb, q);
                            let opinion = tape.tanh(pre);
                            tape.dot(compat, opinion)
                        })
                        .collect();
                    let stacked = tape.stack(&logits);
                    tape.softmax(stacked, self.cfg.tau)
                }
                None => tape.constant(&vec![1.0 / n_logs.len() as f64; n_logs.len()]),
            };
            let social = tape.weighted_sum(&n_logs, weights);
            let scaled = tape.scale_const(social, self.cfg.gamma);
            tape.add(a_log, scaled)
        };

        let h = self.space.exp0(tape, t);
        let m = tape.param(ParamId::Layer(li), self.params.layer(li).as_slice());
        let mh = self.space.matvec(tape, m, h, d, d);
        self.space.activate(tape, mh, self.cfg.leaky_slope)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Geometry, Model};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(cfg: &ModelConfig, seed: u64) -> (ParamStore, SocialGraph) {
        let ball = cfg.ball().ok().filter(|_| cfg.geometry == Geometry::Hyperbolic);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::init(6, 4, cfg.dim, cfg.layers, ball.as_ref(), &mut rng);
        // Spread embeddings out so the maps are far from linear.
        for id in p.ids().collect::<Vec<_>>() {
            if matches!(id, ParamId::User(_) | ParamId::Item(_)) {
                for (k, v) in p.get_mut(id).iter_mut().enumerate() {
                    *v = *v * 300.0 + 0.05 * ((k as f64) - 1.5);
                }
            }
        }
        let g = SocialGraph::from_edges(6, [(0, 1), (0, 2), (0, 3), (1, 2), (2, 4), (3, 5), (5, 0)]).unwrap();
        (p, g)
    }

    fn check_agreement(cfg: ModelConfig) {
        let (p, g) = setup(&cfg, 11);
        let pure = Model::new(&p, &g, &cfg).unwrap();
        let mut tape = Tape::new();
        let mut taped = TapedModel::new(&p, &g, &cfg).unwrap();
        for u in 0..6 {
            for i in 0..4 {
                let node = taped.probability(&mut tape, u, i).unwrap();
                let a = tape.scalar_value(node);
                let b = pure.predict(u, i).unwrap();
                assert!((a - b).abs() < 1e-13, "{cfg:?} u{u} i{i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn taped_matches_pure_across_modes() {
        for layers in [0, 1, 2] {
            for geometry in [Geometry::Hyperbolic, Geometry::Euclidean] {
                for attention in [AttentionMode::On, AttentionMode::Mean] {
                    check_agreement(ModelConfig {
                        dim: 4,
                        layers,
                        geometry,
                        attention,
                        ..ModelConfig::default()
                    });
                }
            }
        }
    }

    #[test]
    fn unknown_ids_rejected() {
        let cfg = ModelConfig {
            dim: 4,
            ..ModelConfig::default()
        };
        let (p, g) = setup(&cfg, 2);
        let mut tape = Tape::new();
        let mut taped = TapedModel::new(&p, &g, &cfg).unwrap();
        assert!(taped.probability(&mut tape, 6, 0).is_err());
        assert!(taped.probability(&mut tape, 0, 4).is_err());
        assert!(taped.user_distance(&mut tape, 0, 9).is_err());
    }
}
