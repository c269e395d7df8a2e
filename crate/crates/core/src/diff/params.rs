use rand::Rng;

use crate::ball::PoincareBall;
use crate::error::{HsrError, Result};
use crate::linalg::Matrix;

use super::tape::ParamId;

/// Which update rule a parameter takes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Lives on the Poincaré ball; updated by Riemannian SGD.
    Manifold,
    /// Lives in ordinary space; updated by plain SGD.
    Euclidean,
}

/// Initial half-width of the uniform embedding distribution.
pub const EMBED_INIT_SCALE: f64 = 1e-3;

/// Every trainable tensor of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    dim: usize,
    num_users: usize,
    num_items: usize,
    users: Vec<f64>,
    items: Vec<f64>,
    layers: Vec<Matrix>,
    attention: Vec<Matrix>,
    embeddings_on_ball: bool,
}

impl ParamStore {
    /// Near-origin embeddings, Glorot-uniform matrices.
    pub fn init<R: Rng>(
        num_users: usize,
        num_items: usize,
        dim: usize,
        layers: usize,
        ball: Option<&PoincareBall>,
        rng: &mut R,
    ) -> Self {
        let mut embed = |n: usize| -> Vec<f64> {
            let mut out = Vec::with_capacity(n * dim);
            for _ in 0..n {
                let row: Vec<f64> = (0..dim)
                    .map(|_| rng.gen_range(-EMBED_INIT_SCALE..=EMBED_INIT_SCALE))
                    .collect();
                match ball {
                    Some(b) => out.extend(b.project_raw(row)),
                    None => out.extend(row),
                }
            }
            out
        };
        let users = embed(num_users);
        let items = embed(num_items);
        let mut glorot = |rows: usize, cols: usize| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.gen_range(-a..=a)).collect();
            Matrix::from_row_major(rows, cols, data).expect("sized by construction")
        };
        let layer_mats = (0..layers).map(|_| glorot(dim, dim)).collect();
        let attn_mats = (0..layers).map(|_| glorot(2 * dim, dim)).collect();
        ParamStore {
            dim,
            num_users,
            num_items,
            users,
            items,
            layers: layer_mats,
            attention: attn_mats,
            embeddings_on_ball: ball.is_some(),
        }
    }

    pub fn from_parts(
        dim: usize,
        users: Vec<f64>,
        items: Vec<f64>,
        layers: Vec<Matrix>,
        attention: Vec<Matrix>,
        embeddings_on_ball: bool,
    ) -> Result<Self> {
        if dim == 0 || users.len() % dim != 0 || items.len() % dim != 0 {
            return Err(HsrError::Usage("embedding tables are not multiples of dim".into()));
        }
        if layers.len() != attention.len() {
            return Err(HsrError::Usage("layer and attention matrix counts differ".into()));
        }
        for m in &layers {
            if m.rows() != dim || m.cols() != dim {
                return Err(HsrError::Usage("layer matrix must be dim×dim".into()));
            }
        }
        for w in &attention {
            if w.rows() != 2 * dim || w.cols() != dim {
                return Err(HsrError::Usage("attention matrix must be 2dim×dim".into()));
            }
        }
        Ok(ParamStore {
            dim,
            num_users: users.len() / dim,
            num_items: items.len() / dim,
            users,
            items,
            layers,
            attention,
            embeddings_on_ball,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn embeddings_on_ball(&self) -> bool {
        self.embeddings_on_ball
    }

    pub fn user(&self, u: usize) -> &[f64] {
        &self.users[u * self.dim..(u + 1) * self.dim]
    }

    pub fn item(&self, i: usize) -> &[f64] {
        &self.items[i * self.dim..(i + 1) * self.dim]
    }

    pub fn users_flat(&self) -> &[f64] {
        &self.users
    }

    pub fn items_flat(&self) -> &[f64] {
        &self.items
    }

    pub fn layer(&self, l: usize) -> &Matrix {
        &self.layers[l]
    }

    pub fn attention(&self, l: usize) -> &Matrix {
        &self.attention[l]
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        match id {
            ParamId::User(_) | ParamId::Item(_) if self.embeddings_on_ball => ParamKind::Manifold,
            _ => ParamKind::Euclidean,
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        match id {
            ParamId::User(u) => self.user(u),
            ParamId::Item(i) => self.item(i),
            ParamId::Layer(l) => self.layers[l].as_slice(),
            ParamId::Attention(l) => self.attention[l].as_slice(),
        }
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        let d = self.dim;
        match id {
            ParamId::User(u) => &mut self.users[u * d..(u + 1) * d],
            ParamId::Item(i) => &mut self.items[i * d..(i + 1) * d],
            ParamId::Layer(l) => self.layers[l].as_mut_slice(),
            ParamId::Attention(l) => self.attention[l].as_mut_slice(),
        }
    }

    pub fn contains(&self, id: ParamId) -> bool {
        match id {
            ParamId::User(u) => u < self.num_users,
            ParamId::Item(i) => i < self.num_items,
            ParamId::Layer(l) | ParamId::Attention(l) => l < self.layers.len(),
        }
    }

    /// All parameter ids, embeddings first.
    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.num_users)
            .map(ParamId::User)
            .chain((0..self.num_items).map(ParamId::Item))
            .chain((0..self.layers.len()).map(ParamId::Layer))
            .chain((0..self.attention.len()).map(ParamId::Attention))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_shapes_and_kinds() {
        let ball = PoincareBall::new(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ParamStore::init(5, 7, 4, 2, Some(&ball), &mut rng);
        assert_eq!(p.user(4).len(), 4);
        assert_eq!(p.layer(1).rows(), 4);
        assert_eq!(p.attention(1).rows(), 8);
        assert!(p.user(0).iter().all(|x| x.abs() <= EMBED_INIT_SCALE));
        assert_eq!(p.kind(ParamId::User(0)), ParamKind::Manifold);
        assert_eq!(p.kind(ParamId::Layer(0)), ParamKind::Euclidean);
        assert_eq!(p.ids().count(), 5 + 7 + 2 + 2);

        let e = ParamStore::init(5, 7, 4, 1, None, &mut rng);
        assert_eq!(e.kind(ParamId::Item(3)), ParamKind::Euclidean);
    }

    #[test]
    fn same_seed_same_init() {
        let a = ParamStore::init(3, 3, 2, 1, None, &mut ChaCha8Rng::seed_from_u64(9));
        let b = ParamStore::init(3, 3, 2, 1, None, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }
}
