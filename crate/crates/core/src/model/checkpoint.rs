//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "HSR1"
//! u32 d, u32 L, u32 |U|, u32 |V|
//! f64 c, f64 γ, f64 τ, f64 r, f64 t
//! f64[|U|·d]   user embeddings, row-major
//! f64[|V|·d]   item embeddings, row-major
//! f64[d·d]     M¹ … Mᴸ, row-major
//! f64[2d·d]    w¹ … wᴸ, row-major
//! ```

use std::path::Path;

use crate::diff::ParamStore;
use crate::error::{HsrError, Result};
use crate::linalg::Matrix;

use super::{Geometry, ModelConfig};

pub const MAGIC: &[u8; 4] = b"HSR1";

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub dim: u32,
    pub layers: u32,
    pub num_users: u32,
    pub num_items: u32,
    pub curvature: f64,
    pub gamma: f64,
    pub tau: f64,
    pub fd_radius: f64,
    pub fd_temperature: f64,
}

const HEADER_LEN: usize = 4 + 4 * 4 + 5 * 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(cfg: &ModelConfig, params: ParamStore) -> Result<Self> {
        let to_u32 = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| HsrError::Usage(format!("{what} does not fit in u32")))
        };
        Ok(Checkpoint {
            header: CheckpointHeader {
                dim: to_u32(params.dim(), "dim")?,
                layers: to_u32(params.num_layers(), "layers")?,
                num_users: to_u32(params.num_users(), "user count")?,
                num_items: to_u32(params.num_items(), "item count")?,
                curvature: cfg.curvature,
                gamma: cfg.gamma,
                tau: cfg.tau,
                fd_radius: cfg.fd_radius,
                fd_temperature: cfg.fd_temperature,
            },
            params,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let p = &self.params;
        let h = &self.header;
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * (p.users_flat().len() + p.items_flat().len()));
        out.extend_from_slice(MAGIC);
        for v in [h.dim, h.layers, h.num_users, h.num_items] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in [h.curvature, h.gamma, h.tau, h.fd_radius, h.fd_temperature] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut put = |xs: &[f64]| xs.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        put(p.users_flat());
        put(p.items_flat());
        for l in 0..p.num_layers() {
            put(p.layer(l).as_slice());
        }
        for l in 0..p.num_layers() {
            put(p.attention(l).as_slice());
        }
        out
    }

    /// Parses a checkpoint. Every length is validated against the buffer
    /// before anything is allocated.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(HsrError::Compat("not an HSR1 checkpoint".into()));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let f64_at = |i: usize| f64::from_le_bytes(bytes[20 + 8 * i..28 + 8 * i].try_into().unwrap());
        let header = CheckpointHeader {
            dim: u32_at(0),
            layers: u32_at(1),
            num_users: u32_at(2),
            num_items: u32_at(3),
            curvature: f64_at(0),
            gamma: f64_at(1),
            tau: f64_at(2),
            fd_radius: f64_at(3),
            fd_temperature: f64_at(4),
        };
        let (d, l, nu, ni) = (
            header.dim as u64,
            header.layers as u64,
            header.num_users as u64,
            header.num_items as u64,
        );
        if d == 0 {
            return Err(HsrError::Compat("checkpoint has zero embedding dim".into()));
        }
        let floats = || -> Option<u64> {
            let embed = nu.checked_add(ni)?.checked_mul(d)?;
            let mats = l.checked_mul(d.checked_mul(d)?.checked_mul(3)?)?;
            embed.checked_add(mats)
        };
        let expected = floats()
            .and_then(|n| n.checked_mul(8))
            .and_then(|n| n.checked_add(HEADER_LEN as u64));
        if expected != Some(bytes.len() as u64) {
            return Err(HsrError::Compat(format!(
                "checkpoint body is {} bytes, header implies {:?}",
                bytes.len(),
                expected
            )));
        }
        let mut cursor = HEADER_LEN;
        let mut take = |n: usize| -> Vec<f64> {
            let out = bytes[cursor..cursor + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            cursor += 8 * n;
            out
        };
        let (d, l, nu, ni) = (d as usize, l as usize, nu as usize, ni as usize);
        let users = take(nu * d);
        let items = take(ni * d);
        let layers: Vec<Matrix> = (0..l)
            .map(|_| Matrix::from_row_major(d, d, take(d * d)))
            .collect::<Result<_>>()?;
        let attention: Vec<Matrix> = (0..l)
            .map(|_| Matrix::from_row_major(2 * d, d, take(2 * d * d)))
            .collect::<Result<_>>()?;
        let params = ParamStore::from_parts(d, users, items, layers, attention, true)?;
        Ok(Checkpoint { header, params })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| HsrError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| HsrError::io(path, e))?;
        Self::decode(&bytes)
    }

    /// Overlay the stored hyperparameters onto `base`, failing if the shapes disagree.
    pub fn model_config(&self, base: &ModelConfig) -> Result<ModelConfig> {
        let h = &self.header;
        if h.dim as usize != base.dim || h.layers as usize != base.layers {
            return Err(HsrError::Compat(format!(
                "checkpoint has dim {} / {} layers, config expects {} / {}",
                h.dim, h.layers, base.dim, base.layers
            )));
        }
        Ok(ModelConfig {
            curvature: h.curvature,
            gamma: h.gamma,
            tau: h.tau,
            fd_radius: h.fd_radius,
            fd_temperature: h.fd_temperature,
            ..base.clone()
        })
    }

    /// Parameters tagged for the given geometry.
    pub fn into_params(self, geometry: Geometry) -> Result<ParamStore> {
        let p = self.params;
        let layers = (0..p.num_layers()).map(|l| p.layer(l).clone()).collect();
        let attention = (0..p.num_layers()).map(|l| p.attention(l).clone()).collect();
        ParamStore::from_parts(
            p.dim(),
            p.users_flat().to_vec(),
            p.items_flat().to_vec(),
            layers,
            attention,
            geometry == Geometry::Hyperbolic,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ball::PoincareBall;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(seed: u64, layers: usize) -> Checkpoint {
        let ball = PoincareBall::new(1.0).unwrap();
        let p = ParamStore::init(3, 5, 4, layers, Some(&ball), &mut ChaCha8Rng::seed_from_u64(seed));
        let cfg = ModelConfig {
            dim: 4,
            layers,
            ..ModelConfig::default()
        };
        Checkpoint::new(&cfg, p).unwrap()
    }

    #[test]
    fn layout_is_as_documented() {
        let c = sample(1, 2);
        let bytes = c.encode();
        assert_eq!(&bytes[..4], b"HSR1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 5);
        assert_eq!(f64::from_le_bytes(bytes[20..28].try_into().unwrap()), 1.0);
        assert_eq!(bytes.len(), HEADER_LEN + 8 * (3 * 4 + 5 * 4 + 2 * 16 + 2 * 32));
        let first_user = f64::from_le_bytes(bytes[HEADER_LEN..HEADER_LEN + 8].try_into().unwrap());
        assert_eq!(first_user, c.params.user(0)[0]);
    }

    #[test]
    fn truncated_and_foreign_inputs_rejected() {
        let bytes = sample(2, 1).encode();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::decode(b"HSR2").is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(Checkpoint::decode(&wrong), Err(HsrError::Compat(_))));
        // Huge declared sizes must not allocate.
        let mut huge = bytes[..HEADER_LEN].to_vec();
        huge[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(Checkpoint::decode(&huge).is_err());
    }

    #[test]
    fn config_overlay_checks_shape() {
        let c = sample(3, 1);
        let base = ModelConfig {
            dim: 4,
            tau: 0.5,
            ..ModelConfig::default()
        };
        assert_eq!(c.model_config(&base).unwrap().tau, 0.1);
        let wrong = ModelConfig { dim: 8, ..base };
        assert!(matches!(c.model_config(&wrong), Err(HsrError::Compat(_))));
    }

    proptest! {
        #[test]
        fn prop_round_trip_bit_exact(seed in any::<u64>(), layers in 0usize..3) {
            let c = sample(seed, layers);
            let bytes = c.encode();
            let back = Checkpoint::decode(&bytes).unwrap();
            prop_assert_eq!(back.encode(), bytes);
            prop_assert_eq!(back, c);
        }
    }
}
