//! Social aggregation model: embedding lookup, `L` rounds of item-conditioned
//! attention over trusted neighbors in the tangent space at the origin, and a
//! Fermi-Dirac decoder on the resulting distance.
//!
//! Two evaluators share one definition of the computation:
//! [`infer::Model`] works on plain `f64` slices for evaluation, and
//! [`forward::TapedModel`] records the same steps on a [`crate::diff::Tape`]
//! for training. Tests pin them to each other.

pub mod checkpoint;
pub mod forward;
pub mod graph;
pub mod infer;
pub mod space;

pub use checkpoint::Checkpoint;
pub use forward::TapedModel;
pub use graph::SocialGraph;
pub use infer::Model;
pub use space::Space;

use std::fmt;
use std::str::FromStr;

use crate::ball::{PoincareBall, BALL_EPS};
use crate::error::{HsrError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Geometry {
    Hyperbolic,
    Euclidean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionMode {
    /// Item-conditioned softmax attention.
    On,
    /// Uniform `1/|N(a)|` weights.
    Mean,
}

impl FromStr for Geometry {
    type Err = HsrError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hyperbolic" => Ok(Geometry::Hyperbolic),
            "euclidean" => Ok(Geometry::Euclidean),
            _ => Err(HsrError::Input(format!(
                "geometry must be hyperbolic or euclidean, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Geometry::Hyperbolic => "hyperbolic",
            Geometry::Euclidean => "euclidean",
        })
    }
}

impl FromStr for AttentionMode {
    type Err = HsrError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "on" => Ok(AttentionMode::On),
            "mean" => Ok(AttentionMode::Mean),
            _ => Err(HsrError::Input(format!("attention must be on or mean, got {s:?}"))),
        }
    }
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionMode::On => "on",
            AttentionMode::Mean => "mean",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    pub curvature: f64,
    /// Social coefficient γ.
    pub gamma: f64,
    /// Attention softmax temperature τ.
    pub tau: f64,
    /// Fermi-Dirac radius r.
    pub fd_radius: f64,
    /// Fermi-Dirac temperature t.
    pub fd_temperature: f64,
    pub geometry: Geometry,
    pub attention: AttentionMode,
    pub leaky_slope: f64,
    pub ball_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 32,
            layers: 1,
            curvature: 1.0,
            gamma: 1.0,
            tau: 0.1,
            fd_radius: 2.0,
            fd_temperature: 1.0,
            geometry: Geometry::Hyperbolic,
            attention: AttentionMode::On,
            leaky_slope: 0.01,
            ball_eps: BALL_EPS,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HsrError::Input(m));
        if self.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        if self.geometry == Geometry::Hyperbolic && !(self.curvature > 0.0) {
            return bad(format!("curvature must be positive, got {}", self.curvature));
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.fd_temperature > 0.0) {
            return bad(format!("Fermi-Dirac t must be positive, got {}", self.fd_temperature));
        }
        for (name, v) in [
            ("gamma", self.gamma),
            ("r", self.fd_radius),
            ("leaky_slope", self.leaky_slope),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        if !(0.0..1.0).contains(&self.ball_eps) {
            return bad(format!("ball margin must be in [0, 1), got {}", self.ball_eps));
        }
        Ok(())
    }

    pub fn ball(&self) -> Result<PoincareBall> {
        PoincareBall::with_margin(self.curvature, self.ball_eps)
    }

    pub fn space(&self) -> Result<Space> {
        Ok(match self.geometry {
            Geometry::Hyperbolic => Space::Hyperbolic(self.ball()?),
            Geometry::Euclidean => Space::Euclidean,
        })
    }
}

/// Fermi-Dirac probability `1 / (exp((dist − r)/t) + 1)`.
pub fn fermi_dirac(dist: f64, r: f64, t: f64) -> f64 {
    crate::diff::tape::sigmoid((r - dist) / t)
}

/// `softmax(logits / τ)`.
pub fn attention_weights(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(HsrError::Usage("attention over an empty neighbor set".into()));
    }
    if !(tau > 0.0) {
        return Err(HsrError::Usage(format!("tau must be positive, got {tau}")));
    }
    Ok(crate::diff::tape::softmax(logits, 1.0 / tau))
}
