//! Reverse-mode differentiation and the Riemannian optimizer.

pub mod manifold;
pub mod optim;
pub mod params;
pub mod tape;

pub use manifold::TapeBall;
pub use optim::{riemannian_rescale, rsgd_step, OptState};
pub use params::{ParamKind, ParamStore};
pub use tape::{Gradients, NodeId, ParamId, Tape};
