//! The geometry switch between the hyperbolic model and its Euclidean
//! counterpart. In Euclidean mode the origin maps are identities, Möbius
//! products are ordinary products and distance is `‖x − y‖`.

use crate::ball::PoincareBall;
use crate::diff::{NodeId, Tape, TapeBall};
use crate::linalg::{self, Matrix};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Space {
    Hyperbolic(PoincareBall),
    Euclidean,
}

impl Space {
    pub fn ball(&self) -> Option<&PoincareBall> {
        match self {
            Space::Hyperbolic(b) => Some(b),
            Space::Euclidean => None,
        }
    }

    pub fn log0(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Space::Hyperbolic(b) => b.log0_raw(x),
            Space::Euclidean => x.to_vec(),
        }
    }

    pub fn exp0(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Space::Hyperbolic(b) => b.exp0_raw(v),
            Space::Euclidean => v.to_vec(),
        }
    }

    pub fn matvec(&self, m: &Matrix, x: &[f64]) -> Vec<f64> {
        match self {
            Space::Hyperbolic(b) => b.mobius_matvec_raw(m, x),
            Space::Euclidean => m.matvec(x),
        }
    }

    /// LeakyReLU, lifted through the origin maps in hyperbolic mode.
    pub fn activate(&self, x: &[f64], slope: f64) -> Vec<f64> {
        let leaky = |v: Vec<f64>| -> Vec<f64> {
            v.into_iter()
                .map(|z| if z > 0.0 { z } else { slope * z })
                .collect()
        };
        match self {
            Space::Hyperbolic(b) => b.exp0_raw(&leaky(b.log0_raw(x))),
            Space::Euclidean => leaky(x.to_vec()),
        }
    }

    pub fn dist(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Space::Hyperbolic(b) => b.dist_raw(x, y),
            Space::Euclidean => linalg::norm(&linalg::sub(x, y)),
        }
    }
}

/// Taped twin of [`Space`].
#[derive(Clone, Copy, Debug)]
pub enum TapeSpace {
    Hyperbolic(TapeBall),
    Euclidean,
}

impl From<Space> for TapeSpace {
    fn from(s: Space) -> Self {
        match s {
            Space::Hyperbolic(b) => TapeSpace::Hyperbolic(TapeBall::new(b)),
            Space::Euclidean => TapeSpace::Euclidean,
        }
    }
}

impl TapeSpace {
    pub fn log0(&self, t: &mut Tape, x: NodeId) -> NodeId {
        match self {
            TapeSpace::Hyperbolic(b) => b.log0(t, x),
            TapeSpace::Euclidean => x,
        }
    }

    pub fn exp0(&self, t: &mut Tape, v: NodeId) -> NodeId {
        match self {
            TapeSpace::Hyperbolic(b) => b.exp0(t, v),
            TapeSpace::Euclidean => v,
        }
    }

    pub fn matvec(&self, t: &mut Tape, m: NodeId, x: NodeId, rows: usize, cols: usize) -> NodeId {
        match self {
            TapeSpace::Hyperbolic(b) => b.mobius_matvec(t, m, x, rows, cols),
            TapeSpace::Euclidean => t.matvec(m, x, rows, cols),
        }
    }

    pub fn activate(&self, t: &mut Tape, x: NodeId, slope: f64) -> NodeId {
        match self {
            TapeSpace::Hyperbolic(b) => {
                let l = b.log0(t, x);
                let a = t.leaky_relu(l, slope);
                b.exp0(t, a)
            }
            TapeSpace::Euclidean => t.leaky_relu(x, slope),
        }
    }

    pub fn dist(&self, t: &mut Tape, x: NodeId, y: NodeId) -> NodeId {
        match self {
            TapeSpace::Hyperbolic(b) => b.dist(t, x, y),
            TapeSpace::Euclidean => {
                let d = t.sub(x, y);
                t.norm(d)
            }
        }
    }
}
