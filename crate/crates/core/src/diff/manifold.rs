//! Poincaré-ball operations composed from tape primitives.
//!
//! These mirror [`crate::ball::PoincareBall`] step for step (same guards, same
//! projection points) so the taped forward value equals the pure one.

use crate::ball::{PoincareBall, MIN_NORM};
use crate::linalg;

use super::tape::{NodeId, Tape};

#[derive(Clone, Copy, Debug)]
pub struct TapeBall {
    ball: PoincareBall,
}

impl TapeBall {
    pub fn new(ball: PoincareBall) -> Self {
        TapeBall { ball }
    }

    pub fn ball(&self) -> &PoincareBall {
        &self.ball
    }

    fn sqrt_c(&self) -> f64 {
        self.ball.curvature().sqrt()
    }

    pub fn project(&self, t: &mut Tape, x: NodeId) -> NodeId {
        let sq = linalg::sq_norm(t.value(x));
        let bound = (1.0 - self.ball.margin()).powi(2);
        if self.ball.curvature() * sq < bound {
            return x;
        }
        let n = t.norm(x);
        let inv = t.recip(n);
        let k = t.scale_const(inv, self.ball.max_norm());
        t.scale(x, k)
    }

    pub fn mobius_add(&self, t: &mut Tape, x: NodeId, y: NodeId) -> NodeId {
        let c = self.ball.curvature();
        let xy = t.dot(x, y);
        let x2 = t.dot(x, x);
        let y2 = t.dot(y, y);
        // kx = 1 + 2c<x,y> + c|y|²
        let two_c_xy = t.scale_const(xy, 2.0 * c);
        let c_y2 = t.scale_const(y2, c);
        let kx0 = t.add(two_c_xy, c_y2);
        let kx = t.add_const(kx0, 1.0);
        // ky = 1 − c|x|²
        let neg_c_x2 = t.scale_const(x2, -c);
        let ky = t.add_const(neg_c_x2, 1.0);
        // den = 1 + 2c<x,y> + c²|x|²|y|²
        let x2y2 = t.mul(x2, y2);
        let c2_x2y2 = t.scale_const(x2y2, c * c);
        let den0 = t.add(two_c_xy, c2_x2y2);
        let den = t.add_const(den0, 1.0);
        let inv_den = t.recip(den);
        let ax = t.scale(x, kx);
        let by = t.scale(y, ky);
        let num = t.add(ax, by);
        let out = t.scale(num, inv_den);
        self.project(t, out)
    }

    /// Shared `g(√c‖v‖) / (√c‖v‖) · v` builder for the origin maps.
    fn radial(&self, t: &mut Tape, v: NodeId, atanh: bool) -> NodeId {
        if linalg::norm(t.value(v)) < MIN_NORM {
            return v;
        }
        let n = t.norm(v);
        let sn = t.scale_const(n, self.sqrt_c());
        let f = if atanh { t.atanh(sn) } else { t.tanh(sn) };
        let inv = t.recip(sn);
        let k = t.mul(f, inv);
        t.scale(v, k)
    }

    pub fn exp0(&self, t: &mut Tape, v: NodeId) -> NodeId {
        let out = self.radial(t, v, false);
        self.project(t, out)
    }

    pub fn log0(&self, t: &mut Tape, x: NodeId) -> NodeId {
        self.radial(t, x, true)
    }

    /// Möbius matrix-vector product with `m` a row-major `rows × cols` node.
    pub fn mobius_matvec(&self, t: &mut Tape, m: NodeId, x: NodeId, rows: usize, cols: usize) -> NodeId {
        let mx = t.matvec(m, x, rows, cols);
        if linalg::norm(t.value(mx)) < MIN_NORM || linalg::norm(t.value(x)) < MIN_NORM {
            return t.constant(&vec![0.0; rows]);
        }
        let sc = self.sqrt_c();
        let nmx = t.norm(mx);
        let nx = t.norm(x);
        let inv_nx = t.recip(nx);
        let ratio = t.mul(nmx, inv_nx);
        let snx = t.scale_const(nx, sc);
        let at = t.atanh(snx);
        let arg = t.mul(ratio, at);
        let th = t.tanh(arg);
        let inv_nmx = t.recip(nmx);
        let k0 = t.mul(th, inv_nmx);
        let k = t.scale_const(k0, 1.0 / sc);
        let out = t.scale(mx, k);
        self.project(t, out)
    }

    pub fn dist(&self, t: &mut Tape, x: NodeId, y: NodeId) -> NodeId {
        let neg_x = t.neg(x);
        let diff = self.mobius_add(t, neg_x, y);
        let n = t.norm(diff);
        let sc = self.sqrt_c();
        let sn = t.scale_const(n, sc);
        let at = t.atanh(sn);
        t.scale_const(at, 2.0 / sc)
    }
}
