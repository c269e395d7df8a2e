//! Gyrovector arithmetic on the Poincaré ball `{x : c‖x‖² < 1}`.
//!
//! Every ball-valued result is pulled back inside the radius
//! `(1 − ε)/√c` so downstream `tanh⁻¹` evaluations stay finite. All math is
//! `f64`; near the boundary the metric blows up fast enough that `f32`
//! gradients are unusable.
//!
//! The `*_raw` methods work on plain slices and skip dimension checks; they
//! back the hot inference path. The `BallPoint`/`TangentVec` methods validate
//! shapes and are what external callers should use.

use crate::error::{HsrError, Result};
use crate::linalg::{self, Matrix};

/// Default stability margin ε: results are kept at norm ≤ (1 − ε)/√c.
pub const BALL_EPS: f64 = 1e-5;
/// Upper clamp on the `tanh⁻¹` argument.
pub const ATANH_MAX: f64 = 1.0 - 1e-15;
/// Symmetric clamp on the `tanh` argument.
pub const TANH_CLAMP: f64 = 15.0;
/// Norms below this are treated as zero by the division guards.
pub const MIN_NORM: f64 = 1e-15;

pub fn tanh_clamped(x: f64) -> f64 {
    x.clamp(-TANH_CLAMP, TANH_CLAMP).tanh()
}

pub fn atanh_clamped(x: f64) -> f64 {
    x.signum() * x.abs().min(ATANH_MAX).atanh()
}

/// A point strictly inside the ball. Curvature lives on [`PoincareBall`].
#[derive(Clone, Debug, PartialEq)]
pub struct BallPoint(Vec<f64>);

impl BallPoint {
    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        linalg::norm(&self.0)
    }
}

/// A vector in the tangent space at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVec(Vec<f64>);

impl TangentVec {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(HsrError::Numeric("tangent vector has non-finite entries".into()));
        }
        Ok(TangentVec(coords))
    }

    pub fn zeros(d: usize) -> Self {
        TangentVec(vec![0.0; d])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoincareBall {
    c: f64,
    eps: f64,
}

fn check_dims(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(HsrError::Usage(format!("{what}: dimension mismatch ({a} vs {b})")));
    }
    Ok(())
}

impl PoincareBall {
    pub fn new(c: f64) -> Result<Self> {
        Self::with_margin(c, BALL_EPS)
    }

    pub fn with_margin(c: f64, eps: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(HsrError::Usage(format!("curvature must be positive, got {c}")));
        }
        if !(0.0..1.0).contains(&eps) {
            return Err(HsrError::Usage(format!("ball margin must be in [0, 1), got {eps}")));
        }
        Ok(PoincareBall { c, eps })
    }

    pub fn curvature(&self) -> f64 {
        self.c
    }

    pub fn margin(&self) -> f64 {
        self.eps
    }

    /// Largest norm a projected point may have.
    pub fn max_norm(&self) -> f64 {
        (1.0 - self.eps) / self.c.sqrt()
    }

    pub fn origin(&self, d: usize) -> BallPoint {
        BallPoint(vec![0.0; d])
    }

    /// Whether `x` satisfies the post-projection invariant `c‖x‖² ≤ (1 − ε)²`.
    pub fn contains(&self, x: &[f64]) -> bool {
        // A hair of slack for the rescale's own rounding.
        self.c * linalg::sq_norm(x) <= (1.0 - self.eps).powi(2) * (1.0 + 1e-12)
    }

    /// Rescale `x` onto the radius `(1 − ε)/√c` sphere if it lies on or beyond it.
    pub fn project(&self, x: Vec<f64>) -> Result<BallPoint> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(HsrError::Numeric("cannot project a non-finite vector".into()));
        }
        Ok(BallPoint(self.project_raw(x)))
    }

    pub fn project_raw(&self, mut x: Vec<f64>) -> Vec<f64> {
        let sq = linalg::sq_norm(&x);
        let bound = (1.0 - self.eps).powi(2);
        if self.c * sq >= bound {
            let k = self.max_norm() / sq.sqrt();
            x.iter_mut().for_each(|v| *v *= k);
        }
        x
    }

    pub fn mobius_add(&self, x: &BallPoint, y: &BallPoint) -> Result<BallPoint> {
        check_dims(x.dim(), y.dim(), "mobius_add")?;
        Ok(BallPoint(self.mobius_add_raw(&x.0, &y.0)))
    }

    pub fn mobius_add_raw(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let c = self.c;
        let xy = linalg::dot(x, y);
        let x2 = linalg::sq_norm(x);
        let y2 = linalg::sq_norm(y);
        let kx = 1.0 + 2.0 * c * xy + c * y2;
        let ky = 1.0 - c * x2;
        let den = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
        let out = x
            .iter()
            .zip(y)
            .map(|(a, b)| (kx * a + ky * b) / den)
            .collect();
        self.project_raw(out)
    }

    pub fn mobius_scalar(&self, r: f64, x: &BallPoint) -> BallPoint {
        BallPoint(self.mobius_scalar_raw(r, &x.0))
    }

    pub fn mobius_scalar_raw(&self, r: f64, x: &[f64]) -> Vec<f64> {
        let n = linalg::norm(x);
        if n < MIN_NORM {
            return vec![0.0; x.len()];
        }
        let sc = self.c.sqrt();
        let k = tanh_clamped(r * atanh_clamped(sc * n)) / (sc * n);
        self.project_raw(linalg::scaled(x, k))
    }

    pub fn mobius_matvec(&self, m: &Matrix, x: &BallPoint) -> Result<BallPoint> {
        check_dims(m.cols(), x.dim(), "mobius_matvec")?;
        Ok(BallPoint(self.mobius_matvec_raw(m, &x.0)))
    }

    pub fn mobius_matvec_raw(&self, m: &Matrix, x: &[f64]) -> Vec<f64> {
        let mx = m.matvec(x);
        let nmx = linalg::norm(&mx);
        let nx = linalg::norm(x);
        if nmx < MIN_NORM || nx < MIN_NORM {
            return vec![0.0; m.rows()];
        }
        let sc = self.c.sqrt();
        let k = tanh_clamped(nmx / nx * atanh_clamped(sc * nx)) / (sc * nmx);
        self.project_raw(linalg::scaled(&mx, k))
    }

    pub fn exp0(&self, v: &TangentVec) -> BallPoint {
        BallPoint(self.exp0_raw(&v.0))
    }

    /// `tanh(√c‖v‖) v / (√c‖v‖)`; identity in the zero-norm limit.
    pub fn exp0_raw(&self, v: &[f64]) -> Vec<f64> {
        let n = linalg::norm(v);
        if n < MIN_NORM {
            return self.project_raw(v.to_vec());
        }
        let sc = self.c.sqrt();
        let k = tanh_clamped(sc * n) / (sc * n);
        self.project_raw(linalg::scaled(v, k))
    }

    pub fn log0(&self, x: &BallPoint) -> TangentVec {
        TangentVec(self.log0_raw(&x.0))
    }

    /// `tanh⁻¹(√c‖x‖) x / (√c‖x‖)`; identity in the zero-norm limit.
    pub fn log0_raw(&self, x: &[f64]) -> Vec<f64> {
        let n = linalg::norm(x);
        if n < MIN_NORM {
            return x.to_vec();
        }
        let sc = self.c.sqrt();
        let k = atanh_clamped(sc * n) / (sc * n);
        linalg::scaled(x, k)
    }

    /// Conformal factor `λ_x = 2 / (1 − c‖x‖²)`.
    pub fn conformal_factor(&self, x: &[f64]) -> f64 {
        2.0 / (1.0 - self.c * linalg::sq_norm(x))
    }

    /// Exponential map at an arbitrary base point. Used as the RSGD retraction.
    pub fn exp_map(&self, x: &BallPoint, v: &[f64]) -> Result<BallPoint> {
        check_dims(x.dim(), v.len(), "exp_map")?;
        Ok(BallPoint(self.exp_map_raw(&x.0, v)))
    }

    pub fn exp_map_raw(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let n = linalg::norm(v);
        if n < MIN_NORM {
            return self.project_raw(x.to_vec());
        }
        let sc = self.c.sqrt();
        let lambda = self.conformal_factor(x);
        let k = tanh_clamped(sc * lambda * n / 2.0) / (sc * n);
        let step = linalg::scaled(v, k);
        self.mobius_add_raw(x, &step)
    }

    /// Logarithmic map at an arbitrary base point (inverse of [`Self::exp_map`]).
    pub fn log_map(&self, x: &BallPoint, y: &BallPoint) -> Result<Vec<f64>> {
        check_dims(x.dim(), y.dim(), "log_map")?;
        let neg_x: Vec<f64> = x.0.iter().map(|v| -v).collect();
        let diff = self.mobius_add_raw(&neg_x, &y.0);
        let n = linalg::norm(&diff);
        if n < MIN_NORM {
            return Ok(vec![0.0; x.dim()]);
        }
        let sc = self.c.sqrt();
        let lambda = self.conformal_factor(&x.0);
        let k = 2.0 / (sc * lambda) * atanh_clamped(sc * n) / n;
        Ok(linalg::scaled(&diff, k))
    }

    pub fn dist(&self, x: &BallPoint, y: &BallPoint) -> Result<f64> {
        check_dims(x.dim(), y.dim(), "dist")?;
        Ok(self.dist_raw(&x.0, &y.0))
    }

    /// `(2/√c) tanh⁻¹(√c ‖(−x) ⊕ y‖)`.
    pub fn dist_raw(&self, x: &[f64], y: &[f64]) -> f64 {
        let neg_x: Vec<f64> = x.iter().map(|v| -v).collect();
        let diff = self.mobius_add_raw(&neg_x, y);
        let sc = self.c.sqrt();
        2.0 / sc * atanh_clamped(sc * linalg::norm(&diff))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ball(c: f64) -> PoincareBall {
        PoincareBall::new(c).unwrap()
    }

    fn pt(b: &PoincareBall, v: &[f64]) -> BallPoint {
        b.project(v.to_vec()).unwrap()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    // Direct scalar transcription of the Möbius-addition formula in 1-D.
    fn mobius_add_1d(c: f64, x: f64, y: f64) -> f64 {
        ((1.0 + 2.0 * c * x * y + c * y * y) * x + (1.0 - c * x * x) * y)
            / (1.0 + 2.0 * c * x * y + c * c * x * x * y * y)
    }

    #[test]
    fn mobius_add_1d_collinear_value() {
        let b = ball(1.0);
        let direct = mobius_add_1d(1.0, 0.3, 0.4);
        assert!((direct - 0.625).abs() < 1e-15);
        let got = b.mobius_add(&pt(&b, &[0.3]), &pt(&b, &[0.4])).unwrap();
        assert!((got.coords()[0] - 0.625).abs() < 1e-12);
    }

    #[test]
    fn mobius_add_identity_and_inverse() {
        let b = ball(1.0);
        let y = pt(&b, &[0.1, -0.4, 0.2]);
        let o = b.origin(3);
        assert_eq!(b.mobius_add(&o, &y).unwrap(), y);
        let neg = pt(&b, &[-0.1, 0.4, -0.2]);
        let z = b.mobius_add(&neg, &y).unwrap();
        assert!(z.norm() < 1e-15);
    }

    #[test]
    fn mobius_add_dimension_mismatch() {
        let b = ball(1.0);
        let err = b.mobius_add(&pt(&b, &[0.1]), &pt(&b, &[0.1, 0.2]));
        assert!(matches!(err, Err(HsrError::Usage(_))));
    }

    #[test]
    fn mobius_add_is_not_commutative() {
        let b = ball(1.0);
        let x = pt(&b, &[0.5, 0.0]);
        let y = pt(&b, &[0.0, 0.5]);
        let xy = b.mobius_add(&x, &y).unwrap();
        let yx = b.mobius_add(&y, &x).unwrap();
        assert!(max_abs_diff(xy.coords(), yx.coords()) > 1e-3);
    }

    #[test]
    fn mobius_scalar_examples() {
        let b = ball(1.0);
        let x = pt(&b, &[0.5]);
        assert_eq!(b.mobius_scalar(5.0, &b.origin(1)), b.origin(1));
        assert!((b.mobius_scalar(1.0, &x).coords()[0] - 0.5).abs() < 1e-15);
        // tanh(2·atanh(0.5)) = 2·0.5/(1 + 0.25)
        let oracle = (2.0 * 0.5f64.atanh()).tanh();
        assert!((oracle - 0.8).abs() < 1e-15);
        assert!((b.mobius_scalar(2.0, &x).coords()[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn mobius_matvec_examples() {
        let b = ball(1.0);
        let x = pt(&b, &[0.3, -0.2]);
        let id = b.mobius_matvec(&Matrix::identity(2), &x).unwrap();
        assert!(max_abs_diff(id.coords(), x.coords()) < 1e-14);
        let zero = b.mobius_matvec(&Matrix::zeros(3, 2), &x).unwrap();
        assert_eq!(zero.coords(), &[0.0, 0.0, 0.0]);
        let two = Matrix::from_row_major(1, 1, vec![2.0]).unwrap();
        let h = pt(&b, &[0.5]);
        let via_mat = b.mobius_matvec(&two, &h).unwrap();
        let via_scalar = b.mobius_scalar(2.0, &h);
        assert!((via_mat.coords()[0] - 0.8).abs() < 1e-12);
        assert!((via_mat.coords()[0] - via_scalar.coords()[0]).abs() < 1e-14);
        assert!(b.mobius_matvec(&Matrix::identity(3), &x).is_err());
    }

    #[test]
    fn exp_log_examples() {
        let b = ball(1.0);
        let v = TangentVec::new(vec![0.54931]).unwrap();
        assert!((b.exp0(&v).coords()[0] - 0.5).abs() < 1e-5);
        assert_eq!(b.exp0(&TangentVec::zeros(4)), b.origin(4));
        assert_eq!(b.log0(&b.origin(4)), TangentVec::zeros(4));
    }

    #[test]
    fn dist_examples() {
        let b = ball(1.0);
        let y = pt(&b, &[0.5]);
        let oracle = 2.0 * 0.5f64.atanh();
        assert!((oracle - 1.0986).abs() < 1e-4);
        assert!((b.dist(&b.origin(1), &y).unwrap() - oracle).abs() < 1e-12);
        assert_eq!(b.dist(&y, &y).unwrap(), 0.0);
    }

    #[test]
    fn project_examples() {
        let b = ball(1.0);
        let inside = vec![0.3, 0.4];
        assert_eq!(b.project(inside.clone()).unwrap().coords(), &inside[..]);
        let far = b.project(vec![2.0, 0.0]).unwrap();
        assert!((far.norm() - 0.99999).abs() < 1e-12);
        assert_eq!(b.project(vec![0.0; 3]).unwrap().coords(), &[0.0; 3]);
        assert!(matches!(b.project(vec![f64::NAN]), Err(HsrError::Numeric(_))));
        assert!(matches!(b.project(vec![f64::INFINITY, 0.0]), Err(HsrError::Numeric(_))));
    }

    #[test]
    fn exp_map_at_origin_matches_exp0() {
        let b = ball(1.3);
        let v = [0.2, -0.7, 0.1];
        let a = b.exp_map(&b.origin(3), &v).unwrap();
        let e = b.exp0(&TangentVec::new(v.to_vec()).unwrap());
        assert!(max_abs_diff(a.coords(), e.coords()) < 1e-14);
    }

    #[test]
    fn invalid_curvature_rejected() {
        assert!(PoincareBall::new(0.0).is_err());
        assert!(PoincareBall::new(-1.0).is_err());
        assert!(PoincareBall::new(f64::NAN).is_err());
    }

    fn in_ball(d: usize) -> impl Strategy<Value = Vec<f64>> {
        // Direction plus radius fraction, so points cover the whole ball.
        (prop::collection::vec(-1.0f64..1.0, d), 0.0f64..0.95)
    .prop_map(|(v, r)| {
            let n = linalg::norm(&v).max(1e-12);
            v.iter().map(|x| x / n * r).collect()
        })
    }

    proptest! {
        #[test]
        fn prop_scalar_distributivity(x in in_ball(4), r1 in -2.0f64..2.0, r2 in -2.0f64..2.0) {
            let b = ball(1.0);
            let x = pt(&b, &x);
            let lhs = b.mobius_scalar(r1 + r2, &x);
            let rhs = b.mobius_add(&b.mobius_scalar(r1, &x), &b.mobius_scalar(r2, &x)).unwrap();
            // Both sides saturate at the projection radius together; compare there too.
            prop_assert!(max_abs_diff(lhs.coords(), rhs.coords()) < 1e-8);
            let lhs = b.mobius_scalar(r1 * r2, &x);
            let rhs = b.mobius_scalar(r1, &b.mobius_scalar(r2, &x));
            prop_assert!(max_abs_diff(lhs.coords(), rhs.coords()) < 1e-8);
        }

        #[test]
        fn prop_dist_from_origin_closed_form(x in in_ball(6), c in 0.2f64..3.0) {
            let b = ball(c);
            let scaled: Vec<f64> = x.iter().map(|v| v / c.sqrt()).collect();
            let p = pt(&b, &scaled);
            let closed = 2.0 / c.sqrt() * (c.sqrt() * p.norm()).atanh();
            prop_assert!((b.dist(&b.origin(6), &p).unwrap() - closed).abs() < 1e-10);
        }

        #[test]
        fn prop_exp_log_round_trip(x in in_ball(5)) {
            let b = ball(1.0);
            let p = pt(&b, &x);
            let back = b.exp0(&b.log0(&p));
            prop_assert!(max_abs_diff(back.coords(), p.coords()) < 1e-8);
        }

        #[test]
        fn prop_general_exp_log_inverse(x in in_ball(3), y in in_ball(3)) {
            let b = ball(1.0);
            let (x, y) = (pt(&b, &x), pt(&b, &y));
            let v = b.log_map(&x, &y).unwrap();
            let back = b.exp_map(&x, &v).unwrap();
            prop_assert!(max_abs_diff(back.coords(), y.coords()) < 1e-6);
        }

        #[test]
        fn prop_matvec_equals_exp_of_linear_log(x in in_ball(3), m in prop::collection::vec(-1.5f64..1.5, 6)) {
            let b = ball(1.0);
            let x = pt(&b, &x);
            let m = Matrix::from_row_major(2, 3, m).unwrap();
            let direct = b.mobius_matvec(&m, &x).unwrap();
            let lin = m.matvec(b.log0(&x).coords());
            let via_tangent = b.exp0(&TangentVec::new(lin).unwrap());
            prop_assert!(max_abs_diff(direct.coords(), via_tangent.coords()) < 1e-9);
        }
    }
}
