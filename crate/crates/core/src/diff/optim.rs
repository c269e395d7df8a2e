//! Riemannian SGD: Euclidean gradients are rescaled by the inverse Poincaré
//! metric, then applied through the exponential map at the current point.

use crate::ball::PoincareBall;
use crate::error::{HsrError, Result};
use crate::linalg;

use super::params::{ParamKind, ParamStore};
use super::tape::Gradients;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptState {
    learning_rate: f64,
    step: u64,
}

impl OptState {
    pub fn new(learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(HsrError::Usage(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        Ok(OptState {
            learning_rate,
            step: 0,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// `((1 − c‖θ‖²)² / 4) · ∇_E`.
pub fn riemannian_rescale(grad: &[f64], theta: &[f64], c: f64) -> Vec<f64> {
    let k = (1.0 - c * linalg::sq_norm(theta)).powi(2) / 4.0;
    linalg::scaled(grad, k)
}

/// One update of every parameter that has a gradient entry.
///
/// `ball` is required whenever the store holds manifold parameters. The whole
/// gradient set is validated before anything is written, so a NaN leaves the
/// store untouched.
pub fn rsgd_step(
    params: &mut ParamStore,
    grads: &Gradients,
    opt: &mut OptState,
    ball: Option<&PoincareBall>,
) -> Result<()> {
    for (id, g) in grads.iter() {
        if !params.contains(*id) {
            return Err(HsrError::Usage(format!("gradient for unknown parameter {id:?}")));
        }
        if g.len() != params.get(*id).len() {
            return Err(HsrError::Usage(format!("gradient shape mismatch for {id:?}")));
        }
        if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
            return Err(HsrError::Numeric(format!(
                "non-finite gradient for parameter {id:?} at coordinate {pos}"
            )));
        }
    }
    let lr = opt.learning_rate;
    for (id, g) in grads.iter() {
        match params.kind(*id) {
            ParamKind::Euclidean => linalg::axpy(params.get_mut(*id), -lr, g),
            ParamKind::Manifold => {
                let ball = ball.ok_or_else(|| {
                    HsrError::Usage("manifold parameters need a ball for the update".into())
                })?;
                let theta = params.get(*id);
                if g.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let mut step = riemannian_rescale(g, theta, ball.curvature());
                step.iter_mut().for_each(|v| *v *= -lr);
                let next = ball.exp_map_raw(theta, &step);
                params.get_mut(*id).copy_from_slice(&next);
            }
        }
    }
    opt.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ball::TangentVec;
    use crate::diff::tape::ParamId;
    use crate::linalg::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_point_store(p: &[f64]) -> ParamStore {
        ParamStore::from_parts(p.len(), p.to_vec(), p.to_vec(), vec![], vec![], true).unwrap()
    }

    #[test]
    fn rescale_examples() {
        let g = [1.0, -2.0];
        assert_eq!(riemannian_rescale(&g, &[0.0, 0.0], 1.0), vec![0.25, -0.5]);
        let k = (1.0f64 - 0.25).powi(2) / 4.0;
        assert!((k - 0.140625).abs() < 1e-16);
        let r = riemannian_rescale(&g, &[0.5, 0.0], 1.0);
        assert!((r[0] - 0.140625).abs() < 1e-15 && (r[1] + 0.28125).abs() < 1e-15);
        assert_eq!(riemannian_rescale(&[0.0, 0.0], &[0.3, 0.1], 1.0), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let ball = PoincareBall::new(1.0).unwrap();
        let mut p = ParamStore::init(3, 2, 2, 1, Some(&ball), &mut ChaCha8Rng::seed_from_u64(3));
        let before = p.clone();
        let mut g = Gradients::default();
        for id in p.ids().collect::<Vec<_>>() {
            g.insert(id, vec![0.0; p.get(id).len()]);
        }
        rsgd_step(&mut p, &g, &mut OptState::new(0.1).unwrap(), Some(&ball)).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn origin_step_is_exp_map_of_scaled_gradient() {
        let ball = PoincareBall::new(1.0).unwrap();
        let mut p = single_point_store(&[0.0, 0.0]);
        let mut g = Gradients::default();
        g.insert(ParamId::User(0), vec![1.0, 0.0]);
        rsgd_step(&mut p, &g, &mut OptState::new(0.1).unwrap(), Some(&ball)).unwrap();
        // exp at the origin has conformal factor 2: exp_0(v) = tanh(√c‖v‖)v/(√c‖v‖).
        let oracle = ball.exp0(&TangentVec::new(vec![-0.025, 0.0]).unwrap());
        assert_eq!(p.user(0), oracle.coords());
        assert!((p.user(0)[0] + 0.025f64.tanh()).abs() < 1e-15);
        assert_eq!(p.item(0), &[0.0, 0.0]);
    }

    #[test]
    fn euclidean_params_take_plain_sgd() {
        let m = Matrix::from_row_major(1, 1, vec![2.0]).unwrap();
        let w = Matrix::from_row_major(2, 1, vec![1.0, 1.0]).unwrap();
        let mut p = ParamStore::from_parts(1, vec![0.1], vec![0.2], vec![m], vec![w], false).unwrap();
        let mut g = Gradients::default();
        g.insert(ParamId::Layer(0), vec![4.0]);
        g.insert(ParamId::User(0), vec![1.0]);
        rsgd_step(&mut p, &g, &mut OptState::new(0.5).unwrap(), None).unwrap();
        assert_eq!(p.layer(0).as_slice(), &[0.0]);
        assert!((p.user(0)[0] + 0.4).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let ball = PoincareBall::new(1.0).unwrap();
        let mut p = single_point_store(&[0.1, 0.1]);
        let before = p.clone();
        let mut g = Gradients::default();
        g.insert(ParamId::User(0), vec![0.5, 0.5]);
        g.insert(ParamId::Item(0), vec![f64::NAN, 0.0]);
        let err = rsgd_step(&mut p, &g, &mut OptState::new(0.1).unwrap(), Some(&ball)).unwrap_err();
        assert!(matches!(&err, HsrError::Numeric(m) if m.contains("Item(0)")));
        assert_eq!(p, before);
    }

    #[test]
    fn random_steps_stay_in_ball() {
        let ball = PoincareBall::new(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut p = single_point_store(&[0.0, 0.0, 0.0]);
        let mut opt = OptState::new(1.0).unwrap();
        for _ in 0..10_000 {
            let mut g = Gradients::default();
            let scale = 10f64.powf(rng.gen_range(-2.0..3.0));
            g.insert(ParamId::User(0), (0..3).map(|_| rng.gen_range(-scale..scale)).collect());
            rsgd_step(&mut p, &g, &mut opt, Some(&ball)).unwrap();
            assert!(ball.contains(p.user(0)));
        }
        assert_eq!(opt.step(), 10_000);
    }

    #[test]
    fn nonpositive_learning_rate_rejected() {
        assert!(OptState::new(0.0).is_err());
        assert!(OptState::new(-1e-3).is_err());
    }
}
