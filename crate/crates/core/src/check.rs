//! Numerical self-checks: gyrovector identities, the small-curvature limit,
//! autodiff against finite differences, optimizer sanity and aggregation
//! consistency. Each suite is seeded and reports every violated property
//! together with the operands that produced it.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::ball::PoincareBall;
use crate::diff::tape::log_sigmoid;
use crate::diff::{rsgd_step, OptState, ParamId, ParamStore, Tape};
use crate::error::{HsrError, Result};
use crate::linalg::{self, Matrix};
use crate::model::infer::aggregate_exact;
use crate::model::{Model, ModelConfig, SocialGraph, TapedModel};
use crate::objective::{objective_value, rec_loss, social_loss, stream_rng, total_loss, RecTriple, SocialTriple};

const CHECK_STREAM: u64 = 7;
/// Violations kept verbatim per suite; the rest are only counted.
const MAX_REPORTED: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Suite {
    Ball,
    Limit,
    Grad,
    Rsgd,
    Agg,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Ball, Suite::Limit, Suite::Grad, Suite::Rsgd, Suite::Agg];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Ball => "ball",
            Suite::Limit => "limit",
            Suite::Grad => "grad",
            Suite::Rsgd => "rsgd",
            Suite::Agg => "agg",
        }
    }

    pub fn default_tolerance(self) -> f64 {
        match self {
            Suite::Ball => 1e-8,
            Suite::Limit => 1e-4,
            Suite::Grad => 1e-4,
            Suite::Rsgd => 0.0,
            Suite::Agg => 1e-3,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = HsrError;
    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| HsrError::Input(format!("unknown suite '{s}' (expected ball, limit, grad, rsgd or agg)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub property: &'static str,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub suite: Suite,
    pub tolerance: f64,
    pub checks: usize,
    pub failures: usize,
    /// The first few violations with their operands.
    pub violations: Vec<Violation>,
    pub notes: Vec<String>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} {}: {} checks, {} failures, tol {:e}, {:.2}s",
            if self.passed() { "PASS" } else { "FAIL" },
            self.suite,
            self.checks,
            self.failures,
            self.tolerance,
            self.elapsed.as_secs_f64()
        )?;
        for n in &self.notes {
            writeln!(f, "  note: {n}")?;
        }
        for v in &self.violations {
            writeln!(f, "  violated {}: {}", v.property, v.detail)?;
        }
        if self.failures > self.violations.len() {
            writeln!(f, "  ... {} more", self.failures - self.violations.len())?;
        }
        Ok(())
    }
}

struct Recorder {
    checks: usize,
    failures: usize,
    violations: Vec<Violation>,
    notes: Vec<String>,
}

impl Recorder {
    fn new() -> Self {
        Recorder {
            checks: 0,
            failures: 0,
            violations: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, property: &'static str, detail: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failures += 1;
            if self.violations.len() < MAX_REPORTED {
                self.violations.push(Violation {
                    property,
                    detail: detail(),
                });
            }
        }
    }
}

/// Runs one suite. `tolerance` replaces the suite's default tolerance.
pub fn run_suite(suite: Suite, tolerance: Option<f64>, seed: u64) -> Result<SuiteReport> {
    let tol = tolerance.unwrap_or(suite.default_tolerance());
    if !(tol >= 0.0) || !tol.is_finite() {
        return Err(HsrError::Input(format!("tolerance must be a non-negative number, got {tol}")));
    }
    let mut rng = stream_rng(seed, CHECK_STREAM, suite as u64);
    let mut rec = Recorder::new();
    let start = Instant::now();
    match suite {
        Suite::Ball => ball_suite(&mut rec, tol, &mut rng)?,
        Suite::Limit => limit_suite(&mut rec, tol, &mut rng)?,
        Suite::Grad => grad_suite(&mut rec, tol, &mut rng)?,
        Suite::Rsgd => rsgd_suite(&mut rec, &mut rng)?,
        Suite::Agg => agg_suite(&mut rec, tol, &mut rng)?,
    }
    Ok(SuiteReport {
        suite,
        tolerance: tol,
        checks: rec.checks,
        failures: rec.failures,
        violations: rec.violations,
        notes: rec.notes,
        elapsed: start.elapsed(),
    })
}

fn random_dir(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = linalg::norm(&v);
        if n > 1e-3 {
            return linalg::scaled(&v, 1.0 / n);
        }
    }
}

/// Random vector of Euclidean norm in `(0, max_norm]`.
fn random_vec(rng: &mut ChaCha8Rng, d: usize, max_norm: f64) -> Vec<f64> {
    let r = max_norm * rng.gen_range(0.0f64..1.0).sqrt().max(1e-3);
    linalg::scaled(&random_dir(rng, d), r)
}

/// Random point with `√c‖x‖ ≤ max_ball_norm`.
fn random_point(rng: &mut ChaCha8Rng, d: usize, c: f64, max_ball_norm: f64) -> Vec<f64> {
    random_vec(rng, d, max_ball_norm / c.sqrt())
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = linalg::norm(&linalg::sub(a, b));
    let scale = linalg::norm(b);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn ball_suite(rec: &mut Recorder, tol: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    const PAIRS: usize = 1000;
    for c in [0.5, 1.0, 2.0] {
        let ball = PoincareBall::new(c)?;
        let sc = c.sqrt();
        for d in [2, 8, 64] {
            let origin = vec![0.0; d];
            for _ in 0..PAIRS {
                let x = random_point(rng, d, c, 0.95);
                let y = random_point(rng, d, c, 0.95);

                let id = ball.mobius_add_raw(&origin, &y);
                let err = max_abs_diff(&id, &y);
                rec.check(err <= tol, "left identity 0 ⊕ y = y", || format!("c={c} d={d} y={y:?} err={err:e}"));

                let neg = linalg::scaled(&x, -1.0);
                let inv = linalg::norm(&ball.mobius_add_raw(&neg, &x));
                rec.check(inv <= tol, "left inverse (-x) ⊕ x = 0", || format!("c={c} d={d} x={x:?} norm={inv:e}"));

                let (dxy, dyx) = (ball.dist_raw(&x, &y), ball.dist_raw(&y, &x));
                rec.check((dxy - dyx).abs() <= tol * dxy.max(1.0), "distance symmetry", || {
                    format!("c={c} d={d} x={x:?} y={y:?} d(x,y)={dxy} d(y,x)={dyx}")
                });
                rec.check(dxy > 0.0 || x == y, "distance positivity", || {
                    format!("c={c} d={d} x={x:?} y={y:?} d={dxy}")
                });
                let dxx = ball.dist_raw(&x, &x);
                rec.check(dxx.abs() <= tol, "distance to self is zero", || format!("c={c} d={d} x={x:?} d={dxx}"));

                let closed = 2.0 / sc * crate::ball::atanh_clamped(sc * linalg::norm(&x));
                let generic = ball.dist_raw(&origin, &x);
                rec.check((closed - generic).abs() <= tol.min(1e-10) * closed.max(1.0), "dist(0, x) closed form", || {
                    format!("c={c} d={d} x={x:?} closed={closed} generic={generic}")
                });

                let v = random_vec(rng, d, 3.0);
                let back = ball.log0_raw(&ball.exp0_raw(&v));
                let err = max_abs_diff(&back, &v);
                rec.check(err <= tol * linalg::norm(&v).max(1.0), "log0(exp0(v)) = v", || {
                    format!("c={c} d={d} v={v:?} err={err:e}")
                });

                let p = random_point(rng, d, c, 0.999);
                let back = ball.exp0_raw(&ball.log0_raw(&p));
                let err = max_abs_diff(&back, &p);
                rec.check(err <= tol, "exp0(log0(x)) = x", || format!("c={c} d={d} x={p:?} err={err:e}"));

                let s = random_point(rng, d, c, 0.5);
                let (r1, r2) = (rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
                let lhs = ball.mobius_scalar_raw(r1 + r2, &s);
                let rhs = ball.mobius_add_raw(&ball.mobius_scalar_raw(r1, &s), &ball.mobius_scalar_raw(r2, &s));
                let err = max_abs_diff(&lhs, &rhs);
                rec.check(err <= tol, "(r1 + r2) ⊗ x = (r1 ⊗ x) ⊕ (r2 ⊗ x)", || {
                    format!("c={c} d={d} r1={r1} r2={r2} x={s:?} err={err:e}")
                });
                let lhs = ball.mobius_scalar_raw(r1 * r2, &s);
                let rhs = ball.mobius_scalar_raw(r1, &ball.mobius_scalar_raw(r2, &s));
                let err = max_abs_diff(&lhs, &rhs);
                rec.check(err <= tol, "(r1 r2) ⊗ x = r1 ⊗ (r2 ⊗ x)", || {
                    format!("c={c} d={d} r1={r1} r2={r2} x={s:?} err={err:e}")
                });
            }
        }

        // Non-collinear planar pairs; the first one that separates is the witness.
        let mut witness = None;
        for _ in 0..100 {
            let x = random_point(rng, 2, c, 0.9);
            let y = random_point(rng, 2, c, 0.9);
            let gap = max_abs_diff(&ball.mobius_add_raw(&x, &y), &ball.mobius_add_raw(&y, &x));
            if gap > 1e-3 {
                witness = Some((x, y, gap));
                break;
            }
        }
        rec.check(witness.is_some(), "x ⊕ y ≠ y ⊕ x for some pair", || format!("c={c}: no witness in 100 draws"));
        if let Some((x, y, gap)) = witness {
            rec.notes
                .push(format!("c={c}: non-commutativity witness x={x:?} y={y:?} gap={gap:.3e}"));
        }
    }
    Ok(())
}

fn limit_suite(rec: &mut Recorder, tol: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    let c = 1e-6;
    let ball = PoincareBall::new(c)?;
    for d in [2, 8, 64] {
        for _ in 0..1000 {
            let x = random_vec(rng, d, 1.0);
            let y = random_vec(rng, d, 1.0);
            let sum = linalg::add(&x, &y);
            let err = rel_err(&ball.mobius_add_raw(&x, &y), &sum);
            rec.check(err < tol, "x ⊕ y → x + y as c → 0", || format!("d={d} x={x:?} y={y:?} rel={err:e}"));

            let m = Matrix::from_row_major(d, d, (0..d * d).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
            let err = rel_err(&ball.mobius_matvec_raw(&m, &x), &m.matvec(&x));
            rec.check(err < tol, "M ⊗ x → M x as c → 0", || format!("d={d} x={x:?} rel={err:e}"));
        }
    }

    let (d, candidates) = (8, 50);
    for q in 0..100 {
        let query = random_vec(rng, d, 1.0);
        let points: Vec<Vec<f64>> = (0..candidates).map(|_| random_vec(rng, d, 1.0)).collect();
        let rank = |f: &dyn Fn(&[f64]) -> f64| {
            let mut idx: Vec<usize> = (0..candidates).collect();
            idx.sort_by(|&a, &b| f(&points[a]).total_cmp(&f(&points[b])));
            idx
        };
        let hyper = rank(&|p| ball.dist_raw(&query, p));
        let flat = rank(&|p| linalg::norm(&linalg::sub(&query, p)));
        rec.check(hyper == flat, "nearest-neighbour ranking matches Euclidean", || {
            let at = hyper.iter().zip(&flat).position(|(a, b)| a != b).unwrap_or(0);
            format!("query {q} first differs at rank {at}: {} vs {}", hyper[at], flat[at])
        });
    }
    Ok(())
}

/// A small random model with every parameter kind and at most five neighbors per user.
struct MicroModel {
    params: ParamStore,
    graph: SocialGraph,
    cfg: ModelConfig,
    rec: Vec<RecTriple>,
    social: Vec<SocialTriple>,
    lambda: f64,
}

fn micro_model(rng: &mut ChaCha8Rng, embed_norm: f64) -> Result<MicroModel> {
    let cfg = ModelConfig {
        dim: 4,
        layers: 1,
        ..ModelConfig::default()
    };
    let (nu, ni) = (rng.gen_range(4..=8), rng.gen_range(3..=6));
    let ball = cfg.ball()?;
    let mut params = ParamStore::init(nu, ni, cfg.dim, cfg.layers, Some(&ball), rng);
    for id in params.ids().collect::<Vec<_>>() {
        let v = match id {
            ParamId::User(_) | ParamId::Item(_) => random_point(rng, cfg.dim, cfg.curvature, embed_norm),
            _ => params.get(id).iter().map(|x| x * rng.gen_range(0.5..2.0)).collect(),
        };
        params.get_mut(id).copy_from_slice(&v);
    }
    let mut edges = Vec::new();
    for a in 0..nu {
        let mut others: Vec<usize> = (0..nu).filter(|&b| b != a).collect();
        others.shuffle(rng);
        let k = rng.gen_range(0..=5.min(others.len()));
        edges.extend(others[..k].iter().map(|&b| (a, b)));
    }
    let graph = SocialGraph::from_edges(nu, edges)?;
    let rec = (0..4)
        .map(|_| {
            let u = rng.gen_range(0..nu);
            let i = rng.gen_range(0..ni);
            let j = (i + rng.gen_range(1..ni)) % ni;
            RecTriple { u, i, j }
        })
        .collect();
    let social = (0..3)
        .map(|_| {
            let u = rng.gen_range(0..nu);
            let p = (u + rng.gen_range(1..nu)) % nu;
            let mut q = (u + rng.gen_range(1..nu)) % nu;
            if q == p {
                q = (p + 1) % nu;
                if q == u {
                    q = (q + 1) % nu;
                }
            }
            SocialTriple { u, p, q }
        })
        .collect();
    Ok(MicroModel {
        params,
        graph,
        cfg,
        rec,
        social,
        lambda: 0.1,
    })
}

impl MicroModel {
    /// Every additive term of the loss, evaluated from distances with a stable
    /// log-sigmoid so the finite-difference oracle loses as little precision
    /// as possible.
    fn terms(&self, params: &ParamStore) -> Result<Vec<f64>> {
        let model = Model::new(params, &self.graph, &self.cfg)?;
        let space = model.space();
        let (r, t) = (self.cfg.fd_radius, self.cfg.fd_temperature);
        let d = |u: usize, i: usize| space.dist(&model.user_representation(u, i), params.item(i));
        let mut out = Vec::with_capacity(2 * self.rec.len() + self.social.len());
        for tr in &self.rec {
            out.push(-log_sigmoid((r - d(tr.u, tr.i)) / t));
            out.push(-log_sigmoid((d(tr.u, tr.j) - r) / t));
        }
        for tr in &self.social {
            let dp = space.dist(params.user(tr.u), params.user(tr.p));
            let dq = space.dist(params.user(tr.u), params.user(tr.q));
            out.push(-self.lambda * log_sigmoid(dq - dp));
        }
        Ok(out)
    }

    fn loss(&self, params: &ParamStore) -> Result<f64> {
        let model = Model::new(params, &self.graph, &self.cfg)?;
        objective_value(&model, &self.rec, &self.social, self.lambda)
    }

    fn taped(&self, params: &ParamStore) -> Result<(f64, crate::diff::Gradients)> {
        let mut tape = Tape::new();
        let mut model = TapedModel::new(params, &self.graph, &self.cfg)?;
        let lr = rec_loss(&mut tape, &mut model, &self.rec)?;
        let ls = social_loss(&mut tape, &mut model, &self.social)?;
        let loss = total_loss(&mut tape, lr, ls, self.lambda)?
            .ok_or_else(|| HsrError::Usage("micro model has an empty loss".into()))?;
        Ok((tape.scalar_value(loss), tape.backward(loss)?))
    }
}

fn grad_suite(rec: &mut Recorder, tol: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    const MODELS: usize = 50;
    const H: f64 = 1e-6;
    let mut skipped = 0;
    let mut worst = 0.0f64;
    for m in 0..MODELS {
        let micro = micro_model(rng, 0.7)?;
        let (_, grads) = micro.taped(&micro.params)?;
        let mut probe = micro.params.clone();
        for id in micro.params.ids().collect::<Vec<_>>() {
            let auto = grads.get(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; probe.get(id).len()]);
            for (k, &a) in auto.iter().enumerate() {
                let base = probe.get(id)[k];
                let (hi, lo) = (base + H, base - H);
                probe.get_mut(id)[k] = hi;
                let up = micro.terms(&probe)?;
                probe.get_mut(id)[k] = lo;
                let down = micro.terms(&probe)?;
                probe.get_mut(id)[k] = base;
                let fd = up.iter().zip(&down).map(|(a, b)| a - b).sum::<f64>() / (hi - lo);
                if a.abs() < 1e-8 {
                    skipped += 1;
                    continue;
                }
                let err = (a - fd).abs() / a.abs().max(fd.abs());
                worst = worst.max(err);
                rec.check(err < tol, "autodiff gradient matches central differences", || {
                    format!("model {m} {id:?}[{k}]: autodiff {a:e} finite-diff {fd:e} rel {err:e}")
                });
            }
        }
    }
    rec.notes
        .push(format!("worst relative error {worst:.3e}; {skipped} coordinates below 1e-8 skipped"));
    Ok(())
}

fn rsgd_suite(rec: &mut Recorder, rng: &mut ChaCha8Rng) -> Result<()> {
    let micro = micro_model(rng, 0.5)?;
    let ball = micro.cfg.ball()?;
    let mut params = micro.params.clone();
    let mut opt = OptState::new(1e-4)?;
    let mut prev = micro.loss(&params)?;
    for step in 0..20 {
        let (_, grads) = micro.taped(&params)?;
        rsgd_step(&mut params, &grads, &mut opt, Some(&ball))?;
        let next = micro.loss(&params)?;
        rec.check(next < prev, "micro-batch loss strictly decreases at lr 1e-4", || {
            format!("step {step}: {prev} -> {next}")
        });
        prev = next;
    }

    // Large random gradients near the boundary must never leave the ball.
    let mut store = micro.params.clone();
    let mut opt = OptState::new(1e-2)?;
    let ids: Vec<ParamId> = store.ids().collect();
    for step in 0..10_000 {
        let mut grads = crate::diff::Gradients::default();
        for &id in &ids {
            let scale = 10f64.powf(rng.gen_range(-2.0..4.0));
            let g = (0..store.get(id).len()).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
            grads.insert(id, g);
        }
        rsgd_step(&mut store, &grads, &mut opt, Some(&ball))?;
        for &id in &ids {
            if matches!(id, ParamId::User(_) | ParamId::Item(_)) {
                let x = store.get(id);
                rec.check(ball.contains(x), "parameters stay inside the ball", || {
                    format!("step {step} {id:?} norm {}", linalg::norm(x))
                });
            }
        }
    }
    Ok(())
}

/// `exp₀(log₀ u_a + γ Σ_b log₀ u_b)` with unit neighbor weights.
fn tangent_sum(ball: &PoincareBall, ua: &[f64], neighbors: &[Vec<f64>], gamma: f64) -> Vec<f64> {
    let mut t = ball.log0_raw(ua);
    for b in neighbors {
        linalg::axpy(&mut t, gamma, &ball.log0_raw(b));
    }
    ball.exp0_raw(&t)
}

fn agg_suite(rec: &mut Recorder, tol: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    let ball = PoincareBall::new(1.0)?;
    let point = |v: &[f64]| ball.project(v.to_vec());
    for case in 0..300 {
        let d = [2, 8, 32][case % 3];
        let gamma = rng.gen_range(0.5..2.0);
        let n = rng.gen_range(1..=6);
        let ua = random_vec(rng, d, 1e-3);
        let nb: Vec<Vec<f64>> = (0..n).map(|_| random_vec(rng, d, 1e-3)).collect();
        let tangent = tangent_sum(&ball, &ua, &nb, gamma);
        let nb_points = nb.iter().map(|v| point(v)).collect::<Result<Vec<_>>>()?;
        let exact = aggregate_exact(&ball, &point(&ua)?, &nb_points, gamma)?;
        let err = rel_err(&tangent, exact.coords());
        rec.check(err < tol, "tangent aggregation matches Möbius aggregation near the origin", || {
            format!("d={d} γ={gamma} neighbors={n} rel={err:e}")
        });

        // Order independence of the tangent path at any scale.
        let ua = random_vec(rng, d, 0.6);
        let mut nb: Vec<Vec<f64>> = (0..n).map(|_| random_vec(rng, d, 0.6)).collect();
        let before = tangent_sum(&ball, &ua, &nb, gamma);
        nb.shuffle(rng);
        let after = tangent_sum(&ball, &ua, &nb, gamma);
        let err = max_abs_diff(&before, &after);
        rec.check(err <= 1e-12, "tangent aggregation is permutation invariant", || {
            format!("d={d} neighbors={n} diff={err:e}")
        });
    }

    let mut witness = None;
    for _ in 0..100 {
        let ua = random_vec(rng, 2, 0.5);
        let nb = (0..3).map(|_| point(&random_vec(rng, 2, 0.6))).collect::<Result<Vec<_>>>()?;
        let mut swapped = nb.clone();
        swapped.swap(0, 2);
        let a = aggregate_exact(&ball, &point(&ua)?, &nb, 1.0)?;
        let b = aggregate_exact(&ball, &point(&ua)?, &swapped, 1.0)?;
        let gap = max_abs_diff(a.coords(), b.coords());
        if gap > 1e-6 {
            witness = Some(gap);
            break;
        }
    }
    rec.check(witness.is_some(), "Möbius aggregation depends on neighbor order", || {
        "no order-sensitive case in 100 draws".into()
    });
    if let Some(gap) = witness {
        rec.notes.push(format!("Möbius order witness gap {gap:.3e}"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes_at_default_tolerance() {
        for s in Suite::ALL {
            let r = run_suite(s, None, 0).unwrap();
            eprint!("{r}");
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn tight_gradient_tolerance_fails() {
        let r = run_suite(Suite::Grad, Some(1e-12), 3).unwrap();
        assert!(!r.passed());
        assert!(!r.violations.is_empty());
        assert!(r.to_string().starts_with("FAIL grad"));
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }
}
