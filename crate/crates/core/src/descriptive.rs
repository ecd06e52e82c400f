//! Masked attribute factorization and the elastic-net subproblem for `U`.
//!
//! The smooth part is `f(U) = λ1/2 ‖I ⊙ (A - WᵀU)‖²_F`; the nonsmooth part
//! is `g(U) = λ3/2 ‖U‖²_F + λ2 ‖U‖₁`. `U` is updated with FISTA using the
//! constant step `1/L`, `L = λ1 λ_max(WWᵀ)`.

use ndarray::{Array1, Array2, Zip};

use crate::datamodel::{AttributeContext, HyperParams};
use crate::error::{Error, Result};

const LIPSCHITZ_FLOOR: f64 = 1e-12;
const POWER_TOL: f64 = 1e-8;
const POWER_MAX_ITERS: usize = 100_000;
const OBJECTIVE_FLOOR: f64 = 1e-12;

fn check_shapes(ctx: &AttributeContext, w: &Array2<f64>, u: &Array2<f64>) -> Result<()> {
    if w.nrows() != u.nrows() || w.ncols() != ctx.num_labels() || u.ncols() != ctx.num_attributes() {
        return Err(Error::shape(format!(
            "W is {:?}, U is {:?} but A is {:?}",
            w.dim(),
            u.dim(),
            ctx.assoc().dim()
        )));
    }
    Ok(())
}

/// `I ⊙ (A - WᵀU)`; masked cells are exactly zero and `A` is never read
/// there.
pub fn masked_residual(ctx: &AttributeContext, w: &Array2<f64>, u: &Array2<f64>) -> Result<Array2<f64>> {
    check_shapes(ctx, w, u)?;
    let mut r = w.t().dot(u);
    Zip::from(&mut r)
        .and(ctx.assoc())
        .and(ctx.mask())
        .for_each(|p, &a, &m| *p = if m { a - *p } else { 0.0 });
    Ok(r)
}

fn sq_norm(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

fn l1_norm(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

pub fn descriptive_objective(ctx: &AttributeContext, w: &Array2<f64>, u: &Array2<f64>, lambda1: f64) -> Result<f64> {
    Ok(0.5 * lambda1 * sq_norm(&masked_residual(ctx, w, u)?))
}

/// `-λ1 U Rᵀ`, dim × labels.
pub fn grad_w_descriptive(ctx: &AttributeContext, w: &Array2<f64>, u: &Array2<f64>, lambda1: f64) -> Result<Array2<f64>> {
    let r = masked_residual(ctx, w, u)?;
    Ok(u.dot(&r.t()) * (-lambda1))
}

/// `-λ1 W R`, dim × attributes.
pub fn grad_u_smooth(ctx: &AttributeContext, w: &Array2<f64>, u: &Array2<f64>, lambda1: f64) -> Result<Array2<f64>> {
    let r = masked_residual(ctx, w, u)?;
    Ok(w.dot(&r) * (-lambda1))
}

/// Minimizer of `τ/2 (u - k)² + λ3/2 u² + λ2 |u|`.
#[inline]
pub fn prox_elastic_net_scalar(k: f64, tau: f64, lambda2: f64, lambda3: f64) -> f64 {
    let shrunk = (tau * k.abs() - lambda2).max(0.0) / (tau + lambda3);
    if shrunk == 0.0 {
        0.0
    } else {
        shrunk.copysign(k)
    }
}

/// Elementwise elastic-net proximal map with step weight `tau`.
pub fn prox_elastic_net(k: &Array2<f64>, tau: f64, lambda2: f64, lambda3: f64) -> Result<Array2<f64>> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::invalid(format!("prox weight must be > 0, got {tau}")));
    }
    Ok(k.mapv(|v| prox_elastic_net_scalar(v, tau, lambda2, lambda3)))
}

/// Largest eigenvalue of the symmetric positive semidefinite `m` by power
/// iteration.
pub fn largest_eigenvalue(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    // golden-ratio start, never orthogonal to a coordinate-aligned eigenvector
    let mut v = Array1::from_shape_fn(n, |i| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_749_895).fract());
    v /= v.dot(&v).sqrt();
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let y = m.dot(&v);
        let next = v.dot(&y);
        let norm = y.dot(&y).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v = y / norm;
        if (next - lambda).abs() <= POWER_TOL * next.abs() {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Lipschitz constant of `∇f`: `max(λ1 λ_max(WWᵀ), 1e-12)`.
pub fn lipschitz_bound(w: &Array2<f64>, lambda1: f64) -> f64 {
    let gram = w.dot(&w.t());
    (lambda1 * largest_eigenvalue(&gram)).max(LIPSCHITZ_FLOOR)
}

/// Weights and budget of one `U` subproblem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FistaParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub max_iter: usize,
    pub epsilon: f64,
}

impl From<&HyperParams> for FistaParams {
    fn from(h: &HyperParams) -> Self {
        FistaParams {
            lambda1: h.lambda1,
            lambda2: h.lambda2,
            lambda3: h.lambda3,
            max_iter: h.inner_max_iter,
            epsilon: h.epsilon,
        }
    }
}

/// Full subproblem objective `f(U) + g(U)`.
pub fn elastic_net_objective(ctx: &AttributeContext, w: &Array2<f64>, u: &Array2<f64>, p: &FistaParams) -> Result<f64> {
    Ok(descriptive_objective(ctx, w, u, p.lambda1)? + 0.5 * p.lambda3 * sq_norm(u) + p.lambda2 * l1_norm(u))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FistaOutcome {
    /// Lowest-objective iterate seen, `U_init` included.
    pub u: Array2<f64>,
    pub iterations: usize,
    pub objective: f64,
}

/// FISTA on the `U` subproblem, warm-started from `u_init`.
///
/// Stops when the relative change of the objective between consecutive
/// iterates drops below `epsilon` or after `max_iter` iterations, and
/// returns the best iterate since FISTA is not monotone.
pub fn fista_solve_u(
    ctx: &AttributeContext,
    w: &Array2<f64>,
    u_init: &Array2<f64>,
    params: &FistaParams,
) -> Result<FistaOutcome> {
    check_shapes(ctx, w, u_init)?;
    if params.max_iter == 0 {
        return Err(Error::invalid("FISTA iteration budget must be >= 1"));
    }
    let lip = lipschitz_bound(w, params.lambda1);
    let step = 1.0 / lip;

    let mut prev = u_init.clone();
    let mut f_prev = elastic_net_objective(ctx, w, &prev, params)?;
    if !f_prev.is_finite() {
        return Err(Error::NonFinite("FISTA objective at the initial point".into()));
    }
    let mut best = prev.clone();
    let mut f_best = f_prev;
    let mut z = prev.clone();
    let mut t = 1.0f64;
    let mut iterations = 0;

    for j in 1..=params.max_iter {
        iterations = j;
        let grad = grad_u_smooth(ctx, w, &z, params.lambda1)?;
        let mut k = z;
        k.scaled_add(-step, &grad);
        let cur = prox_elastic_net(&k, lip, params.lambda2, params.lambda3)?;
        let f_cur = elastic_net_objective(ctx, w, &cur, params)?;
        if !f_cur.is_finite() || cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("FISTA iterate {j}")));
        }

        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let momentum = (t - 1.0) / t_next;
        z = &cur + &((&cur - &prev) * momentum);
        t = t_next;

        if f_cur < f_best {
            f_best = f_cur;
            best.assign(&cur);
        }
        let change = (f_prev - f_cur).abs() / f_cur.abs().max(OBJECTIVE_FLOOR);
        prev = cur;
        f_prev = f_cur;
        if change < params.epsilon {
            break;
        }
    }
    Ok(FistaOutcome {
        u: best,
        iterations,
        objective: f_best,
    })
}
