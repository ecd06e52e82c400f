//! Explicit-matrix-factorization form of skip-gram with negative sampling.
//!
//! With logits `X = CᵀW` (contexts × labels) each cell contributes
//! `-D·x + Q·softplus(x)`, the negative log-likelihood of a
//! `Binomial(Q, σ(x))` count. Its derivative in `x` is `Q·σ(x) - D`, so the
//! expected co-occurrence `E = Q ⊙ σ(X)` drives both gradients.

use ndarray::{Array2, Zip};

use crate::datamodel::{CooccurrenceMatrix, NegativeBoundMatrix};
use crate::error::{Error, Result};

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_shapes(d: &Array2<f64>, q: &Array2<f64>, c: &Array2<f64>, w: &Array2<f64>) -> Result<()> {
    if c.nrows() != w.nrows() {
        return Err(Error::shape(format!(
            "C has dimension {} but W has {}",
            c.nrows(),
            w.nrows()
        )));
    }
    let want = (c.ncols(), w.ncols());
    if d.dim() != want || q.dim() != want {
        return Err(Error::shape(format!(
            "D is {:?} and Q is {:?}, expected {want:?} (contexts x labels)",
            d.dim(),
            q.dim()
        )));
    }
    Ok(())
}

/// Logits `CᵀW`.
pub fn logits(c: &Array2<f64>, w: &Array2<f64>) -> Array2<f64> {
    c.t().dot(w)
}

pub fn emf_objective(
    d: &CooccurrenceMatrix,
    q: &NegativeBoundMatrix,
    c: &Array2<f64>,
    w: &Array2<f64>,
) -> Result<f64> {
    let (d, q) = (d.values(), q.values());
    check_shapes(d, q, c, w)?;
    if c.iter().chain(w.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embedding entries passed to EMF objective".into()));
    }
    let x = logits(c, w);
    let mut total = 0.0;
    Zip::from(&x).and(d).and(q).for_each(|&x, &d, &q| {
        total += -d * x + q * softplus(x);
    });
    Ok(total)
}

/// `Q ⊙ σ(CᵀW)`.
pub fn expected_cooccurrence(q: &NegativeBoundMatrix, c: &Array2<f64>, w: &Array2<f64>) -> Result<Array2<f64>> {
    let q = q.values();
    if c.nrows() != w.nrows() || q.dim() != (c.ncols(), w.ncols()) {
        return Err(Error::shape(format!(
            "Q is {:?} but CᵀW is {:?}",
            q.dim(),
            (c.ncols(), w.ncols())
        )));
    }
    let mut e = logits(c, w);
    Zip::from(&mut e).and(q).for_each(|x, &q| *x = q * sigmoid(*x));
    Ok(e)
}

/// `E - D`, shared by both gradients.
pub fn residual(d: &CooccurrenceMatrix, q: &NegativeBoundMatrix, c: &Array2<f64>, w: &Array2<f64>) -> Result<Array2<f64>> {
    check_shapes(d.values(), q.values(), c, w)?;
    let mut e = expected_cooccurrence(q, c, w)?;
    e -= d.values();
    Ok(e)
}

/// Gradient with respect to `C`: `W (E - D)ᵀ`, dim × contexts.
pub fn grad_c(d: &CooccurrenceMatrix, q: &NegativeBoundMatrix, c: &Array2<f64>, w: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(w.dot(&residual(d, q, c, w)?.t()))
}

/// Relational part of the gradient with respect to `W`: `C (E - D)`,
/// dim × labels.
pub fn grad_w_relational(
    d: &CooccurrenceMatrix,
    q: &NegativeBoundMatrix,
    c: &Array2<f64>,
    w: &Array2<f64>,
) -> Result<Array2<f64>> {
    Ok(c.dot(&residual(d, q, c, w)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dq(d: Array2<f64>, q: Array2<f64>) -> (CooccurrenceMatrix, NegativeBoundMatrix) {
        (CooccurrenceMatrix::new(d).unwrap(), NegativeBoundMatrix::new(q).unwrap())
    }

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Array2<f64> {
        Array2::from_shape_simple_fn((r, c), || rng.random_range(lo..hi))
    }

    /// Central differences of the objective, entry by entry.
    fn fd_grad(f: impl Fn(&Array2<f64>) -> f64, x: &Array2<f64>, h: f64) -> Array2<f64> {
        let mut g = Array2::zeros(x.dim());
        for idx in ndarray::indices(x.dim()) {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[idx] += h;
            xm[idx] -= h;
            g[idx] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let diff = (a - b).mapv(|v| v * v).sum().sqrt();
        let scale = a.mapv(|v| v * v).sum().sqrt().max(b.mapv(|v| v * v).sum().sqrt()).max(1e-8);
        diff / scale
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0 && softplus(-800.0) < 1e-300);
        assert!((sigmoid(-800.0)).abs() < 1e-300);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn zero_embeddings_give_log2_mass() {
        let (d, q) = dq(array![[1.0, 0.0], [2.0, 1.0]], array![[3.0, 1.0], [4.0, 2.0]]);
        let c = Array2::zeros((2, 2));
        let w = array![[1.0, -1.0], [0.5, 2.0]];
        let obj = emf_objective(&d, &q, &c, &w).unwrap();
        assert!((obj - 2f64.ln() * 10.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_objective() {
        let (d, q) = dq(array![[1.0]], array![[2.0]]);
        let obj = emf_objective(&d, &q, &array![[1.0]], &array![[1.0]]).unwrap();
        let expect = -1.0 + 2.0 * (1.0 + 1f64.exp()).ln();
        assert!((obj - expect).abs() < 1e-12);
        assert!((obj - 1.6265).abs() < 1e-4);
    }

    #[test]
    fn empty_mass_is_constant_zero() {
        let (d, q) = dq(Array2::zeros((2, 3)), Array2::zeros((2, 3)));
        let c = array![[1.0, 2.0]];
        let w = array![[3.0, -1.0, 0.5]];
        assert_eq!(emf_objective(&d, &q, &c, &w).unwrap(), 0.0);
        assert!(grad_c(&d, &q, &c, &w).unwrap().iter().all(|&g| g == 0.0));
        assert!(grad_w_relational(&d, &q, &c, &w).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn expected_counts() {
        let q = NegativeBoundMatrix::new(array![[4.0, 2.0]]).unwrap();
        let e = expected_cooccurrence(&q, &Array2::zeros((1, 1)), &Array2::zeros((1, 2))).unwrap();
        assert_eq!(e, array![[2.0, 1.0]]);
        let q1 = NegativeBoundMatrix::new(array![[4.0]]).unwrap();
        let e = expected_cooccurrence(&q1, &array![[1.0]], &array![[1.0]]).unwrap();
        assert!((e[(0, 0)] - 4.0 / (1.0 + (-1f64).exp())).abs() < 1e-12);
        assert!((e[(0, 0)] - 2.92423).abs() < 1e-5);
        let q0 = NegativeBoundMatrix::new(Array2::zeros((1, 2))).unwrap();
        let e = expected_cooccurrence(&q0, &array![[3.0]], &array![[1.0, 2.0]]).unwrap();
        assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_vanish_when_expectation_matches() {
        let q = array![[4.0, 2.0, 6.0], [1.0, 8.0, 2.0]];
        let (d, q) = dq(&q * 0.5, q);
        let c = Array2::zeros((2, 2));
        let w = Array2::zeros((2, 3));
        assert!(grad_c(&d, &q, &c, &w).unwrap().iter().all(|&g| g == 0.0));
        assert!(grad_w_relational(&d, &q, &c, &w).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // 3 labels, 2 contexts, n = 2
        let q = rand_mat(&mut rng, 2, 3, 1.0, 6.0);
        let d = q.mapv(|v| (v * 0.7).floor());
        let (d, q) = dq(d, q);
        let c = rand_mat(&mut rng, 2, 2, -1.0, 1.0);
        let w = rand_mat(&mut rng, 2, 3, -1.0, 1.0);
        let gc = grad_c(&d, &q, &c, &w).unwrap();
        let fc = fd_grad(|c| emf_objective(&d, &q, c, &w).unwrap(), &c, 1e-6);
        assert!(rel_err(&gc, &fc) <= 1e-5, "{}", rel_err(&gc, &fc));
        let gw = grad_w_relational(&d, &q, &c, &w).unwrap();
        let fw = fd_grad(|w| emf_objective(&d, &q, &c, w).unwrap(), &w, 1e-6);
        assert!(rel_err(&gw, &fw) <= 1e-5, "{}", rel_err(&gw, &fw));
    }

    #[test]
    fn stationary_at_planted_expectation() {
        // D = Q ⊙ σ(CᵀW) exactly: both gradients are zero up to rounding.
        let c = array![[0.3, -0.2], [0.1, 0.4]];
        let w = array![[1.0, -0.5, 0.2], [0.0, 0.3, -0.7]];
        let q = array![[5.0, 3.0, 2.0], [4.0, 6.0, 1.0]];
        let x = logits(&c, &w);
        let d = Zip::from(&q).and(&x).map_collect(|&q, &x| q * sigmoid(x));
        let (d, q) = dq(d, q);
        assert!(grad_c(&d, &q, &c, &w).unwrap().iter().all(|g| g.abs() < 1e-14));
        assert!(grad_w_relational(&d, &q, &c, &w).unwrap().iter().all(|g| g.abs() < 1e-14));
    }

    #[test]
    fn per_entry_minimizer_is_logit() {
        // -d x + q softplus(x) is minimized at logit(d / q)
        let (dv, qv) = (3.0f64, 8.0f64);
        let xstar = (dv / qv / (1.0 - dv / qv)).ln();
        let f = |x: f64| -dv * x + qv * softplus(x);
        for h in [1e-3, -1e-3, 0.1, -0.1] {
            assert!(f(xstar) < f(xstar + h));
        }
        assert!((qv * sigmoid(xstar) - dv).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (d, q) = dq(Array2::zeros((2, 3)), Array2::zeros((2, 3)));
        assert!(matches!(
            emf_objective(&d, &q, &Array2::zeros((2, 3)), &Array2::zeros((2, 3))),
            Err(Error::Shape(_))
        ));
        assert!(emf_objective(&d, &q, &array![[f64::NAN, 0.0]], &Array2::zeros((1, 3))).is_err());
    }

    proptest! {
        #[test]
        fn objective_finite_and_monotone_in_large_logits(x in -500.0f64..500.0, dx in 0.0f64..10.0) {
            // with d = 0 each cell is q·softplus(x): finite and nondecreasing
            let (d, q) = dq(array![[0.0]], array![[3.0]]);
            let a = emf_objective(&d, &q, &array![[x]], &array![[1.0]]).unwrap();
            let b = emf_objective(&d, &q, &array![[x + dx]], &array![[1.0]]).unwrap();
            prop_assert!(a.is_finite() && b.is_finite());
            prop_assert!(b >= a);
        }
    }
}
