//! Slow, dense reference implementations.
//!
//! Everything here works with explicit `n × n` matrices (`n = m²`, signals
//! flattened row-major) and never touches a Fourier transform, so it can be
//! used to check the spectral code paths independently.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cf::{cf_backward, cf_forward_with_response, CfConfig};
use crate::error::{Error, Result};
use crate::spectral::{MultiChannelMap, Plane};

/// Largest side accepted by [`circulant_matrix`].
pub const CIRCULANT_LIMIT: usize = 32;
/// Largest side accepted by [`direct_cf`].
pub const DIRECT_LIMIT: usize = 16;
/// Default relative finite-difference step.
pub const FD_STEP: f64 = 1e-4;

/// `X[u, t] = x[(u + t) mod m]`, so that `X · vec(w) = vec(w ⋆ x)`.
pub fn circulant_matrix(x: &Plane) -> Result<DMatrix<f64>> {
    let m = x.side();
    if m > CIRCULANT_LIMIT {
        return Err(Error::TooLarge {
            m,
            limit: CIRCULANT_LIMIT,
        });
    }
    let n = m * m;
    Ok(DMatrix::from_fn(n, n, |u, t| {
        let (ur, uc) = (u / m, u % m);
        let (tr, tc) = (t / m, t % m);
        x[((ur + tr) % m, (uc + tc) % m)]
    }))
}

/// The dual ridge-regression system written out densely.
#[derive(Debug, Clone)]
pub struct DenseSystem {
    pub x_blocks: Vec<DMatrix<f64>>,
    /// `1/n Σ_p X_pᵀ X_p + λ I`
    pub kernel: DMatrix<f64>,
    pub y_vec: DVector<f64>,
    pub lambda: f64,
}

impl DenseSystem {
    pub fn build(x: &MultiChannelMap, y: &Plane, lambda: f64) -> Result<Self> {
        let m = x.side();
        if m > DIRECT_LIMIT {
            return Err(Error::TooLarge {
                m,
                limit: DIRECT_LIMIT,
            });
        }
        if y.side() != m {
            return Err(Error::ShapeMismatch(format!(
                "response side {} vs input side {m}",
                y.side()
            )));
        }
        let n = m * m;
        let x_blocks = x
            .channels()
            .iter()
            .map(circulant_matrix)
            .collect::<Result<Vec<_>>>()?;
        let mut kernel = DMatrix::identity(n, n) * lambda;
        for xp in &x_blocks {
            kernel += xp.tr_mul(xp) / n as f64;
        }
        Ok(Self {
            x_blocks,
            kernel,
            y_vec: DVector::from_column_slice(y.as_slice()),
            lambda,
        })
    }

    pub fn n(&self) -> usize {
        self.kernel.nrows()
    }

    /// Solves `K α = y / n` by Cholesky factorization.
    pub fn solve_dual(&self) -> Result<DVector<f64>> {
        let chol = self
            .kernel
            .clone()
            .cholesky()
            .ok_or(Error::SingularSystem)?;
        Ok(chol.solve(&(&self.y_vec / self.n() as f64)))
    }

    /// Smallest diagonal entry of the Cholesky factor.
    pub fn min_pivot(&self) -> Result<f64> {
        let chol = self
            .kernel
            .clone()
            .cholesky()
            .ok_or(Error::SingularSystem)?;
        Ok(chol.l().diagonal().min())
    }

    /// Max-abs residual of `K α − y / n`.
    pub fn dual_residual(&self, alpha: &DVector<f64>) -> f64 {
        (&self.kernel * alpha - &self.y_vec / self.n() as f64).amax()
    }

    /// `‖K − Kᵀ‖∞`
    pub fn asymmetry(&self) -> f64 {
        (&self.kernel - self.kernel.transpose()).amax()
    }
}

/// Dense solution of the multi-channel filter: `w_p = X_p α`.
pub fn direct_cf(x: &MultiChannelMap, y: &Plane, lambda: f64) -> Result<MultiChannelMap> {
    let system = DenseSystem::build(x, y, lambda)?;
    let alpha = system.solve_dual()?;
    let m = x.side();
    MultiChannelMap::new(
        system
            .x_blocks
            .iter()
            .map(|xp| Plane::from_vec(m, (xp * &alpha).as_slice().to_vec()))
            .collect::<Result<Vec<_>>>()?,
    )
}

/// `(a ⋆ b)[u] = Σ_t a[t] b[u + t]` as a plain quadruple loop.
pub fn direct_xcorr(a: &Plane, b: &Plane) -> Result<Plane> {
    direct_sum(a, b, |m, u, t| (u + t) % m)
}

/// `(a * b)[u] = Σ_t a[t] b[u − t]` as a plain quadruple loop.
pub fn direct_conv(a: &Plane, b: &Plane) -> Result<Plane> {
    direct_sum(a, b, |m, u, t| (u + m - t) % m)
}

fn direct_sum(a: &Plane, b: &Plane, index: impl Fn(usize, usize, usize) -> usize) -> Result<Plane> {
    let m = a.side();
    if b.side() != m {
        return Err(Error::ShapeMismatch(format!("sides {} and {}", m, b.side())));
    }
    if m > CIRCULANT_LIMIT {
        return Err(Error::TooLarge {
            m,
            limit: CIRCULANT_LIMIT,
        });
    }
    Ok(Plane::from_fn(m, |ur, uc| {
        let mut acc = 0.0;
        for tr in 0..m {
            for tc in 0..m {
                acc += a[(tr, tc)] * b[(index(m, ur, tr), index(m, uc, tc))];
            }
        }
        acc
    }))
}

/// Central differences of `f` at `v`, with per-coordinate step `h · (1 + |v_i|)`.
pub fn numeric_gradient<F>(mut f: F, v: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("finite-difference step {h}")));
    }
    let mut probe = v.to_vec();
    let mut grad = Vec::with_capacity(v.len());
    for i in 0..v.len() {
        let step = h * (1.0 + v[i].abs());
        probe[i] = v[i] + step;
        let plus = f(&probe);
        probe[i] = v[i] - step;
        let minus = f(&probe);
        probe[i] = v[i];
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(Error::NonFiniteEvaluation(i));
        }
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}

/// Worst relative error between an analytic and a numeric gradient, with
/// denominator `1 + |analytic|`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (1.0 + a.abs()))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub max_rel_err_x: f64,
    pub max_rel_err_y: f64,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_err_x.max(self.max_rel_err_y)
    }
}

/// Random instance: input in `[-1, 1)`, response and upstream gradient in `[-1, 1)`.
pub fn random_instance(m: usize, k: usize, seed: u64) -> (MultiChannelMap, Plane, MultiChannelMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = |rng: &mut ChaCha8Rng| Plane::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
    let x = MultiChannelMap::new((0..k).map(|_| plane(&mut rng)).collect())
        .expect("channels share a side");
    let y = plane(&mut rng);
    let g = MultiChannelMap::new((0..k).map(|_| plane(&mut rng)).collect())
        .expect("channels share a side");
    (x, y, g)
}

/// Compares [`cf_backward`] with central differences of `ℓ = ⟨g, w(x, y)⟩`.
pub fn gradcheck_cf(m: usize, k: usize, lambda: f64, seed: u64) -> Result<GradcheckReport> {
    let (x, y, g) = random_instance(m, k, seed);
    let cfg = CfConfig::new(m, lambda)?.with_response(y.clone())?;
    let (_, cache) = cf_forward_with_response(&x, &y, lambda)?;
    let grads = cf_backward(&cache, &cfg, &g)?;

    let loss = |x: &MultiChannelMap, y: &Plane| -> f64 {
        match cf_forward_with_response(x, y, lambda) {
            Ok((w, _)) => g.dot(&w),
            Err(_) => f64::NAN,
        }
    };

    let x_flat = x.flatten();
    let num_x = numeric_gradient(
        |v| loss(&MultiChannelMap::unflatten(m, k, v).expect("same shape"), &y),
        &x_flat,
        FD_STEP,
    )?;
    let num_y = numeric_gradient(
        |v| loss(&x, &Plane::from_vec(m, v.to_vec()).expect("same shape")),
        y.as_slice(),
        FD_STEP,
    )?;

    Ok(GradcheckReport {
        max_rel_err_x: max_relative_error(&grads.grad_x.flatten(), &num_x),
        max_rel_err_y: max_relative_error(grads.grad_y.as_slice(), &num_y),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{circ_xcorr, impulse};

    #[test]
    fn delta_circulant_is_identity() {
        let x = circulant_matrix(&impulse(2).unwrap()).unwrap();
        assert_eq!(x, DMatrix::identity(4, 4));
    }

    #[test]
    fn constant_circulant() {
        let x = circulant_matrix(&Plane::filled(3, 2.0)).unwrap();
        assert!(x.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn circulant_realizes_cross_correlation() {
        let (x, w, _) = random_instance(4, 1, 7);
        let xm = circulant_matrix(x.channel(0)).unwrap();
        assert!((&xm - xm.transpose()).amax() == 0.0);
        let lhs = &xm * DVector::from_column_slice(w.as_slice());
        let rhs = circ_xcorr(&w, x.channel(0)).unwrap();
        for (a, b) in lhs.iter().zip(rhs.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn size_guards() {
        assert!(matches!(
            circulant_matrix(&Plane::zeros(33)),
            Err(Error::TooLarge { .. })
        ));
        let x = MultiChannelMap::zeros(17, 1);
        assert!(matches!(
            direct_cf(&x, &Plane::zeros(17), 0.1),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn direct_delta_case() {
        let x = MultiChannelMap::single(impulse(4).unwrap());
        let w = direct_cf(&x, &impulse(4).unwrap(), 0.1).unwrap();
        assert!(w.channel(0).max_abs_diff(&impulse(4).unwrap().scale(1.0 / 2.6)) < 1e-14);
        let w = direct_cf(&x, &Plane::zeros(4), 0.1).unwrap();
        assert_eq!(w.max_abs(), 0.0);
    }

    #[test]
    fn dense_system_properties() {
        let (x, y, _) = random_instance(4, 3, 2);
        let sys = DenseSystem::build(&x, &y, 0.01).unwrap();
        assert!(sys.asymmetry() <= 1e-12);
        assert!(sys.min_pivot().unwrap() > 0.0);
        let alpha = sys.solve_dual().unwrap();
        assert!(sys.dual_residual(&alpha) <= 1e-10);
    }

    #[test]
    fn numeric_gradient_of_quadratic() {
        let v = [0.3, -1.2, 2.5, 0.0];
        let g = numeric_gradient(|v| 0.5 * v.iter().map(|a| a * a).sum::<f64>(), &v, 1e-4).unwrap();
        for (a, b) in g.iter().zip(&v) {
            assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
        let g = numeric_gradient(|_| 4.0, &v, 1e-4).unwrap();
        assert!(g.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn numeric_gradient_flags_non_finite() {
        let r = numeric_gradient(|v| if v[1] > 1.0 { f64::INFINITY } else { 0.0 }, &[0.0, 1.0], 1e-3);
        assert!(matches!(r, Err(Error::NonFiniteEvaluation(1))));
        assert!(numeric_gradient(|_| 0.0, &[0.0], 0.0).is_err());
    }

    #[test]
    fn gradcheck_spec_cases() {
        for (m, k, lambda, seed) in [(4, 1, 0.1, 0), (8, 3, 0.01, 1), (4, 2, 10.0, 2)] {
            let r = gradcheck_cf(m, k, lambda, seed).unwrap();
            assert!(r.worst() <= 1e-4, "{m} {k} {lambda} {seed}: {r:?}");
        }
    }
}
