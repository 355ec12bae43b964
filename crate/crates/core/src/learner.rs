//! Recursive least-squares learner with exponential forgetting.
//!
//! The moments `H = Σ λ^k φφᵀ` and `S = Σ λ^k φ x⁺ᵀ` are accumulated from
//! regressors `φ = col(x, u)`, and the estimate moves by a scaled
//! least-squares gradient `θ ← θ − γ H†(Hθ − S)`.

use crate::error::{Error, Result};
use crate::linalg::{pinv, DenseMatrix, DenseVector};
use crate::lqr::Theta;

/// Forgetting factor used when a configuration does not set one.
pub const DEFAULT_LAMBDA: f64 = 0.995;

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub h: DenseMatrix,
    pub s: DenseMatrix,
    pub theta_hat: Theta,
}

impl LearnerState {
    /// Zero moments around an initial estimate.
    pub fn new(theta0: Theta) -> Self {
        let (p, n) = theta0.value().shape();
        Self {
            h: DenseMatrix::zeros(p, p),
            s: DenseMatrix::zeros(p, n),
            theta_hat: theta0,
        }
    }

    pub fn with_moments(h: DenseMatrix, s: DenseMatrix, theta_hat: Theta) -> Result<Self> {
        let (p, n) = theta_hat.value().shape();
        if h.shape() != (p, p) || s.shape() != (p, n) {
            return Err(Error::Dimension(format!(
                "moments must be {p}x{p} and {p}x{n}, got {}x{} and {}x{}",
                h.nrows(),
                h.ncols(),
                s.nrows(),
                s.ncols()
            )));
        }
        Ok(Self { h, s, theta_hat })
    }
}

/// `φ = col(x, u)`.
pub fn regressor(x: &DenseVector, u: &DenseVector) -> DenseVector {
    let mut phi = DenseVector::zeros(x.len() + u.len());
    phi.rows_mut(0, x.len()).copy_from(x);
    phi.rows_mut(x.len(), u.len()).copy_from(u);
    phi
}

/// One learner step; the estimate uses the moments from before this sample.
pub fn rls_update(
    state: &LearnerState,
    x: &DenseVector,
    u: &DenseVector,
    x_next: &DenseVector,
    lambda: f64,
    gamma: f64,
) -> Result<LearnerState> {
    let mut next = state.clone();
    rls_update_in_place(&mut next, x, u, x_next, lambda, gamma)?;
    Ok(next)
}

pub fn rls_update_in_place(
    state: &mut LearnerState,
    x: &DenseVector,
    u: &DenseVector,
    x_next: &DenseVector,
    lambda: f64,
    gamma: f64,
) -> Result<()> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "forgetting factor must lie in (0, 1), got {lambda}"
        )));
    }
    if !(gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "stepsize must be nonnegative, got {gamma}"
        )));
    }
    let n = state.theta_hat.n();
    let m = state.theta_hat.m();
    if x.len() != n || u.len() != m || x_next.len() != n {
        return Err(Error::Dimension(format!(
            "learner expects x, u, x⁺ of lengths {n}, {m}, {n}"
        )));
    }

    if gamma > 0.0 {
        let residual = &state.h * state.theta_hat.value() - &state.s;
        let step = pinv(&state.h) * residual;
        let theta = state.theta_hat.value() - step * gamma;
        state.theta_hat = Theta::new(theta, n)?;
    }

    let phi = regressor(x, u);
    state.h *= lambda;
    state.h.ger(1.0, &phi, &phi, 1.0);
    state.s *= lambda;
    state.s.ger(1.0, &phi, x_next, 1.0);
    Ok(())
}
