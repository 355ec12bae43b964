//! Model-based LQR: cost, exact policy gradient, Riccati ground truth.
//!
//! The cost of a stabilizing gain `K` on a plant `(A, B)` is
//! `J(K) = ½ Tr(P)` with `P` the cost-form Stein solution for the closed loop
//! `A + B K` and weight `Q + Kᵀ R K`. The gradient uses the controllability
//! Gramian `W` of the closed loop driven by the identity.

use crate::error::{Error, Result};
use crate::linalg::{
    self, solve_dense, solve_stein_ctrl, solve_stein_obs, spectral_radius, DenseMatrix,
    DEFAULT_SCHUR_TOL,
};

/// Stacked plant parameter `[A B]ᵀ`, shape `(n+m) × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    value: DenseMatrix,
    n: usize,
}

impl Theta {
    pub fn new(value: DenseMatrix, n: usize) -> Result<Self> {
        if n == 0 || value.ncols() != n || value.nrows() <= n {
            return Err(Error::Dimension(format!(
                "theta must be (n+m)x{n} with m >= 1, got {}x{}",
                value.nrows(),
                value.ncols()
            )));
        }
        linalg::ensure_finite(&value, "theta")?;
        Ok(Self { value, n })
    }

    pub fn from_ab(a: &DenseMatrix, b: &DenseMatrix) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || b.nrows() != n || b.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "A is {}x{}, B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        let m = b.ncols();
        let mut value = DenseMatrix::zeros(n + m, n);
        value.view_mut((0, 0), (n, n)).copy_from(&a.transpose());
        value.view_mut((n, 0), (m, n)).copy_from(&b.transpose());
        Self::new(value, n)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.value.nrows() - self.n
    }

    pub fn value(&self) -> &DenseMatrix {
        &self.value
    }

    pub fn into_value(self) -> DenseMatrix {
        self.value
    }

    pub fn a(&self) -> DenseMatrix {
        self.value.view((0, 0), (self.n, self.n)).transpose()
    }

    pub fn b(&self) -> DenseMatrix {
        self.value.view((self.n, 0), (self.m(), self.n)).transpose()
    }

    /// Entrywise `(1 - s) * self + s * other`, written as
    /// `self + s (other - self)` so that equal entries stay bit-exact.
    pub fn blend(&self, other: &Theta, s: f64) -> Result<Theta> {
        if self.value.shape() != other.value.shape() {
            return Err(Error::Dimension("theta shapes differ".into()));
        }
        Theta::new(&self.value + (&other.value - &self.value) * s, self.n)
    }
}

/// LQR weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    q: DenseMatrix,
    r: DenseMatrix,
}

impl CostSpec {
    /// Requires `Q = Qᵀ > 0` and `R = Rᵀ > 0`.
    pub fn new(q: DenseMatrix, r: DenseMatrix) -> Result<Self> {
        Self::build(q, r, false)
    }

    /// Accepts a positive semidefinite `Q`. The caller is responsible for
    /// detectability of `(A, Q^{1/2})`.
    pub fn new_psd(q: DenseMatrix, r: DenseMatrix) -> Result<Self> {
        Self::build(q, r, true)
    }

    fn build(q: DenseMatrix, r: DenseMatrix, allow_psd_q: bool) -> Result<Self> {
        if !q.is_square() || !r.is_square() {
            return Err(Error::Dimension("Q and R must be square".into()));
        }
        linalg::ensure_finite(&q, "Q")?;
        linalg::ensure_finite(&r, "R")?;
        check_symmetric(&q, "Q")?;
        check_symmetric(&r, "R")?;
        if r.clone().cholesky().is_none() {
            return Err(Error::InvalidArgument("R must be positive definite".into()));
        }
        if q.clone().cholesky().is_none() {
            if !allow_psd_q {
                return Err(Error::InvalidArgument("Q must be positive definite".into()));
            }
            let min_eig = q.clone().symmetric_eigenvalues().min();
            if min_eig < -1e-12 * q.amax().max(1.0) {
                return Err(Error::InvalidArgument(
                    "Q must be positive semidefinite".into(),
                ));
            }
            log::warn!("Q is only semidefinite; convergence needs (A, Q^1/2) detectable");
        }
        Ok(Self { q, r })
    }

    pub fn q(&self) -> &DenseMatrix {
        &self.q
    }

    pub fn r(&self) -> &DenseMatrix {
        &self.r
    }

    pub fn check_dims(&self, theta: &Theta) -> Result<()> {
        if self.q.nrows() != theta.n() || self.r.nrows() != theta.m() {
            return Err(Error::Dimension(format!(
                "cost is for n={}, m={} but theta has n={}, m={}",
                self.q.nrows(),
                self.r.nrows(),
                theta.n(),
                theta.m()
            )));
        }
        Ok(())
    }
}

fn check_symmetric(m: &DenseMatrix, what: &str) -> Result<()> {
    if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        return Err(Error::InvalidArgument(format!("{what} must be symmetric")));
    }
    Ok(())
}

/// State-feedback gain `u = K x`, shape `m × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gain(pub DenseMatrix);

impl Gain {
    pub fn zeros(m: usize, n: usize) -> Self {
        Gain(DenseMatrix::zeros(m, n))
    }

    pub fn value(&self) -> &DenseMatrix {
        &self.0
    }
}

/// `A + B K`.
pub fn closed_loop(theta: &Theta, k: &Gain) -> Result<DenseMatrix> {
    if k.0.shape() != (theta.m(), theta.n()) {
        return Err(Error::Dimension(format!(
            "gain is {}x{}, expected {}x{}",
            k.0.nrows(),
            k.0.ncols(),
            theta.m(),
            theta.n()
        )));
    }
    Ok(theta.a() + theta.b() * &k.0)
}

/// Spectral radius of `A + B K`.
pub fn closed_loop_radius(theta: &Theta, k: &Gain) -> Result<f64> {
    spectral_radius(&closed_loop(theta, k)?)
}

pub fn is_stabilizing(theta: &Theta, k: &Gain) -> Result<bool> {
    Ok(closed_loop_radius(theta, k)? < 1.0 - DEFAULT_SCHUR_TOL)
}

/// Cost value, gradient and the two Stein solutions behind them.
#[derive(Debug, Clone)]
pub struct LqrEval {
    pub cost: f64,
    pub gradient: DenseMatrix,
    /// Cost-form solution `P`.
    pub p: DenseMatrix,
    /// Controllability-form solution `W` (identity right-hand side).
    pub w: DenseMatrix,
}

fn stability_checked(theta: &Theta, k: &Gain) -> Result<DenseMatrix> {
    let acl = closed_loop(theta, k)?;
    let rho = spectral_radius(&acl)?;
    if rho >= 1.0 - DEFAULT_SCHUR_TOL {
        return Err(Error::Stability { rho });
    }
    Ok(acl)
}

fn map_not_schur(e: Error) -> Error {
    match e {
        Error::NotSchur { rho } => Error::Stability { rho },
        other => other,
    }
}

fn cost_matrix(theta: &Theta, k: &Gain, cost: &CostSpec) -> Result<(DenseMatrix, DenseMatrix)> {
    cost.check_dims(theta)?;
    let acl = stability_checked(theta, k)?;
    let weight = cost.q() + k.0.transpose() * cost.r() * &k.0;
    let p = solve_stein_obs(&acl, &weight).map_err(map_not_schur)?;
    Ok((acl, p))
}

/// `J(K, θ) = ½ Tr(P)`.
pub fn lqr_cost(k: &Gain, theta: &Theta, cost: &CostSpec) -> Result<f64> {
    let (_, p) = cost_matrix(theta, k, cost)?;
    Ok(0.5 * p.trace())
}

/// Gradient of [`lqr_cost`] with respect to `K` (Frobenius inner product).
pub fn lqr_gradient(k: &Gain, theta: &Theta, cost: &CostSpec) -> Result<DenseMatrix> {
    Ok(lqr_eval(k, theta, cost)?.gradient)
}

pub fn lqr_eval(k: &Gain, theta: &Theta, cost: &CostSpec) -> Result<LqrEval> {
    let (acl, p) = cost_matrix(theta, k, cost)?;
    let n = theta.n();
    let w = solve_stein_ctrl(&acl, &DenseMatrix::identity(n, n)).map_err(map_not_schur)?;
    let gradient = (cost.r() * &k.0 + theta.b().transpose() * &p * &acl) * &w;
    Ok(LqrEval {
        cost: 0.5 * p.trace(),
        gradient,
        p,
        w,
    })
}

/// `K - γ G(K, θ)`.
pub fn gradient_step(k: &Gain, theta: &Theta, cost: &CostSpec, gamma: f64) -> Result<Gain> {
    if !(gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "stepsize must be nonnegative, got {gamma}"
        )));
    }
    let g = lqr_gradient(k, theta, cost)?;
    Ok(Gain(&k.0 - g * gamma))
}

/// Central finite differences of [`lqr_cost`], entry by entry.
pub fn finite_diff_gradient(
    k: &Gain,
    theta: &Theta,
    cost: &CostSpec,
    h: f64,
) -> Result<DenseMatrix> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut g = DenseMatrix::zeros(k.0.nrows(), k.0.ncols());
    for j in 0..k.0.ncols() {
        for i in 0..k.0.nrows() {
            let mut plus = k.0.clone();
            plus[(i, j)] += h;
            let mut minus = k.0.clone();
            minus[(i, j)] -= h;
            let jp = lqr_cost(&Gain(plus), theta, cost)?;
            let jm = lqr_cost(&Gain(minus), theta, cost)?;
            g[(i, j)] = (jp - jm) / (2.0 * h);
        }
    }
    Ok(g)
}

#[derive(Debug, Clone)]
pub struct DareOptions {
    pub max_iter: usize,
    /// Stop when `‖P⁺ − P‖_F ≤ tol · max(1, ‖P‖_F)`.
    pub tol: f64,
    /// Starting point; `Q` when absent.
    pub warm_start: Option<DenseMatrix>,
    /// Newton (policy-evaluation) steps applied after the value iteration stops.
    pub polish_steps: usize,
}

impl Default for DareOptions {
    fn default() -> Self {
        Self {
            max_iter: 1_000_000,
            tol: 1e-10,
            warm_start: None,
            polish_steps: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DareSolution {
    pub p: DenseMatrix,
    pub k: Gain,
    pub iterations: usize,
    /// Relative fixed-point residual of the returned `P`.
    pub residual: f64,
}

fn riccati_map(
    a: &DenseMatrix,
    b: &DenseMatrix,
    cost: &CostSpec,
    p: &DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let pa = p * a;
    let btpa = b.transpose() * &pa;
    let s = cost.r() + b.transpose() * p * b;
    // K = -(R + BᵀPB)⁻¹ BᵀPA
    let k = -solve_dense(&s, &btpa)?;
    let next = cost.q() + a.transpose() * &pa + btpa.transpose() * &k;
    let next = (&next + next.transpose()) * 0.5;
    Ok((next, k))
}

// The value iteration stops on a step-size test, which leaves an error of
// order tol / (1 − ρ²) when the optimal loop is slow. A few Newton steps
// P = Stein(A + BK, Q + KᵀRK), K = −(R + BᵀPB)⁻¹BᵀPA remove it; a step is
// kept only if the fixed-point residual improves.
fn hewer_polish(
    theta: &Theta,
    cost: &CostSpec,
    mut p: DenseMatrix,
    mut k: Gain,
    steps: usize,
) -> Result<(DenseMatrix, Gain)> {
    let a = theta.a();
    let b = theta.b();
    let mut best = dare_residual(theta, cost, &p)?;
    for _ in 0..steps {
        let Ok((_, p_next)) = cost_matrix(theta, &k, cost) else {
            break;
        };
        let (_, k_next) = riccati_map(&a, &b, cost, &p_next)?;
        let res = dare_residual(theta, cost, &p_next)?;
        if !(res < best) {
            break;
        }
        best = res;
        p = p_next;
        k = Gain(k_next);
    }
    Ok((p, k))
}

/// Relative residual `‖Ric(P) − P‖ / max(1, ‖P‖)` of the Riccati fixed point.
pub fn dare_residual(theta: &Theta, cost: &CostSpec, p: &DenseMatrix) -> Result<f64> {
    let (next, _) = riccati_map(&theta.a(), &theta.b(), cost, p)?;
    Ok((&next - p).norm() / p.norm().max(1.0))
}

pub fn dare_solve(theta: &Theta, cost: &CostSpec) -> Result<(DenseMatrix, Gain)> {
    let sol = dare_solve_with(theta, cost, &DareOptions::default())?;
    Ok((sol.p, sol.k))
}

/// Riccati value iteration `P ← Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA`.
pub fn dare_solve_with(theta: &Theta, cost: &CostSpec, opts: &DareOptions) -> Result<DareSolution> {
    cost.check_dims(theta)?;
    let a = theta.a();
    let b = theta.b();
    let mut p = opts.warm_start.clone().unwrap_or_else(|| cost.q().clone());
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let (next, _) = riccati_map(&a, &b, cost, &p)?;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonStabilizable {
                iterations: it,
                residual: f64::INFINITY,
            });
        }
        residual = (&next - &p).norm() / next.norm().max(1.0);
        p = next;
        if residual <= opts.tol {
            let (_, k) = riccati_map(&a, &b, cost, &p)?;
            let k = Gain(k);
            let rho = closed_loop_radius(theta, &k)?;
            if rho >= 1.0 - DEFAULT_SCHUR_TOL {
                return Err(Error::NonStabilizable {
                    iterations: it,
                    residual,
                });
            }
            let (p, k) = hewer_polish(theta, cost, p, k, opts.polish_steps)?;
            let residual = dare_residual(theta, cost, &p)?;
            return Ok(DareSolution {
                p,
                k,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::NonStabilizable {
        iterations: opts.max_iter,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn scalar() -> (Theta, CostSpec) {
        (
            Theta::from_ab(&dmatrix![0.5], &dmatrix![1.0]).unwrap(),
            CostSpec::new(dmatrix![1.0], dmatrix![1.0]).unwrap(),
        )
    }

    #[test]
    fn theta_packing_round_trips() {
        let a = dmatrix![1.0, 2.0; 3.0, 4.0];
        let b = dmatrix![5.0; 6.0];
        let th = Theta::from_ab(&a, &b).unwrap();
        assert_eq!(th.value(), &dmatrix![1.0, 3.0; 2.0, 4.0; 5.0, 6.0]);
        assert_eq!(th.a(), a);
        assert_eq!(th.b(), b);
        assert_eq!((th.n(), th.m()), (2, 1));
    }

    #[test]
    fn cost_spec_validation() {
        assert!(CostSpec::new(dmatrix![1.0, 2.0; 0.0, 1.0], dmatrix![1.0]).is_err());
        assert!(CostSpec::new(dmatrix![1.0], dmatrix![0.0]).is_err());
        let psd = dmatrix![1.0, 0.0; 0.0, 0.0];
        assert!(CostSpec::new(psd.clone(), dmatrix![1.0]).is_err());
        assert!(CostSpec::new_psd(psd, dmatrix![1.0]).is_ok());
        assert!(CostSpec::new_psd(dmatrix![-1.0], dmatrix![1.0]).is_err());
    }

    #[test]
    fn closed_loop_examples() {
        let (th, _) = scalar();
        assert_eq!(closed_loop(&th, &Gain::zeros(1, 1)).unwrap(), th.a());
        assert_eq!(closed_loop(&th, &Gain(dmatrix![-0.5])).unwrap()[(0, 0)], 0.0);
        assert!(closed_loop(&th, &Gain::zeros(2, 1)).is_err());
    }

    #[test]
    fn scalar_cost_and_gradient() {
        let (th, c) = scalar();
        let k0 = Gain::zeros(1, 1);
        assert_relative_eq!(lqr_cost(&k0, &th, &c).unwrap(), 2.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(
            lqr_gradient(&k0, &th, &c).unwrap()[(0, 0)],
            8.0 / 9.0,
            epsilon = 1e-14
        );
        let k1 = gradient_step(&k0, &th, &c, 0.1).unwrap();
        assert_relative_eq!(k1.0[(0, 0)], -8.0 / 90.0, epsilon = 1e-14);
        assert_eq!(gradient_step(&k0, &th, &c, 0.0).unwrap(), k0);
    }

    #[test]
    fn non_stabilizing_gain_reports_radius() {
        let (th, c) = scalar();
        match lqr_cost(&Gain(dmatrix![0.7]), &th, &c) {
            Err(Error::Stability { rho }) => assert_relative_eq!(rho, 1.2, epsilon = 1e-14),
            other => panic!("expected stability error, got {other:?}"),
        }
        assert!(matches!(
            lqr_gradient(&Gain(dmatrix![0.5]), &th, &c),
            Err(Error::Stability { .. })
        ));
    }

    #[test]
    fn scalar_dare_matches_quadratic_root() {
        // P = 1 + a²P − a²P²/(1+P)  ⇔  P² − 0.25P − 1 = 0 for a = 0.5, b = q = r = 1
        let p_exact = (0.25 + (0.0625f64 + 4.0).sqrt()) / 2.0;
        let k_exact = -p_exact * 0.5 / (1.0 + p_exact);
        let (th, c) = scalar();
        let (p, k) = dare_solve(&th, &c).unwrap();
        assert!((p[(0, 0)] - p_exact).abs() <= 1e-9);
        assert!((k.0[(0, 0)] - k_exact).abs() <= 1e-9);
        assert_relative_eq!(p_exact, 1.132782, epsilon = 1e-6);
        assert_relative_eq!(k_exact, -0.265564, epsilon = 1e-6);
        assert!(lqr_gradient(&k, &th, &c).unwrap().amax() <= 1e-9);
    }

    #[test]
    fn dare_with_zero_dynamics() {
        let th = Theta::from_ab(&DenseMatrix::zeros(2, 2), &dmatrix![1.0; 0.5]).unwrap();
        let c = CostSpec::new(dmatrix![2.0, 0.3; 0.3, 1.0], dmatrix![1.5]).unwrap();
        let (p, k) = dare_solve(&th, &c).unwrap();
        assert_relative_eq!(p, c.q().clone(), epsilon = 1e-14);
        assert_eq!(k.0, DenseMatrix::zeros(1, 2));
    }

    #[test]
    fn dare_rejects_uncontrollable_unstable_mode() {
        let th = Theta::from_ab(&dmatrix![1.5, 0.0; 0.0, 0.5], &dmatrix![0.0; 1.0]).unwrap();
        let c = CostSpec::new(DenseMatrix::identity(2, 2), dmatrix![1.0]).unwrap();
        let opts = DareOptions {
            max_iter: 5_000,
            ..Default::default()
        };
        assert!(matches!(
            dare_solve_with(&th, &c, &opts),
            Err(Error::NonStabilizable { .. })
        ));
    }

    #[test]
    fn finite_difference_contract() {
        let (th, c) = scalar();
        assert!(finite_diff_gradient(&Gain::zeros(1, 1), &th, &c, 0.0).is_err());
        let fd = finite_diff_gradient(&Gain::zeros(1, 1), &th, &c, 1e-6).unwrap();
        assert_relative_eq!(fd[(0, 0)], 8.0 / 9.0, max_relative = 1e-6);
        let (_, k) = dare_solve(&th, &c).unwrap();
        assert!(finite_diff_gradient(&k, &th, &c, 1e-5).unwrap().amax() <= 1e-6);
        // step that leaves the stabilizing set
        assert!(matches!(
            finite_diff_gradient(&Gain(dmatrix![0.45]), &th, &c, 0.1),
            Err(Error::Stability { .. })
        ));
    }
}
