//! Numerical checks of the steady-state and averaging analysis.
//!
//! At steady state the plant state is `x = Π_x w` and the learner moments are
//! quadratic in `w`: `vec H = Π_H vec(wwᵀ)`, `vec S = Π_S vec(wwᵀ)`. The slow
//! variables then obey the averaged cascade `θ̃⁺ = (1 − γ)θ̃`,
//! `K̃⁺ = K̃ − γ G(K̃ + K*, θ̃ + θ*)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::cloop::{relearn_step, LoopState, StabilityGuard};
use crate::dither::Exosystem;
use crate::error::{Error, Result};
use crate::learner::LearnerState;
use crate::linalg::{
    kron, pinv, singular_values, solve_dense, solve_sylvester, unvec, vec, DenseMatrix,
    DenseVector,
};
use crate::lqr::{closed_loop, is_stabilizing, lqr_cost, lqr_eval, lqr_gradient, CostSpec, Gain, Theta};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Relative residual `‖r‖ / max(1, ‖scale‖)`.
fn rel(r: &DenseMatrix, scale: &DenseMatrix) -> f64 {
    r.norm() / scale.norm().max(1.0)
}

/// `Π_x` with `Π_x F = (A + BK*) Π_x + B E`.
pub fn compute_pi_x(theta_star: &Theta, k_star: &Gain, exo: &Exosystem) -> Result<DenseMatrix> {
    let acl = closed_loop(theta_star, k_star)?;
    let c = theta_star.b() * exo.e();
    solve_sylvester(exo.f(), &acl, &c)
}

/// Solves `X (F⊗F) = λ X + C`.
///
/// The left coefficient is the scalar `λ`, so `X = C (F⊗F − λI)⁻¹` and only an
/// `n_w² × n_w²` system is factored, whatever the row count of `C`.
pub fn solve_moment_sylvester(f: &DenseMatrix, lambda: f64, c: &DenseMatrix) -> Result<DenseMatrix> {
    let ff = kron(f, f);
    let k = ff.nrows();
    if c.ncols() != k {
        return Err(Error::Dimension(format!(
            "moment equation constant has {} columns, expected {k}",
            c.ncols()
        )));
    }
    let z = ff - DenseMatrix::identity(k, k) * lambda;
    // X Z = C  ⇔  Zᵀ Xᵀ = Cᵀ
    let xt = solve_dense(&z.transpose(), &c.transpose()).map_err(|e| match e {
        Error::Singular => Error::SpectraOverlap,
        other => other,
    })?;
    Ok(xt.transpose())
}

#[derive(Debug, Clone)]
pub struct SteadyStateMaps {
    pub pi_x: DenseMatrix,
    pub pi_h: DenseMatrix,
    pub pi_s: DenseMatrix,
    /// `M = [Π_x; K*Π_x + E]`, so that `φ = M w` at steady state.
    pub m_mat: DenseMatrix,
    pub lambda: f64,
    n: usize,
    m: usize,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MapResiduals {
    pub pi_x: f64,
    pub pi_h: f64,
    pub pi_s: f64,
    /// `‖(θ*ᵀ ⊗ I) Π_H − Π_S‖`, absolute.
    pub identity: f64,
    /// Same, relative to `max(1, ‖Π_S‖)`.
    pub identity_rel: f64,
}

pub fn compute_pi_h_pi_s(
    theta_star: &Theta,
    k_star: &Gain,
    exo: &Exosystem,
    lambda: f64,
) -> Result<SteadyStateMaps> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "forgetting factor must lie in (0, 1), got {lambda}"
        )));
    }
    let n = theta_star.n();
    let m = theta_star.m();
    let pi_x = compute_pi_x(theta_star, k_star, exo)?;
    let mut m_mat = DenseMatrix::zeros(n + m, exo.n_w());
    m_mat.rows_mut(0, n).copy_from(&pi_x);
    m_mat
        .rows_mut(n, m)
        .copy_from(&(&k_star.0 * &pi_x + exo.e()));

    let ff = kron(exo.f(), exo.f());
    let k = ff.nrows();
    let z = ff - DenseMatrix::identity(k, k) * lambda;
    // one factorization serves both right-hand sides
    let c_h = kron(&m_mat, &m_mat);
    let c_s = kron(&(theta_star.value().transpose() * &m_mat), &m_mat);
    let mut rhs = DenseMatrix::zeros(k, c_h.nrows() + c_s.nrows());
    rhs.columns_mut(0, c_h.nrows()).copy_from(&c_h.transpose());
    rhs.columns_mut(c_h.nrows(), c_s.nrows())
        .copy_from(&c_s.transpose());
    let sol = solve_dense(&z.transpose(), &rhs).map_err(|e| match e {
        Error::Singular => Error::SpectraOverlap,
        other => other,
    })?;
    let pi_h = sol.columns(0, c_h.nrows()).transpose();
    let pi_s = sol.columns(c_h.nrows(), c_s.nrows()).transpose();
    Ok(SteadyStateMaps {
        pi_x,
        pi_h,
        pi_s,
        m_mat,
        lambda,
        n,
        m,
    })
}

impl SteadyStateMaps {
    pub fn residuals(&self, theta_star: &Theta, k_star: &Gain, exo: &Exosystem) -> Result<MapResiduals> {
        let acl = closed_loop(theta_star, k_star)?;
        let bx = theta_star.b() * exo.e();
        let rx = &self.pi_x * exo.f() - &acl * &self.pi_x - &bx;

        let ff = kron(exo.f(), exo.f());
        let c_h = kron(&self.m_mat, &self.m_mat);
        let rh = &self.pi_h * &ff - &self.pi_h * self.lambda - &c_h;
        let c_s = kron(&(theta_star.value().transpose() * &self.m_mat), &self.m_mat);
        let rs = &self.pi_s * &ff - &self.pi_s * self.lambda - &c_s;

        let p = self.n + self.m;
        let lift = kron(&theta_star.value().transpose(), &DenseMatrix::identity(p, p));
        let id = lift * &self.pi_h - &self.pi_s;
        Ok(MapResiduals {
            pi_x: rel(&rx, &bx),
            pi_h: rel(&rh, &c_h),
            pi_s: rel(&rs, &c_s),
            identity: id.norm(),
            identity_rel: rel(&id, &self.pi_s),
        })
    }

    fn ww(&self, w: &DenseVector) -> Result<DenseVector> {
        if w.len() != self.m_mat.ncols() {
            return Err(Error::Dimension(format!(
                "dither state has length {}, expected {}",
                w.len(),
                self.m_mat.ncols()
            )));
        }
        Ok(vec(&(w * w.transpose())))
    }

    /// Steady-state `H` for dither state `w`.
    pub fn hss_at(&self, w: &DenseVector) -> Result<DenseMatrix> {
        let p = self.n + self.m;
        unvec(&(&self.pi_h * self.ww(w)?), p, p)
    }

    /// Steady-state `S` for dither state `w`.
    pub fn sss_at(&self, w: &DenseVector) -> Result<DenseMatrix> {
        unvec(&(&self.pi_s * self.ww(w)?), self.n + self.m, self.n)
    }
}

/// Free-function form of [`SteadyStateMaps::hss_at`].
pub fn hss_at(maps: &SteadyStateMaps, w: &DenseVector) -> Result<DenseMatrix> {
    maps.hss_at(w)
}

/// Per-component residuals of the steady-state invariance check.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LemmaSsReport {
    pub samples: usize,
    pub x: f64,
    pub h: f64,
    pub s: f64,
    pub theta: f64,
    pub k: f64,
    pub identity: f64,
    pub max: f64,
}

fn rel_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let d = (a - b).norm();
    if d == 0.0 {
        0.0
    } else {
        d / b.norm().max(f64::MIN_POSITIVE)
    }
}

/// Starts the full closed loop on the steady-state locus at random dither
/// states `w` (on the sphere of radius `‖w0‖`), takes one step, and compares
/// with the locus evaluated at `F w`. Residuals are relative per component.
#[allow(clippy::too_many_arguments)]
pub fn verify_lemma_ss(
    maps: &SteadyStateMaps,
    theta_star: &Theta,
    k_star: &Gain,
    exo: &Exosystem,
    cost: &CostSpec,
    gamma: f64,
    num_samples: usize,
    seed: u64,
) -> Result<LemmaSsReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = exo.w0().norm();
    let mut rep = LemmaSsReport {
        samples: num_samples,
        x: 0.0,
        h: 0.0,
        s: 0.0,
        theta: 0.0,
        k: 0.0,
        identity: maps.residuals(theta_star, k_star, exo)?.identity_rel,
        max: 0.0,
    };
    for _ in 0..num_samples {
        let g = DenseVector::from_fn(exo.n_w(), |_, _| StandardNormal.sample(&mut rng));
        let w = &g * (radius / g.norm());
        let state = LoopState {
            x: &maps.pi_x * &w,
            w: w.clone(),
            learner: LearnerState::with_moments(maps.hss_at(&w)?, maps.sss_at(&w)?, theta_star.clone())?,
            k: k_star.clone(),
        };
        let out = relearn_step(&state, theta_star, cost, exo, gamma, maps.lambda, StabilityGuard::Abort)?;
        let wn = exo.f() * &w;
        let nx = &out.next;
        let col = |v: &DenseVector| DenseMatrix::from_column_slice(v.len(), 1, v.as_slice());
        rep.x = rep.x.max(rel_diff(&col(&nx.x), &col(&(&maps.pi_x * &wn))));
        rep.h = rep.h.max(rel_diff(&nx.learner.h, &maps.hss_at(&wn)?));
        rep.s = rep.s.max(rel_diff(&nx.learner.s, &maps.sss_at(&wn)?));
        rep.theta = rep
            .theta
            .max(rel_diff(nx.learner.theta_hat.value(), theta_star.value()));
        rep.k = rep.k.max(rel_diff(&nx.k.0, &k_star.0));
    }
    rep.max = [rep.x, rep.h, rep.s, rep.theta, rep.k, rep.identity]
        .into_iter()
        .fold(0.0, f64::max);
    Ok(rep)
}

/// `H^ss` over one dither period, sampled in continuous time.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HssSweep {
    pub samples: usize,
    pub period: f64,
    /// Smallest `σ_min(H^ss)` seen.
    pub sigma_min: f64,
    /// Largest `σ_min / σ_max` ratio floor seen (worst conditioning).
    pub min_ratio: f64,
    /// `max ‖H^ss(τ + T) − H^ss(τ)‖ / ‖H^ss(τ)‖`.
    pub periodicity: f64,
}

/// Sweeps `τ ∈ [0, T)` with `T` the common period of the rotation blocks
/// (`2π/ω_min`, generally not an integer number of steps).
pub fn hss_period_sweep(maps: &SteadyStateMaps, exo: &Exosystem, samples: usize) -> Result<HssSweep> {
    let period = exo
        .common_period()
        .ok_or_else(|| Error::InvalidArgument("dither frequencies are not commensurate".into()))?;
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let mut sweep = HssSweep {
        samples,
        period,
        sigma_min: f64::INFINITY,
        min_ratio: f64::INFINITY,
        periodicity: 0.0,
    };
    for i in 0..samples {
        let tau = period * i as f64 / samples as f64;
        let h = maps.hss_at(&exo.state_at(tau))?;
        let sv = singular_values(&h);
        let lo = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = sv.iter().cloned().fold(0.0, f64::max);
        sweep.sigma_min = sweep.sigma_min.min(lo);
        sweep.min_ratio = sweep.min_ratio.min(if hi > 0.0 { lo / hi } else { 0.0 });
        let shifted = maps.hss_at(&exo.state_at(tau + period))?;
        sweep.periodicity = sweep.periodicity.max(rel_diff(&shifted, &h));
    }
    Ok(sweep)
}

/// Deviation from the optimum `(K̃, θ̃) = (K − K*, θ − θ*)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedState {
    pub k_tilde: DenseMatrix,
    pub theta_tilde: DenseMatrix,
}

impl AveragedState {
    pub fn origin(n: usize, m: usize) -> Self {
        Self {
            k_tilde: DenseMatrix::zeros(m, n),
            theta_tilde: DenseMatrix::zeros(n + m, n),
        }
    }

    pub fn from_point(k: &Gain, theta: &Theta, k_star: &Gain, theta_star: &Theta) -> Self {
        Self {
            k_tilde: &k.0 - &k_star.0,
            theta_tilde: theta.value() - theta_star.value(),
        }
    }

    /// `‖(K̃, θ̃)‖_F`.
    pub fn norm(&self) -> f64 {
        (self.k_tilde.norm_squared() + self.theta_tilde.norm_squared()).sqrt()
    }

    fn gain(&self, k_star: &Gain) -> Gain {
        Gain(&self.k_tilde + &k_star.0)
    }

    fn theta(&self, theta_star: &Theta) -> Result<Theta> {
        Theta::new(&self.theta_tilde + theta_star.value(), theta_star.n())
    }
}

/// Averaged vector field: `(−G(K̃+K*, θ̃+θ*), −θ̃)`.
pub fn averaged_field(
    state: &AveragedState,
    theta_star: &Theta,
    k_star: &Gain,
    cost: &CostSpec,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let g = lqr_gradient(&state.gain(k_star), &state.theta(theta_star)?, cost)?;
    Ok((-g, -state.theta_tilde.clone()))
}

pub fn averaged_step(
    state: &AveragedState,
    theta_star: &Theta,
    k_star: &Gain,
    cost: &CostSpec,
    gamma: f64,
) -> Result<AveragedState> {
    let (fk, _) = averaged_field(state, theta_star, k_star, cost)?;
    Ok(AveragedState {
        k_tilde: &state.k_tilde + fk * gamma,
        theta_tilde: &state.theta_tilde * (1.0 - gamma),
    })
}

/// `V = κ (J(K̃+K*, θ*) − J(K*, θ*)) + ½ ‖θ̃‖²`.
pub fn lyapunov_v(
    state: &AveragedState,
    theta_star: &Theta,
    k_star: &Gain,
    cost: &CostSpec,
    kappa: f64,
) -> Result<f64> {
    let j = lqr_cost(&state.gain(k_star), theta_star, cost)?;
    let j_star = lqr_cost(k_star, theta_star, cost)?;
    Ok(kappa * (j - j_star) + 0.5 * state.theta_tilde.norm_squared())
}

/// Norm histories of an averaged trajectory (index 0 is the start).
#[derive(Debug, Clone, Default)]
pub struct AveragedRun {
    pub combined: Vec<f64>,
    pub k_tilde: Vec<f64>,
    pub theta_tilde: Vec<f64>,
    pub v: Vec<f64>,
    /// `max_t ‖θ̃_t − (1−γ)^t θ̃_0‖ / ‖(1−γ)^t θ̃_0‖`.
    pub geometric_error: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn run_averaged(
    start: &AveragedState,
    theta_star: &Theta,
    k_star: &Gain,
    cost: &CostSpec,
    gamma: f64,
    kappa: f64,
    steps: usize,
) -> Result<AveragedRun> {
    let mut run = AveragedRun::default();
    let mut z = start.clone();
    let theta0 = start.theta_tilde.clone();
    for t in 0..=steps {
        run.combined.push(z.norm());
        run.k_tilde.push(z.k_tilde.norm());
        run.theta_tilde.push(z.theta_tilde.norm());
        run.v.push(lyapunov_v(&z, theta_star, k_star, cost, kappa)?);
        let expected = &theta0 * (1.0 - gamma).powi(t as i32);
        if expected.norm() > 0.0 {
            run.geometric_error = run.geometric_error.max(rel_diff(&z.theta_tilde, &expected));
        }
        if t < steps {
            z = averaged_step(&z, theta_star, k_star, cost, gamma)?;
        }
    }
    Ok(run)
}

/// Slow-field check at frozen fast error: along the steady-state moments,
/// the estimate direction `−H†(Hθ − S)` must equal the averaged `−θ̃`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SlowFieldReport {
    pub states: usize,
    pub horizon: usize,
    /// Largest pointwise `‖Δf‖ / ‖θ̃‖`.
    pub pointwise: f64,
    /// Largest `‖(1/T)Σ f − f^av‖ / ‖f^av‖` over the tested horizons.
    pub averaged: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn slow_field_check(
    maps: &SteadyStateMaps,
    exo: &Exosystem,
    theta_star: &Theta,
    k_star: &Gain,
    cost: &CostSpec,
    num_states: usize,
    scale: f64,
    horizon: usize,
    seed: u64,
) -> Result<SlowFieldReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = theta_star.n();
    let m = theta_star.m();
    let ws = exo.trajectory(horizon.max(1));
    let mut rep = SlowFieldReport {
        states: 0,
        horizon,
        pointwise: 0.0,
        averaged: 0.0,
    };
    let mut attempts = 0;
    while rep.states < num_states {
        attempts += 1;
        if attempts > 100 * num_states.max(1) {
            return Err(Error::Construction("could not sample stabilizing states".into()));
        }
        let z = AveragedState {
            k_tilde: DenseMatrix::from_fn(m, n, |_, _| scale * normal(&mut rng)),
            theta_tilde: DenseMatrix::from_fn(n + m, n, |_, _| scale * normal(&mut rng)),
        };
        let theta = z.theta(theta_star)?;
        let k = z.gain(k_star);
        if !is_stabilizing(&theta, &k)? {
            continue;
        }
        rep.states += 1;
        let (fk_av, fth_av) = averaged_field(&z, theta_star, k_star, cost)?;
        let mut sum = DenseMatrix::zeros(n + m, n);
        for w in &ws {
            let h = maps.hss_at(w)?;
            let s = maps.sss_at(w)?;
            let f_theta = -(pinv(&h) * (&h * theta.value() - s));
            rep.pointwise = rep.pointwise.max(rel_diff(&f_theta, &fth_av));
            sum += f_theta;
        }
        let avg = sum / ws.len() as f64;
        rep.averaged = rep.averaged.max(rel_diff(&avg, &fth_av));
        // the gain component of f does not depend on the fast variables
        let _ = fk_av;
    }
    Ok(rep)
}

/// Sampled gradient-dominance constant
/// `μ̂ = max (J(K) − J*) / ‖G(K)‖²` over stabilizing `K = K* + δ`, `‖δ‖_F ≤ radius`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GradientDominance {
    pub samples: usize,
    pub mu_hat: f64,
}

pub fn sampled_gradient_dominance(
    theta: &Theta,
    cost: &CostSpec,
    k_star: &Gain,
    samples: usize,
    radius: f64,
    seed: u64,
) -> Result<GradientDominance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let j_star = lqr_cost(k_star, theta, cost)?;
    let (m, n) = k_star.0.shape();
    let mut mu: f64 = 0.0;
    let mut used = 0;
    let mut attempts = 0;
    while used < samples && attempts < 100 * samples.max(1) {
        attempts += 1;
        let dir = DenseMatrix::from_fn(m, n, |_, _| StandardNormal.sample(&mut rng));
        let r: f64 = rand::Rng::random::<f64>(&mut rng) * radius;
        let k = Gain(&k_star.0 + dir.normalize() * r);
        let Ok(ev) = lqr_eval(&k, theta, cost) else {
            continue;
        };
        let g2 = ev.gradient.norm_squared();
        if g2 == 0.0 {
            continue;
        }
        used += 1;
        mu = mu.max((ev.cost - j_star) / g2);
    }
    Ok(GradientDominance {
        samples: used,
        mu_hat: mu,
    })
}
