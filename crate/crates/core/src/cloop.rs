//! The on-policy closed loop: dithered feedback on the true plant, RLS
//! identification from the generated data, and a policy-gradient step on the
//! gain computed against the current estimate.

use log::warn;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dither::Exosystem;
use crate::error::{Error, Result};
use crate::learner::{rls_update_in_place, LearnerState};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::lqr::{
    closed_loop_radius, dare_solve_with, is_stabilizing, lqr_cost, lqr_eval, CostSpec,
    DareOptions, Gain, Theta,
};

/// Rising logistic `1 / (1 + exp(-(t - t_mid) / α))`.
pub fn sigmoid(t: f64, t_mid: f64, alpha: f64) -> f64 {
    let z = (t - t_mid) / alpha;
    // evaluate on the side where exp cannot overflow
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Drift {
    pub theta_plus: Theta,
    pub t_mid: f64,
    pub alpha: f64,
}

/// True plant over time: fixed, or blended toward `theta_plus` along a sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantSchedule {
    pub theta_star: Theta,
    pub drift: Option<Drift>,
}

impl PlantSchedule {
    pub fn fixed(theta_star: Theta) -> Self {
        Self {
            theta_star,
            drift: None,
        }
    }

    pub fn drifting(theta_star: Theta, drift: Drift) -> Result<Self> {
        if drift.theta_plus.value().shape() != theta_star.value().shape() {
            return Err(Error::Dimension("drift target has a different shape".into()));
        }
        if drift.alpha == 0.0 || !drift.alpha.is_finite() || !drift.t_mid.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigmoid width must be finite and nonzero, got {}",
                drift.alpha
            )));
        }
        Ok(Self {
            theta_star,
            drift: Some(drift),
        })
    }

    pub fn at(&self, t: usize) -> Theta {
        match &self.drift {
            None => self.theta_star.clone(),
            Some(d) => {
                let s = sigmoid(t as f64, d.t_mid, d.alpha);
                self.theta_star
                    .blend(&d.theta_plus, s)
                    .expect("shapes checked at construction")
            }
        }
    }
}

/// Adds `sigma * N(0, 1)` to every nonzero entry of `A` and `B`.
pub fn perturb_nonzero<R: Rng + ?Sized>(theta: &Theta, sigma: f64, rng: &mut R) -> Result<Theta> {
    let mut v = theta.value().clone();
    // column-major walk keeps the draw order fixed for a given shape
    for x in v.iter_mut() {
        if *x != 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            *x += sigma * z;
        }
    }
    Theta::new(v, theta.n())
}

/// What to do when the gain stops stabilizing the current estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityGuard {
    /// Stop the run and return the partial record.
    #[default]
    Abort,
    /// Hold the gain for that step and keep going (flagged in the record).
    SkipGradient,
}

/// Norm of `x_t` above which a run is declared divergent.
pub const BLOWUP_BOUND: f64 = 1e9;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub horizon: usize,
    pub x0: DenseVector,
    pub exo: Exosystem,
    pub k0: Gain,
    pub theta0: Theta,
    pub guard: StabilityGuard,
    /// Iterations between Riccati refreshes of `K*_t` on a drifting plant.
    pub jstar_cadence: usize,
    pub blowup: f64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidArgument(format!("bad stepsize {}", self.gamma)));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "forgetting factor must lie in (0, 1), got {}",
                self.lambda
            )));
        }
        let (n, m) = (self.theta0.n(), self.theta0.m());
        if self.x0.len() != n || self.k0.0.shape() != (m, n) || self.exo.m() != m {
            return Err(Error::Dimension(format!(
                "x0, K0 and E must match n = {n}, m = {m}"
            )));
        }
        if self.jstar_cadence == 0 {
            return Err(Error::InvalidArgument("jstar_cadence must be positive".into()));
        }
        Ok(())
    }
}

/// State carried from one iteration to the next.
#[derive(Debug, Clone)]
pub struct LoopState {
    pub x: DenseVector,
    pub w: DenseVector,
    pub learner: LearnerState,
    pub k: Gain,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub next: LoopState,
    pub u: DenseVector,
    pub d: DenseVector,
    /// `‖G(K_t, θ̂_t)‖_F`, NaN when the step was skipped.
    pub grad_norm: f64,
    pub skipped: bool,
}

/// One iteration: `d = Ew`, `u = Kx + d`, plant, exosystem, learner, then the
/// gain step against the pre-update estimate.
pub fn relearn_step(
    state: &LoopState,
    plant_t: &Theta,
    cost: &CostSpec,
    exo: &Exosystem,
    gamma: f64,
    lambda: f64,
    guard: StabilityGuard,
) -> Result<StepOutput> {
    let d = exo.e() * &state.w;
    let u = &state.k.0 * &state.x + &d;
    let x_next = plant_t.a() * &state.x + plant_t.b() * &u;
    let w_next = exo.f() * &state.w;

    let (k_next, grad_norm, skipped) = match lqr_eval(&state.k, &state.learner.theta_hat, cost) {
        Ok(ev) => (Gain(&state.k.0 - &ev.gradient * gamma), ev.gradient.norm(), false),
        Err(e @ Error::Stability { .. }) => match guard {
            StabilityGuard::Abort => return Err(e),
            StabilityGuard::SkipGradient => (state.k.clone(), f64::NAN, true),
        },
        Err(e) => return Err(e),
    };

    let mut learner = state.learner.clone();
    rls_update_in_place(&mut learner, &state.x, &u, &x_next, lambda, gamma)?;

    Ok(StepOutput {
        next: LoopState {
            x: x_next,
            w: w_next,
            learner,
            k: k_next,
        },
        u,
        d,
        grad_norm,
        skipped,
    })
}

/// Per-iteration diagnostics; row `t` describes `x_t`, `u_t`, `d_t` and the
/// gain/estimate pair `(K_t, θ̂_t)` before the update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryRecord {
    pub n: usize,
    pub m: usize,
    pub t: Vec<usize>,
    /// Row-major, `n` entries per row.
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub d: Vec<f64>,
    /// `|J(K_t, θ*_t) − J*_t| / J*_t`, infinite when `K_t` does not stabilize `θ*_t`.
    pub j_err: Vec<f64>,
    /// `‖θ̂_t − θ*_t‖ / ‖θ*_t‖`.
    pub theta_err: Vec<f64>,
    pub rho_true: Vec<f64>,
    pub rho_est: Vec<f64>,
    pub grad_norm: Vec<f64>,
    pub j_star: Vec<f64>,
    /// Iterations where the guard held the gain.
    pub skipped: Vec<usize>,
    pub abort: Option<String>,
}

impl TrajectoryRecord {
    fn new(n: usize, m: usize, capacity: usize) -> Self {
        let mut r = Self {
            n,
            m,
            ..Default::default()
        };
        r.t.reserve(capacity);
        r.x.reserve(capacity * n);
        r.u.reserve(capacity * m);
        r.d.reserve(capacity * m);
        for v in [
            &mut r.j_err,
            &mut r.theta_err,
            &mut r.rho_true,
            &mut r.rho_est,
            &mut r.grad_norm,
            &mut r.j_star,
        ] {
            v.reserve(capacity);
        }
        r
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n..(i + 1) * self.n]
    }

    pub fn u_row(&self, i: usize) -> &[f64] {
        &self.u[i * self.m..(i + 1) * self.m]
    }

    pub fn d_row(&self, i: usize) -> &[f64] {
        &self.d[i * self.m..(i + 1) * self.m]
    }

    /// `‖x_t‖` for every row.
    pub fn state_norms(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.x_row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }
}

/// A run that stopped early, with everything recorded up to that point.
#[derive(Debug, Clone)]
pub struct RunFailure {
    pub error: Error,
    pub partial: Box<TrajectoryRecord>,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} after {} iterations", self.error, self.partial.len())
    }
}

impl std::error::Error for RunFailure {}

/// Read-only view of the loop handed to observers at the top of each iteration.
pub struct StepView<'a> {
    pub t: usize,
    pub state: &'a LoopState,
    pub plant: &'a Theta,
    pub k_star: &'a Gain,
}

pub fn run_relearn(
    cfg: &SimConfig,
    plant: &PlantSchedule,
    cost: &CostSpec,
) -> std::result::Result<TrajectoryRecord, RunFailure> {
    run_relearn_observed(cfg, plant, cost, &mut |_| {})
}

pub fn run_relearn_observed(
    cfg: &SimConfig,
    plant: &PlantSchedule,
    cost: &CostSpec,
    observer: &mut dyn FnMut(&StepView<'_>),
) -> std::result::Result<TrajectoryRecord, RunFailure> {
    let n = cfg.theta0.n();
    let m = cfg.theta0.m();
    let mut rec = TrajectoryRecord::new(n, m, cfg.horizon);
    let fail = |error: Error, mut partial: TrajectoryRecord| {
        partial.abort = Some(error.to_string());
        RunFailure {
            error,
            partial: Box::new(partial),
        }
    };

    if let Err(e) = cfg.validate().and_then(|_| cost.check_dims(&plant.theta_star)) {
        return Err(fail(e, rec));
    }
    if plant.theta_star.value().shape() != cfg.theta0.value().shape() {
        return Err(fail(Error::Dimension("theta0 and plant differ in shape".into()), rec));
    }
    match is_stabilizing(&cfg.theta0, &cfg.k0) {
        Ok(true) => {}
        Ok(false) => {
            let rho = closed_loop_radius(&cfg.theta0, &cfg.k0).unwrap_or(f64::NAN);
            return Err(fail(Error::Stability { rho }, rec));
        }
        Err(e) => return Err(fail(e, rec)),
    }
    if !matches!(is_stabilizing(&plant.at(0), &cfg.k0), Ok(true)) {
        warn!("initial gain does not stabilize the true plant");
    }

    let mut dare_opts = DareOptions::default();
    let mut k_star = Gain::zeros(m, n);
    let mut static_j_star = None;

    let mut state = LoopState {
        x: cfg.x0.clone(),
        w: cfg.exo.w0().clone(),
        learner: LearnerState::new(cfg.theta0.clone()),
        k: cfg.k0.clone(),
    };

    for t in 0..cfg.horizon {
        let theta_t = plant.at(t);

        let xnorm = state.x.norm();
        if !(xnorm <= cfg.blowup) {
            return Err(fail(Error::Divergence { t, norm: xnorm }, rec));
        }

        // optimal cost of the current plant
        let refresh = match plant.drift {
            None => static_j_star.is_none(),
            Some(_) => t % cfg.jstar_cadence == 0,
        };
        if refresh {
            match dare_solve_with(&theta_t, cost, &dare_opts) {
                Ok(sol) => {
                    dare_opts.warm_start = Some(sol.p.clone());
                    k_star = sol.k;
                }
                Err(e) => return Err(fail(e, rec)),
            }
        }
        let j_star = match static_j_star {
            Some(j) => j,
            None => match lqr_cost(&k_star, &theta_t, cost) {
                Ok(j) => {
                    if plant.drift.is_none() {
                        static_j_star = Some(j);
                    }
                    j
                }
                Err(e) => return Err(fail(e, rec)),
            },
        };

        let j_err = match lqr_cost(&state.k, &theta_t, cost) {
            Ok(j) => (j - j_star).abs() / j_star,
            Err(Error::Stability { .. }) => f64::INFINITY,
            Err(e) => return Err(fail(e, rec)),
        };
        let theta_err =
            (state.learner.theta_hat.value() - theta_t.value()).norm() / theta_t.value().norm();
        let rho_true = closed_loop_radius(&theta_t, &state.k).unwrap_or(f64::NAN);
        let rho_est = closed_loop_radius(&state.learner.theta_hat, &state.k).unwrap_or(f64::NAN);

        observer(&StepView {
            t,
            state: &state,
            plant: &theta_t,
            k_star: &k_star,
        });

        let out = match relearn_step(&state, &theta_t, cost, &cfg.exo, cfg.gamma, cfg.lambda, cfg.guard) {
            Ok(o) => o,
            Err(e) => return Err(fail(e, rec)),
        };
        if out.skipped {
            rec.skipped.push(t);
        }

        rec.t.push(t);
        rec.x.extend_from_slice(state.x.as_slice());
        rec.u.extend_from_slice(out.u.as_slice());
        rec.d.extend_from_slice(out.d.as_slice());
        rec.j_err.push(j_err);
        rec.theta_err.push(theta_err);
        rec.rho_true.push(rho_true);
        rec.rho_est.push(rho_est);
        rec.grad_norm.push(out.grad_norm);
        rec.j_star.push(j_star);

        state = out.next;
    }
    Ok(rec)
}

/// Fit of `series[t] ≈ a1 · exp(−a2 · t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub a1: f64,
    pub a2: f64,
    pub r2: f64,
}

/// Least-squares line through `(t, ln series[t])` for `t ≥ t_start`.
pub fn fit_exponential_rate(series: &[f64], t_start: usize) -> Result<ExpFit> {
    if series.len() < t_start + 2 {
        return Err(Error::InsufficientData {
            needed: t_start + 2,
            available: series.len(),
        });
    }
    let pts = &series[t_start..];
    if let Some(bad) = pts.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "series must be positive and finite, entry {} is {}",
            t_start + bad,
            pts[bad]
        )));
    }
    let k = pts.len() as f64;
    let (mut st, mut sy) = (0.0, 0.0);
    for (i, v) in pts.iter().enumerate() {
        st += (t_start + i) as f64;
        sy += v.ln();
    }
    let (tm, ym) = (st / k, sy / k);
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for (i, v) in pts.iter().enumerate() {
        let dt = (t_start + i) as f64 - tm;
        let dy = v.ln() - ym;
        stt += dt * dt;
        sty += dt * dy;
        syy += dy * dy;
    }
    let slope = sty / stt;
    let intercept = ym - slope * tm;
    let sse: f64 = pts
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let r = v.ln() - (intercept + slope * (t_start + i) as f64);
            r * r
        })
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(ExpFit {
        a1: intercept.exp(),
        a2: -slope,
        r2,
    })
}

/// First index at or after `from` where the series drops to `rel * series[from]`.
/// Marks the end of the segment worth fitting before round-off takes over.
pub fn floor_onset(series: &[f64], from: usize, rel: f64) -> usize {
    let level = series.get(from).copied().unwrap_or(0.0) * rel;
    series[from..]
        .iter()
        .position(|v| *v <= level)
        .map_or(series.len(), |i| from + i)
}

/// Response of an error series to a sigmoid plant change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftResponse {
    /// Smallest error before `t_mid − 5α`, but no lower than machine epsilon:
    /// relative errors below that are not resolved.
    pub pre_floor: f64,
    pub peak: f64,
    pub peak_t: usize,
    /// Peak strictly exceeds both ends of the `t_mid ± 5α` window.
    pub interior_peak: bool,
    /// Smallest error after the window.
    pub post_min: f64,
    /// First `t > t_mid` with error below twice the pre-drift floor.
    pub recovery_t: Option<usize>,
}

pub fn drift_response(series: &[f64], t_mid: f64, alpha: f64) -> Option<DriftResponse> {
    let lo = (t_mid - 5.0 * alpha).max(0.0).floor() as usize;
    let hi = ((t_mid + 5.0 * alpha).ceil() as usize).min(series.len().saturating_sub(1));
    if lo == 0 || lo >= hi || hi + 1 >= series.len() {
        return None;
    }
    let pre_floor = series[..lo]
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
        .max(f64::EPSILON);
    let (peak_t, peak) = series[lo..=hi]
        .iter()
        .enumerate()
        .fold((lo, f64::NEG_INFINITY), |(bt, bv), (i, &v)| {
            if v > bv {
                (lo + i, v)
            } else {
                (bt, bv)
            }
        });
    let interior_peak = peak > series[lo] && peak > series[hi];
    let post_min = series[hi + 1..].iter().cloned().fold(f64::INFINITY, f64::min);
    let start = (t_mid.max(0.0).ceil() as usize + 1).min(series.len());
    let recovery_t = series[start..]
        .iter()
        .position(|&v| v < 2.0 * pre_floor)
        .map(|i| start + i);
    Some(DriftResponse {
        pre_floor,
        peak,
        peak_t,
        interior_peak,
        post_min,
        recovery_t,
    })
}

/// Samples `x0 ~ N(mean, std²)` entrywise.
pub fn sample_x0<R: Rng + ?Sized>(n: usize, mean: f64, std: f64, rng: &mut R) -> DenseVector {
    DenseVector::from_fn(n, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        mean + std * z
    })
}

/// Gain matrix helper for callers holding raw rows.
pub fn gain_from_rows(rows: usize, cols: usize, data: &[f64]) -> Gain {
    Gain(DenseMatrix::from_row_slice(rows, cols, data))
}
