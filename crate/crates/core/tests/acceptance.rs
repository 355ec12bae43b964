//! End-to-end acceptance checks, one test per criterion. Each prints a single
//! `criterion N: PASS|FAIL ...` line (visible with `--nocapture`) before
//! asserting.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use relearn::avganalysis::{compute_pi_h_pi_s, hss_period_sweep, run_averaged, AveragedState};
use relearn::cli::{run_experiment, write_csv, RunOutcome};
use relearn::cloop::{fit_exponential_rate, floor_onset};
use relearn::config::{ExperimentConfig, Experiment, AIRCRAFT_DRIFTING, AIRCRAFT_STATIC};
use relearn::dither::{pe_gramian, richness_hankel_rank};
use relearn::linalg::{spectral_radius, DenseMatrix};
use relearn::lqr::{
    closed_loop_radius, dare_solve, dare_solve_with, finite_diff_gradient, is_stabilizing,
    lqr_gradient, CostSpec, DareOptions, Gain, Theta,
};

fn report(n: usize, pass: bool, detail: String) {
    println!("criterion {n:>2}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

fn experiment(text: &str) -> Experiment {
    ExperimentConfig::from_toml(text).unwrap().realize().unwrap()
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t0 = Instant::now();
    let v = f();
    (v, t0.elapsed())
}

fn static_run() -> &'static (RunOutcome, Duration) {
    static RUN: OnceLock<(RunOutcome, Duration)> = OnceLock::new();
    RUN.get_or_init(|| timed(|| run_experiment(&experiment(AIRCRAFT_STATIC), false).unwrap()))
}

fn drifting_run() -> &'static RunOutcome {
    static RUN: OnceLock<RunOutcome> = OnceLock::new();
    RUN.get_or_init(|| run_experiment(&experiment(AIRCRAFT_DRIFTING), true).unwrap())
}

fn csv_of(out: &RunOutcome, decimate: usize, drifting: bool) -> Vec<u8> {
    let mut buf = Vec::new();
    write_csv(&out.record, decimate, drifting, &mut buf).unwrap();
    buf
}

fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
    DenseMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut *rng))
}

#[test]
fn criterion_01_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    while count < 50 {
        let n = 1 + count % 4;
        let m = 1 + (count / 4) % 3;
        let a = normal_matrix(&mut rng, n, n);
        let a = &a * (0.9 / spectral_radius(&a).unwrap().max(1e-3));
        let theta = Theta::from_ab(&a, &normal_matrix(&mut rng, n, m)).unwrap();
        let g = normal_matrix(&mut rng, n, n);
        let h = normal_matrix(&mut rng, m, m);
        let cost = CostSpec::new(
            &g * g.transpose() + DenseMatrix::identity(n, n) * 0.1,
            &h * h.transpose() + DenseMatrix::identity(m, m) * 0.1,
        )
        .unwrap();
        let Ok((_, k_star)) = dare_solve(&theta, &cost) else {
            continue;
        };
        let k = Gain(&k_star.0 + normal_matrix(&mut rng, m, n) * 0.05);
        if !is_stabilizing(&theta, &k).unwrap() || closed_loop_radius(&theta, &k).unwrap() > 0.98 {
            continue;
        }
        let analytic = lqr_gradient(&k, &theta, &cost).unwrap();
        let fd = finite_diff_gradient(&k, &theta, &cost, 1e-5).unwrap();
        worst = worst.max((&analytic - &fd).norm() / fd.norm().max(1.0));
        count += 1;
    }
    let elapsed = t0.elapsed();
    let pass = worst <= 1e-5 && elapsed < Duration::from_secs(10);
    report(1, pass, format!("50 instances, worst relative error {worst:e}, {elapsed:.2?}"));
    assert!(pass);
}

#[test]
fn criterion_02_riccati_ground_truth() {
    let scalar = Theta::from_ab(&DenseMatrix::from_element(1, 1, 0.5), &DenseMatrix::from_element(1, 1, 1.0)).unwrap();
    let one = DenseMatrix::identity(1, 1);
    let (p, k) = dare_solve(&scalar, &CostSpec::new(one.clone(), one).unwrap()).unwrap();
    // p² − p/4 − 1 = 0 and K = −a b p / (r + b² p)
    let root = (0.25 + (0.0625f64 + 4.0).sqrt()) / 2.0;
    let k_exact = -0.5 * root / (1.0 + root);
    let p_err = (p[(0, 0)] - root).abs();
    let k_err = (k.0[(0, 0)] - k_exact).abs();
    let scalar_ok = p_err <= 1e-9
        && k_err <= 1e-9
        && (p[(0, 0)] - 1.132782).abs() < 5e-7
        && (k.0[(0, 0)] + 0.265564).abs() < 5e-7;

    let exp = experiment(AIRCRAFT_STATIC);
    let sol = dare_solve_with(&exp.theta_star, &exp.cost, &DareOptions::default()).unwrap();
    let rho = closed_loop_radius(&exp.theta_star, &sol.k).unwrap();
    let pass = scalar_ok && sol.residual <= 1e-9 && rho < 1.0;
    report(
        2,
        pass,
        format!(
            "scalar P={} K={} (errors {p_err:e}, {k_err:e}); aircraft residual {:e}, rho {rho}",
            p[(0, 0)],
            k.0[(0, 0)],
            sol.residual
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_03_dither_is_persistently_exciting_and_rich() {
    let exp = experiment(AIRCRAFT_STATIC);
    let (n, m) = (exp.theta_star.n(), exp.theta_star.m());
    let nw = exp.exo.n_w();
    let window = 4 * nw;
    let t_d = 4 * m * (n + 1);
    let ws = exp.exo.trajectory(50 * window + window + 1);
    let ds = exp.exo.dither(50 * t_d + t_d);
    let mut lam_min = f64::INFINITY;
    let mut ranks = Vec::new();
    for s in 0..50 {
        lam_min = lam_min.min(pe_gramian(&ws, s * window, window).unwrap().0);
        ranks.push(richness_hankel_rank(&ds[s * t_d..], n, t_d).unwrap());
    }
    let pass = lam_min > 0.0 && ranks.iter().all(|&r| r == m * (n + 1)) && m * (n + 1) == 10;
    report(
        3,
        pass,
        format!("n_w={nw}, min Gramian eigenvalue {lam_min:e} over 50 windows, Hankel ranks {:?}", {
            let mut r = ranks.clone();
            r.dedup();
            r
        }),
    );
    assert!(pass);
}

#[test]
fn criterion_04_steady_state_maps() {
    let exp = experiment(AIRCRAFT_STATIC);
    let (_, k_star) = dare_solve(&exp.theta_star, &exp.cost).unwrap();
    let ((maps, res), elapsed) = timed(|| {
        let maps = compute_pi_h_pi_s(&exp.theta_star, &k_star, &exp.exo, exp.config.algo.lambda).unwrap();
        let res = maps.residuals(&exp.theta_star, &k_star, &exp.exo).unwrap();
        (maps, res)
    });
    let pass = res.pi_x <= 1e-8
        && res.pi_h <= 1e-8
        && res.pi_s <= 1e-8
        && res.identity <= 1e-8
        && elapsed < Duration::from_secs(60);
    report(
        4,
        pass,
        format!(
            "residuals x {:e} H {:e} S {:e}, identity {:e}; Pi_H is {}x{}; {elapsed:.2?}",
            res.pi_x,
            res.pi_h,
            res.pi_s,
            res.identity,
            maps.pi_h.nrows(),
            maps.pi_h.ncols()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_05_steady_state_moment_is_invertible_and_periodic() {
    let exp = experiment(AIRCRAFT_STATIC);
    let (_, k_star) = dare_solve(&exp.theta_star, &exp.cost).unwrap();
    let maps = compute_pi_h_pi_s(&exp.theta_star, &k_star, &exp.exo, exp.config.algo.lambda).unwrap();
    let sweep = hss_period_sweep(&maps, &exp.exo, 10_000).unwrap();
    let pass = sweep.sigma_min > 0.0 && sweep.periodicity <= 1e-9;
    report(
        5,
        pass,
        format!(
            "period {:.6}, min sigma_min {:e}, periodicity {:e} over {} samples",
            sweep.period, sweep.sigma_min, sweep.periodicity, sweep.samples
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_averaged_system_converges() {
    let exp = experiment(AIRCRAFT_STATIC);
    let (_, k_star) = dare_solve(&exp.theta_star, &exp.cost).unwrap();
    let gamma = exp.config.algo.gamma;
    let steps = 100_000;
    let start = AveragedState::from_point(&exp.k0, &exp.theta0, &k_star, &exp.theta_star);
    let run = run_averaged(&start, &exp.theta_star, &k_star, &exp.cost, gamma, 0.1, steps).unwrap();
    // repeated rounding of (1 − γ) grows at most linearly in t
    let geo_ok = run.geometric_error <= 4.0 * steps as f64 * f64::EPSILON;
    let contraction = run.combined[steps] / run.combined[0];
    let end = floor_onset(&run.combined, 0, 1e-9);
    let fit = fit_exponential_rate(&run.combined[..end], 0).unwrap();
    let rise = run.v.windows(2).map(|p| p[1] - p[0]).fold(f64::NEG_INFINITY, f64::max);
    let v_ok = rise <= 1e-12 * run.v[0].abs().max(1.0);
    let pass = geo_ok && contraction <= 1e-6 && fit.a2 > 0.0 && fit.r2 >= 0.95 && v_ok;
    report(
        6,
        pass,
        format!(
            "theta geometric error {:e}, contraction {contraction:e}, fit a2 {:e} r2 {:.4}, max V increase {rise:e}",
            run.geometric_error, fit.a2, fit.r2
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_static_run_converges() {
    let (out, elapsed) = static_run();
    let tail = out.summary.tail.as_ref().unwrap();
    let rho_max = out.summary.rho_true_max.unwrap();
    let pass = out.record.len() == 300_000
        && out.summary.abort.is_none()
        && tail.j_err_max < 1e-3
        && tail.theta_err_max < 1e-3
        && out.record.rho_true.iter().all(|&r| r < 1.0)
        && *elapsed < Duration::from_secs(300);
    report(
        7,
        pass,
        format!(
            "final-10% max J_err {:e}, theta_err {:e}; max rho {rho_max}; {elapsed:.1?}",
            tail.j_err_max, tail.theta_err_max
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_drift_bump_and_recovery() {
    let out = drifting_run();
    let d = out.summary.drift.as_ref().unwrap();
    let mut pass = out.summary.abort.is_none();
    let mut detail = Vec::new();
    for (name, r) in [("J_err", &d.j_err), ("theta_err", &d.theta_err)] {
        let r = r.expect("drift window inside the horizon");
        let ok = r.interior_peak && r.post_min < 10.0 * r.pre_floor;
        pass &= ok;
        detail.push(format!(
            "{name} peak {:e} at t={} (window {}..{}), pre-drift floor {:e}, post-drift min {:e}",
            r.peak,
            r.peak_t,
            d.t_mid - 5.0 * d.alpha,
            d.t_mid + 5.0 * d.alpha,
            r.pre_floor,
            r.post_min
        ));
    }
    report(8, pass, detail.join("; "));
    assert!(pass);
}

#[test]
fn criterion_09_amplitude_scales_the_state_envelope() {
    let (full, _) = static_run();
    let mut cfg = ExperimentConfig::from_toml(AIRCRAFT_STATIC).unwrap();
    cfg.exo.amplitude *= 0.5;
    let half = run_experiment(&cfg.realize().unwrap(), false).unwrap();
    let e_full = full.summary.tail.as_ref().unwrap().x_norm_max;
    let e_half = half.summary.tail.as_ref().unwrap().x_norm_max;
    let ratio = e_half / e_full;
    let pass = half.summary.abort.is_none() && (ratio - 0.5).abs() <= 0.05;
    report(9, pass, format!("envelope {e_full:e} -> {e_half:e}, ratio {ratio:.6}"));
    assert!(pass);
}

#[test]
fn criterion_10_runs_are_byte_identical() {
    let mut pass = true;
    let mut sizes = Vec::new();
    for (text, drifting) in [(AIRCRAFT_STATIC, false), (AIRCRAFT_DRIFTING, true)] {
        let exp = experiment(text);
        let dec = exp.config.output.decimate;
        let first = if drifting { drifting_run() } else { &static_run().0 };
        let second = run_experiment(&exp, drifting).unwrap();
        let (a, b) = (csv_of(first, dec, drifting), csv_of(&second, dec, drifting));
        pass &= a == b;
        sizes.push(a.len());
    }
    report(10, pass, format!("two runs each of both bundled configs, CSV sizes {sizes:?} bytes"));
    assert!(pass);
}
