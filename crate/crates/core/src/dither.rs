//! Dither exosystem `w⁺ = F w`, `d = E w` and the excitation checks on its output.
//!
//! `F` is block diagonal with planar rotations, so the spectrum sits on the unit
//! circle and `‖w_t‖` is constant. `E` is drawn at random until the stacked
//! observability-like matrix `[E; EF; …; EFⁿ]` has full row rank, which makes the
//! dither sufficiently rich of order `n + 1`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, DenseMatrix, DenseVector};

/// Relative singular-value cutoff for the rank tests in this module.
pub const RANK_RTOL: f64 = 1e-9;
/// Attempts at drawing an admissible `E` before giving up.
pub const MAX_E_DRAWS: usize = 100;
/// Stream id of the `E` draws inside a seeded ChaCha generator.
pub const E_STREAM: u64 = 2;

/// Rule for the block frequencies `ω_1, …, ω_q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FrequencySchedule {
    /// Per-coordinate rule `ω_{i+1} = ω_i` (i odd), `ω_i = 2ω_{i-2}` (i even)
    /// over the `n_w` coordinates; each rotation block takes the frequency
    /// of its two coordinates.
    #[default]
    Paired,
    /// Per-block doubling `ω_i = 2ω_{i-1}`.
    Geometric,
    /// Caller-supplied block frequencies (one per block).
    Explicit { frequencies: Vec<f64> },
}

impl FrequencySchedule {
    /// Frequencies of the `q` rotation blocks.
    pub fn block_frequencies(&self, q: usize, omega1: f64) -> Result<Vec<f64>> {
        match self {
            FrequencySchedule::Paired => {
                let nw = 2 * q;
                // 1-based coordinate frequencies
                let mut coord = vec![0.0; nw + 1];
                coord[1] = omega1;
                for i in 2..=nw {
                    coord[i] = if i % 2 == 0 {
                        if i >= 4 {
                            2.0 * coord[i - 2]
                        } else {
                            coord[i - 1]
                        }
                    } else {
                        // i odd, i ≥ 3: shares the frequency of coordinate i+1
                        2.0 * coord[i - 1]
                    };
                }
                Ok((0..q).map(|k| coord[2 * k + 1]).collect())
            }
            FrequencySchedule::Geometric => {
                Ok((0..q).map(|k| omega1 * 2f64.powi(k as i32)).collect())
            }
            FrequencySchedule::Explicit { frequencies } => {
                if frequencies.len() != q {
                    return Err(Error::InvalidArgument(format!(
                        "{} explicit frequencies given, {q} blocks required",
                        frequencies.len()
                    )));
                }
                Ok(frequencies.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exosystem {
    f: DenseMatrix,
    e: DenseMatrix,
    w0: DenseVector,
    frequencies: Vec<f64>,
}

/// Block-diagonal rotation `blkdiag([[cos ω, sin ω], [-sin ω, cos ω]])`.
pub fn rotation_blocks(frequencies: &[f64]) -> DenseMatrix {
    let nw = 2 * frequencies.len();
    let mut f = DenseMatrix::zeros(nw, nw);
    for (k, &w) in frequencies.iter().enumerate() {
        let (s, c) = w.sin_cos();
        let i = 2 * k;
        f[(i, i)] = c;
        f[(i, i + 1)] = s;
        f[(i + 1, i)] = -s;
        f[(i + 1, i + 1)] = c;
    }
    f
}

/// `(a, 0, a, 0, …)` with one nonzero leading entry per block.
pub fn default_w0(q: usize, amplitude: f64) -> DenseVector {
    DenseVector::from_fn(2 * q, |i, _| if i % 2 == 0 { amplitude } else { 0.0 })
}

/// `[E; EF; …; EF^depth]`.
pub fn stacked_output_matrix(f: &DenseMatrix, e: &DenseMatrix, depth: usize) -> DenseMatrix {
    let m = e.nrows();
    let mut out = DenseMatrix::zeros(m * (depth + 1), f.ncols());
    let mut ef = e.clone();
    for k in 0..=depth {
        out.view_mut((k * m, 0), (m, f.ncols())).copy_from(&ef);
        ef = &ef * f;
    }
    out
}

impl Exosystem {
    /// Rotation exosystem with a caller-chosen `E` (no richness requirement).
    pub fn from_parts(frequencies: Vec<f64>, e: DenseMatrix, w0: DenseVector) -> Result<Self> {
        let nw = 2 * frequencies.len();
        if nw == 0 || e.ncols() != nw || w0.len() != nw || e.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "exosystem needs E with {nw} columns and w0 of length {nw}"
            )));
        }
        if frequencies.iter().any(|w| !w.is_finite()) || w0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("exosystem"));
        }
        crate::linalg::ensure_finite(&e, "exosystem E")?;
        for k in 0..frequencies.len() {
            if w0[2 * k] == 0.0 && w0[2 * k + 1] == 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "initial dither state has a zero block at index {k}"
                )));
            }
        }
        Ok(Self {
            f: rotation_blocks(&frequencies),
            e,
            w0,
            frequencies,
        })
    }

    pub fn f(&self) -> &DenseMatrix {
        &self.f
    }

    pub fn e(&self) -> &DenseMatrix {
        &self.e
    }

    pub fn w0(&self) -> &DenseVector {
        &self.w0
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn n_w(&self) -> usize {
        self.f.nrows()
    }

    pub fn m(&self) -> usize {
        self.e.nrows()
    }

    /// Continuous-time extension of `F^τ w0`: each block rotated by `ω_i τ`.
    /// Agrees with repeated stepping at integer `τ`.
    pub fn state_at(&self, tau: f64) -> DenseVector {
        let mut w = self.w0.clone();
        for (k, &om) in self.frequencies.iter().enumerate() {
            let (s, c) = (om * tau).sin_cos();
            let (a, b) = (self.w0[2 * k], self.w0[2 * k + 1]);
            w[2 * k] = c * a + s * b;
            w[2 * k + 1] = -s * a + c * b;
        }
        w
    }

    /// Common period of the block rotations, when all frequencies are
    /// integer multiples of the smallest one.
    pub fn common_period(&self) -> Option<f64> {
        let base = self.frequencies.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(base > 0.0) {
            return None;
        }
        let commensurate = self.frequencies.iter().all(|w| {
            let r = w / base;
            (r - r.round()).abs() <= 1e-12 * r.max(1.0)
        });
        commensurate.then(|| 2.0 * std::f64::consts::PI / base)
    }

    /// `w_0, w_1, …, w_{len-1}` by repeated stepping.
    pub fn trajectory(&self, len: usize) -> Vec<DenseVector> {
        let mut out = Vec::with_capacity(len);
        let mut w = self.w0.clone();
        for _ in 0..len {
            let next = &self.f * &w;
            out.push(std::mem::replace(&mut w, next));
        }
        out
    }

    /// `d_0, …, d_{len-1}`.
    pub fn dither(&self, len: usize) -> Vec<DenseVector> {
        self.trajectory(len).iter().map(|w| &self.e * w).collect()
    }
}

/// Builds the rotation exosystem for an `n`-state, `m`-input plant.
///
/// `amplitude` is the norm of every planar block of `w0`.
pub fn build_exosystem(
    n: usize,
    m: usize,
    omega1: f64,
    amplitude: f64,
    seed: u64,
    schedule: &FrequencySchedule,
) -> Result<Exosystem> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("n and m must be positive".into()));
    }
    if !(omega1 > 0.0 && omega1 < std::f64::consts::FRAC_PI_2) {
        return Err(Error::InvalidArgument(format!(
            "omega1 must lie in (0, pi/2), got {omega1}"
        )));
    }
    if !(amplitude > 0.0) || !amplitude.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "amplitude must be positive, got {amplitude}"
        )));
    }
    let q = n + 1;
    let nw = 2 * q;
    if m * (n + 1) > nw {
        return Err(Error::Construction(format!(
            "a {nw}-dimensional rotation exosystem cannot be rich of order {} for {m} inputs",
            n + 1
        )));
    }
    let frequencies = schedule.block_frequencies(q, omega1)?;
    check_distinct_spectrum(&frequencies)?;
    let f = rotation_blocks(&frequencies);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(E_STREAM);
    for _ in 0..MAX_E_DRAWS {
        let e = DenseMatrix::from_fn(m, nw, |_, _| StandardNormal.sample(&mut rng));
        let stacked = stacked_output_matrix(&f, &e, n);
        if numerical_rank(&stacked, RANK_RTOL) == m * (n + 1) {
            return Exosystem::from_parts(frequencies, e, default_w0(q, amplitude));
        }
    }
    Err(Error::Construction(format!(
        "no admissible E after {MAX_E_DRAWS} draws (check the frequency schedule)"
    )))
}

// Blocks sharing an eigenvalue pair rotate in lockstep, so w_t stays in a
// proper subspace and no choice of E restores excitation.
fn check_distinct_spectrum(frequencies: &[f64]) -> Result<()> {
    use std::f64::consts::PI;
    // fold each frequency to the eigenvalue angle in [0, π]
    let fold = |w: f64| {
        let r = w.rem_euclid(2.0 * PI);
        if r > PI {
            2.0 * PI - r
        } else {
            r
        }
    };
    let angles: Vec<f64> = frequencies.iter().map(|&w| fold(w)).collect();
    const SEP: f64 = 1e-8;
    for (i, &a) in angles.iter().enumerate() {
        if a < SEP || PI - a < SEP {
            return Err(Error::Construction(format!(
                "block {i} has real eigenvalues (frequency {})",
                frequencies[i]
            )));
        }
        for (j, &b) in angles.iter().enumerate().skip(i + 1) {
            if (a - b).abs() < SEP {
                return Err(Error::Construction(format!(
                    "blocks {i} and {j} share the eigenvalue angle {a}"
                )));
            }
        }
    }
    Ok(())
}

/// `(w⁺, d) = (F w, E w)`.
pub fn step_exosystem(sys: &Exosystem, w: &DenseVector) -> Result<(DenseVector, DenseVector)> {
    if w.len() != sys.n_w() {
        return Err(Error::Dimension(format!(
            "dither state has length {}, expected {}",
            w.len(),
            sys.n_w()
        )));
    }
    Ok((&sys.f * w, &sys.e * w))
}

/// Extreme eigenvalues of `Σ_{τ=t0+1}^{t0+window} w_τ w_τᵀ`.
pub fn pe_gramian(ws: &[DenseVector], t0: usize, window: usize) -> Result<(f64, f64)> {
    if window == 0 {
        return Err(Error::InvalidArgument("window must be at least 1".into()));
    }
    let end = t0 + window;
    if end >= ws.len() {
        return Err(Error::InsufficientData {
            needed: end + 1,
            available: ws.len(),
        });
    }
    let dim = ws[t0 + 1].len();
    let mut g = DenseMatrix::zeros(dim, dim);
    for w in &ws[t0 + 1..=end] {
        if w.len() != dim {
            return Err(Error::Dimension("dither states of unequal length".into()));
        }
        g.ger(1.0, w, w, 1.0);
    }
    let eig = g.symmetric_eigenvalues();
    Ok((eig.min(), eig.max()))
}

/// Numerical rank of the `(n+1)`-block Hankel matrix of `d_0, …, d_{t_d-1}`.
/// The dither is sufficiently rich of order `n+1` iff this equals `m(n+1)`.
pub fn richness_hankel_rank(ds: &[DenseVector], n: usize, t_d: usize) -> Result<usize> {
    if ds.len() < t_d {
        return Err(Error::InsufficientData {
            needed: t_d,
            available: ds.len(),
        });
    }
    if t_d < n + 1 {
        return Err(Error::InsufficientData {
            needed: n + 1,
            available: t_d,
        });
    }
    let m = ds.first().map_or(0, |d| d.len());
    let cols = t_d - n;
    let mut h = DenseMatrix::zeros(m * (n + 1), cols);
    for i in 0..=n {
        for j in 0..cols {
            let d = &ds[i + j];
            if d.len() != m {
                return Err(Error::Dimension("dither samples of unequal length".into()));
            }
            h.view_mut((i * m, j), (m, 1)).copy_from(d);
        }
    }
    Ok(numerical_rank(&h, RANK_RTOL))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use crate::linalg::spectral_radius;

    #[test]
    fn schedules_agree_on_doubling_frequencies() {
        let paired = FrequencySchedule::Paired.block_frequencies(5, 0.2).unwrap();
        let geo = FrequencySchedule::Geometric.block_frequencies(5, 0.2).unwrap();
        for (p, g) in paired.iter().zip(&geo) {
            assert_relative_eq!(p, g, max_relative = 1e-15);
        }
        assert_relative_eq!(paired[4], 3.2, max_relative = 1e-15);
        assert!(FrequencySchedule::Explicit { frequencies: vec![0.1] }
            .block_frequencies(2, 0.1)
            .is_err());
    }

    #[test]
    fn scalar_plant_exosystem() {
        let exo = build_exosystem(1, 1, 0.3, 1.0, 1, &FrequencySchedule::Paired).unwrap();
        assert_eq!(exo.n_w(), 4);
        for z in exo.f().clone().complex_eigenvalues().iter() {
            assert_relative_eq!(z.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn aircraft_sized_exosystem_is_rich() {
        let exo = build_exosystem(4, 2, 0.2, 0.01, 7, &FrequencySchedule::Paired).unwrap();
        assert_eq!(exo.n_w(), 10);
        let stacked = stacked_output_matrix(exo.f(), exo.e(), 4);
        assert_eq!(stacked.shape(), (10, 10));
        assert_eq!(numerical_rank(&stacked, RANK_RTOL), 10);
        assert_relative_eq!(exo.w0()[0], 0.01);
        assert_eq!(exo.w0()[1], 0.0);
    }

    #[test]
    fn build_rejects_bad_arguments() {
        let s = FrequencySchedule::Paired;
        assert!(build_exosystem(2, 1, 0.0, 1.0, 0, &s).is_err());
        assert!(build_exosystem(2, 1, 1.6, 1.0, 0, &s).is_err());
        assert!(build_exosystem(2, 1, 0.2, 0.0, 0, &s).is_err());
        // three inputs cannot be rich of order n+1 with 2(n+1) dither states
        assert!(matches!(
            build_exosystem(2, 3, 0.2, 1.0, 0, &s),
            Err(Error::Construction(_))
        ));
    }

    #[test]
    fn repeated_frequencies_defeat_richness() {
        let s = FrequencySchedule::Explicit {
            frequencies: vec![0.2, 0.2, 0.4],
        };
        assert!(matches!(
            build_exosystem(2, 1, 0.2, 1.0, 0, &s),
            Err(Error::Construction(_))
        ));
        // aliasing: 2π - 0.3 has the eigenvalues of 0.3
        let s = FrequencySchedule::Explicit {
            frequencies: vec![0.3, 2.0 * std::f64::consts::PI - 0.3, 0.9],
        };
        assert!(build_exosystem(2, 1, 0.3, 1.0, 0, &s).is_err());

        // why it matters: identical blocks move in lockstep and the Gramian is singular
        let exo = Exosystem::from_parts(
            vec![0.2, 0.2, 0.4],
            DenseMatrix::from_row_slice(1, 6, &[1.0, 0.5, -0.3, 0.8, 0.2, 1.1]),
            default_w0(3, 1.0),
        )
        .unwrap();
        let ws = exo.trajectory(200);
        let (lo, hi) = pe_gramian(&ws, 0, 150).unwrap();
        assert!(lo < 1e-12 * hi);
    }

    #[test]
    fn step_examples() {
        let exo = build_exosystem(1, 1, 0.25, 1.0, 3, &FrequencySchedule::Paired).unwrap();
        let (w, d) = step_exosystem(&exo, &DenseVector::zeros(4)).unwrap();
        assert_eq!(w.norm(), 0.0);
        assert_eq!(d.norm(), 0.0);
        assert!(step_exosystem(&exo, &DenseVector::zeros(3)).is_err());

        // ω = 2π/8 blocks return after 8 steps
        let exo = Exosystem::from_parts(
            vec![std::f64::consts::PI / 4.0, std::f64::consts::PI / 2.0],
            DenseMatrix::from_row_slice(1, 4, &[1.0, 0.0, 1.0, 0.0]),
            DenseVector::from_vec(vec![0.3, -0.1, 0.2, 0.5]),
        )
        .unwrap();
        let mut w = exo.w0().clone();
        for _ in 0..8 {
            let (next, _) = step_exosystem(&exo, &w).unwrap();
            assert_relative_eq!(next.norm(), w.norm(), epsilon = 1e-12);
            w = next;
        }
        assert!((&w - exo.w0()).amax() <= 1e-9);
    }

    #[test]
    fn state_at_matches_stepping() {
        let exo = build_exosystem(3, 1, 0.2, 0.5, 9, &FrequencySchedule::Paired).unwrap();
        let traj = exo.trajectory(50);
        for (t, w) in traj.iter().enumerate() {
            assert!((exo.state_at(t as f64) - w).amax() <= 1e-12);
        }
        let period = exo.common_period().unwrap();
        assert_relative_eq!(period, 10.0 * std::f64::consts::PI, max_relative = 1e-14);
        assert!((exo.state_at(3.7 + period) - exo.state_at(3.7)).amax() <= 1e-12);
    }

    #[test]
    fn rotation_spectrum_on_unit_circle() {
        let f = rotation_blocks(&[0.2, 0.4]);
        assert_relative_eq!(spectral_radius(&f).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gramian_examples() {
        let zeros = vec![DenseVector::zeros(3); 10];
        assert_eq!(pe_gramian(&zeros, 0, 5).unwrap(), (0.0, 0.0));
        let same = vec![DenseVector::from_vec(vec![1.0, 2.0]); 10];
        let (lo, hi) = pe_gramian(&same, 0, 5).unwrap();
        assert!(lo.abs() < 1e-12);
        assert_relative_eq!(hi, 25.0, epsilon = 1e-12);
        assert!(pe_gramian(&same, 5, 5).is_err());
        assert!(pe_gramian(&same, 0, 0).is_err());

        let exo = build_exosystem(4, 2, 0.2, 0.01, 7, &FrequencySchedule::Paired).unwrap();
        let ws = exo.trajectory(4 * 10 * 25);
        for shift in 0..20 {
            let (lo, _) = pe_gramian(&ws, shift * 7, 40).unwrap();
            assert!(lo > 0.0, "shift {shift}: {lo}");
        }
    }

    #[test]
    fn hankel_examples() {
        let constant = vec![DenseVector::from_vec(vec![1.5]); 20];
        assert_eq!(richness_hankel_rank(&constant, 1, 20).unwrap(), 1);
        let zero = vec![DenseVector::zeros(2); 20];
        assert_eq!(richness_hankel_rank(&zero, 1, 20).unwrap(), 0);
        assert!(richness_hankel_rank(&zero, 1, 21).is_err());

        let exo = build_exosystem(4, 2, 0.2, 0.01, 7, &FrequencySchedule::Paired).unwrap();
        let ds = exo.dither(40);
        assert_eq!(richness_hankel_rank(&ds, 4, 40).unwrap(), 10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn dither_norm_is_constant(seed in 0u64..1000, omega in 0.05f64..0.7, amp in 0.001f64..10.0) {
            let exo = build_exosystem(2, 1, omega, amp, seed, &FrequencySchedule::Geometric).unwrap();
            let n0 = exo.w0().norm();
            let mut w = exo.w0().clone();
            for _ in 0..10_000 {
                w = exo.f() * &w;
            }
            prop_assert!((w.norm() - n0).abs() <= 1e-8 * n0.max(1.0));
        }

        #[test]
        fn built_exosystems_are_persistently_exciting(seed in 0u64..1000, omega in 0.1f64..0.7) {
            let exo = build_exosystem(2, 2, omega, 1.0, seed, &FrequencySchedule::Paired).unwrap();
            let ws = exo.trajectory(2000);
            let window = 8 * exo.n_w();
            for shift in 0..50 {
                let (lo, hi) = pe_gramian(&ws, shift * 17, window).unwrap();
                prop_assert!(lo > 1e-9 * hi, "shift {}: {} vs {}", shift, lo, hi);
            }
            let ds = exo.dither(2000);
            for shift in 0..10 {
                let r = richness_hankel_rank(&ds[shift * 31..], 2, 4 * 2 * 3).unwrap();
                prop_assert_eq!(r, 6);
            }
        }
    }
}
