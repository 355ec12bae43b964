//! Dense real-matrix kernels.
//!
//! Everything here works on [`DenseMatrix`] (a column-major `nalgebra::DMatrix<f64>`)
//! and is a pure function of its inputs. The Stein and Sylvester solvers go
//! through the Kronecker-vectorized linear system, which is exact and cheap for
//! the state dimensions this crate targets (n + m up to about ten).

use nalgebra::{DMatrix, DVector, Schur};

use crate::error::{Error, Result};

pub type DenseMatrix = DMatrix<f64>;
pub type DenseVector = DVector<f64>;

/// Eigenvalues whose modulus is within this margin of 1 are not Schur.
pub const DEFAULT_SCHUR_TOL: f64 = 1e-9;
/// Singular values below `PINV_RTOL * sigma_max` are treated as zero.
pub const PINV_RTOL: f64 = 1e-12;
/// LU pivots below `SINGULAR_RTOL * max|pivot|` flag a singular system.
pub const SINGULAR_RTOL: f64 = 1e-13;

const SCHUR_MAX_ITER: usize = 10_000;

pub fn ensure_finite(m: &DenseMatrix, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn ensure_square(m: &DenseMatrix) -> Result<usize> {
    if m.is_square() {
        Ok(m.nrows())
    } else {
        Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        })
    }
}

/// Kronecker product: block `(i, j)` of the result is `a[(i, j)] * b`.
pub fn kron(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DenseMatrix::zeros(ar * br, ac * bc);
    for j in 0..ac {
        for i in 0..ar {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            let mut block = out.view_mut((i * br, j * bc), (br, bc));
            block.zip_apply(b, |o, v| *o = s * v);
        }
    }
    out
}

/// Column stacking: column 1, then column 2, and so on.
pub fn vec(m: &DenseMatrix) -> DenseVector {
    // nalgebra storage is column-major, so the raw slice is already vec(m).
    DenseVector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &DenseVector, rows: usize, cols: usize) -> Result<DenseMatrix> {
    if v.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "cannot unvec a length-{} vector into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(DenseMatrix::from_column_slice(rows, cols, v.as_slice()))
}

/// Moore-Penrose pseudoinverse with the default relative cutoff.
pub fn pinv(m: &DenseMatrix) -> DenseMatrix {
    pinv_with_rtol(m, PINV_RTOL)
}

pub fn pinv_with_rtol(m: &DenseMatrix, rtol: f64) -> DenseMatrix {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DenseMatrix::zeros(c, r);
    }
    let svd = JacobiSvd::new(m);
    let smax = svd.sigma.iter().cloned().fold(0.0, f64::max);
    let mut out = DenseMatrix::zeros(c, r);
    if smax == 0.0 {
        return out;
    }
    for (k, &s) in svd.sigma.iter().enumerate() {
        if s > rtol * smax {
            // out += v_k * u_k^T / s
            out.ger(1.0 / s, &svd.v.column(k), &svd.u.column(k), 1.0);
        }
    }
    out
}

/// Singular values, unsorted.
pub fn singular_values(m: &DenseMatrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    JacobiSvd::new(m).sigma
}

/// Numerical rank with singular values below `rtol * sigma_max` discarded.
pub fn numerical_rank(m: &DenseMatrix, rtol: f64) -> usize {
    let sv = singular_values(m);
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rtol * smax).count()
}

// One-sided (Hestenes) Jacobi SVD. nalgebra 0.35's bidiagonal SVD returns
// factors that do not reconstruct some exactly rank-deficient inputs, and the
// pseudoinverse of a rank-deficient regressor Gramian is the common case here.
// Thin factors: m = u diag(sigma) v^T with k = min(rows, cols) columns.
struct JacobiSvd {
    u: DenseMatrix,
    sigma: Vec<f64>,
    v: DenseMatrix,
}

impl JacobiSvd {
    fn new(m: &DenseMatrix) -> Self {
        if m.nrows() < m.ncols() {
            let t = Self::new(&m.transpose());
            return JacobiSvd { u: t.v, sigma: t.sigma, v: t.u };
        }
        let n = m.ncols();
        let mut a = m.clone();
        let mut v = DenseMatrix::identity(n, n);
        for _sweep in 0..80 {
            let mut rotated = false;
            for p in 0..n {
                for q in (p + 1)..n {
                    let alpha = a.column(p).norm_squared();
                    let beta = a.column(q).norm_squared();
                    let gamma = a.column(p).dot(&a.column(q));
                    if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    rotate_columns(&mut a, p, q, c, s);
                    rotate_columns(&mut v, p, q, c, s);
                }
            }
            if !rotated {
                break;
            }
        }
        let mut sigma = Vec::with_capacity(n);
        let mut u = a;
        for k in 0..n {
            let s = u.column(k).norm();
            sigma.push(s);
            if s > 0.0 {
                u.column_mut(k).scale_mut(1.0 / s);
            }
        }
        JacobiSvd { u, sigma, v }
    }
}

fn rotate_columns(a: &mut DenseMatrix, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..a.nrows() {
        let ap = a[(i, p)];
        let aq = a[(i, q)];
        a[(i, p)] = c * ap - s * aq;
        a[(i, q)] = s * ap + c * aq;
    }
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DenseMatrix) -> Result<f64> {
    let n = ensure_square(m)?;
    ensure_finite(m, "spectral_radius input")?;
    if n == 0 {
        return Ok(0.0);
    }
    if n == 1 {
        return Ok(m[(0, 0)].abs());
    }
    let schur =
        Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITER).ok_or(Error::EigenFailure)?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

pub fn is_schur(m: &DenseMatrix, tol: f64) -> Result<bool> {
    Ok(spectral_radius(m)? < 1.0 - tol)
}

fn check_schur(a: &DenseMatrix) -> Result<()> {
    let rho = spectral_radius(a)?;
    if rho < 1.0 - DEFAULT_SCHUR_TOL {
        Ok(())
    } else {
        Err(Error::NotSchur { rho })
    }
}

fn is_symmetric(m: &DenseMatrix) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= 1e-12 * scale
}

fn symmetrize(m: &mut DenseMatrix) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Solves `A W A^T - W = -Q` (controllability form).
pub fn solve_stein_ctrl(a: &DenseMatrix, q: &DenseMatrix) -> Result<DenseMatrix> {
    stein(a, q, false)
}

/// Solves `A^T P A - P = -Q` (cost form).
pub fn solve_stein_obs(a: &DenseMatrix, q: &DenseMatrix) -> Result<DenseMatrix> {
    stein(a, q, true)
}

fn stein(a: &DenseMatrix, q: &DenseMatrix, transposed: bool) -> Result<DenseMatrix> {
    let n = ensure_square(a)?;
    if q.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "Stein right-hand side is {}x{}, expected {n}x{n}",
            q.nrows(),
            q.ncols()
        )));
    }
    ensure_finite(a, "Stein matrix")?;
    ensure_finite(q, "Stein right-hand side")?;
    check_schur(a)?;
    // vec(A X A^T) = (A ⊗ A) vec(X);  vec(A^T X A) = (A^T ⊗ A^T) vec(X)
    let op = if transposed { a.transpose() } else { a.clone() };
    let lhs = DenseMatrix::identity(n * n, n * n) - kron(&op, &op);
    let x = solve_dense(&lhs, &DenseMatrix::from_column_slice(n * n, 1, q.as_slice()))?;
    let mut w = DenseMatrix::from_column_slice(n, n, x.as_slice());
    if is_symmetric(q) {
        symmetrize(&mut w);
    }
    Ok(w)
}

/// Solves `X P = Q X + C` for `X` through
/// `(P^T ⊗ I - I ⊗ Q) vec(X) = vec(C)`.
pub fn solve_sylvester(p: &DenseMatrix, q: &DenseMatrix, c: &DenseMatrix) -> Result<DenseMatrix> {
    let np = ensure_square(p)?;
    let nq = ensure_square(q)?;
    if c.shape() != (nq, np) {
        return Err(Error::Dimension(format!(
            "Sylvester constant is {}x{}, expected {nq}x{np}",
            c.nrows(),
            c.ncols()
        )));
    }
    ensure_finite(p, "Sylvester P")?;
    ensure_finite(q, "Sylvester Q")?;
    ensure_finite(c, "Sylvester C")?;
    let lhs = kron(&p.transpose(), &DenseMatrix::identity(nq, nq))
        - kron(&DenseMatrix::identity(np, np), q);
    let rhs = DenseMatrix::from_column_slice(nq * np, 1, c.as_slice());
    let x = solve_dense(&lhs, &rhs).map_err(|e| match e {
        Error::Singular => Error::SpectraOverlap,
        other => other,
    })?;
    Ok(DenseMatrix::from_column_slice(nq, np, x.as_slice()))
}

/// Solves `a X = b` by partial-pivot LU, rejecting numerically singular `a`.
pub fn solve_dense(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let n = ensure_square(a)?;
    if b.nrows() != n {
        return Err(Error::Dimension(format!(
            "right-hand side has {} rows, expected {n}",
            b.nrows()
        )));
    }
    if n == 0 {
        return Ok(b.clone());
    }
    let lu = a.clone().lu();
    let u = lu.u();
    let diag = u.diagonal();
    let max_pivot = diag.amax();
    let min_pivot = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if max_pivot == 0.0 || min_pivot <= SINGULAR_RTOL * max_pivot {
        return Err(Error::Singular);
    }
    lu.solve(b).ok_or(Error::Singular)
}

/// Matrix exponential. Thin wrapper over nalgebra's Padé scaling-and-squaring
/// that validates input and output.
pub fn expm(m: &DenseMatrix) -> Result<DenseMatrix> {
    ensure_square(m)?;
    ensure_finite(m, "expm input")?;
    let e = m.clone().exp();
    ensure_finite(&e, "expm output")?;
    Ok(e)
}

/// Zero-order-hold discretization of `x' = A_c x + B_c u` with sample time `ts`.
pub fn zoh_discretize(
    a_c: &DenseMatrix,
    b_c: &DenseMatrix,
    ts: f64,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let n = ensure_square(a_c)?;
    if b_c.nrows() != n {
        return Err(Error::Dimension(format!(
            "B has {} rows, expected {n}",
            b_c.nrows()
        )));
    }
    if !(ts > 0.0) || !ts.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sampling time must be positive, got {ts}"
        )));
    }
    let m = b_c.ncols();
    let mut block = DenseMatrix::zeros(n + m, n + m);
    block.view_mut((0, 0), (n, n)).copy_from(a_c);
    block.view_mut((0, n), (n, m)).copy_from(b_c);
    let e = expm(&(block * ts))?;
    Ok((
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    ))
}

/// Frobenius norm.
pub fn fro(m: &DenseMatrix) -> f64 {
    m.norm()
}
