//! Small dense Hermitian helpers shared by the estimation and combining
//! stages: regularized solves, PSD repair, covariance square roots.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Ridge factor applied when a Hermitian solve needs regularization,
/// relative to the mean diagonal magnitude.
pub const RIDGE_REL: f64 = 1e-12;

/// Force exact Hermitian symmetry: `(a + a^H) / 2`.
pub fn hermitize(a: &CMatrix) -> CMatrix {
    let n = a.nrows();
    let mut out = a.clone();
    for i in 0..n {
        out[(i, i)] = Complex64::new(a[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let v = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
            out[(i, j)] = v;
            out[(j, i)] = v.conj();
        }
    }
    out
}

/// Solve `a x = b` for Hermitian positive definite `a` via Cholesky.
///
/// If the factorization fails (semidefinite or slightly indefinite input),
/// retries once with a ridge of `RIDGE_REL * tr(a)/n` on the diagonal and
/// logs the repair.
pub fn solve_hpd(a: &CMatrix, b: &CVector) -> Result<CVector> {
    let n = a.nrows();
    debug_assert_eq!(n, b.len());
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    let ridge = RIDGE_REL * a.trace().re.abs().max(f64::MIN_POSITIVE) / n as f64;
    log::debug!("HPD solve needed ridge {ridge:.3e} (n = {n})");
    let mut reg = a.clone();
    for i in 0..n {
        reg[(i, i)] += Complex64::new(ridge, 0.0);
    }
    reg.cholesky()
        .map(|c| c.solve(b))
        .ok_or_else(|| Error::Numerical(format!("Hermitian solve failed even with ridge {ridge:.3e}")))
}

/// Matrix-RHS variant of [`solve_hpd`]: solve `a X = B` column-wise with
/// the same ridge fallback.
pub fn solve_hpd_mat(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let n = a.nrows();
    debug_assert_eq!(n, b.nrows());
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    let ridge = RIDGE_REL * a.trace().re.abs().max(f64::MIN_POSITIVE) / n as f64;
    log::debug!("HPD matrix solve needed ridge {ridge:.3e} (n = {n})");
    let mut reg = a.clone();
    for i in 0..n {
        reg[(i, i)] += Complex64::new(ridge, 0.0);
    }
    reg.cholesky()
        .map(|c| c.solve(b))
        .ok_or_else(|| Error::Numerical(format!("Hermitian solve failed even with ridge {ridge:.3e}")))
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(a: &CMatrix) -> Vec<f64> {
    let sym = nalgebra::SymmetricEigen::new(hermitize(a));
    let mut ev: Vec<f64> = sym.eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

/// Clip negative eigenvalues of a Hermitian matrix to zero.
///
/// Returns the repaired matrix and the most negative eigenvalue found
/// (`0.0` when no repair was needed).
pub fn clip_psd(a: &CMatrix) -> (CMatrix, f64) {
    let sym = nalgebra::SymmetricEigen::new(hermitize(a));
    let min_ev = sym.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min_ev >= 0.0 {
        return (hermitize(a), 0.0);
    }
    let n = a.nrows();
    let mut scaled = sym.eigenvectors.clone();
    for j in 0..n {
        let ev = sym.eigenvalues[j].max(0.0);
        for i in 0..n {
            scaled[(i, j)] *= Complex64::new(ev, 0.0);
        }
    }
    (hermitize(&(scaled * sym.eigenvectors.adjoint())), min_ev)
}

/// A factor `F` with `F F^H = a`, for drawing correlated Gaussian vectors.
///
/// Cholesky when `a` is positive definite; otherwise an eigendecomposition
/// with negative eigenvalues clipped at zero.
pub fn covariance_factor(a: &CMatrix) -> CMatrix {
    if let Some(chol) = hermitize(a).cholesky() {
        return chol.l();
    }
    let sym = nalgebra::SymmetricEigen::new(hermitize(a));
    let n = a.nrows();
    let mut f = sym.eigenvectors;
    for j in 0..n {
        let s = sym.eigenvalues[j].max(0.0).sqrt();
        for i in 0..n {
            f[(i, j)] *= Complex64::new(s, 0.0);
        }
    }
    f
}

/// Draw a standard circularly-symmetric complex Gaussian vector:
/// independent entries with unit variance (1/2 per real dimension).
pub fn standard_complex_gaussian<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CVector {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    CVector::from_fn(n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re * scale, im * scale)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy_hpd(n: usize) -> CMatrix {
        // diagonally dominant Hermitian
        let mut a = CMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = Complex64::new(2.0 + i as f64, 0.0);
            for j in (i + 1)..n {
                let v = Complex64::new(0.1 / (1.0 + (i + j) as f64), 0.05);
                a[(i, j)] = v;
                a[(j, i)] = v.conj();
            }
        }
        a
    }

    #[test]
    fn hpd_solve_matches_direct() {
        let a = toy_hpd(5);
        let x = CVector::from_fn(5, |i, _| Complex64::new(i as f64 + 1.0, -0.5));
        let b = &a * &x;
        let got = solve_hpd(&a, &b).unwrap();
        for i in 0..5 {
            assert_relative_eq!(got[i].re, x[i].re, max_relative = 1e-10);
            assert_relative_eq!(got[i].im, x[i].im, max_relative = 1e-10);
        }
    }

    #[test]
    fn singular_solve_uses_ridge() {
        // rank-1, exactly singular
        let v = CVector::from_fn(3, |i, _| Complex64::new(1.0, i as f64));
        let a = &v * v.adjoint();
        let b = v.clone();
        let got = solve_hpd(&a, &b).unwrap();
        assert!(got.iter().all(|z| z.norm().is_finite()));
    }

    #[test]
    fn clip_psd_repairs_negative_eigenvalue() {
        let mut a = toy_hpd(4);
        a[(0, 0)] = Complex64::new(-0.5, 0.0);
        let (fixed, min_ev) = clip_psd(&a);
        assert!(min_ev < 0.0);
        let ev = hermitian_eigenvalues(&fixed);
        assert!(ev[0] >= -1e-12);
    }

    #[test]
    fn covariance_factor_reproduces_matrix() {
        let a = toy_hpd(4);
        let f = covariance_factor(&a);
        let back = &f * f.adjoint();
        for i in 0..4 {
            for j in 0..4 {
                assert_relative_eq!(back[(i, j)].re, a[(i, j)].re, epsilon = 1e-10);
                assert_relative_eq!(back[(i, j)].im, a[(i, j)].im, epsilon = 1e-10);
            }
        }
    }
}
