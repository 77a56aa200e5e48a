//! Dense matrix helpers and the two structured solvers everything else rests on:
//! the discrete Lyapunov equation (doubling) and the discrete algebraic Riccati
//! equation (value iteration on the Riccati recursion).

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Iteration cap for the Schur decomposition behind [`spectral_radius`].
const SCHUR_MAX_ITER: usize = 10_000;

/// Doubling terminates in O(log) steps; 200 doublings covers any radius
/// distinguishable from 1 in f64.
const LYAPUNOV_MAX_DOUBLINGS: usize = 200;

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn is_square(m: &Mat) -> bool {
    m.nrows() == m.ncols()
}

pub fn all_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn is_symmetric(m: &Mat, tol: f64) -> bool {
    if !is_square(m) {
        return false;
    }
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= tol * scale
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn symmetric_eigenvalues(m: &Mat) -> Vector {
    let mut ev = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    ev.as_mut_slice().sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eigenvalue(m: &Mat) -> f64 {
    symmetric_eigenvalues(m)[0]
}

pub fn max_eigenvalue(m: &Mat) -> f64 {
    let ev = symmetric_eigenvalues(m);
    ev[ev.len() - 1]
}

/// Positive semi-definite up to a tolerance relative to the largest entry.
pub fn is_psd(m: &Mat, tol: f64) -> bool {
    is_symmetric(m, 1e-9) && min_eigenvalue(m) >= -tol * m.amax().max(1.0)
}

pub fn is_pd(m: &Mat) -> bool {
    is_symmetric(m, 1e-9) && min_eigenvalue(m) > 0.0
}

/// Largest singular value.
pub fn spectral_norm(m: &Mat) -> f64 {
    m.singular_values().max()
}

/// Symmetric PSD square root factor `L` with `L Lᵀ = m`. Works for singular `m`.
pub fn psd_factor(m: &Mat) -> Mat {
    let eig = SymmetricEigen::new(symmetrize(m));
    let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * Mat::from_diagonal(&sqrt)
}

/// Max modulus over the eigenvalues of a square matrix.
pub fn spectral_radius(m: &Mat) -> Result<f64> {
    if !is_square(m) {
        return Err(Error::dim(
            "spectral_radius",
            "square matrix",
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    if !all_finite(m) {
        return Err(Error::Numerical("spectral_radius: non-finite entry".into()));
    }
    if m.nrows() == 1 {
        return Ok(m[(0, 0)].abs());
    }
    let schur =
        Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITER).ok_or(Error::NonConvergence {
            what: "Schur eigenvalue iteration",
            iterations: SCHUR_MAX_ITER,
            residual: f64::NAN,
        })?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Solves `Σ = W + A Σ Aᵀ` for stable `A` by doubling:
/// `Σ ← Σ + M Σ Mᵀ`, `M ← M²`, starting from `Σ = W`, `M = A`.
pub fn solve_discrete_lyapunov(acl: &Mat, rhs: &Mat) -> Result<Mat> {
    let n = acl.nrows();
    if !is_square(acl) {
        return Err(Error::dim(
            "solve_discrete_lyapunov (A)",
            "square matrix",
            format!("{}x{}", acl.nrows(), acl.ncols()),
        ));
    }
    if rhs.nrows() != n || rhs.ncols() != n {
        return Err(Error::dim(
            "solve_discrete_lyapunov (W)",
            format!("{n}x{n}"),
            format!("{}x{}", rhs.nrows(), rhs.ncols()),
        ));
    }
    let radius = spectral_radius(acl)?;
    if radius >= 1.0 {
        return Err(Error::Unstable { radius });
    }

    let mut sigma = symmetrize(rhs);
    let mut m = acl.clone();
    for _ in 0..LYAPUNOV_MAX_DOUBLINGS {
        let increment = &m * &sigma * m.transpose();
        let inc_norm = increment.norm();
        sigma += increment;
        if inc_norm <= 1e-14 * sigma.norm().max(1.0) {
            return Ok(symmetrize(&sigma));
        }
        m = &m * &m;
    }
    Err(Error::NonConvergence {
        what: "Lyapunov doubling",
        iterations: LYAPUNOV_MAX_DOUBLINGS,
        residual: lyapunov_residual(acl, rhs, &sigma),
    })
}

/// `‖Σ − W − A Σ Aᵀ‖_F`.
pub fn lyapunov_residual(acl: &Mat, rhs: &Mat, sigma: &Mat) -> f64 {
    (sigma - rhs - acl * sigma * acl.transpose()).norm()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DareOptions {
    /// Stop when the Frobenius change between iterates is at most `tol · max(1, ‖P‖_F)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DareOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100_000,
        }
    }
}

/// Riccati-recursion value iteration for
/// `P = Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA`, initialized at `P = Q`.
pub fn solve_dare(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<Mat> {
    solve_dare_with(a, b, q, r, DareOptions::default())
}

pub fn solve_dare_with(a: &Mat, b: &Mat, q: &Mat, r: &Mat, opts: DareOptions) -> Result<Mat> {
    let n = a.nrows();
    let m = b.ncols();
    if !is_square(a) {
        return Err(Error::dim(
            "solve_dare (A)",
            "square",
            format!("{}x{}", a.nrows(), a.ncols()),
        ));
    }
    if b.nrows() != n {
        return Err(Error::dim("solve_dare (B)", format!("{n} rows"), b.nrows()));
    }
    if q.shape() != (n, n) {
        return Err(Error::dim(
            "solve_dare (Q)",
            format!("{n}x{n}"),
            format!("{:?}", q.shape()),
        ));
    }
    if r.shape() != (m, m) {
        return Err(Error::dim(
            "solve_dare (R)",
            format!("{m}x{m}"),
            format!("{:?}", r.shape()),
        ));
    }
    if !is_pd(r) {
        return Err(Error::Definiteness {
            what: "R",
            required: "symmetric positive definite",
        });
    }

    let at = a.transpose();
    let bt = b.transpose();
    let mut p = symmetrize(q);
    let mut change = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let next = riccati_step(&p, a, &at, b, &bt, q, r)?;
        change = (&next - &p).norm();
        p = next;
        if !p.iter().all(|v| v.is_finite()) {
            break;
        }
        if change <= opts.tol * p.norm().max(1.0) {
            let k = riccati_gain(&p, a, b, r)?;
            let radius = spectral_radius(&(a - b * k))?;
            if radius >= 1.0 {
                return Err(Error::Unstable { radius });
            }
            return Ok(p);
        }
    }
    Err(Error::NonConvergence {
        what: "Riccati value iteration",
        iterations: opts.max_iter,
        residual: change,
    })
}

fn riccati_step(p: &Mat, a: &Mat, at: &Mat, b: &Mat, bt: &Mat, q: &Mat, r: &Mat) -> Result<Mat> {
    let pa = p * a;
    let btpa = bt * &pa;
    let gram = r + bt * p * b;
    let solved = gram
        .cholesky()
        .ok_or(Error::Definiteness {
            what: "R + BᵀPB",
            required: "positive definite",
        })?
        .solve(&btpa);
    let next = q + at * &pa - btpa.transpose() * solved;
    Ok(symmetrize(&next))
}

/// `K = (R + BᵀPB)⁻¹ BᵀPA`.
pub fn riccati_gain(p: &Mat, a: &Mat, b: &Mat, r: &Mat) -> Result<Mat> {
    let bt = b.transpose();
    let gram = r + &bt * p * b;
    Ok(gram
        .cholesky()
        .ok_or(Error::Definiteness {
            what: "R + BᵀPB",
            required: "positive definite",
        })?
        .solve(&(bt * p * a)))
}

/// Relative residual `‖P − Q − AᵀPA + AᵀPB(R+BᵀPB)⁻¹BᵀPA‖_F / max(1, ‖P‖_F)`.
pub fn dare_residual(a: &Mat, b: &Mat, q: &Mat, r: &Mat, p: &Mat) -> f64 {
    match riccati_step(p, a, &a.transpose(), b, &b.transpose(), q, r) {
        Ok(next) => (p - next).norm() / p.norm().max(1.0),
        Err(_) => f64::INFINITY,
    }
}

/// Solves a square linear system via LU.
pub fn solve(a: &Mat, rhs: &Mat) -> Result<Mat> {
    a.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::Numerical("singular linear system".into()))
}

pub fn inverse(a: &Mat) -> Result<Mat> {
    a.clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("matrix is singular".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_radius_is_one() {
        for n in 1..5 {
            assert_relative_eq!(
                spectral_radius(&Mat::identity(n, n)).unwrap(),
                1.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn radius_of_rotation_is_modulus() {
        let m = Mat::from_row_slice(2, 2, &[0.0, -0.8, 0.8, 0.0]);
        assert_relative_eq!(spectral_radius(&m).unwrap(), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn radius_rejects_non_square() {
        let err = spectral_radius(&Mat::zeros(2, 3)).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn lyapunov_zero_dynamics_returns_rhs() {
        let w = Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let sigma = solve_discrete_lyapunov(&Mat::zeros(2, 2), &w).unwrap();
        assert_relative_eq!(sigma, w, epsilon = 1e-15);
    }

    #[test]
    fn lyapunov_scalar_half() {
        let sigma =
            solve_discrete_lyapunov(&Mat::from_element(1, 1, 0.5), &Mat::identity(1, 1)).unwrap();
        assert_relative_eq!(sigma[(0, 0)], 4.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        let err = solve_discrete_lyapunov(&Mat::from_element(1, 1, 1.0), &Mat::identity(1, 1))
            .unwrap_err();
        assert!(matches!(err, Error::Unstable { .. }));
    }

    #[test]
    fn lyapunov_rejects_mismatch() {
        let err = solve_discrete_lyapunov(&Mat::zeros(2, 2), &Mat::identity(3, 3)).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn dare_without_dynamics_is_q() {
        let q = Mat::from_diagonal(&Vector::from_vec(vec![1.0, 2.0]));
        let p = solve_dare(
            &Mat::zeros(2, 2),
            &Mat::identity(2, 2),
            &q,
            &Mat::identity(2, 2),
        )
        .unwrap();
        assert_relative_eq!(p, q, epsilon = 1e-15);
    }

    #[test]
    fn dare_scalar_golden_ratio() {
        let one = Mat::identity(1, 1);
        let p = solve_dare(&one, &one, &one, &one).unwrap();
        // p² = 1 + p
        assert_relative_eq!(p[(0, 0)], (1.0 + 5f64.sqrt()) / 2.0, epsilon = 1e-10);
    }

    #[test]
    fn dare_rejects_indefinite_r() {
        let one = Mat::identity(1, 1);
        let err = solve_dare(&one, &one, &one, &(-one.clone())).unwrap_err();
        assert!(matches!(err, Error::Definiteness { .. }));
    }

    #[test]
    fn dare_reports_non_convergence() {
        // Uncontrollable unstable mode: the recursion grows without bound.
        let a = Mat::from_element(1, 1, 2.0);
        let b = Mat::zeros(1, 1);
        let one = Mat::identity(1, 1);
        let opts = DareOptions {
            tol: 1e-12,
            max_iter: 50,
        };
        assert!(solve_dare_with(&a, &b, &one, &one, opts).is_err());
    }

    #[test]
    fn psd_factor_reconstructs_singular() {
        let v = Vector::from_vec(vec![1.0, 2.0, -1.0]);
        let m = &v * v.transpose();
        let l = psd_factor(&m);
        assert_relative_eq!(&l * l.transpose(), m, epsilon = 1e-12);
    }
}
