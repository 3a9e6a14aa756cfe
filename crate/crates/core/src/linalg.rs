//! Small dense linear-algebra helpers: cyclic Jacobi eigen-solver for
//! symmetric matrices, the induced 2-norm built on it, section bases and
//! central finite-difference Jacobians.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

/// Off-diagonal tolerance for the Jacobi sweeps, relative to the Frobenius norm.
pub const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns the eigenvalues (unsorted, in diagonal order) and the matrix whose
/// columns are the matching eigenvectors. Only the lower triangle is trusted;
/// the input is symmetrized first.
pub fn symmetric_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    assert!(a.is_square(), "symmetric_eigen needs a square matrix");
    let n = a.nrows();
    let mut m = (a + a.transpose()) * 0.5;
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = m.norm().max(f64::MIN_POSITIVE);

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off.sqrt() <= JACOBI_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    (m.diagonal(), v)
}

/// Induced 2-norm (largest singular value), from the largest eigenvalue of `AᵀA`.
pub fn induced_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let ata = a.transpose() * a;
    let (eig, _) = symmetric_eigen(&ata);
    eig.iter().cloned().fold(0.0_f64, f64::max).sqrt()
}

/// Orthonormal basis of the complement of `normal`, by Gram–Schmidt over the
/// canonical basis. Columns are ordered by the canonical vectors that survived.
pub fn orthonormal_complement(normal: &DVector<f64>) -> DMatrix<f64> {
    let n = normal.len();
    let mut basis: Vec<DVector<f64>> = vec![normal.normalize()];
    for i in 0..n {
        let mut v = DVector::<f64>::zeros(n);
        v[i] = 1.0;
        for b in &basis {
            let proj = b.dot(&v);
            v -= b * proj;
        }
        // second pass for numerical orthogonality
        for b in &basis {
            let proj = b.dot(&v);
            v -= b * proj;
        }
        let norm = v.norm();
        if norm > 1e-8 {
            basis.push(v / norm);
        }
        if basis.len() == n {
            break;
        }
    }
    DMatrix::from_columns(&basis[1..])
}

/// Central-difference Jacobian of `f` at `x`, using per-coordinate steps.
pub fn central_jacobian<F>(x: &DVector<f64>, steps: &[f64], mut f: F) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut cols = Vec::with_capacity(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let h = steps[i];
        xp[i] = x[i] + h;
        let fp = f(&xp)?;
        xp[i] = x[i] - h;
        let fm = f(&xp)?;
        xp[i] = x[i];
        cols.push((fp - fm) / (2.0 * h));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Magnitudes of the (possibly complex) eigenvalues of a square matrix,
/// sorted in decreasing order.
pub fn eigenvalue_magnitudes(a: &DMatrix<f64>) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut mags: Vec<f64> = a
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    mags
}
