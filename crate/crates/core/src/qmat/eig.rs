//! Cyclic Jacobi eigensolver for complex Hermitian matrices.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{QcmiError, Result};

use super::CMatrix;

pub const HERMITIAN_TOL: f64 = 1e-10;
const OFF_DIAGONAL_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

#[derive(Clone, Debug)]
pub struct HermitianEigenDecomposition {
    /// Sorted descending.
    pub eigenvalues: Vec<f64>,
    /// Column `k` is the eigenvector of `eigenvalues[k]`.
    pub eigenvectors: CMatrix,
}

impl HermitianEigenDecomposition {
    pub fn reconstruct(&self) -> CMatrix {
        let n = self.eigenvalues.len();
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for k in 0..n {
            let lam = Complex64::new(self.eigenvalues[k], 0.0);
            for r in 0..n {
                scaled[(r, k)] *= lam;
            }
        }
        &scaled * v.adjoint()
    }
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn hermiticity_residual(m: &CMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    max_abs(&(m - m.adjoint()))
}

pub fn hermitian_eig(m: &CMatrix) -> Result<HermitianEigenDecomposition> {
    if !m.is_square() {
        return Err(QcmiError::Validation("eigendecomposition of non-square matrix".into()));
    }
    let res = hermiticity_residual(m);
    if res > HERMITIAN_TOL {
        return Err(QcmiError::Validation(format!(
            "matrix is not Hermitian (residual {res:e})"
        )));
    }
    let n = m.nrows();
    // symmetrize away round-off before rotating
    let mut a: CMatrix = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let mut v: CMatrix = DMatrix::identity(n, n);
    let scale = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(1.0);

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| a[(p, q)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= OFF_DIAGONAL_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let mag = apq.norm();
                if mag <= f64::MIN_POSITIVE {
                    continue;
                }
                rotate(&mut a, &mut v, p, q, apq, mag);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|k| a[(k, k)].re).collect();
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).unwrap_or(std::cmp::Ordering::Equal));
    let eigenvalues = order.iter().map(|&k| diag[k]).collect();
    let eigenvectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(HermitianEigenDecomposition { eigenvalues, eigenvectors })
}

/// One Jacobi rotation zeroing `a[p][q]`: a phase on column `q` makes the
/// pivot real, then a real Givens rotation annihilates it.
fn rotate(a: &mut CMatrix, v: &mut CMatrix, p: usize, q: usize, apq: Complex64, mag: f64) {
    let n = a.nrows();
    let phase = apq / mag; // e^{i phi}
    let app = a[(p, p)].re;
    let aqq = a[(q, q)].re;
    let theta = (aqq - app) / (2.0 * mag);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let t = if theta == 0.0 { 1.0 } else { t };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let e = phase.conj();
    // J = [[jpp, jpq], [jqp, jqq]] acting on (p, q)
    let jpp = Complex64::new(c, 0.0);
    let jpq = Complex64::new(s, 0.0);
    let jqp = -e * s;
    let jqq = e * c;

    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = akp * jpp + akq * jqp;
        a[(k, q)] = akp * jpq + akq * jqq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = jpp.conj() * apk + jqp.conj() * aqk;
        a[(q, k)] = jpq.conj() * apk + jqq.conj() * aqk;
    }
    a[(p, q)] = Complex64::new(0.0, 0.0);
    a[(q, p)] = Complex64::new(0.0, 0.0);
    a[(p, p)] = Complex64::new(a[(p, p)].re, 0.0);
    a[(q, q)] = Complex64::new(a[(q, q)].re, 0.0);
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = vkp * jpp + vkq * jqp;
        v[(k, q)] = vkp * jpq + vkq * jqq;
    }
}
