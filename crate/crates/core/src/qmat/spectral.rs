use crate::error::{QcmiError, Result};

use super::{c64, hermitian_eig, CMatrix, C64};

/// Eigenvalues in `[-CLAMP_TOL, 0)` are treated as round-off and clamped to 0.
pub const CLAMP_TOL: f64 = 1e-9;
/// Eigenvalues at or below this are outside the support.
pub const SUPPORT_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NullPolicy {
    /// Apply `f` on the support only; the kernel maps to 0.
    Project,
    /// Fail if `f` is not finite at a kernel eigenvalue.
    Error,
}

/// `V f(Λ) V†` for a positive semidefinite `m`.
pub fn matrix_apply_spectral(
    m: &CMatrix,
    f: impl Fn(f64) -> C64,
    null_policy: NullPolicy,
) -> Result<CMatrix> {
    let eig = hermitian_eig(m)?;
    let n = eig.eigenvalues.len();
    let mut scaled = eig.eigenvectors.clone();
    for k in 0..n {
        let mut lam = eig.eigenvalues[k];
        if lam < -CLAMP_TOL {
            return Err(QcmiError::Validation(format!(
                "negative eigenvalue {lam:e} beyond clamp tolerance"
            )));
        }
        if lam < 0.0 {
            lam = 0.0;
        }
        let val = if lam <= SUPPORT_TOL {
            match null_policy {
                NullPolicy::Project => c64(0.0, 0.0),
                NullPolicy::Error => {
                    let v = f(lam);
                    if !v.re.is_finite() || !v.im.is_finite() {
                        return Err(QcmiError::Singularity(format!(
                            "function undefined at kernel eigenvalue {lam:e}"
                        )));
                    }
                    v
                }
            }
        } else {
            f(lam)
        };
        for r in 0..n {
            scaled[(r, k)] *= val;
        }
    }
    Ok(&scaled * eig.eigenvectors.adjoint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmat::max_abs;
    use nalgebra::DMatrix;

    fn diag(v: &[f64]) -> CMatrix {
        DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            v.len(),
            v.iter().map(|&x| c64(x, 0.0)),
        ))
    }

    #[test]
    fn sqrt_of_diagonal() {
        let r = matrix_apply_spectral(&diag(&[4.0, 9.0]), |x| c64(x.sqrt(), 0.0), NullPolicy::Project)
            .unwrap();
        assert!(max_abs(&(r - diag(&[2.0, 3.0]))) < 1e-12);
    }

    #[test]
    fn inverse_sqrt_projects_kernel() {
        let r = matrix_apply_spectral(&diag(&[1.0, 0.0]), |x| c64(x.powf(-0.5), 0.0), NullPolicy::Project)
            .unwrap();
        assert!(max_abs(&(r - diag(&[1.0, 0.0]))) < 1e-12);
    }

    #[test]
    fn inverse_sqrt_errors_without_projection() {
        let r = matrix_apply_spectral(&diag(&[1.0, 0.0]), |x| c64(x.powf(-0.5), 0.0), NullPolicy::Error);
        assert!(matches!(r, Err(QcmiError::Singularity(_))));
    }

    #[test]
    fn imaginary_power_at_zero_is_support_projector() {
        let t = 0.0;
        let r = matrix_apply_spectral(
            &diag(&[0.7, 0.3, 0.0]),
            |x| (c64(0.0, t) * x.ln()).exp(),
            NullPolicy::Project,
        )
        .unwrap();
        assert!(max_abs(&(r - diag(&[1.0, 1.0, 0.0]))) < 1e-12);
    }

    #[test]
    fn identity_function_returns_input() {
        let m = diag(&[0.5, 0.5, 0.0]);
        let r = matrix_apply_spectral(&m, |x| c64(x, 0.0), NullPolicy::Project).unwrap();
        assert!(max_abs(&(r - m)) < 1e-12);
    }

    #[test]
    fn negative_eigenvalue_rejected() {
        assert!(matrix_apply_spectral(&diag(&[1.0, -1e-6]), |x| c64(x, 0.0), NullPolicy::Project).is_err());
        assert!(matrix_apply_spectral(&diag(&[1.0, -1e-11]), |x| c64(x, 0.0), NullPolicy::Project).is_ok());
    }
}
