//! Dense complex linear algebra over labeled multi-register Hilbert spaces.

mod density;
mod eig;
mod layout;
mod local;
pub mod random;
mod spectral;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub use density::{purify, reduce_pure, tensor_product, trace_distance, DensityMatrix};
pub(crate) use density::trace_norm_half;
pub use eig::{hermitian_eig, hermiticity_residual, max_abs, HermitianEigenDecomposition};
pub use layout::{dim_cap, SystemLayout, DEFAULT_DIM_CAP};
pub use local::{apply_left, apply_to_vector, embed_operator, reduce_vector};
pub use spectral::{matrix_apply_spectral, NullPolicy, CLAMP_TOL, SUPPORT_TOL};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub fn c64(re: f64, im: f64) -> C64 {
    Complex64::new(re, im)
}

/// Computational basis vector `|index>` of dimension `dim`.
pub fn basis_vector(dim: usize, index: usize) -> CVector {
    let mut v = CVector::zeros(dim);
    v[index] = c64(1.0, 0.0);
    v
}

pub fn outer(a: &CVector, b: &CVector) -> CMatrix {
    a * b.adjoint()
}

/// Kronecker product with the first operand as the most significant factor.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub fn kron_vec(a: &CVector, b: &CVector) -> CVector {
    let mut out = CVector::zeros(a.len() * b.len());
    for i in 0..a.len() {
        for j in 0..b.len() {
            out[i * b.len() + j] = a[i] * b[j];
        }
    }
    out
}

pub fn hadamard() -> CMatrix {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    DMatrix::from_row_slice(2, 2, &[c64(r, 0.0), c64(r, 0.0), c64(r, 0.0), c64(-r, 0.0)])
}

pub fn pauli_x() -> CMatrix {
    DMatrix::from_row_slice(2, 2, &[c64(0.0, 0.0), c64(1.0, 0.0), c64(1.0, 0.0), c64(0.0, 0.0)])
}

/// Permutation matrix sending `|j>` to `|perm[j]>`.
pub fn permutation_matrix(perm: &[usize]) -> CMatrix {
    let n = perm.len();
    let mut m = CMatrix::zeros(n, n);
    for (j, &i) in perm.iter().enumerate() {
        m[(i, j)] = c64(1.0, 0.0);
    }
    m
}

/// Normalized Walsh-Hadamard matrix on `2^bits` dimensions.
pub fn walsh_hadamard(bits: usize) -> CMatrix {
    let n = 1usize << bits;
    let s = 1.0 / (n as f64).sqrt();
    DMatrix::from_fn(n, n, |i, j| {
        if (i & j).count_ones() % 2 == 0 {
            c64(s, 0.0)
        } else {
            c64(-s, 0.0)
        }
    })
}
