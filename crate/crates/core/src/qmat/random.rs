//! Seeded generators for random states, unitaries and Hermitian matrices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Exp1, StandardNormal};

use super::{c64, CMatrix, CVector, DensityMatrix, SystemLayout};

/// Generator for run `index` under `seed`: one ChaCha stream per index, so
/// runs are independent of evaluation order.
pub fn child_rng(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn ginibre<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| c64(standard_normal(rng), standard_normal(rng)))
}

pub fn random_hermitian<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMatrix {
    let g = ginibre(n, n, rng);
    (&g + g.adjoint()) * c64(0.5, 0.0)
}

pub fn random_pure_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CVector {
    let v = CVector::from_fn(n, |_, _| c64(standard_normal(rng), standard_normal(rng)));
    let norm = v.norm();
    v / c64(norm, 0.0)
}

/// Haar-random unitary: QR of a Ginibre matrix with the phases of `R`'s
/// diagonal moved into `Q`.
pub fn random_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMatrix {
    let (mut q, r) = ginibre(n, n, rng).qr().unpack();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { c64(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Random density matrix of the given rank (Ginibre ensemble).
pub fn random_density<R: Rng + ?Sized>(layout: &SystemLayout, rank: usize, rng: &mut R) -> DensityMatrix {
    let n = layout.total_dim();
    let g = ginibre(n, rank.max(1), rng);
    let m = &g * g.adjoint();
    let tr = m.trace().re;
    DensityMatrix::from_matrix_unchecked(layout.clone(), m / c64(tr, 0.0))
}

/// Random diagonal (classical) density matrix.
pub fn random_classical<R: Rng + ?Sized>(layout: &SystemLayout, rng: &mut R) -> DensityMatrix {
    let n = layout.total_dim();
    let w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    let s: f64 = w.iter().sum();
    let mut m = CMatrix::zeros(n, n);
    for (i, x) in w.iter().enumerate() {
        m[(i, i)] = c64(x / s, 0.0);
    }
    DensityMatrix::from_matrix_unchecked(layout.clone(), m)
}

pub fn random_probability_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    // normalized exponentials: uniform on the simplex
    let w: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmat::max_abs;

    #[test]
    fn child_streams_differ_and_repeat() {
        let a: u64 = child_rng(7, 0).gen();
        let b: u64 = child_rng(7, 1).gen();
        assert_ne!(a, b);
        assert_eq!(a, child_rng(7, 0).gen::<u64>());
    }

    #[test]
    fn unitary_is_unitary() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for n in [1, 2, 5, 8] {
            let u = random_unitary(n, &mut rng);
            assert!(max_abs(&(u.adjoint() * &u - CMatrix::identity(n, n))) < 1e-12);
        }
    }

    #[test]
    fn probability_vector_is_normalized() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let p = random_probability_vector(7, &mut rng);
        assert!(p.iter().all(|&x| x > 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pure_vector_has_unit_norm() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        assert!((random_pure_vector(6, &mut rng).norm() - 1.0).abs() < 1e-12);
    }
}
