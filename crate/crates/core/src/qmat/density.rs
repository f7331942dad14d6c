use serde::{Serialize, Serializer};

use crate::error::{QcmiError, Result};

use super::eig::{hermitian_eig, hermiticity_residual, HERMITIAN_TOL};
use super::local::{apply_left, reduce_vector};
use super::spectral::CLAMP_TOL;
use super::{c64, outer, CMatrix, CVector, SystemLayout};

pub const TRACE_TOL: f64 = 1e-9;

/// Positive semidefinite, unit-trace operator on a labeled layout.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    layout: SystemLayout,
    mat: CMatrix,
}

impl DensityMatrix {
    /// Validating constructor: Hermitian, unit trace and no eigenvalue below
    /// the clamp tolerance.
    pub fn new(layout: SystemLayout, mat: CMatrix) -> Result<Self> {
        let n = layout.total_dim();
        if mat.nrows() != n || mat.ncols() != n {
            return Err(QcmiError::Layout(format!(
                "matrix is {}x{}, layout {layout} needs {n}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        let res = hermiticity_residual(&mat);
        if res > HERMITIAN_TOL {
            return Err(QcmiError::Validation(format!("not Hermitian (residual {res:e})")));
        }
        let tr = mat.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(QcmiError::Validation(format!("trace {tr} is not 1")));
        }
        let eig = hermitian_eig(&mat)?;
        if let Some(&min) = eig.eigenvalues.last() {
            if min < -CLAMP_TOL {
                return Err(QcmiError::Validation(format!("negative eigenvalue {min:e}")));
            }
        }
        Ok(Self { layout, mat })
    }

    /// Wraps a matrix the caller already knows to be a valid state.
    pub fn from_matrix_unchecked(layout: SystemLayout, mat: CMatrix) -> Self {
        debug_assert_eq!(mat.nrows(), layout.total_dim());
        Self { layout, mat }
    }

    pub fn pure(layout: SystemLayout, v: &CVector) -> Result<Self> {
        if v.len() != layout.total_dim() {
            return Err(QcmiError::Layout(format!(
                "vector of length {} on layout {layout}",
                v.len()
            )));
        }
        let norm = v.norm();
        if (norm - 1.0).abs() > TRACE_TOL {
            return Err(QcmiError::Validation(format!("vector norm {norm} is not 1")));
        }
        Ok(Self { layout, mat: outer(v, v) })
    }

    /// Computational basis state with one digit per factor.
    pub fn basis(layout: SystemLayout, digits: &[usize]) -> Result<Self> {
        if digits.len() != layout.len() || digits.iter().zip(layout.dims()).any(|(&g, d)| g >= d) {
            return Err(QcmiError::Layout("basis digits do not match layout".into()));
        }
        let n = layout.total_dim();
        let mut mat = CMatrix::zeros(n, n);
        let i = layout.index_of(digits);
        mat[(i, i)] = c64(1.0, 0.0);
        Ok(Self { layout, mat })
    }

    pub fn maximally_mixed(layout: SystemLayout) -> Self {
        let n = layout.total_dim();
        let mat = CMatrix::identity(n, n) * c64(1.0 / n as f64, 0.0);
        Self { layout, mat }
    }

    /// Diagonal state from a probability vector over the layout's basis.
    pub fn classical(layout: SystemLayout, probs: &[f64]) -> Result<Self> {
        let n = layout.total_dim();
        if probs.len() != n {
            return Err(QcmiError::Layout("probability vector length mismatch".into()));
        }
        let mut mat = CMatrix::zeros(n, n);
        for (i, &p) in probs.iter().enumerate() {
            mat[(i, i)] = c64(p, 0.0);
        }
        Self::new(layout, mat)
    }

    pub fn layout(&self) -> &SystemLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.mat.trace().re
    }

    /// Eigenvalues, descending, with round-off negatives clamped to 0.
    pub fn spectrum(&self) -> Result<Vec<f64>> {
        let eig = hermitian_eig(&self.mat)?;
        eig.eigenvalues
            .into_iter()
            .map(|l| {
                if l < -CLAMP_TOL {
                    Err(QcmiError::Validation(format!("negative eigenvalue {l:e}")))
                } else {
                    Ok(l.max(0.0))
                }
            })
            .collect()
    }

    /// Reduced state on `keep`, in layout order.
    pub fn partial_trace(&self, keep: &[&str]) -> Result<DensityMatrix> {
        let kept = self.layout.select(keep)?;
        let ordered: Vec<&str> = kept.labels().collect();
        let (offs, bases) = self.layout.split_offsets(&ordered)?;
        let k = offs.len();
        let mut out = CMatrix::zeros(k, k);
        for &b in &bases {
            for i in 0..k {
                for j in 0..k {
                    out[(i, j)] += self.mat[(b + offs[i], b + offs[j])];
                }
            }
        }
        Ok(Self { layout: kept, mat: out })
    }

    /// Traces out `labels`.
    pub fn trace_out(&self, labels: &[&str]) -> Result<DensityMatrix> {
        for l in labels {
            if !self.layout.contains(l) {
                return Err(QcmiError::Layout(format!("unknown label {l}")));
            }
        }
        let keep = self.layout.complement(labels);
        let keep: Vec<&str> = keep.iter().map(String::as_str).collect();
        self.partial_trace(&keep)
    }

    /// `U ρ U†` with `u` acting on `labels`.
    pub fn apply_unitary(&self, labels: &[&str], u: &CMatrix) -> Result<DensityMatrix> {
        self.conjugate(labels, u)
    }

    /// `K ρ K†` for an arbitrary operator `k` on `labels`; the result is not
    /// renormalized.
    pub fn conjugate(&self, labels: &[&str], k: &CMatrix) -> Result<DensityMatrix> {
        let left = apply_left(&self.layout, labels, k, &self.mat)?;
        let both = apply_left(&self.layout, labels, k, &left.adjoint())?.adjoint();
        Ok(Self { layout: self.layout.clone(), mat: both })
    }

    /// Same operator with the factors listed in `order`.
    pub fn reorder(&self, order: &[&str]) -> Result<DensityMatrix> {
        if order.len() != self.layout.len() {
            return Err(QcmiError::Layout("reorder must list every factor".into()));
        }
        let (offs, _) = self.layout.split_offsets(order)?;
        let new_layout = SystemLayout::new(
            order.iter().map(|l| (l.to_string(), self.layout.dim_of(l).unwrap_or(1))),
        )?;
        let n = offs.len();
        let mat = CMatrix::from_fn(n, n, |i, j| self.mat[(offs[i], offs[j])]);
        Ok(Self { layout: new_layout, mat })
    }

    /// Renames factors (same dims, same order).
    pub fn relabel(&self, labels: &[&str]) -> Result<DensityMatrix> {
        if labels.len() != self.layout.len() {
            return Err(QcmiError::Layout("relabel must name every factor".into()));
        }
        let layout = SystemLayout::new(labels.iter().zip(self.layout.dims()).map(|(l, d)| (l.to_string(), d)))?;
        Ok(Self { layout, mat: self.mat.clone() })
    }

    /// Completely dephases `label` in the computational basis.
    pub fn dephase(&self, label: &str) -> Result<DensityMatrix> {
        let pos = self
            .layout
            .position(label)
            .ok_or_else(|| QcmiError::Layout(format!("unknown label {label}")))?;
        let n = self.dim();
        let mut mat = self.mat.clone();
        for i in 0..n {
            let di = self.layout.digits(i)[pos];
            for j in 0..n {
                if self.layout.digits(j)[pos] != di {
                    mat[(i, j)] = c64(0.0, 0.0);
                }
            }
        }
        Ok(Self { layout: self.layout.clone(), mat })
    }

    /// Largest off-diagonal magnitude in the `label` register's basis.
    pub fn coherence_on(&self, label: &str) -> Result<f64> {
        let d = self.dephase(label)?;
        Ok(super::max_abs(&(&self.mat - d.mat)))
    }

    /// Convex combination `Σ w_k ρ_k` of states on one layout.
    pub fn mixture(parts: &[(f64, &DensityMatrix)]) -> Result<DensityMatrix> {
        let first = parts
            .first()
            .ok_or_else(|| QcmiError::Validation("empty mixture".into()))?
            .1;
        let mut mat = CMatrix::zeros(first.dim(), first.dim());
        for (w, rho) in parts {
            if rho.layout != first.layout {
                return Err(QcmiError::Layout("mixture of states on different layouts".into()));
            }
            mat += &rho.mat * c64(*w, 0.0);
        }
        Ok(Self { layout: first.layout.clone(), mat })
    }
}

impl Serialize for DensityMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let n = self.dim();
        let re: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| self.mat[(i, j)].re).collect()).collect();
        let im: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| self.mat[(i, j)].im).collect()).collect();
        let mut st = s.serialize_struct("DensityMatrix", 3)?;
        st.serialize_field("layout", &self.layout)?;
        st.serialize_field("re", &re)?;
        st.serialize_field("im", &im)?;
        st.end()
    }
}

pub fn tensor_product(a: &DensityMatrix, b: &DensityMatrix) -> Result<DensityMatrix> {
    let layout = a.layout.concat(&b.layout)?;
    Ok(DensityMatrix { layout, mat: a.mat.kronecker(&b.mat) })
}

/// Half the trace norm of `a - b`.
pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.layout != b.layout {
        return Err(QcmiError::Layout(format!(
            "trace distance between layouts {} and {}",
            a.layout, b.layout
        )));
    }
    trace_norm_half(&(&a.mat - &b.mat))
}

pub(crate) fn trace_norm_half(diff: &CMatrix) -> Result<f64> {
    let eig = hermitian_eig(diff)?;
    Ok((0.5 * eig.eigenvalues.iter().map(|l| l.abs()).sum::<f64>()).min(1.0))
}

/// Purification `Σ_k sqrt(λ_k) |v_k>|k>` with the ancilla appended last.
pub fn purify(rho: &DensityMatrix, ancilla_label: &str) -> Result<(SystemLayout, CVector)> {
    let n = rho.dim();
    let anc = SystemLayout::new([(ancilla_label, n)])?;
    let layout = rho.layout.concat(&anc)?;
    let eig = hermitian_eig(&rho.mat)?;
    let mut v = CVector::zeros(n * n);
    for k in 0..n {
        let lam = eig.eigenvalues[k];
        if lam < -CLAMP_TOL {
            return Err(QcmiError::Validation(format!("negative eigenvalue {lam:e}")));
        }
        let s = lam.max(0.0).sqrt();
        for i in 0..n {
            v[i * n + k] = eig.eigenvectors[(i, k)] * s;
        }
    }
    Ok((layout, v))
}

/// Reduced state of a pure vector on `keep`.
pub fn reduce_pure(layout: &SystemLayout, v: &CVector, keep: &[&str]) -> Result<DensityMatrix> {
    let (kept, mat) = reduce_vector(layout, v, keep)?;
    Ok(DensityMatrix { layout: kept, mat })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmat::random::random_density;
    use crate::qmat::max_abs;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn qubits(labels: &[&str]) -> SystemLayout {
        SystemLayout::new(labels.iter().map(|l| (*l, 2))).unwrap()
    }

    fn bell() -> DensityMatrix {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let v = CVector::from_vec(vec![c64(r, 0.0), c64(0.0, 0.0), c64(0.0, 0.0), c64(r, 0.0)]);
        DensityMatrix::pure(qubits(&["A", "B"]), &v).unwrap()
    }

    #[test]
    fn tensor_of_basis_states() {
        let z = DensityMatrix::basis(qubits(&["A"]), &[0]).unwrap();
        let o = DensityMatrix::basis(qubits(&["B"]), &[1]).unwrap();
        let t = tensor_product(&z, &o).unwrap();
        assert!((t.matrix()[(1, 1)].re - 1.0).abs() < 1e-15);
        assert!((t.trace() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tensor_of_maximally_mixed() {
        let a = DensityMatrix::maximally_mixed(qubits(&["A"]));
        let b = DensityMatrix::maximally_mixed(qubits(&["B"]));
        let t = tensor_product(&a, &b).unwrap();
        let expect = DensityMatrix::maximally_mixed(qubits(&["A", "B"]));
        assert!(max_abs(&(t.matrix() - expect.matrix())) < 1e-15);
    }

    #[test]
    fn tensor_label_collision() {
        let a = DensityMatrix::maximally_mixed(qubits(&["A"]));
        assert!(matches!(tensor_product(&a, &a), Err(QcmiError::Layout(_))));
    }

    #[test]
    fn tensor_trace_is_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_density(&SystemLayout::new([("A", 2)]).unwrap(), 2, &mut rng);
        let b = random_density(&SystemLayout::new([("B", 3)]).unwrap(), 3, &mut rng);
        let t = tensor_product(&a, &b).unwrap();
        assert!((t.trace() - a.trace() * b.trace()).abs() < 1e-12);
    }

    #[test]
    fn bell_reduces_to_maximally_mixed() {
        let r = bell().partial_trace(&["A"]).unwrap();
        assert!(max_abs(&(r.matrix() - DensityMatrix::maximally_mixed(qubits(&["A"])).matrix())) < 1e-12);
    }

    #[test]
    fn ghz_reduction() {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let mut v = CVector::zeros(8);
        v[0] = c64(r, 0.0);
        v[7] = c64(r, 0.0);
        let ghz = DensityMatrix::pure(qubits(&["A", "B", "C"]), &v).unwrap();
        let red = ghz.partial_trace(&["A", "B"]).unwrap();
        let expect = DensityMatrix::classical(qubits(&["A", "B"]), &[0.5, 0.0, 0.0, 0.5]).unwrap();
        assert!(max_abs(&(red.matrix() - expect.matrix())) < 1e-12);
    }

    #[test]
    fn product_reduction_recovers_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_density(&SystemLayout::new([("A", 3)]).unwrap(), 3, &mut rng);
        let b = random_density(&SystemLayout::new([("B", 2)]).unwrap(), 2, &mut rng);
        let t = tensor_product(&a, &b).unwrap();
        assert!(max_abs(&(t.partial_trace(&["A"]).unwrap().matrix() - a.matrix())) < 1e-12);
        assert!(max_abs(&(t.partial_trace(&["B"]).unwrap().matrix() - b.matrix())) < 1e-12);
    }

    #[test]
    fn partial_trace_unknown_label() {
        assert!(matches!(bell().partial_trace(&["Z"]), Err(QcmiError::Layout(_))));
    }

    #[test]
    fn trace_distance_cases() {
        let z = DensityMatrix::basis(qubits(&["A"]), &[0]).unwrap();
        let o = DensityMatrix::basis(qubits(&["A"]), &[1]).unwrap();
        let m = DensityMatrix::maximally_mixed(qubits(&["A"]));
        assert!((trace_distance(&z, &o).unwrap() - 1.0).abs() < 1e-12);
        assert!(trace_distance(&z, &z).unwrap().abs() < 1e-12);
        assert!((trace_distance(&z, &m).unwrap() - 0.5).abs() < 1e-12);
        let other = DensityMatrix::basis(qubits(&["B"]), &[0]).unwrap();
        assert!(trace_distance(&z, &other).is_err());
    }

    #[test]
    fn purify_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rho = random_density(&SystemLayout::new([("S", 4)]).unwrap(), 3, &mut rng);
        let (layout, v) = purify(&rho, "anc").unwrap();
        let back = reduce_pure(&layout, &v, &["S"]).unwrap();
        assert!(max_abs(&(back.matrix() - rho.matrix())) <= 1e-9);
        assert!((v.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn purify_maximally_mixed_gives_maximal_entanglement() {
        let rho = DensityMatrix::maximally_mixed(qubits(&["A"]));
        let (layout, v) = purify(&rho, "R").unwrap();
        let red = reduce_pure(&layout, &v, &["R"]).unwrap();
        assert!(max_abs(&(red.matrix() - DensityMatrix::maximally_mixed(SystemLayout::new([("R", 2)]).unwrap()).matrix())) < 1e-12);
    }

    #[test]
    fn purify_pure_state_uses_ancilla_zero() {
        let z = DensityMatrix::basis(qubits(&["A"]), &[1]).unwrap();
        let (_, v) = purify(&z, "R").unwrap();
        // |1>|0> has index 2
        assert!((v[2].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reorder_swaps_factors() {
        let z = DensityMatrix::basis(qubits(&["A"]), &[0]).unwrap();
        let o = DensityMatrix::basis(qubits(&["B"]), &[1]).unwrap();
        let t = tensor_product(&z, &o).unwrap();
        let r = t.reorder(&["B", "A"]).unwrap();
        let expect = tensor_product(&o, &z).unwrap();
        assert!(max_abs(&(r.matrix() - expect.matrix())) < 1e-15);
        assert_eq!(r.layout(), expect.layout());
    }
}
