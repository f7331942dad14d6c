//! Mixtures `Σ_k w_k |labels_k><labels_k| ⊗ (⊗_s |v_{k,s}><v_{k,s}|)` of
//! classical labels and pure product slots.
//!
//! Entropies group branches by the classical labels in the subsystem and take
//! the spectrum of each group's Gram matrix, so the cost scales with the
//! number of branches rather than the Hilbert-space dimension.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::error::{QcmiError, Result};
use crate::qentropy::{cmi_from_entropies, entropy_of_spectrum, floor_cmi, EntropyReport};
use crate::qmat::{c64, hermitian_eig, trace_norm_half, kron_vec, matrix_apply_spectral, CMatrix, CVector, DensityMatrix, NullPolicy, SystemLayout};
use crate::recovery::grid_point_wins;

/// Relative eigenvalue floor when building span coordinates.
const SPAN_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct EnsembleBranch {
    pub weight: f64,
    pub labels: Vec<usize>,
    /// Interned vector id per quantum slot.
    pub slots: Vec<u32>,
}

#[derive(Clone, Debug, Default)]
struct SlotStore {
    vectors: Vec<Arc<CVector>>,
    index: HashMap<Vec<(i64, i64)>, u32>,
}

impl SlotStore {
    fn intern(&mut self, v: &CVector) -> u32 {
        let v = canonical_phase(v);
        let key: Vec<(i64, i64)> = v.iter().map(|z| ((z.re * 1e9).round() as i64, (z.im * 1e9).round() as i64)).collect();
        if let Some(&id) = self.index.get(&key) {
            return id;
        }
        let id = self.vectors.len() as u32;
        self.vectors.push(Arc::new(v));
        self.index.insert(key, id);
        id
    }
}

/// Rotates the global phase so the first non-negligible amplitude is real positive.
fn canonical_phase(v: &CVector) -> CVector {
    match v.iter().find(|z| z.norm() > 1e-6) {
        Some(z) => v * (z.conj() / z.norm()),
        None => v.clone(),
    }
}

#[derive(Clone, Debug, Default)]
pub struct Ensemble {
    classical: Vec<(String, usize)>,
    quantum: Vec<(String, usize)>,
    stores: Vec<SlotStore>,
    branches: Vec<EnsembleBranch>,
}

enum Name {
    Label(usize),
    Slot(usize),
}

impl Ensemble {
    pub fn new(classical: &[(&str, usize)], quantum: &[(&str, usize)]) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (l, _) in classical.iter().chain(quantum) {
            if !seen.insert(*l) {
                return Err(QcmiError::Layout(format!("duplicate ensemble name {l}")));
            }
        }
        Ok(Self {
            classical: classical.iter().map(|(l, d)| (l.to_string(), *d)).collect(),
            quantum: quantum.iter().map(|(l, d)| (l.to_string(), *d)).collect(),
            stores: vec![SlotStore::default(); quantum.len()],
            branches: Vec::new(),
        })
    }

    pub fn push(&mut self, weight: f64, labels: Vec<usize>, slots: &[&CVector]) -> Result<()> {
        if labels.len() != self.classical.len() || slots.len() != self.quantum.len() {
            return Err(QcmiError::Layout("branch shape does not match ensemble".into()));
        }
        for (v, (name, d)) in labels.iter().zip(&self.classical) {
            if v >= d {
                return Err(QcmiError::Validation(format!("label {name} value {v} out of range")));
            }
        }
        let mut ids = Vec::with_capacity(slots.len());
        for (i, v) in slots.iter().enumerate() {
            if v.len() != self.quantum[i].1 || (v.norm() - 1.0).abs() > 1e-8 {
                return Err(QcmiError::Validation(format!("slot {} vector invalid", self.quantum[i].0)));
            }
            ids.push(self.stores[i].intern(v));
        }
        if weight > 0.0 {
            self.branches.push(EnsembleBranch { weight, labels, slots: ids });
        }
        Ok(())
    }

    pub fn label_names(&self) -> Vec<String> {
        self.classical.iter().map(|(l, _)| l.clone()).collect()
    }

    pub fn branches(&self) -> &[EnsembleBranch] {
        &self.branches
    }

    pub fn slot_vector(&self, slot: usize, id: u32) -> &CVector {
        &self.stores[slot].vectors[id as usize]
    }

    pub fn label_index(&self, name: &str) -> Result<usize> {
        self.classical
            .iter()
            .position(|(l, _)| l == name)
            .ok_or_else(|| QcmiError::Layout(format!("unknown label {name}")))
    }

    pub fn slot_index(&self, name: &str) -> Result<usize> {
        self.quantum
            .iter()
            .position(|(l, _)| l == name)
            .ok_or_else(|| QcmiError::Layout(format!("unknown slot {name}")))
    }

    fn resolve(&self, name: &str) -> Result<Name> {
        self.label_index(name).map(Name::Label).or_else(|_| self.slot_index(name).map(Name::Slot))
    }

    fn split(&self, names: &[&str]) -> Result<(Vec<usize>, Vec<usize>)> {
        let (mut c, mut q) = (Vec::new(), Vec::new());
        for n in names {
            match self.resolve(n)? {
                Name::Label(i) => c.push(i),
                Name::Slot(i) => q.push(i),
            }
        }
        Ok((c, q))
    }

    pub fn total_weight(&self) -> f64 {
        self.branches.iter().map(|b| b.weight).sum()
    }

    /// Merges branches with identical labels and slot vectors.
    pub fn compress(&mut self) {
        let mut merged: BTreeMap<(Vec<usize>, Vec<u32>), f64> = BTreeMap::new();
        for b in &self.branches {
            *merged.entry((b.labels.clone(), b.slots.clone())).or_insert(0.0) += b.weight;
        }
        self.branches = merged
            .into_iter()
            .map(|((labels, slots), weight)| EnsembleBranch { weight, labels, slots })
            .collect();
    }

    fn overlap(&self, slot: usize, a: u32, b: u32) -> crate::qmat::C64 {
        if a == b {
            return c64(1.0, 0.0);
        }
        self.stores[slot].vectors[a as usize].dotc(&self.stores[slot].vectors[b as usize])
    }

    /// Per slot, a component id for each interned vector. Vectors in
    /// different components have disjoint supports, hence are orthogonal.
    fn slot_components(&self) -> Vec<Vec<u32>> {
        self.stores
            .iter()
            .map(|store| {
                let mut parent: Vec<usize> = (0..store.vectors.len()).collect();
                fn find(p: &mut [usize], mut i: usize) -> usize {
                    while p[i] != i {
                        p[i] = p[p[i]];
                        i = p[i];
                    }
                    i
                }
                let mut owner: HashMap<usize, usize> = HashMap::new();
                for (id, v) in store.vectors.iter().enumerate() {
                    for (i, z) in v.iter().enumerate() {
                        if z.norm() > 1e-12 {
                            let o = *owner.entry(i).or_insert(id);
                            let (a, b) = (find(&mut parent, o), find(&mut parent, id));
                            parent[a.max(b)] = a.min(b);
                        }
                    }
                }
                (0..parent.len()).map(|i| find(&mut parent, i) as u32).collect()
            })
            .collect()
    }

    /// Block key of a branch: classical values on `c`, then the component
    /// of each slot in `q`.
    fn block_key(&self, comps: &[Vec<u32>], b: &EnsembleBranch, c: &[usize], q: &[usize]) -> Vec<usize> {
        c.iter()
            .map(|&i| b.labels[i])
            .chain(q.iter().map(|&i| comps[i][b.slots[i] as usize] as usize))
            .collect()
    }

    /// Splits the reduced state on `(c, q)` into orthogonal blocks, merging
    /// equal slot tuples; weights are left unnormalized.
    fn groups(&self, c: &[usize], q: &[usize]) -> BTreeMap<Vec<usize>, BTreeMap<Vec<u32>, f64>> {
        let comps = self.slot_components();
        let mut out: BTreeMap<Vec<usize>, BTreeMap<Vec<u32>, f64>> = BTreeMap::new();
        for b in &self.branches {
            let key = self.block_key(&comps, b, c, q);
            let ids: Vec<u32> = q.iter().map(|&i| b.slots[i]).collect();
            *out.entry(key).or_default().entry(ids).or_insert(0.0) += b.weight;
        }
        out
    }

    fn gram(&self, q: &[usize], items: &[(&Vec<u32>, f64)]) -> CMatrix {
        let k = items.len();
        CMatrix::from_fn(k, k, |i, j| {
            let mut z = c64((items[i].1 * items[j].1).sqrt(), 0.0);
            for (pos, &s) in q.iter().enumerate() {
                z *= self.overlap(s, items[i].0[pos], items[j].0[pos]);
            }
            z
        })
    }

    /// Von Neumann entropy in bits of the reduced state on `names`.
    pub fn entropy(&self, names: &[&str]) -> Result<f64> {
        let (c, q) = self.split(names)?;
        let total = self.total_weight();
        if total <= 0.0 {
            return Err(QcmiError::Validation("empty ensemble".into()));
        }
        let mut s = 0.0;
        for members in self.groups(&c, &q).values() {
            let wg: f64 = members.values().sum::<f64>() / total;
            if wg <= 0.0 {
                continue;
            }
            s -= wg * wg.log2();
            if members.len() > 1 && !q.is_empty() {
                let items: Vec<(&Vec<u32>, f64)> = members.iter().map(|(k, w)| (k, *w / (wg * total))).collect();
                let eig = hermitian_eig(&self.gram(&q, &items))?;
                s += wg * entropy_of_spectrum(&eig.eigenvalues);
            }
        }
        Ok(s)
    }

    pub fn cmi(&self, a: &[&str], b: &[&str], c: &[&str]) -> Result<EntropyReport> {
        floor_cmi(cmi_from_entropies(|set| self.entropy(set), a, b, c)?)
    }

    /// Measures slot `name` after applying `u`, producing classical label
    /// `label`; the slot is removed.
    pub fn dephase_slot(&self, name: &str, u: &CMatrix, label: &str) -> Result<Ensemble> {
        let s = self.slot_index(name)?;
        let d = self.quantum[s].1;
        let mut classical: Vec<(&str, usize)> = self.classical.iter().map(|(l, d)| (l.as_str(), *d)).collect();
        classical.push((label, d));
        let quantum: Vec<(&str, usize)> =
            self.quantum.iter().enumerate().filter(|(i, _)| *i != s).map(|(_, (l, d))| (l.as_str(), *d)).collect();
        let mut out = Ensemble::new(&classical, &quantum)?;
        let rotated: Vec<CVector> = self.stores[s].vectors.iter().map(|v| u * v.as_ref()).collect();
        for b in &self.branches {
            let v = &rotated[b.slots[s] as usize];
            let rest: Vec<&CVector> = b
                .slots
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != s)
                .map(|(i, &id)| self.stores[i].vectors[id as usize].as_ref())
                .collect();
            for o in 0..d {
                let p = v[o].norm_sqr();
                if p > 1e-15 {
                    let mut labels = b.labels.clone();
                    labels.push(o);
                    out.push(b.weight * p, labels, &rest)?;
                }
            }
        }
        out.compress();
        Ok(out)
    }

    /// Adds a label computed from existing labels.
    pub fn derive_label(&self, label: &str, dim: usize, inputs: &[&str], f: impl Fn(&[usize]) -> usize) -> Result<Ensemble> {
        let idx: Vec<usize> = inputs.iter().map(|l| self.label_index(l)).collect::<Result<_>>()?;
        let mut out = self.clone();
        out.classical.push((label.to_string(), dim));
        for b in &mut out.branches {
            let args: Vec<usize> = idx.iter().map(|&i| b.labels[i]).collect();
            let v = f(&args);
            if v >= dim {
                return Err(QcmiError::Validation(format!("derived label {label} out of range")));
            }
            b.labels.push(v);
        }
        Ok(out)
    }

    /// Dense density matrix over `order` (labels as basis registers).
    pub fn to_density(&self, order: &[&str]) -> Result<DensityMatrix> {
        let names: Vec<Name> = order.iter().map(|n| self.resolve(n)).collect::<Result<_>>()?;
        let layout = SystemLayout::new(names.iter().zip(order).map(|(n, l)| {
            let d = match n {
                Name::Label(i) => self.classical[*i].1,
                Name::Slot(i) => self.quantum[*i].1,
            };
            (l.to_string(), d)
        }))?;
        let dim = layout.total_dim();
        let total = self.total_weight();
        let mut m = CMatrix::zeros(dim, dim);
        for b in &self.branches {
            let mut v = CVector::from_element(1, c64(1.0, 0.0));
            for n in &names {
                let part = match n {
                    Name::Label(i) => crate::qmat::basis_vector(self.classical[*i].1, b.labels[*i]),
                    Name::Slot(i) => self.stores[*i].vectors[b.slots[*i] as usize].as_ref().clone(),
                };
                v = kron_vec(&v, &part);
            }
            m += (&v * v.adjoint()) * c64(b.weight / total, 0.0);
        }
        Ok(DensityMatrix::from_matrix_unchecked(layout, m))
    }
}

/// Result of a block rotated-Petz recovery of classical labels.
#[derive(Clone, Debug)]
pub struct BlockRecovery {
    pub rotation_param: f64,
    /// Trace distance between the recovered and the true joint state.
    pub td: f64,
    /// Distinct recovered values, sorted.
    pub values: Vec<Vec<usize>>,
    /// `readout[k][j]`: probability that branch `k` recovers `values[j]`.
    pub readout: Vec<Vec<f64>>,
}

impl Ensemble {
    /// Rotated Petz map `cond -> cond ⊗ recovered'` built from this state and
    /// applied to the `(other, cond)` marginal. `other` and `recovered` must be
    /// classical labels.
    pub fn block_petz(&self, other: &[&str], cond: &[&str], recovered: &[&str], s: f64) -> Result<BlockRecovery> {
        let (oc, oq) = self.split(other)?;
        let (rc, rq) = self.split(recovered)?;
        if !oq.is_empty() || !rq.is_empty() {
            return Err(QcmiError::Precondition("recovered and compared registers must be classical".into()));
        }
        let (cc, cq) = self.split(cond)?;
        if cc.iter().any(|i| oc.contains(i) || rc.contains(i)) || rc.iter().any(|i| oc.contains(i)) {
            return Err(QcmiError::Layout("register sets overlap".into()));
        }
        let total = self.total_weight();
        let value_of = |b: &EnsembleBranch, idx: &[usize]| idx.iter().map(|&i| b.labels[i]).collect::<Vec<_>>();
        let mut values: Vec<Vec<usize>> = self.branches.iter().map(|b| value_of(b, &rc)).collect();
        values.sort();
        values.dedup();
        let value_pos: HashMap<Vec<usize>, usize> = values.iter().cloned().enumerate().map(|(i, v)| (v, i)).collect();

        // branch indices per conditioning group
        // Petz operators are block diagonal over orthogonal blocks of E
        let comps = self.slot_components();
        let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
        for (k, b) in self.branches.iter().enumerate() {
            groups.entry(self.block_key(&comps, b, &cc, &cq)).or_default().push(k);
        }
        let a = c64(0.5, 0.5 * s);
        let mut readout = vec![Vec::new(); self.branches.len()];
        let mut td = 0.0;
        for members in groups.values() {
            let wg: f64 = members.iter().map(|&k| self.branches[k].weight).sum();
            // distinct slot tuples and their span coordinates
            let mut tuples: Vec<Vec<u32>> = members.iter().map(|&k| cq.iter().map(|&i| self.branches[k].slots[i]).collect()).collect();
            tuples.sort();
            tuples.dedup();
            let tpos: HashMap<&Vec<u32>, usize> = tuples.iter().enumerate().map(|(i, t)| (t, i)).collect();
            let unit: Vec<(&Vec<u32>, f64)> = tuples.iter().map(|t| (t, 1.0)).collect();
            let g = self.gram(&cq, &unit);
            let eig = hermitian_eig(&g)?;
            let lmax = eig.eigenvalues.first().copied().unwrap_or(0.0).max(1e-300);
            let keep: Vec<usize> = (0..tuples.len()).filter(|&i| eig.eigenvalues[i] > SPAN_TOL * lmax).collect();
            let r = keep.len();
            let coords: Vec<CVector> = (0..tuples.len())
                .map(|j| {
                    CVector::from_fn(r, |row, _| {
                        let col = keep[row];
                        let lam = eig.eigenvalues[col];
                        (0..tuples.len()).map(|m| eig.eigenvectors[(m, col)].conj() * g[(m, j)]).sum::<crate::qmat::C64>()
                            / lam.sqrt()
                    })
                })
                .collect();
            let coord = |k: usize| {
                let t: Vec<u32> = cq.iter().map(|&i| self.branches[k].slots[i]).collect();
                &coords[tpos[&t]]
            };
            let proj = |k: usize| {
                let c = coord(k);
                (c * c.adjoint()) * c64(self.branches[k].weight / wg, 0.0)
            };
            let mut per_value: Vec<CMatrix> = vec![CMatrix::zeros(r, r); values.len()];
            for &k in members {
                per_value[value_pos[&value_of(&self.branches[k], &rc)]] += proj(k);
            }
            let rho_e: CMatrix = per_value.iter().fold(CMatrix::zeros(r, r), |acc, m| acc + m);
            let inv = matrix_apply_spectral(&rho_e, |l| (c64(l.ln(), 0.0) * (-a)).exp(), NullPolicy::Project)?;
            let kraus: Vec<CMatrix> = per_value
                .iter()
                .map(|m| {
                    if m.iter().all(|z| z.norm() == 0.0) {
                        Ok(CMatrix::zeros(r, r))
                    } else {
                        Ok(matrix_apply_spectral(m, |l| (c64(l.ln(), 0.0) * a).exp(), NullPolicy::Project)? * &inv)
                    }
                })
                .collect::<Result<_>>()?;
            let povm: Vec<CMatrix> = kraus.iter().map(|k| k.adjoint() * k).collect();
            for &k in members {
                let c = coord(k);
                readout[k] = povm.iter().map(|m| (c.adjoint() * m * c)[(0, 0)].re.max(0.0)).collect();
            }
            // trace distance, block by compared value
            let mut by_other: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
            for &k in members {
                by_other.entry(value_of(&self.branches[k], &oc)).or_default().push(k);
            }
            for ks in by_other.values() {
                let rho_a: CMatrix = ks.iter().fold(CMatrix::zeros(r, r), |acc, &k| acc + proj(k));
                let mut joint = vec![CMatrix::zeros(r, r); values.len()];
                for &k in ks {
                    joint[value_pos[&value_of(&self.branches[k], &rc)]] += proj(k);
                }
                for (j, kr) in kraus.iter().enumerate() {
                    let diff = kr * &rho_a * kr.adjoint() - &joint[j];
                    let herm = (&diff + diff.adjoint()) * c64(0.5, 0.0);
                    td += (wg / total) * trace_norm_half(&herm)?;
                }
            }
        }
        Ok(BlockRecovery { rotation_param: s, td, values, readout })
    }

    /// Grid member with the smallest trace distance; ties resolve by
    /// [`grid_point_wins`].
    pub fn best_block_petz(&self, other: &[&str], cond: &[&str], recovered: &[&str], grid: &[f64]) -> Result<BlockRecovery> {
        if grid.is_empty() {
            return Err(QcmiError::Validation("empty recovery grid".into()));
        }
        let mut best: Option<BlockRecovery> = None;
        for &s in grid {
            let r = self.block_petz(other, cond, recovered, s)?;
            if best.as_ref().is_none_or(|b| grid_point_wins(r.rotation_param, r.td, b.rotation_param, b.td)) {
                best = Some(r);
            }
        }
        Ok(best.expect("grid is non-empty"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qentropy::{conditional_mutual_information, von_neumann_entropy};
    use crate::qmat::hadamard;
    use crate::qmat::random::{random_probability_vector, random_pure_vector};
    use crate::recovery::best_recovery;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    const ORDER: [&str; 5] = ["A", "B", "C", "Q1", "Q2"];

    /// Random ensemble whose slot vectors repeat across branches.
    fn sample(seed: u64) -> Ensemble {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut e = Ensemble::new(&[("A", 2), ("B", 2), ("C", 3)], &[("Q1", 2), ("Q2", 3)]).unwrap();
        let pool1: Vec<CVector> = (0..3).map(|_| random_pure_vector(2, &mut rng)).collect();
        let pool2: Vec<CVector> = (0..4).map(|_| random_pure_vector(3, &mut rng)).collect();
        let w = random_probability_vector(10, &mut rng);
        for wk in w {
            let labels = vec![rng.gen_range(0..2), rng.gen_range(0..2), rng.gen_range(0..3)];
            let v1 = &pool1[rng.gen_range(0..3)];
            let v2 = &pool2[rng.gen_range(0..4)];
            e.push(wk, labels, &[v1, v2]).unwrap();
        }
        e
    }

    #[test]
    fn entropies_match_dense() {
        for seed in 0..5 {
            let e = sample(seed);
            let rho = e.to_density(&ORDER).unwrap();
            for set in [&["A"][..], &["Q1"], &["B", "Q2"], &["C", "Q1", "Q2"], &ORDER[..], &[]] {
                let dense = von_neumann_entropy(&rho, set).unwrap().value;
                assert!((e.entropy(set).unwrap() - dense).abs() < 1e-9, "{set:?}");
            }
            let dense = conditional_mutual_information(&rho, &["A", "Q1"], &["B"], &["C", "Q2"]).unwrap().value;
            assert!((e.cmi(&["A", "Q1"], &["B"], &["C", "Q2"]).unwrap().value - dense).abs() < 1e-9);
        }
    }

    #[test]
    fn block_petz_matches_dense_recovery() {
        for seed in 0..4 {
            let e = sample(seed);
            let rho = e.to_density(&ORDER).unwrap();
            for s in [0.0, 1.25] {
                let dense = best_recovery(&rho, &["A"], &["C", "Q1", "Q2"], &["B"], &[s]).unwrap();
                let block = e.block_petz(&["A"], &["C", "Q1", "Q2"], &["B"], s).unwrap();
                assert!((dense.achieved_td - block.td).abs() < 1e-8, "seed {seed} s {s}");
                for row in &block.readout {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn dephasing_matches_dense() {
        let e = sample(7);
        let d = e.dephase_slot("Q1", &hadamard(), "M").unwrap();
        let rho = e.to_density(&ORDER).unwrap().apply_unitary(&["Q1"], &hadamard()).unwrap().dephase("Q1").unwrap();
        let dense = conditional_mutual_information(&rho, &["Q1"], &["A"], &["Q2"]).unwrap().value;
        assert!((d.cmi(&["M"], &["A"], &["Q2"]).unwrap().value - dense).abs() < 1e-9);
    }

    #[test]
    fn identical_vectors_intern_once() {
        let mut e = Ensemble::new(&[], &[("Q", 2)]).unwrap();
        let v = crate::qmat::basis_vector(2, 1);
        e.push(0.5, vec![], &[&v]).unwrap();
        e.push(0.5, vec![], &[&(&v * c64(0.0, 1.0))]).unwrap();
        e.compress();
        assert_eq!(e.branches().len(), 1);
        assert!(e.entropy(&["Q"]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn perfectly_correlated_label_is_recovered() {
        let mut e = Ensemble::new(&[("B", 2)], &[("Q", 2)]).unwrap();
        for b in 0..2 {
            e.push(0.5, vec![b], &[&crate::qmat::basis_vector(2, b)]).unwrap();
        }
        let r = e.block_petz(&[], &["Q"], &["B"], 0.0).unwrap();
        assert!(r.td < 1e-12);
        assert!((r.readout[1][1] - 1.0).abs() < 1e-12);
    }
}
