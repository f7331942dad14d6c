//! Rotated Petz recovery channels `E -> E ⊗ B'`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{QcmiError, Result};
use crate::qentropy::conditional_mutual_information;
use crate::qmat::{
    c64, kron, matrix_apply_spectral, trace_distance, CMatrix, DensityMatrix, NullPolicy,
    SystemLayout, C64,
};

/// Input weight outside the support of `ρ_E` tolerated by [`apply_recovery`].
pub const SUPPORT_LEAK_TOL: f64 = 1e-8;

/// `{-5, -4.75, ..., 5}`.
pub fn default_grid() -> Vec<f64> {
    (0..=40).map(|k| -5.0 + 0.25 * k as f64).collect()
}

#[derive(Clone, Debug)]
pub struct RecoveryChannel {
    /// Factors the channel reads.
    pub e_layout: SystemLayout,
    /// Freshly created factors, appended after the E factors.
    pub b_layout: SystemLayout,
    /// Maps from `dim E` to `dim E * dim B'`.
    pub kraus_ops: Vec<CMatrix>,
    /// Kernel of `ρ_E` sent to `|0>` on B'; completes the channel.
    pub dump_op: CMatrix,
    /// Support projector of `ρ_E`.
    pub support: CMatrix,
    pub rotation_param: f64,
}

impl RecoveryChannel {
    /// `Σ K†K` over the Petz Kraus operators (without the dump).
    pub fn kraus_sum(&self) -> CMatrix {
        let d = self.e_layout.total_dim();
        self.kraus_ops.iter().fold(CMatrix::zeros(d, d), |acc, k| acc + k.adjoint() * k)
    }
}

fn power(m: &CMatrix, exponent: C64) -> Result<CMatrix> {
    matrix_apply_spectral(m, |lam| (c64(lam.ln(), 0.0) * exponent).exp(), NullPolicy::Project)
}

fn primed(labels: &[&str]) -> Vec<String> {
    labels.iter().map(|l| format!("{l}'")).collect()
}

/// `X ↦ ρ_EB^{(1+is)/2} (ρ_E^{-(1+is)/2} X ρ_E^{-(1-is)/2} ⊗ I_B) ρ_EB^{(1-is)/2}`,
/// with B relabeled to `B'` (each label primed).
pub fn rotated_petz(rho: &DensityMatrix, e_labels: &[&str], b_labels: &[&str], s: f64) -> Result<RecoveryChannel> {
    let b_out = primed(b_labels);
    let b_out: Vec<&str> = b_out.iter().map(String::as_str).collect();
    rotated_petz_named(rho, e_labels, b_labels, &b_out, s)
}

pub fn rotated_petz_named(
    rho: &DensityMatrix,
    e_labels: &[&str],
    b_labels: &[&str],
    b_out: &[&str],
    s: f64,
) -> Result<RecoveryChannel> {
    if e_labels.is_empty() || b_labels.is_empty() || b_out.len() != b_labels.len() {
        return Err(QcmiError::Layout("recovery needs non-empty E and B factor lists".into()));
    }
    let eb: Vec<&str> = e_labels.iter().chain(b_labels).copied().collect();
    let rho_eb = rho.partial_trace(&eb)?.reorder(&eb)?;
    let rho_e = rho_eb.partial_trace(e_labels)?.reorder(e_labels)?;
    let e_layout = rho_e.layout().clone();
    let b_layout = SystemLayout::new(
        b_out.iter().zip(b_labels).map(|(o, l)| (o.to_string(), rho.layout().dim_of(l).unwrap_or(1))),
    )?;
    let (de, db) = (e_layout.total_dim(), b_layout.total_dim());

    let a = c64(0.5, 0.5 * s);
    let eb_pow = power(rho_eb.matrix(), a)?;
    let e_inv = power(rho_e.matrix(), -a)?;
    let support = matrix_apply_spectral(rho_e.matrix(), |_| c64(1.0, 0.0), NullPolicy::Project)?;

    let mut kraus_ops = Vec::with_capacity(db);
    for b in 0..db {
        let mut ket = CMatrix::zeros(db, 1);
        ket[(b, 0)] = c64(1.0, 0.0);
        kraus_ops.push(&eb_pow * kron(&e_inv, &ket));
    }
    let mut ket0 = CMatrix::zeros(db, 1);
    ket0[(0, 0)] = c64(1.0, 0.0);
    let dump_op = kron(&(CMatrix::identity(de, de) - &support), &ket0);
    Ok(RecoveryChannel { e_layout, b_layout, kraus_ops, dump_op, support, rotation_param: s })
}

/// Applies the channel to the E factors of `rho`. The output keeps the other
/// factors in order, then the E factors, then B'.
pub fn apply_recovery(ch: &RecoveryChannel, rho: &DensityMatrix) -> Result<DensityMatrix> {
    let e_labels: Vec<&str> = ch.e_layout.labels().collect();
    for (l, d) in ch.e_layout.factors() {
        if rho.layout().dim_of(l)? != *d {
            return Err(QcmiError::Layout(format!("factor {l} has the wrong dimension")));
        }
    }
    let rest = rho.layout().complement(&e_labels);
    let mut order: Vec<&str> = rest.iter().map(String::as_str).collect();
    order.extend(&e_labels);
    let ordered = rho.reorder(&order)?;

    let leak = {
        let proj = CMatrix::identity(ch.support.nrows(), ch.support.nrows()) - &ch.support;
        let red = ordered.partial_trace(&e_labels)?.reorder(&e_labels)?;
        (red.matrix() * proj).trace().re
    };
    if leak > SUPPORT_LEAK_TOL {
        return Err(QcmiError::Support(format!("input has weight {leak:e} outside the support of rho_E")));
    }

    let rest_dim: usize = rest.iter().map(|l| rho.layout().dim_of(l).unwrap_or(1)).product();
    let id = CMatrix::identity(rest_dim, rest_dim);
    let out_layout = SystemLayout::new(
        rest.iter()
            .map(|l| (l.clone(), rho.layout().dim_of(l).unwrap_or(1)))
            .chain(ch.e_layout.factors().iter().cloned())
            .chain(ch.b_layout.factors().iter().cloned()),
    )?;
    let n = out_layout.total_dim();
    let mut out = CMatrix::zeros(n, n);
    for k in ch.kraus_ops.iter().chain(std::iter::once(&ch.dump_op)) {
        let big = kron(&id, k);
        out += &big * ordered.matrix() * big.adjoint();
    }
    Ok(DensityMatrix::from_matrix_unchecked(out_layout, out))
}

#[derive(Clone, Debug, Serialize)]
pub struct RecoveryOutcome {
    #[serde(skip)]
    pub channel: Option<RecoveryChannel>,
    pub rotation_param: f64,
    pub achieved_td: f64,
    pub cmi: f64,
    pub fr_bound: f64,
}

/// `√(ln 2 · I)` with `I` in bits.
pub fn fr_bound(cmi_bits: f64) -> f64 {
    (std::f64::consts::LN_2 * cmi_bits.max(0.0)).sqrt()
}

/// Grid points whose distances differ by at most this are tied.
pub const GRID_TIE_TOL: f64 = 1e-12;

/// Whether grid point `(s, td)` beats the incumbent: a smaller distance, or
/// a tie with `s` closer to 0 (then the smaller `s`).
pub fn grid_point_wins(s: f64, td: f64, best_s: f64, best_td: f64) -> bool {
    if td < best_td - GRID_TIE_TOL {
        return true;
    }
    td <= best_td + GRID_TIE_TOL && (s.abs(), s) < (best_s.abs(), best_s)
}

/// Grid member minimizing `TD(T(ρ_AE), ρ_AEB)`; ties resolve by
/// [`grid_point_wins`].
pub fn best_recovery(
    rho: &DensityMatrix,
    a_labels: &[&str],
    e_labels: &[&str],
    b_labels: &[&str],
    grid: &[f64],
) -> Result<RecoveryOutcome> {
    if grid.is_empty() {
        return Err(QcmiError::Validation("empty recovery grid".into()));
    }
    let aeb: Vec<&str> = a_labels.iter().chain(e_labels).chain(b_labels).copied().collect();
    let target = rho.partial_trace(&aeb)?.reorder(&aeb)?;
    let b_out = primed(b_labels);
    let mut target_labels: Vec<&str> = a_labels.iter().chain(e_labels).copied().collect();
    target_labels.extend(b_out.iter().map(String::as_str));
    let target = target.relabel(&target_labels)?;
    let ae: Vec<&str> = a_labels.iter().chain(e_labels).copied().collect();
    let rho_ae = rho.partial_trace(&ae)?.reorder(&ae)?;

    let rho_aeb = rho.partial_trace(&aeb)?;
    let results: Vec<Result<(RecoveryChannel, f64)>> = grid
        .par_iter()
        .map(|&s| {
            let ch = rotated_petz(&rho_aeb, e_labels, b_labels, s)?;
            let out = apply_recovery(&ch, &rho_ae)?.reorder(&target_labels)?;
            let td = trace_distance(&out, &target)?;
            Ok((ch, td))
        })
        .collect();
    let mut best: Option<(RecoveryChannel, f64)> = None;
    for r in results {
        let (ch, td) = r?;
        if best.as_ref().is_none_or(|(b, btd)| grid_point_wins(ch.rotation_param, td, b.rotation_param, *btd)) {
            best = Some((ch, td));
        }
    }
    let (ch, td) = best.expect("grid is non-empty");
    let cmi = conditional_mutual_information(rho, a_labels, b_labels, e_labels)?.value;
    Ok(RecoveryOutcome {
        rotation_param: ch.rotation_param,
        channel: Some(ch),
        achieved_td: td,
        cmi,
        fr_bound: fr_bound(cmi),
    })
}

/// `Σ K†K + D†D`, which must be the identity.
pub fn completeness_residual(ch: &RecoveryChannel) -> f64 {
    let d = ch.e_layout.total_dim();
    let sum = ch.kraus_sum() + ch.dump_op.adjoint() * &ch.dump_op;
    crate::qmat::max_abs(&(sum - CMatrix::identity(d, d)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmat::random::random_density;
    use crate::qmat::{max_abs, tensor_product};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn qubits(labels: &[&str]) -> SystemLayout {
        SystemLayout::new(labels.iter().map(|l| (*l, 2usize))).unwrap()
    }

    #[test]
    fn product_state_recovers_exactly() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let re = random_density(&qubits(&["E"]), 2, &mut rng);
        let rb = random_density(&qubits(&["B"]), 2, &mut rng);
        let rho = tensor_product(&re, &rb).unwrap();
        let ch = rotated_petz(&rho, &["E"], &["B"], 0.0).unwrap();
        let out = apply_recovery(&ch, &re).unwrap();
        assert!(max_abs(&(out.matrix() - rho.matrix())) < 1e-10);
    }

    #[test]
    fn classical_markov_chain_is_exact() {
        // X -> Y -> Z with binary symmetric channels, stored as A=X, E=Y, B=Z
        let p = |x: usize, y: usize, z: usize| {
            let f = |a: usize, b: usize, e: f64| if a == b { 1.0 - e } else { e };
            0.5 * f(x, y, 0.2) * f(y, z, 0.3)
        };
        let probs: Vec<f64> = (0..8).map(|i| p(i >> 2, (i >> 1) & 1, i & 1)).collect();
        let rho = DensityMatrix::classical(qubits(&["A", "E", "B"]), &probs).unwrap();
        let r = best_recovery(&rho, &["A"], &["E"], &["B"], &[0.0]).unwrap();
        assert!(r.cmi < 1e-9);
        assert!(r.achieved_td <= 1e-8, "td {}", r.achieved_td);
    }

    #[test]
    fn random_channel_is_trace_preserving() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for s in [0.0, 1.3, -2.5] {
            let rho = random_density(&qubits(&["A", "E", "B"]), 8, &mut rng);
            let ch = rotated_petz(&rho, &["E"], &["B"], s).unwrap();
            assert!(completeness_residual(&ch) < 1e-8);
            assert!(max_abs(&(ch.kraus_sum() - &ch.support)) < 1e-8);
        }
    }

    #[test]
    fn rank_deficient_marginal_uses_dump() {
        let rho = DensityMatrix::classical(qubits(&["E", "B"]), &[0.5, 0.5, 0.0, 0.0]).unwrap();
        let ch = rotated_petz(&rho, &["E"], &["B"], 0.0).unwrap();
        assert!(completeness_residual(&ch) < 1e-12);
        let zero = DensityMatrix::classical(SystemLayout::qubit("E"), &[1.0, 0.0]).unwrap();
        let one = DensityMatrix::classical(SystemLayout::qubit("E"), &[0.0, 1.0]).unwrap();
        assert!(apply_recovery(&ch, &zero).is_ok());
        assert!(matches!(apply_recovery(&ch, &one), Err(QcmiError::Support(_))));
    }

    #[test]
    fn output_is_normalized_psd() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let rho = random_density(&qubits(&["A", "E", "B"]), 3, &mut rng);
        let ch = rotated_petz(&rho, &["E"], &["B"], 0.5).unwrap();
        let out = apply_recovery(&ch, &rho.partial_trace(&["A", "E"]).unwrap()).unwrap();
        assert!((out.trace() - 1.0).abs() < 1e-8);
        assert!(out.spectrum().unwrap().iter().all(|&l| l >= 0.0));
        assert_eq!(out.layout().labels().collect::<Vec<_>>(), vec!["A", "E", "B'"]);
    }

    #[test]
    fn wider_grid_never_worse() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..3 {
            let rho = random_density(&qubits(&["A", "E", "B"]), 2, &mut rng);
            let narrow = best_recovery(&rho, &["A"], &["E"], &["B"], &[0.0]).unwrap();
            let wide = best_recovery(&rho, &["A"], &["E"], &["B"], &default_grid()).unwrap();
            assert!(wide.achieved_td <= narrow.achieved_td + 1e-12);
        }
    }

    #[test]
    fn empty_grid_rejected() {
        let rho = DensityMatrix::maximally_mixed(qubits(&["A", "E", "B"]));
        assert!(best_recovery(&rho, &["A"], &["E"], &["B"], &[]).is_err());
    }
}
