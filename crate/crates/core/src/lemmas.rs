//! Randomized checks of the helper lemmas: permutation invariance, local
//! operations, classical broadcast and the support lemma.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{QcmiError, Result};
use crate::qentropy::{conditional_mutual_information, von_neumann_entropy};
use crate::qmat::random::{child_rng, random_density, random_probability_vector, random_unitary};
use crate::qmat::{tensor_product, CMatrix, DensityMatrix, SystemLayout};

/// Slack for entropy combinations.
pub const QUANTUM_TOL: f64 = 1e-8;
/// Slack for purely classical sums.
pub const CLASSICAL_TOL: f64 = 1e-12;
/// Slack for the copy-entropy equalities.
pub const COPY_TOL: f64 = 1e-9;
pub const DEFAULT_TRIALS: usize = 200;
/// Most product terms in a generated separable state.
const MAX_TERMS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub lemma_id: String,
    pub trials: usize,
    /// Largest `lhs − rhs` seen; negative when every trial had slack.
    pub max_violation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckResult {
    fn from_violations(lemma_id: &str, violations: Vec<f64>, tolerance: f64) -> Self {
        let max_violation = violations.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { lemma_id: lemma_id.into(), trials: violations.len(), max_violation, tolerance, pass: max_violation <= tolerance }
    }
}

fn trials_par<F>(trials: usize, seed: u64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&mut rand_chacha::ChaCha20Rng) -> Result<f64> + Sync,
{
    (0..trials).into_par_iter().map(|k| f(&mut child_rng(seed, k as u64))).collect()
}

fn qubits(labels: &[&str]) -> SystemLayout {
    SystemLayout::new(labels.iter().map(|l| (*l, 2))).expect("small qubit layout")
}

fn a_labels(t: usize) -> Vec<String> {
    (1..=t).map(|i| format!("A{i}")).collect()
}

/// `Σ_k p_k ρ_B^k ⊗ ρ_C^k ⊗ (σ^k)^{⊗t}` with at most eight terms; the A-blocks
/// are permutation invariant by construction.
pub fn separable_invariant_state<R: Rng + ?Sized>(t: usize, rng: &mut R) -> Result<DensityMatrix> {
    let terms = rng.gen_range(1..=MAX_TERMS);
    let p = random_probability_vector(terms, rng);
    let names = a_labels(t);
    let mut parts = Vec::with_capacity(terms);
    for _ in 0..terms {
        let b = random_density(&qubits(&["B"]), rng.gen_range(1..=2), rng);
        let c = random_density(&qubits(&["C"]), rng.gen_range(1..=2), rng);
        let sigma = random_density(&SystemLayout::qubit("A"), rng.gen_range(1..=2), rng);
        let mut rho = tensor_product(&b, &c)?;
        for name in &names {
            rho = tensor_product(&rho, &sigma.relabel(&[name.as_str()])?)?;
        }
        parts.push(rho);
    }
    let refs: Vec<(f64, &DensityMatrix)> = p.iter().copied().zip(parts.iter()).collect();
    DensityMatrix::mixture(&refs)
}

/// `min_{0 ≤ i < t} I(A_t : B | C, A_1..A_i)` for a state on `B, C, A1..At`.
pub fn min_prefix_cmi(rho: &DensityMatrix, t: usize) -> Result<f64> {
    let names = a_labels(t);
    let last = names[t - 1].as_str();
    let mut best = f64::INFINITY;
    for i in 0..t {
        let mut cond = vec!["C"];
        cond.extend(names[..i].iter().map(String::as_str));
        best = best.min(conditional_mutual_information(rho, &[last], &["B"], &cond)?.value);
    }
    Ok(best)
}

/// Some prefix of permutation-invariant separable blocks has
/// `I(A_t:B|C,A_1..A_i) ≤ S(B)/t`.
pub fn check_permutation_invariance(t: usize, trials: usize, seed: u64) -> Result<CheckResult> {
    if !(1..=4).contains(&t) {
        return Err(QcmiError::Validation(format!("t = {t} outside 1..=4")));
    }
    let v = trials_par(trials, seed, |rng| {
        let rho = separable_invariant_state(t, rng)?;
        let s_b = von_neumann_entropy(&rho, &["B"])?.value;
        Ok(min_prefix_cmi(&rho, t)? - s_b / t as f64)
    })?;
    Ok(CheckResult::from_violations("Lemma 4.1", v, QUANTUM_TOL))
}

/// Appends a `|0⟩` ancilla `R`, applies `u` to `(A, R)` and keeps one of the
/// two as the new `A`.
pub fn local_channel(rho: &DensityMatrix, u: &CMatrix, keep_ancilla: bool) -> Result<DensityMatrix> {
    let anc = DensityMatrix::basis(SystemLayout::qubit("R"), &[0])?;
    let joint = tensor_product(rho, &anc)?.apply_unitary(&["A", "R"], u)?;
    let out = if keep_ancilla { joint.trace_out(&["A"])? } else { joint.trace_out(&["R"])? };
    let labels: Vec<String> = out.layout().labels().map(|l| if l == "R" { "A".to_string() } else { l.to_string() }).collect();
    let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    out.relabel(&refs)
}

/// `I(A':B|C) ≤ I(A:B|C)` for a channel on A.
pub fn check_local_op_monotonicity(trials: usize, seed: u64) -> Result<CheckResult> {
    let v = trials_par(trials, seed, |rng| {
        let rho = random_density(&qubits(&["A", "B", "C"]), rng.gen_range(1..=8), rng);
        let before = conditional_mutual_information(&rho, &["A"], &["B"], &["C"])?.value;
        let after_state = local_channel(&rho, &random_unitary(4, rng), rng.gen())?;
        let after = conditional_mutual_information(&after_state, &["A"], &["B"], &["C"])?.value;
        Ok(after - before)
    })?;
    Ok(CheckResult::from_violations("Lemma 4.2", v, QUANTUM_TOL))
}

/// `Σ_m |m⟩⟨m| ρ |m⟩⟨m| ⊗ |m…m⟩⟨m…m|` over the new `copies` registers;
/// `label` must already be diagonal.
pub fn broadcast_classical(rho: &DensityMatrix, label: &str, copies: &[&str]) -> Result<DensityMatrix> {
    let coherence = rho.coherence_on(label)?;
    if coherence > COPY_TOL {
        return Err(QcmiError::Precondition(format!("register {label} is not classical (coherence {coherence:e})")));
    }
    let layout = rho.layout();
    let d = layout.dim_of(label)?;
    let pos = layout.position(label).expect("checked by dim_of");
    let extra = SystemLayout::new(copies.iter().map(|c| (*c, d)))?;
    let out_layout = layout.concat(&extra)?;
    let k = extra.total_dim();
    let rep = |m: usize| extra.index_of(&vec![m; copies.len()]);
    let n = layout.total_dim();
    let mut mat = CMatrix::zeros(n * k, n * k);
    for i in 0..n {
        let mi = layout.digits(i)[pos];
        for j in 0..n {
            let mj = layout.digits(j)[pos];
            mat[(i * k + rep(mi), j * k + rep(mj))] = rho.matrix()[(i, j)];
        }
    }
    DensityMatrix::new(out_layout, mat)
}

/// Copies of a classical `M` in A handed to B and C leave the CMI no larger,
/// and copying leaves entropies unchanged.
pub fn check_classical_broadcast(trials: usize, seed: u64) -> Result<CheckResult> {
    let v = trials_par(trials, seed, |rng| {
        let layout = qubits(&["M", "W", "B", "C"]);
        let rho = random_density(&layout, rng.gen_range(1..=8), rng).dephase("M")?;
        let before = conditional_mutual_information(&rho, &["W", "M"], &["B"], &["C"])?.value;
        let out = broadcast_classical(&rho, "M", &["MB", "MC"])?;
        let after = conditional_mutual_information(&out, &["W", "M"], &["B", "MB"], &["C", "MC"])?.value;
        let mut copy_gap = 0.0f64;
        for (with, without) in [
            (vec!["M", "MB", "MC", "W", "B", "C"], vec!["M", "W", "B", "C"]),
            (vec!["M", "MC", "W", "C"], vec!["M", "W", "C"]),
            (vec!["M", "MB"], vec!["M"]),
        ] {
            let a = von_neumann_entropy(&out, &with)?.value;
            let b = von_neumann_entropy(&out, &without)?.value;
            copy_gap = copy_gap.max((a - b).abs());
        }
        if copy_gap > COPY_TOL {
            // pushed past the tolerance so the check fails
            return Ok(QUANTUM_TOL + copy_gap);
        }
        Ok(after - before)
    })?;
    Ok(CheckResult::from_violations("Lemma 4.3", v, QUANTUM_TOL))
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0
}

/// `Pr_{x←p}[x ∉ supp q]`.
pub fn escape_mass(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(_, &b)| b == 0.0).map(|(a, _)| a).sum()
}

/// `Pr_{x←D_X}[x ∉ SUPP(D_Y)] ≤ 2·TV(D_X, D_Y)`.
pub fn check_support_lemma(trials: usize, seed: u64) -> Result<CheckResult> {
    let v = trials_par(trials, seed, |rng| {
        let k = rng.gen_range(2..=10);
        let p = random_probability_vector(k, rng);
        // mix toward another law, then cut part of the support
        let lambda: f64 = rng.gen();
        let r = random_probability_vector(k, rng);
        let mut q: Vec<f64> = p.iter().zip(&r).map(|(a, b)| (1.0 - lambda) * a + lambda * b).collect();
        for x in q.iter_mut() {
            if rng.gen_bool(0.3) {
                *x = 0.0;
            }
        }
        let s: f64 = q.iter().sum();
        if s == 0.0 {
            q = vec![0.0; k];
            q[rng.gen_range(0..k)] = 1.0;
        } else {
            q.iter_mut().for_each(|x| *x /= s);
        }
        Ok(escape_mass(&p, &q) - 2.0 * total_variation(&p, &q))
    })?;
    Ok(CheckResult::from_violations("Lemma 4.6", v, CLASSICAL_TOL))
}

/// The four checks at `trials` each; permutation invariance runs `trials`
/// for every `t ∈ 1..=4` and reports the merged result.
pub fn run_all(trials: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut perm: Option<CheckResult> = None;
    for t in 1..=4 {
        let r = check_permutation_invariance(t, trials, seed.wrapping_add(t as u64))?;
        perm = Some(match perm {
            None => r,
            Some(p) => CheckResult {
                trials: p.trials + r.trials,
                max_violation: p.max_violation.max(r.max_violation),
                pass: p.pass && r.pass,
                ..p
            },
        });
    }
    Ok(vec![
        perm.expect("four values of t"),
        check_local_op_monotonicity(trials, seed)?,
        check_classical_broadcast(trials, seed)?,
        check_support_lemma(trials, seed)?,
    ])
}
