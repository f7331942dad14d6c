//! Query weights, heavy sets, the modified-Bob sampler and the BBBV check.

use std::collections::BTreeSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::error::{QcmiError, Result};
use crate::oraclesim::{OracleFunction, QueryMode, QueryRecord};
use crate::protocols::{query_input_distribution, run_branches, Branch, QueryCircuit, Step};
use crate::qmat::random::random_unitary;
use crate::qmat::{CVector, SystemLayout};

/// Slack allowed in `Σ q_x ≤ d`.
pub const WEIGHT_SUM_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueryWeightProfile {
    /// `q_x` indexed by `x`.
    pub weights: Vec<f64>,
    pub d: usize,
}

impl QueryWeightProfile {
    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Per-sample distribution `q_x / d` of the modified-Bob measurement.
    pub fn sampling_distribution(&self) -> Vec<f64> {
        if self.d == 0 {
            return vec![0.0; self.weights.len()];
        }
        self.weights.iter().map(|q| q / self.d as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeavySet {
    pub threshold: f64,
    pub members: BTreeSet<usize>,
}

impl HeavySet {
    /// `{x : q_x ≥ ε²/d²}`.
    pub fn from_profile(profile: &QueryWeightProfile, eps: f64) -> Self {
        let d = profile.d.max(1) as f64;
        let threshold = eps * eps / (d * d);
        let members = profile.weights.iter().enumerate().filter(|(_, &q)| q >= threshold).map(|(x, _)| x).collect();
        Self { threshold, members }
    }

    pub fn covered_by(&self, inputs: &BTreeSet<usize>) -> bool {
        self.members.is_subset(inputs)
    }
}

/// Pre-query input distribution of every query step, in order, averaged over
/// the branches of `init`.
pub fn query_marginals(
    layout: &SystemLayout,
    circuit: &QueryCircuit,
    h: &OracleFunction,
    init: Vec<Branch>,
) -> Result<Vec<Vec<f64>>> {
    let size = h.domain_size();
    let mut branches = init;
    let mut out = Vec::new();
    for step in &circuit.steps {
        if let Step::Query { input, .. } = step {
            let mut dist = vec![0.0; size];
            let total: f64 = branches.iter().map(|b| b.prob).sum();
            for b in &branches {
                let p = query_input_distribution(layout, input, &b.vec, size)?;
                let norm = b.vec.norm_squared();
                for (acc, q) in dist.iter_mut().zip(p) {
                    *acc += b.prob / total * q / norm;
                }
            }
            out.push(dist);
        }
        let single = QueryCircuit::new(circuit.n, vec![step.clone()]);
        branches = run_branches(layout, &single, Some(h), 1, branches)?;
    }
    Ok(out)
}

/// `q_x = Σ_t Pr[query t has input x]` for `circuit` run against `h`.
pub fn exact_query_weights(
    layout: &SystemLayout,
    circuit: &QueryCircuit,
    h: &OracleFunction,
    init: Vec<Branch>,
) -> Result<QueryWeightProfile> {
    let marginals = query_marginals(layout, circuit, h, init)?;
    let mut weights = vec![0.0; h.domain_size()];
    for m in &marginals {
        for (w, q) in weights.iter_mut().zip(m) {
            *w += q;
        }
    }
    let profile = QueryWeightProfile { weights, d: marginals.len() };
    debug_assert!(profile.total() <= profile.d as f64 + WEIGHT_SUM_TOL);
    Ok(profile)
}

/// `reps` rounds of: pick a query index uniformly, run the circuit up to it
/// and measure the input; each measured `x` is queried classically.
pub fn modified_bob_sample(
    layout: &SystemLayout,
    circuit: &QueryCircuit,
    h: &OracleFunction,
    init: Vec<Branch>,
    reps: usize,
    seed: u64,
) -> Result<QueryRecord> {
    let marginals = query_marginals(layout, circuit, h, init)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    sample_record(&marginals, h, reps, &mut rng)
}

/// Draws from precomputed per-query marginals.
pub fn sample_record<R: Rng + ?Sized>(
    marginals: &[Vec<f64>],
    h: &OracleFunction,
    reps: usize,
    rng: &mut R,
) -> Result<QueryRecord> {
    let mut record = QueryRecord::default();
    if marginals.is_empty() {
        return Ok(record);
    }
    let dists: Vec<WeightedIndex<f64>> = marginals
        .iter()
        .map(|m| WeightedIndex::new(m).map_err(|e| QcmiError::Validation(format!("query marginal: {e}"))))
        .collect::<Result<_>>()?;
    for _ in 0..reps {
        let i = rng.gen_range(0..dists.len());
        let x = dists[i].sample(rng);
        record.insert(x, h.eval(x))?;
    }
    Ok(record)
}

/// Exact law of the set of distinct points hit by `samples` i.i.d. draws
/// from `mu`, as `(bitmask, probability)` pairs in mask order.
pub fn hit_set_distribution(mu: &[f64], samples: usize) -> Vec<(usize, f64)> {
    if samples == 0 {
        return vec![(0, 1.0)];
    }
    let support: Vec<usize> = (0..mu.len()).filter(|&x| mu[x] > 0.0).collect();
    let k = support.len();
    let mass = |sub: usize| -> f64 { (0..k).filter(|j| sub >> j & 1 == 1).map(|j| mu[support[j]]).sum() };
    let mut out = Vec::new();
    for s in 1usize..1 << k {
        // Σ_{T ⊆ S} (-1)^{|S|-|T|} μ(T)^M
        let mut p = 0.0;
        let mut t = s;
        loop {
            let sign = if (s.count_ones() - t.count_ones()) % 2 == 0 { 1.0 } else { -1.0 };
            p += sign * mass(t).powi(samples as i32);
            if t == 0 {
                break;
            }
            t = (t - 1) & s;
        }
        if p > 1e-15 {
            let mask = (0..k).filter(|j| s >> j & 1 == 1).fold(0, |m, j| m | 1 << support[j]);
            out.push((mask, p));
        }
    }
    out.sort_by_key(|e| e.0);
    out
}

/// Per-B' repetition count `⌈3d²(ln d + ln 1/ε)⌉`, at least 1.
pub fn reference_reps(d: usize, eps: f64) -> usize {
    let d = d.max(1) as f64;
    ((3.0 * d * d * (d.ln() + (1.0 / eps).ln())).ceil() as usize).max(1)
}

/// Number of B' runs `⌈2·d·n/ε²⌉`.
pub fn reference_copies(d: usize, n: usize, eps: f64) -> usize {
    ((2 * d.max(1) * n) as f64 / (eps * eps)).ceil() as usize
}

/// `(‖ψ_d − φ_d‖, 2√d·√(Σ_{x: H(x)≠H'(x)} q_x))` for a coin-free circuit
/// started in `|0…0⟩`.
pub fn bbbv_check(layout: &SystemLayout, circuit: &QueryCircuit, h: &OracleFunction, h2: &OracleFunction) -> Result<(f64, f64)> {
    if h.n() != h2.n() {
        return Err(QcmiError::Validation("oracles over different domains".into()));
    }
    if circuit.steps.iter().any(|s| {
        matches!(s, Step::Coin { .. } | Step::Measure { .. } | Step::Query { mode: QueryMode::Classical, .. })
    }) {
        return Err(QcmiError::Precondition("BBBV check needs a unitary circuit".into()));
    }
    let run = |o: &OracleFunction| -> Result<CVector> {
        let mut b = run_branches(layout, circuit, Some(o), 1, vec![Branch::new(layout)])?;
        Ok(b.remove(0).vec)
    };
    let lhs = (run(h)? - run(h2)?).norm();
    let q = exact_query_weights(layout, circuit, h, vec![Branch::new(layout)])?;
    let diff: f64 = (0..h.domain_size()).filter(|&x| h.eval(x) != h2.eval(x)).map(|x| q.weights[x]).sum();
    Ok((lhs, 2.0 * (q.d as f64).sqrt() * diff.sqrt()))
}

/// Layout `x ⊗ y ⊗ w` and a circuit alternating Haar-random unitaries on all
/// registers with `d` queries of `mode` on `(x, y)`.
pub fn random_query_circuit<R: Rng + ?Sized>(
    n: usize,
    d: usize,
    work_dim: usize,
    mode: QueryMode,
    rng: &mut R,
) -> Result<(SystemLayout, QueryCircuit)> {
    let layout = SystemLayout::new([("x", 1usize << n), ("y", 2), ("w", work_dim)])?;
    let all = ["x", "y", "w"];
    let dim = layout.total_dim();
    let mut steps = Vec::with_capacity(2 * d + 1);
    for _ in 0..d {
        steps.push(Step::unitary(&all, random_unitary(dim, rng)));
        steps.push(Step::query(mode, "x", "y"));
    }
    steps.push(Step::unitary(&all, random_unitary(dim, rng)));
    Ok((layout, QueryCircuit::new(n, steps)))
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oraclesim::enumerate_oracles;
    use crate::qmat::{hadamard, kron};

    fn xy(n: usize) -> SystemLayout {
        SystemLayout::new([("x", 1usize << n), ("y", 2)]).unwrap()
    }

    fn oracle(n: usize, index: u64) -> OracleFunction {
        OracleFunction::from_index(n, index).unwrap()
    }

    #[test]
    fn repeated_classical_query_at_zero() {
        let layout = xy(2);
        let c = QueryCircuit::new(2, vec![Step::query(QueryMode::Classical, "x", "y"); 3]);
        let q = exact_query_weights(&layout, &c, &oracle(2, 9), vec![Branch::new(&layout)]).unwrap();
        assert_eq!(q.weights, vec![3.0, 0.0, 0.0, 0.0]);
        let r = modified_bob_sample(&layout, &c, &oracle(2, 9), vec![Branch::new(&layout)], 5, 1).unwrap();
        assert_eq!(r.pairs(), &[(0, true)]);
    }

    #[test]
    fn uniform_query_has_flat_weights() {
        let layout = xy(2);
        let h2 = kron(&hadamard(), &hadamard());
        let c = QueryCircuit::new(2, vec![Step::unitary(&["x"], h2), Step::query(QueryMode::Phase, "x", "y")]);
        let q = exact_query_weights(&layout, &c, &oracle(2, 5), vec![Branch::new(&layout)]).unwrap();
        assert!(q.weights.iter().all(|w| (w - 0.25).abs() < 1e-12));
    }

    #[test]
    fn random_circuits_respect_weight_budget_and_bbbv() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for trial in 0..100 {
            let d = 1 + trial % 3;
            let mode = if trial % 2 == 0 { QueryMode::Phase } else { QueryMode::Xor };
            let (layout, c) = random_query_circuit(2, d, 2, mode, &mut rng).unwrap();
            let h = oracle(2, rng.gen_range(0..16));
            let h2 = oracle(2, rng.gen_range(0..16));
            let q = exact_query_weights(&layout, &c, &h, vec![Branch::new(&layout)]).unwrap();
            assert!(q.total() <= d as f64 + WEIGHT_SUM_TOL);
            assert!((q.total() - d as f64).abs() < 1e-9);
            let (lhs, rhs) = bbbv_check(&layout, &c, &h, &h2).unwrap();
            assert!(lhs <= rhs + 1e-9, "trial {trial}: {lhs} > {rhs}");
            let (same, _) = bbbv_check(&layout, &c, &h, &h).unwrap();
            assert!(same < 1e-12);
        }
    }

    #[test]
    fn bbbv_is_blind_to_unqueried_points() {
        let layout = xy(1);
        // always queries x = 0; the oracles differ only at 1
        let c = QueryCircuit::new(1, vec![Step::query(QueryMode::Phase, "x", "y")]);
        let (lhs, rhs) = bbbv_check(&layout, &c, &oracle(1, 0), &oracle(1, 2)).unwrap();
        assert_eq!((lhs, rhs), (0.0, 0.0));
        let coin = QueryCircuit::new(1, vec![Step::coin("x", 2)]);
        assert!(bbbv_check(&layout, &coin, &oracle(1, 0), &oracle(1, 2)).is_err());
    }

    #[test]
    fn hit_sets_match_enumeration() {
        let mu = [0.5, 0.0, 0.3, 0.2];
        for m in 0..5u32 {
            let mut brute = std::collections::BTreeMap::new();
            for seq in 0..4usize.pow(m) {
                let (mut mask, mut p, mut s) = (0usize, 1.0, seq);
                for _ in 0..m {
                    mask |= 1 << (s % 4);
                    p *= mu[s % 4];
                    s /= 4;
                }
                if p > 0.0 {
                    *brute.entry(mask).or_insert(0.0) += p;
                }
            }
            let exact = hit_set_distribution(&mu, m as usize);
            assert_eq!(exact.len(), brute.len());
            for (mask, p) in exact {
                assert!((brute[&mask] - p).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn heavy_point_is_included() {
        // one query at x = 0 or 1 with equal weight
        let layout = xy(1);
        let c = QueryCircuit::new(1, vec![Step::unitary(&["x"], hadamard()), Step::query(QueryMode::Phase, "x", "y")]);
        let h = oracle(1, 1);
        let q = exact_query_weights(&layout, &c, &h, vec![Branch::new(&layout)]).unwrap();
        assert!((q.weights[0] - 0.5).abs() < 1e-12);
        let heavy = HeavySet::from_profile(&q, 0.5);
        assert_eq!(heavy.members.len(), 2);
        let marginals = query_marginals(&layout, &c, &h, vec![Branch::new(&layout)]).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let trials = 2000;
        let hits = (0..trials)
            .filter(|_| sample_record(&marginals, &h, 20, &mut rng).unwrap().get(0).is_some())
            .count();
        let (_, hi) = wilson_interval(hits, trials, Z95);
        assert!(hi >= 1.0 - 0.5f64.powi(20));
        assert!(hits as f64 / trials as f64 >= 0.99);
    }

    #[test]
    fn sampled_path_agrees_with_exact_law() {
        let layout = xy(2);
        let h2 = kron(&hadamard(), &hadamard());
        let c = QueryCircuit::new(2, vec![Step::unitary(&["x"], h2), Step::query(QueryMode::Phase, "x", "y")]);
        let h = oracle(2, 6);
        let marginals = query_marginals(&layout, &c, &h, vec![Branch::new(&layout)]).unwrap();
        let law = hit_set_distribution(&marginals[0], 3);
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let trials = 4000;
        let mut counts = std::collections::BTreeMap::new();
        for _ in 0..trials {
            let r = sample_record(&marginals, &h, 3, &mut rng).unwrap();
            assert!(r.pairs().iter().all(|&(x, y)| h.eval(x) == y));
            *counts.entry(r.inputs().fold(0usize, |m, x| m | 1 << x)).or_insert(0usize) += 1;
        }
        for (mask, p) in law {
            let (lo, hi) = wilson_interval(counts.get(&mask).copied().unwrap_or(0), trials, 4.0);
            assert!(lo <= p && p <= hi, "mask {mask}: {p} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn wilson_reference_values() {
        let (lo, hi) = wilson_interval(5, 10, Z95);
        assert!((lo - 0.236_593).abs() < 1e-5 && (hi - 0.763_407).abs() < 1e-5);
        assert_eq!(wilson_interval(0, 0, Z95), (0.0, 1.0));
    }

    #[test]
    fn reference_constants() {
        assert_eq!(reference_reps(1, 0.1), 7);
        assert_eq!(reference_reps(2, 0.5), 17);
        assert_eq!(reference_copies(1, 2, 0.1), 400);
    }

    #[test]
    fn weights_do_not_depend_on_unqueried_oracle_values() {
        let layout = xy(1);
        let c = QueryCircuit::new(1, vec![Step::query(QueryMode::Classical, "x", "y")]);
        for h in enumerate_oracles(1).unwrap() {
            let q = exact_query_weights(&layout, &c, &h, vec![Branch::new(&layout)]).unwrap();
            assert_eq!(q.weights, vec![1.0, 0.0]);
        }
    }
}
