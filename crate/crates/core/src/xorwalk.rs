//! XOR random walks on `{0,1}^N`, `N = 2^n`: entropies of `D^t` through the
//! Walsh-Hadamard transform, the walk form of the non-adaptive CMI, and the
//! closed forms of the Poissonized walk.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::ensemble::Ensemble;
use crate::error::{QcmiError, Result};
use crate::oraclesim::{enumerate_oracles, oracle_count};
use crate::protocols::{make_protocol, run_branches, Branch, Builtin, Party};
use crate::qentropy::{binary_entropy, entropy_of_spectrum};
use crate::qmat::SystemLayout;

/// Largest walk coordinate count `N`; distributions have `2^N` entries.
pub const WALK_BITS_CAP: usize = 16;
/// Constant replacing the `O(·)` of the `f(p)` bounds.
pub const F_BOUND_CONSTANT: f64 = 8.0;
const SUM_TOL: f64 = 1e-12;

/// Per-query step laws. Component `ℓ` is `[p_{ℓ,0}, p_{ℓ,1}, …, p_{ℓ,N}]`:
/// the mass on the zero vector, then on each unit vector `e_i`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct XorStepDistribution {
    pub n: usize,
    pub components: Vec<Vec<f64>>,
}

impl XorStepDistribution {
    pub fn new(n: usize, components: Vec<Vec<f64>>) -> Result<Self> {
        let bits = 1usize.checked_shl(n as u32).filter(|&b| b <= WALK_BITS_CAP);
        let bits = bits.ok_or_else(|| QcmiError::Cap(format!("walk on 2^{n} coordinates exceeds {WALK_BITS_CAP}")))?;
        if components.is_empty() {
            return Err(QcmiError::Validation("a step needs at least one query".into()));
        }
        for c in &components {
            if c.len() != bits + 1 {
                return Err(QcmiError::Validation(format!("component has {} entries, expected {}", c.len(), bits + 1)));
            }
            if c.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                return Err(QcmiError::Validation("negative step probability".into()));
            }
            let s: f64 = c.iter().sum();
            if (s - 1.0).abs() > SUM_TOL {
                return Err(QcmiError::Validation(format!("component sums to {s}")));
            }
        }
        Ok(Self { n, components })
    }

    pub fn single(n: usize, probs: Vec<f64>) -> Result<Self> {
        Self::new(n, vec![probs])
    }

    /// `N = 2^n`.
    pub fn bits(&self) -> usize {
        1 << self.n
    }

    pub fn d(&self) -> usize {
        self.components.len()
    }

    /// `Σ_ℓ p_{ℓ,i}` for `i = 1..N`.
    pub fn unit_masses(&self) -> Vec<f64> {
        (1..=self.bits()).map(|i| self.components.iter().map(|c| c[i]).sum()).collect()
    }

    /// Walsh-Hadamard image of one step: `χ(s) = Π_ℓ (p_{ℓ,0} + Σ_i p_{ℓ,i} (−1)^{s_i})`.
    fn character(&self) -> Vec<f64> {
        let bits = self.bits();
        (0..1usize << bits)
            .map(|s| {
                self.components
                    .iter()
                    .map(|c| c[0] + (0..bits).map(|i| if s >> i & 1 == 1 { -c[i + 1] } else { c[i + 1] }).sum::<f64>())
                    .product()
            })
            .collect()
    }

    /// The law of one full step `D = D[1] ⊕ … ⊕ D[d]` over `{0,1}^N`.
    pub fn distribution(&self) -> Vec<f64> {
        let mut chi = self.character();
        inverse_wht(&mut chi);
        chi
    }
}

/// In-place unnormalized Walsh-Hadamard butterfly; length must be a power
/// of two.
pub fn wht(v: &mut [f64]) {
    assert!(v.len().is_power_of_two(), "WHT length {} is not a power of two", v.len());
    let mut h = 1;
    while h < v.len() {
        for i in (0..v.len()).step_by(2 * h) {
            for j in i..i + h {
                let (a, b) = (v[j], v[j + h]);
                v[j] = a + b;
                v[j + h] = a - b;
            }
        }
        h *= 2;
    }
}

pub fn inverse_wht(v: &mut [f64]) {
    wht(v);
    let n = v.len() as f64;
    v.iter_mut().for_each(|x| *x /= n);
}

fn check_len(len: usize) -> Result<()> {
    if !len.is_power_of_two() || len > 1 << WALK_BITS_CAP {
        return Err(QcmiError::Cap(format!("distribution length {len} is not a power of two up to 2^{WALK_BITS_CAP}")));
    }
    Ok(())
}

/// Law of `X ⊕ Y` for independent `X ~ a`, `Y ~ b`.
pub fn xor_convolve(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(QcmiError::Validation("convolving distributions of different lengths".into()));
    }
    check_len(a.len())?;
    let (mut fa, mut fb) = (a.to_vec(), b.to_vec());
    wht(&mut fa);
    wht(&mut fb);
    let mut out: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
    inverse_wht(&mut out);
    // round-off can leave tiny negatives
    out.iter_mut().for_each(|x| *x = x.max(0.0));
    Ok(out)
}

/// Law of `D^t`, the XOR of `t` independent steps; `D^0` is the point mass
/// at 0.
pub fn walk_distribution(steps: &XorStepDistribution, t: usize) -> Vec<f64> {
    let mut f: Vec<f64> = steps.character().iter().map(|c| c.powi(t as i32)).collect();
    inverse_wht(&mut f);
    f.iter_mut().for_each(|x| *x = x.max(0.0));
    f
}

/// `S(D^t)` in bits.
pub fn walk_entropy(steps: &XorStepDistribution, t: usize) -> f64 {
    entropy_of_spectrum(&walk_distribution(steps, t))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesMethod {
    WhtExact,
    PoissonizedAnalytic,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WalkEntropySeries {
    pub values: BTreeMap<usize, f64>,
    pub method: SeriesMethod,
}

pub fn walk_entropy_series(steps: &XorStepDistribution, ts: impl IntoIterator<Item = usize>) -> WalkEntropySeries {
    WalkEntropySeries { values: ts.into_iter().map(|t| (t, walk_entropy(steps, t))).collect(), method: SeriesMethod::WhtExact }
}

pub fn poissonized_series(
    steps: &XorStepDistribution,
    ts: impl IntoIterator<Item = usize>,
    mu: f64,
) -> Result<WalkEntropySeries> {
    let values = ts.into_iter().map(|t| Ok((t, poissonized_walk_entropy(steps, t, mu)?))).collect::<Result<_>>()?;
    Ok(WalkEntropySeries { values, method: SeriesMethod::PoissonizedAnalytic })
}

/// `I(A⁰:B⁰|E⁰) = 2S(D^{t+1}) − S(D^t) − S(D^{t+2})` for `t` copies held by Eve.
pub fn walk_cmi(steps: &XorStepDistribution, t: usize) -> f64 {
    2.0 * walk_entropy(steps, t + 1) - walk_entropy(steps, t) - walk_entropy(steps, t + 2)
}

/// `Pr[Pois(λ) is odd] = (1 − e^{−2λ})/2`.
pub fn parity_of_poisson(lambda: f64) -> Result<f64> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(QcmiError::Validation(format!("Poisson parameter {lambda} must be finite and non-negative")));
    }
    Ok(-(-2.0 * lambda).exp_m1() / 2.0)
}

fn check_mu(mu: f64) -> Result<f64> {
    if !mu.is_finite() || mu < 2.0 {
        return Err(QcmiError::Validation(format!("Poissonization needs mu >= 2, got {mu}")));
    }
    Ok(mu)
}

/// Rate `ln(μd)` of the per-query Poisson repetition count.
pub fn poisson_rate(d: usize, mu: f64) -> Result<f64> {
    Ok((check_mu(mu)? * d as f64).ln())
}

/// `S(D̃^t) = Σ_i H₂((1 − e^{−2 t ln(μd) Σ_ℓ p_{ℓ,i}})/2)`; the coordinates
/// of the Poissonized walk are independent.
pub fn poissonized_walk_entropy(steps: &XorStepDistribution, t: usize, mu: f64) -> Result<f64> {
    let rate = poisson_rate(steps.d(), mu)?;
    steps.unit_masses().iter().map(|&p| Ok(binary_entropy(parity_of_poisson(t as f64 * rate * p)?))).sum()
}

/// `2S(D̃^t) − S(D̃^{t−1}) − S(D̃^{t+1})`, the CMI with `t − 1` Poissonized
/// copies.
pub fn poissonized_walk_cmi(steps: &XorStepDistribution, t: usize, mu: f64) -> Result<f64> {
    if t == 0 {
        return Err(QcmiError::Validation("t must be at least 1".into()));
    }
    Ok(2.0 * poissonized_walk_entropy(steps, t, mu)?
        - poissonized_walk_entropy(steps, t - 1, mu)?
        - poissonized_walk_entropy(steps, t + 1, mu)?)
}

/// Exact expected query count of `copies` Poissonized runs of a `d`-query
/// party: each query repeats `Pois(ln μd)` times.
pub fn poissonized_expected_queries(d: usize, mu: f64, copies: usize) -> Result<f64> {
    Ok(copies as f64 * d as f64 * poisson_rate(d, mu)?)
}

fn parity_entropy(x: f64) -> f64 {
    binary_entropy(-(-2.0 * x).exp_m1() / 2.0)
}

/// `f(p) = 2H((1−e^{−2tp})/2) − H((1−e^{−2(t−1)p})/2) − H((1−e^{−2(t+1)p})/2)`.
pub fn f_value(t: usize, p: f64) -> f64 {
    let t = t as f64;
    2.0 * parity_entropy(t * p) - parity_entropy((t - 1.0) * p) - parity_entropy((t + 1.0) * p)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `p ∈ [0, 1]`, bound `C·p/t`.
    Linear,
    /// `p > 1`, bound `C·e^{−t}`.
    Exponential,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundRow {
    pub t: usize,
    /// `p` for `f`, `q` for the tanh bound.
    pub x: f64,
    pub value: f64,
    pub bound: f64,
    /// `value / bound`, 0 when both vanish.
    pub ratio: f64,
    pub regime: Option<Regime>,
    pub holds: bool,
}

impl BoundRow {
    fn new(t: usize, x: f64, value: f64, bound: f64, regime: Option<Regime>) -> Self {
        let ratio = if bound > 0.0 { value / bound } else if value <= 0.0 { 0.0 } else { f64::INFINITY };
        Self { t, x, value, bound, ratio, regime, holds: value <= bound + 1e-15 }
    }
}

/// `f(p)` against `C·p/t` on `[0, 1]` and `C·e^{−t}` above.
pub fn f_bound_sweep(t_values: &[usize], p_grid: &[f64]) -> Result<Vec<BoundRow>> {
    let mut rows = Vec::new();
    for &t in t_values {
        if t < 2 {
            return Err(QcmiError::Validation("f(p) bounds need t >= 2".into()));
        }
        for &p in p_grid {
            if p.is_nan() || p < 0.0 {
                return Err(QcmiError::Validation(format!("p = {p} must be non-negative")));
            }
            let (bound, regime) = if p <= 1.0 {
                (F_BOUND_CONSTANT * p / t as f64, Regime::Linear)
            } else {
                (F_BOUND_CONSTANT * (-(t as f64)).exp(), Regime::Exponential)
            };
            rows.push(BoundRow::new(t, p, f_value(t, p), bound, Some(regime)));
        }
    }
    Ok(rows)
}

/// `q^{t+1}(atanh(q^{t−1})/q − atanh(q^{t+1}))`.
pub fn tanh_term(t: usize, q: f64) -> f64 {
    let t = t as i32;
    if q == 0.0 {
        // q^{t+1}/q · q^{t−1} → 0 for t > 1
        return 0.0;
    }
    q.powi(t + 1) * (q.powi(t - 1).atanh() / q - q.powi(t + 1).atanh())
}

/// `tanh_term(t, q) ≤ 1/(t−1) + 1/(t+1)` on `q ∈ [0, 1)`.
pub fn tanh_bound_sweep(t_values: &[usize], q_grid: &[f64]) -> Result<Vec<BoundRow>> {
    let mut rows = Vec::new();
    for &t in t_values {
        if t < 2 {
            return Err(QcmiError::Validation("the tanh bound needs t >= 2".into()));
        }
        let bound = 1.0 / (t - 1) as f64 + 1.0 / (t + 1) as f64;
        for &q in q_grid {
            if !(0.0..1.0).contains(&q) {
                return Err(QcmiError::Validation(format!("q = {q} outside [0, 1)")));
            }
            rows.push(BoundRow::new(t, q, tanh_term(t, q), bound, None));
        }
    }
    Ok(rows)
}

/// `I(A:B|E_1..E_t)` of the non-adaptive single-query protocol whose step
/// law is `probs`, where `E_j` are fresh runs of Alice's algorithm on the
/// same oracle. Computed on the quantum state, averaging over all oracles.
pub fn non_adaptive_quantum_cmi(n: usize, probs: &[f64], t: usize) -> Result<f64> {
    let spec = make_protocol(&Builtin::NonAdaptive { n, probs: probs.to_vec() })?;
    let alice_regs = spec.owned_by(Party::Alice);
    let alice_layout = SystemLayout::new(
        alice_regs.iter().map(|r| spec.register(r).map(|reg| (r.to_string(), reg.dim))).collect::<Result<Vec<_>>>()?,
    )?;
    let adim = alice_layout.total_dim();
    let copies: Vec<String> = (1..=t).map(|j| format!("E{j}")).collect();
    let mut slots = vec![("A", adim), ("B", adim)];
    slots.extend(copies.iter().map(|c| (c.as_str(), adim)));
    let count = oracle_count(n);
    let mut ens = Ensemble::new(&[("H", count)], &slots)?;
    for h in enumerate_oracles(n)? {
        let out = run_branches(&alice_layout, &spec.alice[0], Some(&h), 0, vec![Branch::new(&alice_layout)])?;
        if out.len() != 1 {
            return Err(QcmiError::Precondition("Alice's algorithm must be coin-free".into()));
        }
        ens.push(1.0 / count as f64, vec![h.index() as usize], &vec![&out[0].vec; 2 + t])?;
    }
    let e: Vec<&str> = copies.iter().map(String::as_str).collect();
    Ok(ens.cmi(&["A"], &["B"], &e)?.value)
}

/// CSV with columns `t, p|q, value, bound, ratio`.
pub fn rows_to_csv(rows: &[BoundRow], x_name: &str) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| QcmiError::Serialization(e.to_string());
    w.write_record(["t", x_name, "value", "bound", "ratio"]).map_err(io)?;
    for r in rows {
        w.write_record([r.t.to_string(), r.x.to_string(), r.value.to_string(), r.bound.to_string(), r.ratio.to_string()])
            .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| QcmiError::Serialization(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| QcmiError::Serialization(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmat::random::random_probability_vector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn direct_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; a.len()];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                out[i ^ j] += x * y;
            }
        }
        out
    }

    fn random_steps(n: usize, d: usize, seed: u64) -> XorStepDistribution {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let comps = (0..d).map(|_| random_probability_vector((1 << n) + 1, &mut rng)).collect();
        XorStepDistribution::new(n, comps).unwrap()
    }

    #[test]
    fn wht_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let v = random_probability_vector(64, &mut rng);
        let mut w = v.clone();
        inverse_wht(&mut w);
        wht(&mut w);
        assert!(v.iter().zip(&w).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn convolution_matches_direct_loop() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for len in [16, 256] {
            let a = random_probability_vector(len, &mut rng);
            let b = random_probability_vector(len, &mut rng);
            let fast = xor_convolve(&a, &b).unwrap();
            let slow = direct_convolve(&a, &b);
            assert!(fast.iter().zip(&slow).all(|(x, y)| (x - y).abs() < 1e-12));
            assert!((fast.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn identity_and_absorbing_elements() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let a = random_probability_vector(16, &mut rng);
        let mut delta = vec![0.0; 16];
        delta[0] = 1.0;
        let same = xor_convolve(&a, &delta).unwrap();
        assert!(a.iter().zip(&same).all(|(x, y)| (x - y).abs() < 1e-12));
        let uniform = vec![1.0 / 16.0; 16];
        assert!(xor_convolve(&uniform, &a).unwrap().iter().all(|x| (x - 1.0 / 16.0).abs() < 1e-12));
    }

    #[test]
    fn oversized_convolution_is_rejected() {
        assert!(xor_convolve(&[0.5; 3], &[0.5; 3]).is_err());
        assert!(XorStepDistribution::single(5, vec![1.0 / 33.0; 33]).is_err());
    }

    #[test]
    fn step_distribution_is_convolution_of_components() {
        let s = random_steps(2, 3, 4);
        let mut direct = vec![0.0; 16];
        direct[0] = 1.0;
        for c in &s.components {
            let mut one = vec![0.0; 16];
            one[0] = c[0];
            for i in 0..4 {
                one[1 << i] = c[i + 1];
            }
            direct = direct_convolve(&direct, &one);
        }
        assert!(s.distribution().iter().zip(&direct).all(|(x, y)| (x - y).abs() < 1e-12));
        let two = walk_distribution(&s, 2);
        let slow = direct_convolve(&direct, &direct);
        assert!(two.iter().zip(&slow).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn deterministic_step_has_no_cmi() {
        let s = XorStepDistribution::single(1, vec![0.0, 1.0, 0.0]).unwrap();
        for t in 0..6 {
            assert!(walk_cmi(&s, t).abs() < 1e-12);
        }
    }

    #[test]
    fn walk_cmi_matches_quantum_state() {
        let probs = vec![0.5, 0.25, 0.25];
        let steps = XorStepDistribution::single(1, probs.clone()).unwrap();
        let quantum = non_adaptive_quantum_cmi(1, &probs, 2).unwrap();
        assert!((quantum - walk_cmi(&steps, 2)).abs() < 1e-6, "{quantum} vs {}", walk_cmi(&steps, 2));
    }

    #[test]
    fn walk_entropy_never_decreases() {
        for seed in 0..5 {
            let s = random_steps(2, 2, 10 + seed);
            let series = walk_entropy_series(&s, 0..10);
            let v: Vec<f64> = series.values.values().copied().collect();
            assert!(v.windows(2).all(|w| w[1] >= w[0] - 1e-12));
            assert!(v.iter().all(|&x| (0.0..=4.0 + 1e-12).contains(&x)));
        }
    }

    #[test]
    fn walk_cmi_decreases_in_t() {
        for seed in 0..5 {
            let s = random_steps(2, 2, 20 + seed);
            let v: Vec<f64> = (1..=8).map(|t| walk_cmi(&s, t)).collect();
            assert!(v.iter().all(|&x| x >= -1e-8));
            assert!(v.windows(2).all(|w| w[1] <= w[0] + 1e-12), "seed {seed}: {v:?}");
        }
    }

    #[test]
    fn poisson_parity() {
        assert_eq!(parity_of_poisson(0.0).unwrap(), 0.0);
        assert!((parity_of_poisson(50.0).unwrap() - 0.5).abs() < 1e-10);
        assert!(parity_of_poisson(-1.0).is_err());
        // odd terms of the series, built up recursively
        let lambda: f64 = 1.0;
        let (mut term, mut series) = ((-lambda).exp(), 0.0);
        for k in 1..=60 {
            term *= lambda / k as f64;
            if k % 2 == 1 {
                series += term;
            }
        }
        assert!((parity_of_poisson(lambda).unwrap() - series).abs() < 1e-12);
    }

    /// `D̃^t` from the mixture over Poisson counts, truncated at 10σ.
    fn truncated_poissonized(steps: &XorStepDistribution, t: usize, mu: f64) -> Vec<f64> {
        let lambda = t as f64 * poisson_rate(steps.d(), mu).unwrap();
        let kmax = (lambda + 10.0 * lambda.sqrt()).ceil() as usize + 1;
        let len = 1usize << steps.bits();
        let mut f = vec![1.0; len];
        for c in &steps.components {
            let one = XorStepDistribution::single(steps.n, c.clone()).unwrap().character();
            for (s, chi) in one.iter().enumerate() {
                let (mut w, mut acc) = ((-lambda).exp(), 0.0);
                for k in 0..=kmax {
                    if k > 0 {
                        w *= lambda / k as f64;
                    }
                    acc += w * chi.powi(k as i32);
                }
                f[s] *= acc;
            }
        }
        inverse_wht(&mut f);
        f
    }

    #[test]
    fn poissonized_entropy_matches_truncated_mixture() {
        let s = random_steps(2, 2, 30);
        for t in [1, 2, 3] {
            let exact = entropy_of_spectrum(&truncated_poissonized(&s, t, 2.0));
            let analytic = poissonized_walk_entropy(&s, t, 2.0).unwrap();
            assert!((exact - analytic).abs() < 1e-6, "t={t}: {exact} vs {analytic}");
        }
    }

    #[test]
    fn poissonized_edge_cases() {
        let idle = XorStepDistribution::single(1, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(poissonized_walk_entropy(&idle, 5, 2.0).unwrap(), 0.0);
        let busy = XorStepDistribution::single(0, vec![0.0, 1.0]).unwrap();
        assert!((poissonized_walk_entropy(&busy, 40, 2.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(poissonized_walk_entropy(&busy, 1, 1.5).is_err());
        assert!((poissonized_expected_queries(2, 2.0, 3).unwrap() - 6.0 * 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn f_bounds_hold_on_grid() {
        assert_eq!(f_value(4, 0.0), 0.0);
        assert!(f_value(4, 0.5) <= 8.0 * 0.125);
        let p: Vec<f64> = (0..=200).map(|k| k as f64 * 0.05).collect();
        let rows = f_bound_sweep(&[2, 3, 4, 8, 16, 32], &p).unwrap();
        let bad: Vec<_> = rows.iter().filter(|r| !r.holds).collect();
        assert!(bad.is_empty(), "{bad:?}");
        assert!(f_bound_sweep(&[1], &p).is_err());
    }

    #[test]
    fn tanh_bound_holds_on_grid() {
        let q: Vec<f64> = (0..1000).map(|k| k as f64 / 1000.0).collect();
        let rows = tanh_bound_sweep(&[2, 3, 5, 10, 50], &q).unwrap();
        assert!(rows.iter().all(|r| r.holds));
    }

    #[test]
    fn binary_entropy_is_concave() {
        let h: Vec<f64> = (0..=1000).map(|k| binary_entropy(k as f64 / 1000.0)).collect();
        assert!(h.windows(3).all(|w| w[0] + w[2] - 2.0 * w[1] <= 1e-12));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let rows = f_bound_sweep(&[2], &[0.0, 0.5]).unwrap();
        let csv = rows_to_csv(&rows, "p").unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,p,value,bound,ratio");
        assert_eq!(lines.len(), 3);
    }
}
