//! Attack on QPKE with classical-query key generation: heavy-query sampling
//! by modified Bob, recovery of Alice's classical view, and reprogramming of
//! the real oracle on the recovered query record.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::weights::{hit_set_distribution, query_marginals, HeavySet, QueryWeightProfile};
use super::{argmin, measure_all, pure_part, values, AttackFlags, AttackParams, AttackReport, CMI_BOUND_TOL};
use crate::ensemble::{BlockRecovery, Ensemble};
use crate::error::{QcmiError, Result};
use crate::oraclesim::{
    enumerate_oracles, oracle_count, reprogram_oracle, OracleFunction, QueryMode, QueryRecord, ORACLE_N_CAP,
};
use crate::protocols::{run_branches, Branch, Party, ProtocolSpec, Step};
use crate::qmat::{CVector, SystemLayout};
use crate::recovery::fr_bound;

#[derive(Clone, Debug, PartialEq)]
pub struct KeygenOptions {
    /// Number of modified-Bob runs; prefixes `0..=t` are scanned.
    pub t: usize,
    /// Measured queries per modified-Bob run.
    pub reps: usize,
    /// Heavy-set parameter: `W_B = {x : q_x ≥ ε²/d²}`.
    pub eps: f64,
    pub grid: Vec<f64>,
}

impl KeygenOptions {
    /// `t = ⌈2d·n/ε²⌉`, `reps = ⌈3d²(ln d + ln 1/ε)⌉` for Bob's query count `d`.
    pub fn reference(spec: &ProtocolSpec, eps: f64, grid: Vec<f64>) -> Self {
        let d = spec.bob.d();
        Self { t: super::reference_copies(d, spec.n, eps), reps: super::reference_reps(d, eps), eps, grid }
    }
}

/// `Σ_x 3^x (1 + y)` over the record.
fn encode_record(r: &QueryRecord) -> usize {
    r.pairs().iter().map(|&(x, y)| 3usize.pow(x as u32) * (1 + usize::from(y))).sum()
}

fn decode_record(mut code: usize, size: usize) -> Result<QueryRecord> {
    let mut pairs = Vec::new();
    for x in 0..size {
        match code % 3 {
            1 => pairs.push((x, false)),
            2 => pairs.push((x, true)),
            _ => {}
        }
        code /= 3;
    }
    QueryRecord::new(pairs)
}

/// Real branch context a fake view is evaluated against.
struct Context {
    h: OracleFunction,
    /// A1 branch index into `a1_store` (Bob's input).
    a1: usize,
    /// Bob's measured branch after the real run.
    bob: Branch,
    /// Shared by every `R_E` outcome of one real run.
    bob_id: usize,
    k_b: usize,
    /// Classical part of Bob's output `(k_B, m2)`.
    bob_out: Vec<usize>,
    heavy: BTreeSet<usize>,
    mask: usize,
}

struct Names {
    alice: Vec<String>,
    bob: Vec<String>,
    eve: Vec<String>,
    pk: Vec<String>,
    ct: Option<String>,
}

impl Names {
    fn refs(v: &[String]) -> Vec<&str> {
        v.iter().map(String::as_str).collect()
    }
}

/// Breaks a perfectly complete two-round protocol whose first Alice stage
/// queries classically.
///
/// Eve's register holds the classical part of `m1`, the pure public-key
/// copies when `m1` is quantum, and the query record `R_E` that `t` runs of
/// modified Bob with `reps` measured queries each would collect; its law is
/// computed exactly. Eve recovers Alice's view `(st_A, R_A)`, reprograms the
/// real oracle on `In_A'` and runs the second stage with it.
pub fn eve_classical_keygen(spec: &ProtocolSpec, opts: &KeygenOptions) -> Result<AttackReport> {
    if !spec.perfect_complete {
        return Err(QcmiError::Precondition("the reprogramming attack needs perfect completeness".into()));
    }
    if !spec.is_two_round() || spec.alice.len() != 2 {
        return Err(QcmiError::Precondition("the attack targets a two-round protocol".into()));
    }
    if spec.alice[0].steps.iter().any(|s| matches!(s, Step::Query { mode, .. } if *mode != QueryMode::Classical)) {
        return Err(QcmiError::Precondition("key generation must query classically".into()));
    }
    if spec.n > ORACLE_N_CAP {
        return Err(QcmiError::Cap(format!("exact attack needs n <= {ORACLE_N_CAP}")));
    }
    let layout = spec.sampled_layout()?;
    let size = 1usize << spec.n;
    let h_count = oracle_count(spec.n);
    let classical_reg = |l: &str| spec.register(l).map(|r| r.classical).unwrap_or(false);
    let alice_st: Vec<&str> = spec.owned_by(Party::Alice).into_iter().filter(|l| classical_reg(l)).collect();
    let m1_regs: Vec<&str> = spec.m1.iter().flat_map(|m| m.registers.iter().map(String::as_str)).collect();
    let m1_cl: Vec<&str> = m1_regs.iter().copied().filter(|l| classical_reg(l)).collect();
    let m1_q: Vec<&str> = m1_regs.iter().copied().filter(|l| !classical_reg(l)).collect();
    let m2_regs: Vec<&str> = spec.m2.iter().flat_map(|m| m.registers.iter().map(String::as_str)).collect();
    let m2_cl: Vec<&str> = m2_regs.iter().copied().filter(|l| classical_reg(l)).collect();
    let m2_q: Vec<&str> = m2_regs.iter().copied().filter(|l| !classical_reg(l)).collect();
    let kb = spec.key_b.as_str();
    let dim = |l: &str| spec.register(l).map(|r| r.dim).unwrap_or(1);

    // label layout: H, Alice view, Bob output, Eve
    let mut names = Names {
        alice: alice_st.iter().map(|l| format!("A.{l}")).collect(),
        bob: vec!["kB".into()],
        eve: m1_cl.iter().map(|l| format!("m1.{l}")).collect(),
        pk: (1..=opts.t).map(|j| format!("P{j}")).collect(),
        ct: (!m2_q.is_empty()).then(|| "ct".to_string()),
    };
    names.alice.push("RA".into());
    names.bob.extend(m2_cl.iter().map(|l| format!("m2.{l}")));
    names.eve.push("RE".into());
    if m1_q.is_empty() {
        names.pk.clear();
    }
    let mut label_dims: Vec<(String, usize)> = vec![("H".into(), h_count)];
    label_dims.extend(alice_st.iter().map(|l| (format!("A.{l}"), dim(l))));
    label_dims.push(("RA".into(), 3usize.pow(size as u32)));
    label_dims.push(("kB".into(), dim(kb)));
    label_dims.extend(m2_cl.iter().map(|l| (format!("m2.{l}"), dim(l))));
    label_dims.extend(m1_cl.iter().map(|l| (format!("m1.{l}"), dim(l))));
    label_dims.push(("RE".into(), 1usize << (2 * size)));
    let pk_dim: usize = m1_q.iter().map(|l| dim(l)).product();
    let ct_dim: usize = m2_q.iter().map(|l| dim(l)).product();
    let mut slot_dims: Vec<(String, usize)> = names.pk.iter().map(|p| (p.clone(), pk_dim)).collect();
    if let Some(ct) = &names.ct {
        slot_dims.push((ct.clone(), ct_dim));
    }
    let lrefs: Vec<(&str, usize)> = label_dims.iter().map(|(l, d)| (l.as_str(), *d)).collect();
    let srefs: Vec<(&str, usize)> = slot_dims.iter().map(|(l, d)| (l.as_str(), *d)).collect();

    // real runs, shared by every prefix
    struct Real {
        h: OracleFunction,
        a1: usize,
        prob: f64,
        alice_labels: Vec<usize>,
        m1_labels: Vec<usize>,
        pk: Option<CVector>,
        mu: Vec<f64>,
        heavy: BTreeSet<usize>,
        bob: Vec<(Branch, Vec<usize>, Option<CVector>)>,
    }
    let mut reals = Vec::new();
    let mut a1_store: Vec<Branch> = Vec::new();
    for h in enumerate_oracles(spec.n)? {
        for a in run_branches(&layout, &spec.alice[0], Some(&h), 0, vec![Branch::new(&layout)])? {
            let record = QueryRecord::new(a.record.iter().filter(|e| e.tag == 0).map(|e| (e.x, e.y)))?;
            let mut alice_labels = values(&layout, &a, &alice_st)?;
            alice_labels.push(encode_record(&record));
            let m1_labels = values(&layout, &a, &m1_cl)?;
            let pk = if m1_q.is_empty() { None } else { Some(pure_part(&layout, &a.vec, &m1_q)?) };
            let start = Branch { prob: 1.0, ..a.clone() };
            let marg = query_marginals(&layout, &spec.bob, &h, vec![start.clone()])?;
            let mut weights = vec![0.0; size];
            for m in &marg {
                for (w, q) in weights.iter_mut().zip(m) {
                    *w += q;
                }
            }
            let profile = QueryWeightProfile { weights, d: marg.len() };
            let heavy = HeavySet::from_profile(&profile, opts.eps).members;
            let mut measured = vec![kb];
            measured.extend(&m2_cl);
            let bob = measure_all(&layout, spec.n, &measured, run_branches(&layout, &spec.bob, Some(&h), 1, vec![start])?)?;
            let bob = bob
                .into_iter()
                .map(|b| {
                    let out = values(&layout, &b, &measured)?;
                    let ct = if m2_q.is_empty() { None } else { Some(pure_part(&layout, &b.vec, &m2_q)?) };
                    Ok((b, out, ct))
                })
                .collect::<Result<_>>()?;
            reals.push(Real {
                h: h.clone(),
                a1: a1_store.len(),
                prob: a.prob,
                alice_labels,
                m1_labels,
                pk,
                mu: profile.sampling_distribution(),
                heavy,
                bob,
            });
            a1_store.push(a);
        }
    }

    let build = |prefix: usize| -> Result<(Ensemble, Vec<Context>)> {
        let mut ens = Ensemble::new(&lrefs, &srefs)?;
        let mut ctx = Vec::new();
        let mut bob_id = 0;
        let wh = 1.0 / h_count as f64;
        for r in &reals {
            let hits = hit_set_distribution(&r.mu, prefix * opts.reps);
            for (b, out, ct) in &r.bob {
                bob_id += 1;
                for &(mask, p) in &hits {
                    let re = (mask << size) | (r.h.index() as usize & mask);
                    let mut labels = vec![r.h.index() as usize];
                    labels.extend(&r.alice_labels);
                    labels.extend(out);
                    labels.extend(&r.m1_labels);
                    labels.push(re);
                    let mut slots: Vec<&CVector> = Vec::new();
                    if let Some(pk) = &r.pk {
                        slots.extend(std::iter::repeat_n(pk, names.pk.len()));
                    }
                    if let Some(ct) = ct {
                        slots.push(ct);
                    }
                    let before = ens.branches().len();
                    ens.push(wh * r.prob * b.prob * p, labels, &slots)?;
                    if ens.branches().len() > before {
                        ctx.push(Context {
                            h: r.h.clone(),
                            a1: r.a1,
                            bob: b.clone(),
                            bob_id,
                            k_b: out[0],
                            bob_out: out.clone(),
                            heavy: r.heavy.clone(),
                            mask,
                        });
                    }
                }
            }
        }
        Ok((ens, ctx))
    };

    let alice = Names::refs(&names.alice);
    let mut bob_side = Names::refs(&names.bob);
    let bob_classical = bob_side.clone();
    if let Some(ct) = &names.ct {
        bob_side.push(ct.as_str());
    }
    let eve_at = |i: usize| -> Vec<&str> {
        let mut e = Names::refs(&names.eve);
        e.extend(names.pk[..i.min(names.pk.len())].iter().map(String::as_str));
        e
    };
    let mut prefix_cmi = Vec::with_capacity(opts.t + 1);
    let mut clamped = Vec::with_capacity(opts.t + 1);
    let mut other_entropy = 0.0;
    for i in 0..=opts.t {
        let (ens, _) = build(i)?;
        let r = ens.cmi(&alice, &bob_side, &eve_at(i))?;
        prefix_cmi.push(r.value);
        clamped.push(r.clamped);
        if i == 0 {
            other_entropy = ens.entropy(&bob_side)?;
        }
    }
    let best = argmin(&prefix_cmi);
    let (ens, ctx) = build(best)?;
    let rec = ens.best_block_petz(&bob_classical, &eve_at(best), &alice, &opts.grid)?;
    let coverage = |prefix: usize| -> f64 {
        let wh = 1.0 / h_count as f64;
        reals
            .iter()
            .map(|r| {
                let hits = hit_set_distribution(&r.mu, prefix * opts.reps);
                let p: f64 = hits.iter().filter(|(m, _)| r.heavy.iter().all(|x| m >> x & 1 == 1)).fold(0.0, |acc, (_, p)| acc + p);
                wh * r.prob * p
            })
            .sum()
    };
    let eval = Evaluator { spec, layout: &layout, alice_st: &alice_st, size, a1: &a1_store, m2_cl: &m2_cl };
    let stats = eval.score(&ens, &ctx, &rec, &alice, &bob_classical, &Names::refs(&names.eve))?;

    let cmi = prefix_cmi[best];
    let bound = other_entropy / (opts.t + 1) as f64;
    let (_, d_b, d_a2) = spec.query_counts();
    let mut details = BTreeMap::new();
    for (k, v) in [
        ("key_compat_rate", stats.key_compat),
        ("map_key_match_prob", stats.map_match),
        ("baseline_attempt1", stats.attempt1),
        ("baseline_attempt2", stats.attempt2),
        ("heavy_coverage", coverage(best)),
        ("heavy_coverage_full", coverage(opts.t)),
        ("reprogram_outside_in_e_rate", stats.outside_in_e),
        ("other_entropy", other_entropy),
    ] {
        details.insert(k.to_string(), v);
    }
    for (i, v) in prefix_cmi.iter().enumerate() {
        details.insert(format!("prefix_cmi_{i}"), *v);
    }
    Ok(AttackReport {
        attack_name: "eve_classical_keygen".into(),
        protocol: spec.to_json(),
        params: AttackParams { t: opts.t, eps: Some(opts.eps), c: None, reps: Some(opts.reps), grid: opts.grid.clone(), seed: None },
        queries_used: opts.t * d_b * (1 + opts.reps) + d_a2,
        selected_prefix: vec![best],
        cmi_achieved: cmi,
        cmi_bound: bound,
        recovery_td: rec.td,
        rotation_param: rec.rotation_param,
        fr_bound: fr_bound(cmi),
        key_match_prob: stats.key_match,
        flags: AttackFlags {
            bound_satisfied: cmi <= bound + CMI_BOUND_TOL,
            cmi_clamped: clamped[best],
            support_violation_rate: Some(stats.violation),
            support_exact: true,
        },
        details,
    })
}

struct Stats {
    key_match: f64,
    map_match: f64,
    violation: f64,
    key_compat: f64,
    attempt1: f64,
    attempt2: f64,
    outside_in_e: f64,
}

struct Evaluator<'a> {
    spec: &'a ProtocolSpec,
    layout: &'a SystemLayout,
    alice_st: &'a [&'a str],
    size: usize,
    a1: &'a [Branch],
    m2_cl: &'a [&'a str],
}

impl Evaluator<'_> {
    /// Real Bob branch with Alice's classical registers overwritten by the
    /// fake view.
    fn fake_branch(&self, b: &Branch, st: &[usize]) -> Result<Branch> {
        let sds: Vec<(usize, usize)> = self
            .alice_st
            .iter()
            .map(|l| {
                let p = self.layout.position(l).expect("declared register");
                (self.layout.strides()[p], self.layout.dims()[p])
            })
            .collect();
        let mut v = CVector::zeros(b.vec.len());
        for i in 0..b.vec.len() {
            if b.vec[i].norm_sqr() == 0.0 {
                continue;
            }
            let j = sds.iter().zip(st).fold(i, |j, (&(s, d), &new)| j - ((i / s) % d) * s + new * s);
            v[j] += b.vec[i];
        }
        Ok(Branch { prob: 1.0, vec: v, record: Vec::new() })
    }

    fn agree_cached(
        &self,
        cache: &mut HashMap<(usize, usize, u64), f64>,
        c: &Context,
        j: usize,
        st: &[usize],
        h: &OracleFunction,
    ) -> Result<f64> {
        let key = (c.bob_id, j, h.index());
        if let Some(&p) = cache.get(&key) {
            return Ok(p);
        }
        let p = self.agree(&c.bob, st, c.k_b, h)?;
        cache.insert(key, p);
        Ok(p)
    }

    /// `Pr[A2 outputs k_B]` on the fake view against `h`.
    fn agree(&self, b: &Branch, st: &[usize], k_b: usize, h: &OracleFunction) -> Result<f64> {
        let start = self.fake_branch(b, st)?;
        let fin = run_branches(self.layout, &self.spec.alice[1], Some(h), 2, vec![start])?;
        let fin = measure_all(self.layout, self.spec.n, &[&self.spec.key_a], fin)?;
        let mut p = 0.0;
        for f in &fin {
            if f.expect_value(self.layout, &self.spec.key_a)? == k_b {
                p += f.prob;
            }
        }
        Ok(p)
    }

    /// Support of Bob's classical output on the real first message under `h`.
    fn bob_support(&self, a1: &Branch, h: &OracleFunction) -> Result<BTreeSet<Vec<usize>>> {
        let mut measured = vec![self.spec.key_b.as_str()];
        measured.extend(self.m2_cl);
        let start = Branch { prob: 1.0, ..a1.clone() };
        let out = measure_all(self.layout, self.spec.n, &measured, run_branches(self.layout, &self.spec.bob, Some(h), 1, vec![start])?)?;
        out.iter().map(|b| values(self.layout, b, &measured)).collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn score(
        &self,
        ens: &Ensemble,
        ctx: &[Context],
        rec: &BlockRecovery,
        alice: &[&str],
        bob: &[&str],
        eve: &[&str],
    ) -> Result<Stats> {
        let idx = |names: &[&str]| -> Result<Vec<usize>> { names.iter().map(|n| ens.label_index(n)).collect() };
        let (ai, bi, ei) = (idx(alice)?, idx(bob)?, idx(eve)?);
        let pick = |b: &crate::ensemble::EnsembleBranch, ix: &[usize]| ix.iter().map(|&i| b.labels[i]).collect::<Vec<_>>();
        let support: BTreeSet<(Vec<usize>, Vec<usize>, Vec<usize>)> =
            ens.branches().iter().map(|b| (pick(b, &ai), pick(b, &bi), pick(b, &ei))).collect();
        let total: f64 = ens.branches().iter().map(|b| b.weight).sum();
        let all_oracles: Vec<OracleFunction> = enumerate_oracles(self.spec.n)?.collect();
        let mut cache = HashMap::new();
        let mut bob_supp: HashMap<(usize, u64), BTreeSet<Vec<usize>>> = HashMap::new();
        let (mut key_match, mut map_match, mut violation) = (0.0, 0.0, 0.0);
        let (mut in_supp, mut compat) = (0.0, 0.0);
        let (mut attempt1, mut attempt2, mut outside) = (0.0, 0.0, 0.0);
        for (k, br) in ens.branches().iter().enumerate() {
            let w = br.weight / total;
            let c = &ctx[k];
            let row = &rec.readout[k];
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] + 1e-12 { j } else { b });
            let (be, ee) = (pick(br, &bi), pick(br, &ei));
            for (j, &p) in row.iter().enumerate() {
                if p <= 1e-12 && j != best {
                    continue;
                }
                let value = &rec.values[j];
                let (st, ra) = value.split_at(value.len() - 1);
                let record = decode_record(ra[0], self.size)?;
                let hat = reprogram_oracle(&c.h, &record)?;
                let agree = self.agree_cached(&mut cache, c, j, st, &hat)?;
                if j == best {
                    map_match += w * agree;
                }
                if p <= 1e-12 {
                    continue;
                }
                key_match += w * p * agree;
                attempt2 += w * p * self.agree_cached(&mut cache, c, j, st, &c.h)?;
                let consistent: Vec<&OracleFunction> = all_oracles.iter().filter(|o| record.consistent_with(o)).collect();
                let mut a1 = 0.0;
                for o in &consistent {
                    a1 += self.agree_cached(&mut cache, c, j, st, o)?;
                }
                attempt1 += w * p * a1 / consistent.len().max(1) as f64;
                if c.h.diff(&hat).iter().any(|&x| c.mask >> x & 1 == 0 && c.heavy.contains(&x)) {
                    outside += w * p;
                }
                if support.contains(&(value.clone(), be.clone(), ee.clone())) {
                    in_supp += w * p;
                    let key = (c.a1, hat.index());
                    if let std::collections::hash_map::Entry::Vacant(slot) = bob_supp.entry(key) {
                        slot.insert(self.bob_support(&self.a1[c.a1], &hat)?);
                    }
                    if bob_supp[&key].contains(&c.bob_out) {
                        compat += w * p;
                    }
                } else {
                    violation += w * p;
                }
            }
        }
        Ok(Stats {
            key_match: key_match.clamp(0.0, 1.0),
            map_match: map_match.clamp(0.0, 1.0),
            violation,
            key_compat: if in_supp > 0.0 { compat / in_supp } else { 0.0 },
            attempt1,
            attempt2,
            outside_in_e: outside,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::{make_protocol, Builtin};
    use crate::recovery::default_grid;

    fn opts(t: usize, reps: usize) -> KeygenOptions {
        KeygenOptions { t, reps, eps: 0.1, grid: default_grid() }
    }

    #[test]
    fn record_code_round_trips() {
        let r = QueryRecord::new(vec![(0, true), (2, false)]).unwrap();
        let code = encode_record(&r);
        assert_eq!(code, 2 + 9);
        assert_eq!(decode_record(code, 4).unwrap(), r);
    }

    #[test]
    fn toy_qpke_key_is_recovered() {
        let spec = make_protocol(&Builtin::ToyQpke { n: 2 }).unwrap();
        let r = eve_classical_keygen(&spec, &opts(4, 24)).unwrap();
        assert!(r.key_match_prob >= 0.8, "{}", r.key_match_prob);
        assert!(r.flags.support_violation_rate.unwrap() < 1e-9);
        assert!(r.details["key_compat_rate"] > 1.0 - 1e-9);
        assert!(r.details["heavy_coverage_full"] > 0.99, "{:?}", r.details);
    }

    #[test]
    fn example2_needs_both_attempts_combined() {
        let spec = make_protocol(&Builtin::Example2 { n: 2 }).unwrap();
        let r = eve_classical_keygen(&spec, &opts(2, 8)).unwrap();
        assert!(r.details["baseline_attempt1"] <= 0.6, "{:?}", r.details);
        assert!(r.details["baseline_attempt2"] <= 0.6, "{:?}", r.details);
        assert!(r.key_match_prob > 0.95, "{}", r.key_match_prob);
    }

    #[test]
    fn quantum_public_key_is_broken() {
        for clonable in [false, true] {
            let spec = make_protocol(&Builtin::QuantumPk { clonable }).unwrap();
            let r = eve_classical_keygen(&spec, &opts(2, 8)).unwrap();
            assert!(r.key_match_prob > 0.9, "clonable={clonable}: {}", r.key_match_prob);
        }
    }

    #[test]
    fn imperfect_completeness_is_rejected() {
        let mut spec = make_protocol(&Builtin::ToyQpke { n: 2 }).unwrap();
        spec.perfect_complete = false;
        assert!(matches!(eve_classical_keygen(&spec, &opts(1, 1)), Err(QcmiError::Precondition(_))));
    }
}
