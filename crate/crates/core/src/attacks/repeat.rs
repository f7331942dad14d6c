//! Repeat the party that stops querying first, condition on the copies, and
//! recover Alice's view with a rotated Petz map.

use std::collections::BTreeMap;

use super::{argmin, measure_all, pure_part, readout_match, values, AttackFlags, AttackParams, AttackReport, CMI_BOUND_TOL};
use crate::ensemble::Ensemble;
use crate::error::{QcmiError, Result};
use crate::oraclesim::{enumerate_oracles, oracle_count, ORACLE_N_CAP};
use crate::protocols::{run_branches, Branch, Party, ProtocolKind, ProtocolSpec};
use crate::qmat::CVector;
use crate::recovery::fr_bound;

/// `(key value, probability)` pairs.
type KeyLaw = Vec<(usize, f64)>;

/// One branch of a party's run.
struct Item {
    prob: f64,
    slot: CVector,
    /// Sub-distribution of a derived classical value, e.g. the key.
    outcomes: Vec<(usize, f64)>,
}

fn copy_names(t: usize) -> Vec<String> {
    (1..=t).map(|j| format!("E{j}")).collect()
}

/// Enumerates `t`-fold products of `items`, calling `f(prob, indices)`.
fn for_each_tuple(items: &[Item], t: usize, f: &mut impl FnMut(f64, &[usize]) -> Result<()>) -> Result<()> {
    let mut idx = vec![0usize; t];
    loop {
        let p: f64 = idx.iter().map(|&i| items[i].prob).product();
        f(p, &idx)?;
        let mut pos = 0;
        loop {
            if pos == t {
                return Ok(());
            }
            idx[pos] += 1;
            if idx[pos] < items.len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// Eve copies the repeated party `t` times, picks the prefix of copies with
/// the smallest `I(A:B|E_1..E_i, transcript)`, and recovers Alice's side
/// from it with the best rotated Petz map on `grid`.
///
/// Non-interactive protocols repeat Alice up to her last query; `B` is Bob's
/// key. Two-round protocols whose second Alice stage makes no query repeat
/// Bob on the real first message; `A` is Alice's view after the first
/// stage and Eve finishes by running the second stage on the recovered view.
pub fn eve_repeat_and_recover(spec: &ProtocolSpec, t: usize, grid: &[f64]) -> Result<AttackReport> {
    if spec.n > ORACLE_N_CAP {
        return Err(QcmiError::Cap(format!("exact attack needs n <= {ORACLE_N_CAP}")));
    }
    match spec.kind {
        ProtocolKind::NonInteractiveKa => non_interactive(spec, t, grid),
        _ if spec.alice.get(1).is_some_and(|a2| a2.d() == 0) && spec.m1.as_ref().is_some_and(|m| !m.quantum) => {
            two_round(spec, t, grid)
        }
        _ => Err(QcmiError::Precondition(
            "repeat-and-recover needs a non-interactive protocol or a query-free second Alice stage".into(),
        )),
    }
}

fn non_interactive(spec: &ProtocolSpec, t: usize, grid: &[f64]) -> Result<AttackReport> {
    let (quantum, classical) = non_interactive_ensembles(spec, t)?;
    let other_entropy = quantum.entropy(&["B"])?;
    let queries = t * spec.alice[0].d();
    finish(spec, "eve_repeat_and_recover", t, grid, queries, &quantum, &classical, &["A"], &["B"], &[], other_entropy, |cl, rec| {
        let bi = cl.label_index("B")?;
        let weights: Vec<f64> = cl.branches().iter().map(|b| b.weight).collect();
        Ok(readout_match(rec, &weights, |k, v| f64::from(v[0] == cl.branches()[k].labels[bi])))
    }, &["kA"])
}

/// `(quantum, classical)`: the first holds Alice's post-query state `A`,
/// the second her key `kA`; both hold Bob's key `B` and copies `E1..Et`.
fn non_interactive_ensembles(spec: &ProtocolSpec, t: usize) -> Result<(Ensemble, Ensemble)> {
    let layout = spec.sampled_layout()?;
    let alice = &spec.alice[0];
    let pq = alice.post_queries();
    let (prefix, suffix) = (alice.prefix(pq), alice.suffix(pq));
    let alice_regs = spec.owned_by(Party::Alice);
    let (ka, kb) = (spec.key_a.as_str(), spec.key_b.as_str());
    let names = copy_names(t);
    let mut slots: Vec<(&str, usize)> = vec![("A", slot_dim(spec, &alice_regs)?)];
    slots.extend(names.iter().map(|n| (n.as_str(), slot_dim(spec, &alice_regs).unwrap_or(1))));
    let key_dims = (spec.register(ka)?.dim, spec.register(kb)?.dim);
    let h_count = oracle_count(spec.n);
    let mut quantum = Ensemble::new(&[("H", h_count), ("B", key_dims.1)], &slots)?;
    let mut classical = Ensemble::new(&[("H", h_count), ("B", key_dims.1), ("kA", key_dims.0)], &slots[1..])?;

    for h in enumerate_oracles(spec.n)? {
        let pre = run_branches(&layout, &prefix, Some(&h), 0, vec![Branch::new(&layout)])?;
        let mut items = Vec::with_capacity(pre.len());
        for b in pre {
            let slot = pure_part(&layout, &b.vec, &alice_regs)?;
            let prob = b.prob;
            let fin = run_branches(&layout, &suffix, Some(&h), 0, vec![Branch { prob: 1.0, ..b }])?;
            let fin = measure_all(&layout, spec.n, &[ka], fin)?;
            let outcomes = fin.iter().map(|f| Ok((f.expect_value(&layout, ka)?, f.prob))).collect::<Result<_>>()?;
            items.push(Item { prob, slot, outcomes });
        }
        let bob = measure_all(&layout, spec.n, &[kb], run_branches(&layout, &spec.bob, Some(&h), 1, vec![Branch::new(&layout)])?)?;
        let wh = 1.0 / h_count as f64;
        for bb in &bob {
            let k_b = bb.expect_value(&layout, kb)?;
            for a in &items {
                for_each_tuple(&items, t, &mut |p, idx| {
                    let w = wh * bb.prob * a.prob * p;
                    let copies: Vec<&CVector> = idx.iter().map(|&i| &items[i].slot).collect();
                    let mut all = vec![&a.slot];
                    all.extend(copies.iter().copied());
                    quantum.push(w, vec![h.index() as usize, k_b], &all)?;
                    for &(k_a, q) in &a.outcomes {
                        classical.push(w * q, vec![h.index() as usize, k_b, k_a], &copies)?;
                    }
                    Ok(())
                })?;
            }
        }
    }
    quantum.compress();
    classical.compress();
    Ok((quantum, classical))
}

fn refs(v: &[(String, usize)]) -> Vec<(&str, usize)> {
    v.iter().map(|(l, d)| (l.as_str(), *d)).collect()
}

fn slot_dim(spec: &ProtocolSpec, regs: &[&str]) -> Result<usize> {
    regs.iter().map(|r| spec.register(r).map(|x| x.dim)).product()
}

fn two_round(spec: &ProtocolSpec, t: usize, grid: &[f64]) -> Result<AttackReport> {
    let layout = spec.sampled_layout()?;
    let a1 = &spec.alice[0];
    let a2 = &spec.alice[1];
    let alice_regs = spec.owned_by(Party::Alice);
    let bob_regs = spec.owned_by(Party::Bob);
    let m1: Vec<&str> = spec.m1.as_ref().map(|m| m.registers.iter().map(String::as_str).collect()).unwrap_or_default();
    let m2: Vec<&str> = match &spec.m2 {
        Some(m) if !m.quantum => m.registers.iter().map(String::as_str).collect(),
        Some(_) => return Err(QcmiError::Precondition("two-round repeat needs a classical second message".into())),
        None => Vec::new(),
    };
    for r in &alice_regs {
        if !spec.register(r)?.classical {
            return Err(QcmiError::Precondition("two-round repeat needs a classical Alice view".into()));
        }
    }
    let kb = spec.key_b.as_str();
    let bob_pre = spec.bob.prefix(spec.bob.post_queries());
    let names = copy_names(t);
    let bdim = slot_dim(spec, &bob_regs)?;
    let adim = slot_dim(spec, &alice_regs)?;
    let h_count = oracle_count(spec.n);

    let dim = |l: &str| spec.register(l).map(|r| r.dim).unwrap_or(1);
    let mut q_labels: Vec<(String, usize)> = vec![("H".into(), h_count)];
    q_labels.extend(m1.iter().map(|l| (format!("m1.{l}"), dim(l))));
    let mut c_labels = q_labels.clone();
    c_labels.extend(alice_regs.iter().map(|l| (format!("A.{l}"), dim(l))));
    c_labels.push(("kB".into(), dim(kb)));
    c_labels.extend(m2.iter().map(|l| (format!("m2.{l}"), dim(l))));
    let mut q_slots: Vec<(&str, usize)> = vec![("A", adim), ("B", bdim)];
    q_slots.extend(names.iter().map(|n| (n.as_str(), bdim)));
    let mut quantum = Ensemble::new(&refs(&q_labels), &q_slots)?;
    let mut classical = Ensemble::new(&refs(&c_labels), &q_slots[2..])?;

    for h in enumerate_oracles(spec.n)? {
        let wh = 1.0 / h_count as f64;
        for a in run_branches(&layout, a1, Some(&h), 0, vec![Branch::new(&layout)])? {
            let a_slot = pure_part(&layout, &a.vec, &alice_regs)?;
            let a_vals = values(&layout, &a, &alice_regs)?;
            let m1_vals = values(&layout, &a, &m1)?;
            let base = Branch { prob: 1.0, ..a.clone() };
            let copies = run_branches(&layout, &bob_pre, Some(&h), 1, vec![base.clone()])?;
            let items: Vec<Item> = copies
                .iter()
                .map(|c| Ok(Item { prob: c.prob, slot: pure_part(&layout, &c.vec, &bob_regs)?, outcomes: Vec::new() }))
                .collect::<Result<_>>()?;
            let real = run_branches(&layout, &spec.bob, Some(&h), 1, vec![base])?;
            let mut measured_regs = vec![kb];
            measured_regs.extend(m2.iter().copied());
            let real = measure_all(&layout, spec.n, &measured_regs, real)?;
            for b in &real {
                let b_slot = pure_part(&layout, &b.vec, &bob_regs)?;
                let k_b = b.expect_value(&layout, kb)?;
                let m2_vals = values(&layout, b, &m2)?;
                for_each_tuple(&items, t, &mut |p, idx| {
                    let w = wh * a.prob * b.prob * p;
                    let copies: Vec<&CVector> = idx.iter().map(|&i| &items[i].slot).collect();
                    let mut lab = vec![h.index() as usize];
                    lab.extend(&m1_vals);
                    let mut all = vec![&a_slot, &b_slot];
                    all.extend(copies.iter().copied());
                    quantum.push(w, lab.clone(), &all)?;
                    lab.extend(&a_vals);
                    lab.push(k_b);
                    lab.extend(&m2_vals);
                    classical.push(w, lab, &copies)?;
                    Ok(())
                })?;
            }
        }
    }
    quantum.compress();
    classical.compress();
    let other_entropy = quantum.entropy(&["A"])?;
    let cond: Vec<String> = m1.iter().map(|l| format!("m1.{l}")).collect();
    let cond_refs: Vec<&str> = cond.iter().map(String::as_str).collect();
    let rec_names: Vec<String> = alice_regs.iter().map(|l| format!("A.{l}")).collect();
    let rec_refs: Vec<&str> = rec_names.iter().map(String::as_str).collect();

    // Eve's key: run the second stage on the recovered view and m2.
    let key_of = |a_vals: &[usize], m2_vals: &[usize]| -> Result<Vec<(usize, f64)>> {
        let mut digits = vec![0usize; layout.len()];
        for (l, v) in alice_regs.iter().zip(a_vals).chain(m2.iter().zip(m2_vals)) {
            digits[layout.position(l).expect("declared register")] = *v;
        }
        let mut start = Branch::new(&layout);
        start.vec = crate::qmat::basis_vector(layout.total_dim(), layout.index_of(&digits));
        let fin = measure_all(&layout, spec.n, &[&spec.key_a], run_branches(&layout, a2, None, 2, vec![start])?)?;
        fin.iter().map(|f| Ok((f.expect_value(&layout, &spec.key_a)?, f.prob))).collect()
    };
    let queries = t * spec.bob.d();
    finish(spec, "eve_repeat_and_recover", t, grid, queries, &quantum, &classical, &["B"], &["A"], &cond_refs, other_entropy, |cl, rec| {
        let kbi = cl.label_index("kB")?;
        let m2i: Vec<usize> = m2.iter().map(|l| cl.label_index(&format!("m2.{l}"))).collect::<Result<_>>()?;
        let mut cache: BTreeMap<(Vec<usize>, Vec<usize>), KeyLaw> = BTreeMap::new();
        let mut table = Vec::with_capacity(cl.branches().len());
        for b in cl.branches() {
            let m2v: Vec<usize> = m2i.iter().map(|&i| b.labels[i]).collect();
            let mut row = Vec::with_capacity(rec.values.len());
            for v in &rec.values {
                let key = (v.clone(), m2v.clone());
                if !cache.contains_key(&key) {
                    cache.insert(key.clone(), key_of(v, &m2v)?);
                }
                row.push(cache[&key].iter().filter(|(k, _)| *k == b.labels[kbi]).map(|(_, p)| p).sum::<f64>());
            }
            table.push(row);
        }
        let weights: Vec<f64> = cl.branches().iter().map(|b| b.weight).collect();
        let values_index: BTreeMap<&Vec<usize>, usize> = rec.values.iter().enumerate().map(|(j, v)| (v, j)).collect();
        Ok(readout_match(rec, &weights, |k, v| table[k][values_index[&v.to_vec()]]))
    }, &rec_refs)
}

/// Prefix scan, recovery and report assembly shared by both variants.
/// `repeated` is the quantum slot copied by Eve, `other` the slot whose
/// entropy bounds the CMI, `cond` extra conditioning labels.
#[allow(clippy::too_many_arguments)]
fn finish(
    spec: &ProtocolSpec,
    name: &str,
    t: usize,
    grid: &[f64],
    queries: usize,
    quantum: &Ensemble,
    classical: &Ensemble,
    repeated: &[&str],
    other: &[&str],
    cond: &[&str],
    other_entropy: f64,
    key_match: impl Fn(&Ensemble, &crate::ensemble::BlockRecovery) -> Result<(f64, f64)>,
    recovered: &[&str],
) -> Result<AttackReport> {
    let names = copy_names(t);
    let mut prefix_cmi = Vec::with_capacity(t + 1);
    let mut clamped = Vec::with_capacity(t + 1);
    for i in 0..=t {
        let mut c: Vec<&str> = cond.to_vec();
        c.extend(names[..i].iter().map(String::as_str));
        let r = quantum.cmi(repeated, other, &c)?;
        prefix_cmi.push(r.value);
        clamped.push(r.clamped);
    }
    let best = argmin(&prefix_cmi);
    let mut c: Vec<&str> = cond.to_vec();
    c.extend(names[..best].iter().map(String::as_str));
    let compared: Vec<String> = classical_other(classical, recovered, &c);
    let compared_refs: Vec<&str> = compared.iter().map(String::as_str).collect();
    let rec = classical.best_block_petz(&compared_refs, &c, recovered, grid)?;
    let (key_match, map_match) = key_match(classical, &rec)?;
    let cmi = prefix_cmi[best];
    let bound = other_entropy / (t + 1) as f64;
    let mut details = BTreeMap::new();
    details.insert("other_entropy".into(), other_entropy);
    details.insert("map_key_match_prob".into(), map_match);
    for (i, v) in prefix_cmi.iter().enumerate() {
        details.insert(format!("prefix_cmi_{i}"), *v);
    }
    Ok(AttackReport {
        attack_name: name.into(),
        protocol: spec.to_json(),
        params: AttackParams { t, eps: None, c: None, reps: None, grid: grid.to_vec(), seed: None },
        queries_used: queries,
        selected_prefix: vec![best],
        cmi_achieved: cmi,
        cmi_bound: bound,
        recovery_td: rec.td,
        rotation_param: rec.rotation_param,
        fr_bound: fr_bound(cmi),
        key_match_prob: key_match,
        flags: AttackFlags {
            bound_satisfied: cmi <= bound + CMI_BOUND_TOL,
            cmi_clamped: clamped[best],
            support_violation_rate: None,
            support_exact: true,
        },
        details,
    })
}

/// Classical labels other than the hidden oracle, the recovered side and the
/// conditioning system: the side the recovery is judged against.
fn classical_other(e: &Ensemble, recovered: &[&str], cond: &[&str]) -> Vec<String> {
    e.label_names()
        .into_iter()
        .filter(|l| l != "H" && !recovered.contains(&l.as_str()) && !cond.contains(&l.as_str()))
        .collect()
}
