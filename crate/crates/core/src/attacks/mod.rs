//! The eavesdroppers: repeat-and-recover, the classical-keygen attack with
//! heavy-query sampling and reprogramming, and the short-secret-key attack.

mod keygen;
mod repeat;
mod short_sk;
mod weights;

use std::collections::BTreeMap;

use serde::Serialize;

pub use keygen::{eve_classical_keygen, KeygenOptions};
pub use repeat::eve_repeat_and_recover;
pub use short_sk::eve_short_sk;
pub use weights::{
    bbbv_check, exact_query_weights, hit_set_distribution, modified_bob_sample, reference_copies, reference_reps,
    query_marginals, random_query_circuit, sample_record, wilson_interval, HeavySet, QueryWeightProfile,
    WEIGHT_SUM_TOL, Z95,
};

use crate::error::{QcmiError, Result};
use crate::ensemble::BlockRecovery;
use crate::protocols::{run_branches, Branch, QueryCircuit, Step};
use crate::qmat::{c64, reduce_vector, CVector, SystemLayout};

/// Slack on the permutation-invariance bound.
pub const CMI_BOUND_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackParams {
    pub t: usize,
    pub eps: Option<f64>,
    /// Constant in `t = C·d·e`, when `t` was derived from it.
    pub c: Option<f64>,
    pub reps: Option<usize>,
    pub grid: Vec<f64>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackFlags {
    /// `cmi_achieved ≤ cmi_bound + 1e-8`.
    pub bound_satisfied: bool,
    pub cmi_clamped: bool,
    pub support_violation_rate: Option<f64>,
    /// Whether the support rate was computed exhaustively.
    pub support_exact: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackReport {
    pub attack_name: String,
    pub protocol: serde_json::Value,
    pub params: AttackParams,
    pub queries_used: usize,
    /// Copies conditioned on at the chosen prefix, per copy family.
    pub selected_prefix: Vec<usize>,
    pub cmi_achieved: f64,
    pub cmi_bound: f64,
    pub recovery_td: f64,
    pub rotation_param: f64,
    pub fr_bound: f64,
    /// Probability that Eve's key equals the honest key she targets.
    pub key_match_prob: f64,
    pub flags: AttackFlags,
    pub details: BTreeMap<String, f64>,
}

/// The pure state of `labels` in a branch vector; fails if they are
/// entangled with the rest.
pub(crate) fn pure_part(layout: &SystemLayout, v: &CVector, labels: &[&str]) -> Result<CVector> {
    let (_, rho) = reduce_vector(layout, v, labels)?;
    let tr = rho.trace().re;
    let j = (0..rho.nrows()).max_by(|&a, &b| rho[(a, a)].re.total_cmp(&rho[(b, b)].re)).unwrap_or(0);
    let pivot = rho[(j, j)].re;
    if tr <= 0.0 || pivot <= 0.0 {
        return Err(QcmiError::Validation("empty branch".into()));
    }
    let v = rho.column(j).into_owned() * c64(1.0 / (pivot * tr).sqrt(), 0.0);
    let residual = (&rho * c64(1.0 / tr, 0.0) - &v * v.adjoint()).iter().fold(0.0f64, |m, z| m.max(z.norm()));
    if residual > 1e-9 {
        return Err(QcmiError::Precondition(format!("registers {labels:?} are not in a pure state ({residual:e})")));
    }
    Ok(v)
}

/// Measures `labels` in the computational basis, splitting branches.
pub(crate) fn measure_all(layout: &SystemLayout, n: usize, labels: &[&str], branches: Vec<Branch>) -> Result<Vec<Branch>> {
    let c = QueryCircuit::new(n, labels.iter().map(|l| Step::measure(l)).collect());
    run_branches(layout, &c, None, 0, branches)
}

pub(crate) fn values(layout: &SystemLayout, b: &Branch, labels: &[&str]) -> Result<Vec<usize>> {
    labels.iter().map(|l| b.expect_value(layout, l)).collect()
}

/// `Pr[recovered == target]` for a readout, sampling and MAP variants; MAP
/// ties go to the smaller value.
pub(crate) fn readout_match(
    rec: &BlockRecovery,
    weights: &[f64],
    hit: impl Fn(usize, &[usize]) -> f64,
) -> (f64, f64) {
    let total: f64 = weights.iter().sum();
    let (mut sampled, mut map) = (0.0, 0.0);
    for (k, row) in rec.readout.iter().enumerate() {
        let w = weights[k] / total;
        sampled += w * row.iter().enumerate().map(|(j, p)| p * hit(k, &rec.values[j])).sum::<f64>();
        let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] + 1e-12 { j } else { b });
        if !row.is_empty() {
            map += w * hit(k, &rec.values[best]);
        }
    }
    (sampled.clamp(0.0, 1.0), map.clamp(0.0, 1.0))
}

/// Values within this of the running minimum count as ties.
pub(crate) const ARGMIN_TIE_TOL: f64 = 1e-12;

/// Index of the smallest value; ties go to the first.
pub(crate) fn argmin(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] < v[b] - ARGMIN_TIE_TOL { i } else { b })
}
