use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::builtins::build;
use super::circuit::{run_branches, run_purified, Branch, QueryCircuit, Step};
use super::spec::{Builtin, Checkpoint, ProtocolKind, ProtocolSpec, StageId};
use crate::error::{QcmiError, Result};
use crate::oraclesim::{
    enumerate_oracles, oracle_count, OracleFunction, PurifiedOracleState, QueryMode, ORACLE_N_CAP,
};
use crate::qmat::{c64, CVector, DensityMatrix, SystemLayout};

/// Tolerance of the exhaustive perfect-completeness check.
pub const COMPLETENESS_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    Purified,
    Sampled(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementMethod {
    ExactEnumeration,
    PurifiedReadout,
}

#[derive(Clone, Debug)]
pub enum RunState {
    Purified(PurifiedOracleState),
    Branches { layout: SystemLayout, branches: Vec<Branch> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Transcript {
    pub m1: Vec<usize>,
    pub m2: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct ProtocolRun {
    pub checkpoint: Checkpoint,
    pub oracle: Option<OracleFunction>,
    pub state: RunState,
    /// Classical message values along one sampled outcome path.
    pub transcript: Option<Transcript>,
    /// `(k_A, k_B)` along the same path, at the final checkpoint.
    pub keys: Option<(usize, usize)>,
}

impl ProtocolRun {
    /// Reduced state on `keep` (protocol registers only in sampled mode).
    pub fn reduced(&self, keep: &[&str]) -> Result<DensityMatrix> {
        match &self.state {
            RunState::Purified(s) => s.reduced(keep),
            RunState::Branches { layout, branches } => {
                let parts: Vec<DensityMatrix> = branches
                    .iter()
                    .map(|b| crate::qmat::reduce_pure(layout, &b.vec, keep))
                    .collect::<Result<_>>()?;
                let weighted: Vec<(f64, &DensityMatrix)> =
                    branches.iter().map(|b| b.prob).zip(parts.iter()).collect();
                DensityMatrix::mixture(&weighted)
            }
        }
    }
}

pub fn stage_tag(id: StageId) -> usize {
    match id {
        StageId::A1 => 0,
        StageId::B => 1,
        StageId::A2 => 2,
    }
}

/// Builds a built-in protocol and checks its declared invariants.
pub fn make_protocol(builtin: &Builtin) -> Result<ProtocolSpec> {
    let spec = build(builtin)?;
    validate(&spec)?;
    if spec.perfect_complete {
        let p = agreement_probability(&spec, AgreementMethod::ExactEnumeration)?;
        if (p - 1.0).abs() > COMPLETENESS_TOL {
            return Err(QcmiError::Construction(format!(
                "declared perfectly complete but agreement is {p}"
            )));
        }
    }
    Ok(spec)
}

fn validate(spec: &ProtocolSpec) -> Result<()> {
    let layout = spec.sampled_layout()?;
    let expected = if spec.is_two_round() { 2 } else { 1 };
    if spec.alice.len() != expected {
        return Err(QcmiError::Construction(format!("expected {expected} Alice stages")));
    }
    for (_, c) in spec.stages() {
        if c.n != spec.n {
            return Err(QcmiError::Construction("stage oracle size differs from protocol".into()));
        }
        for l in c.labels() {
            if !layout.contains(&l) {
                return Err(QcmiError::Construction(format!("circuit uses undeclared register {l}")));
            }
        }
    }
    for l in [&spec.key_a, &spec.key_b] {
        spec.register(l)?;
    }
    for m in spec.m1.iter().chain(&spec.m2) {
        for l in &m.registers {
            spec.register(l)?;
        }
    }
    if spec.kind == ProtocolKind::QpkeClassicalKeygen
        && spec.alice[0]
            .steps
            .iter()
            .any(|s| matches!(s, Step::Query { mode, .. } if *mode != QueryMode::Classical))
    {
        return Err(QcmiError::Construction("key generation must query classically".into()));
    }
    Ok(())
}

/// Runs stage circuits against a fixed oracle, tagging classical queries by stage.
pub fn run_stages_sampled(
    layout: &SystemLayout,
    stages: &[(StageId, QueryCircuit)],
    h: &OracleFunction,
    branches: Vec<Branch>,
) -> Result<Vec<Branch>> {
    stages
        .iter()
        .try_fold(branches, |b, (id, c)| run_branches(layout, c, Some(h), stage_tag(*id), b))
}

/// Deferred-measurement run from the uniform oracle superposition.
pub fn run_stages_purified(spec: &ProtocolSpec, stages: &[(StageId, QueryCircuit)]) -> Result<PurifiedOracleState> {
    let layout = spec.purified_layout()?;
    let fdim = oracle_count(spec.n);
    let mut v = CVector::zeros(layout.total_dim());
    let amp = c64(1.0 / (fdim as f64).sqrt(), 0.0);
    for h in 0..fdim {
        v[h] = amp;
    }
    for (_, c) in stages {
        v = run_purified(&layout, c, v)?;
    }
    PurifiedOracleState::from_pure(spec.n, layout, v)
}

pub fn run_protocol(spec: &ProtocolSpec, mode: OracleMode, checkpoint: Checkpoint) -> Result<ProtocolRun> {
    let stages = spec.stages_until(checkpoint);
    match mode {
        OracleMode::Purified => Ok(ProtocolRun {
            checkpoint,
            oracle: None,
            state: RunState::Purified(run_stages_purified(spec, &stages)?),
            transcript: None,
            keys: None,
        }),
        OracleMode::Sampled(seed) => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let h = crate::oraclesim::sample_oracle_with(spec.n, &mut rng)?;
            let layout = spec.sampled_layout()?;
            let branches = run_stages_sampled(&layout, &stages, &h, vec![Branch::new(&layout)])?;
            let pick = pick_branch(&branches, rng.gen::<f64>());
            let br = &branches[pick];
            let read = |msg: &Option<super::spec::Message>| -> Result<Vec<usize>> {
                match msg {
                    Some(m) if !m.quantum => m.registers.iter().map(|l| br.expect_value(&layout, l)).collect(),
                    _ => Ok(Vec::new()),
                }
            };
            let transcript = Transcript {
                m1: if checkpoint == Checkpoint::PostQueries && !spec.is_two_round() { Vec::new() } else { read(&spec.m1)? },
                m2: if matches!(checkpoint, Checkpoint::PostM2 | Checkpoint::Final) { read(&spec.m2)? } else { Vec::new() },
            };
            let keys = if checkpoint == Checkpoint::Final {
                Some(sample_keys(&layout, &br.vec, &spec.key_a, &spec.key_b, rng.gen::<f64>())?)
            } else {
                None
            };
            Ok(ProtocolRun {
                checkpoint,
                oracle: Some(h),
                state: RunState::Branches { layout, branches },
                transcript: Some(transcript),
                keys,
            })
        }
    }
}

fn pick_branch(branches: &[Branch], u: f64) -> usize {
    let total: f64 = branches.iter().map(|b| b.prob).sum();
    let mut acc = 0.0;
    for (i, b) in branches.iter().enumerate() {
        acc += b.prob / total;
        if u < acc {
            return i;
        }
    }
    branches.len() - 1
}

fn sample_keys(layout: &SystemLayout, v: &CVector, ka: &str, kb: &str, u: f64) -> Result<(usize, usize)> {
    let joint = joint_key_distribution(layout, v, ka, kb)?;
    let mut acc = 0.0;
    let mut last = (0, 0);
    for (k, p) in joint {
        acc += p;
        last = k;
        if u < acc {
            return Ok(k);
        }
    }
    Ok(last)
}

/// Born distribution of `(k_A, k_B)` in a pure vector, sorted by key pair.
pub fn joint_key_distribution(
    layout: &SystemLayout,
    v: &CVector,
    ka: &str,
    kb: &str,
) -> Result<Vec<((usize, usize), f64)>> {
    let pos = |l: &str| {
        layout
            .position(l)
            .map(|p| (layout.strides()[p], layout.dims()[p]))
            .ok_or_else(|| QcmiError::Layout(format!("unknown register {l}")))
    };
    let (a, b) = (pos(ka)?, pos(kb)?);
    let mut map = std::collections::BTreeMap::new();
    for i in 0..v.len() {
        let w = v[i].norm_sqr();
        if w > 0.0 {
            *map.entry(((i / a.0) % a.1, (i / b.0) % b.1)).or_insert(0.0) += w;
        }
    }
    Ok(map.into_iter().collect())
}

fn agreement_in(layout: &SystemLayout, v: &CVector, ka: &str, kb: &str) -> Result<f64> {
    Ok(joint_key_distribution(layout, v, ka, kb)?
        .into_iter()
        .filter(|((x, y), _)| x == y)
        .map(|(_, p)| p)
        .sum())
}

/// Branches of a full run against `h`.
pub fn final_branches(spec: &ProtocolSpec, h: &OracleFunction) -> Result<Vec<Branch>> {
    let layout = spec.sampled_layout()?;
    run_stages_sampled(&layout, &spec.stages_until(Checkpoint::Final), h, vec![Branch::new(&layout)])
}

/// `Pr[k_A = k_B]` over a uniform oracle and all protocol randomness.
pub fn agreement_probability(spec: &ProtocolSpec, method: AgreementMethod) -> Result<f64> {
    match method {
        AgreementMethod::ExactEnumeration => {
            if spec.n > ORACLE_N_CAP {
                return Err(QcmiError::Cap(format!("enumeration needs n <= {ORACLE_N_CAP}")));
            }
            let layout = spec.sampled_layout()?;
            let oracles: Vec<OracleFunction> = enumerate_oracles(spec.n)?.collect();
            let per: Vec<f64> = oracles
                .par_iter()
                .map(|h| -> Result<f64> {
                    final_branches(spec, h)?
                        .iter()
                        .map(|b| Ok(b.prob * agreement_in(&layout, &b.vec, &spec.key_a, &spec.key_b)?))
                        .sum()
                })
                .collect::<Result<_>>()?;
            Ok(per.iter().sum::<f64>() / oracles.len() as f64)
        }
        AgreementMethod::PurifiedReadout => {
            let s = run_stages_purified(spec, &spec.stages_until(Checkpoint::Final))?;
            let v = s.vector().expect("purified runs are pure");
            agreement_in(s.layout(), v, &spec.key_a, &spec.key_b)
        }
    }
}

/// Averages the branch mixture over every oracle; the sampled counterpart of
/// a purified run, restricted to `keep`.
pub fn oracle_averaged_state(spec: &ProtocolSpec, checkpoint: Checkpoint, keep: &[&str]) -> Result<DensityMatrix> {
    let layout = spec.sampled_layout()?;
    let stages = spec.stages_until(checkpoint);
    let oracles: Vec<OracleFunction> = enumerate_oracles(spec.n)?.collect();
    let mut parts = Vec::new();
    for h in &oracles {
        for b in run_stages_sampled(&layout, &stages, h, vec![Branch::new(&layout)])? {
            parts.push((b.prob / oracles.len() as f64, crate::qmat::reduce_pure(&layout, &b.vec, keep)?));
        }
    }
    let weighted: Vec<(f64, &DensityMatrix)> = parts.iter().map(|(p, d)| (*p, d)).collect();
    DensityMatrix::mixture(&weighted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmat::max_abs;

    fn both(b: &Builtin) -> (f64, f64) {
        let spec = build(b).unwrap();
        (
            agreement_probability(&spec, AgreementMethod::ExactEnumeration).unwrap(),
            agreement_probability(&spec, AgreementMethod::PurifiedReadout).unwrap(),
        )
    }

    #[test]
    fn merkle_partial_overlap_is_five_sixths() {
        let (e, p) = both(&Builtin::Merkle { n: 2, d: 2 });
        assert!((e - 5.0 / 6.0).abs() < 1e-12, "{e}");
        assert!((p - e).abs() < 1e-8);
    }

    #[test]
    fn merkle_full_domain_always_agrees() {
        let spec = make_protocol(&Builtin::Merkle { n: 2, d: 4 }).unwrap();
        assert!(spec.perfect_complete);
        assert_eq!(spec.query_counts(), (4, 4, 0));
    }

    #[test]
    fn perfectly_complete_builtins() {
        for b in [
            Builtin::Deutsch,
            Builtin::Example1 { n: 2 },
            Builtin::Example2 { n: 2 },
            Builtin::QueryFree { n: 2 },
            Builtin::ToyQpke { n: 2 },
            Builtin::QuantumPk { clonable: false },
            Builtin::QuantumPk { clonable: true },
            Builtin::ShortSk { noise: false },
        ] {
            let spec = make_protocol(&b).unwrap();
            assert!(spec.perfect_complete, "{b:?}");
            let p = agreement_probability(&spec, AgreementMethod::PurifiedReadout).unwrap();
            assert!((p - 1.0).abs() < 1e-8, "{b:?}: {p}");
        }
    }

    #[test]
    fn imperfect_builtins() {
        let (e, p) = both(&Builtin::ShortSk { noise: true });
        assert!((e - 0.9).abs() < 1e-12 && (p - 0.9).abs() < 1e-8);
        let (e, p) = both(&Builtin::Product);
        assert!((e - 0.5).abs() < 1e-12 && (p - 0.5).abs() < 1e-8);
    }

    #[test]
    fn false_completeness_flag_is_rejected() {
        let mut spec = build(&Builtin::Product).unwrap();
        spec.perfect_complete = true;
        let p = agreement_probability(&spec, AgreementMethod::ExactEnumeration).unwrap();
        assert!((p - 1.0).abs() > COMPLETENESS_TOL);
    }

    #[test]
    fn keygen_must_be_classical() {
        let mut spec = build(&Builtin::ToyQpke { n: 1 }).unwrap();
        spec.alice[0].steps[1] = Step::query(QueryMode::Xor, "ar", "ay");
        assert!(matches!(validate(&spec), Err(QcmiError::Construction(_))));
    }

    #[test]
    fn merkle_purified_function_register() {
        let spec = build(&Builtin::Merkle { n: 2, d: 2 }).unwrap();
        let run = run_protocol(&spec, OracleMode::Purified, Checkpoint::PostQueries).unwrap();
        let RunState::Purified(s) = &run.state else { panic!("purified") };
        assert_eq!(s.layout().dim_of("H").unwrap(), 16);
        assert!((s.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn purified_matches_oracle_average() {
        for (b, keep) in [
            (Builtin::Deutsch, vec!["ax", "bk"]),
            (Builtin::ToyQpke { n: 1 }, vec!["ar", "ay", "bx", "bc"]),
            (Builtin::QuantumPk { clonable: false }, vec!["ap", "bb"]),
        ] {
            let spec = build(&b).unwrap();
            let run = run_protocol(&spec, OracleMode::Purified, Checkpoint::Final).unwrap();
            let a = run.reduced(&keep).unwrap();
            let s = oracle_averaged_state(&spec, Checkpoint::Final, &keep).unwrap();
            assert!(max_abs(&(a.matrix() - s.matrix())) < 1e-8, "{b:?}");
        }
    }

    #[test]
    fn keygen_state_is_diagonal() {
        let spec = build(&Builtin::ToyQpke { n: 2 }).unwrap();
        let run = run_protocol(&spec, OracleMode::Purified, Checkpoint::PostM1).unwrap();
        let r = run.reduced(&["ar", "ay"]).unwrap();
        assert!(r.coherence_on("ar").unwrap() < 1e-12);
        assert!(r.coherence_on("ay").unwrap() < 1e-12);
    }

    #[test]
    fn sampled_runs_are_reproducible() {
        let spec = build(&Builtin::ToyQpke { n: 2 }).unwrap();
        let a = run_protocol(&spec, OracleMode::Sampled(9), Checkpoint::Final).unwrap();
        let b = run_protocol(&spec, OracleMode::Sampled(9), Checkpoint::Final).unwrap();
        assert_eq!(a.transcript, b.transcript);
        assert_eq!(a.keys, b.keys);
        assert_eq!(a.oracle, b.oracle);
        let (ka, kb) = a.keys.unwrap();
        assert_eq!(ka, kb);
    }

    #[test]
    fn deutsch_keys_agree_on_every_path() {
        let spec = build(&Builtin::Deutsch).unwrap();
        for seed in 0..4 {
            let run = run_protocol(&spec, OracleMode::Sampled(seed), Checkpoint::Final).unwrap();
            let (ka, kb) = run.keys.unwrap();
            assert_eq!(ka, kb);
        }
    }
}
