use serde::{Deserialize, Serialize};

use super::circuit::QueryCircuit;
use crate::error::{QcmiError, Result};
use crate::oraclesim::{oracle_count, VECTOR_DIM_CAP, FUNCTION_REGISTER};
use crate::qmat::SystemLayout;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    NonInteractiveKa,
    TwoRoundKa,
    QpkeClassicalKeygen,
    QpkeQuantumPk,
    QpkeShortSk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    Alice,
    Bob,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Register {
    pub label: String,
    pub dim: usize,
    pub owner: Party,
    /// Always in a basis state within a sampled branch.
    pub classical: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub registers: Vec<String>,
    pub quantum: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageId {
    A1,
    B,
    A2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Checkpoint {
    PostQueries,
    PostM1,
    PostM2,
    Final,
}

/// Built-in protocols and their parameters; this is the serialized form of
/// a [`ProtocolSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builtin", rename_all = "snake_case")]
pub enum Builtin {
    /// Alice learns `H(0) ⊕ H(1)` from one superposed query, Bob from two
    /// classical ones.
    Deutsch,
    /// Alice holds `H(0)`, Bob holds `H(1)`.
    Product,
    Merkle { n: usize, d: usize },
    Example1 { n: usize },
    Example2 { n: usize },
    /// Two rounds where the second Alice stage makes no queries.
    QueryFree { n: usize },
    ToyQpke { n: usize },
    QuantumPk { clonable: bool },
    ShortSk { noise: bool },
    /// Parallel single query from the state with Fourier step
    /// distribution `probs` = `[p_0, p_{e_0}, ..., p_{e_{N-1}}]`.
    NonAdaptive { n: usize, probs: Vec<f64> },
}

#[derive(Clone, Debug)]
pub struct ProtocolSpec {
    pub builtin: Builtin,
    pub kind: ProtocolKind,
    pub n: usize,
    pub registers: Vec<Register>,
    /// One stage for non-interactive protocols, `[A1, A2]` otherwise.
    pub alice: Vec<QueryCircuit>,
    pub bob: QueryCircuit,
    pub m1: Option<Message>,
    pub m2: Option<Message>,
    pub key_a: String,
    pub key_b: String,
    pub perfect_complete: bool,
}

#[derive(Serialize)]
struct SpecDocument<'a> {
    kind: ProtocolKind,
    #[serde(flatten)]
    builtin: &'a Builtin,
    perfect_complete: bool,
    caps: Caps,
}

#[derive(Serialize)]
struct Caps {
    dim_cap: usize,
    vector_dim_cap: usize,
}

impl ProtocolSpec {
    /// JSON document with kind, parameters and caps.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(SpecDocument {
            kind: self.kind,
            builtin: &self.builtin,
            perfect_complete: self.perfect_complete,
            caps: Caps { dim_cap: crate::qmat::dim_cap(), vector_dim_cap: VECTOR_DIM_CAP },
        })
        .expect("spec document serializes")
    }

    pub fn is_two_round(&self) -> bool {
        self.kind != ProtocolKind::NonInteractiveKa
    }

    pub fn stage(&self, id: StageId) -> Option<&QueryCircuit> {
        match id {
            StageId::A1 => self.alice.first(),
            StageId::B => Some(&self.bob),
            StageId::A2 => self.alice.get(1),
        }
    }

    /// Stages in execution order.
    pub fn stages(&self) -> Vec<(StageId, &QueryCircuit)> {
        let mut out = vec![(StageId::A1, &self.alice[0]), (StageId::B, &self.bob)];
        if let Some(a2) = self.alice.get(1) {
            out.push((StageId::A2, a2));
        }
        out
    }

    /// Stage circuits truncated for a checkpoint.
    pub fn stages_until(&self, cp: Checkpoint) -> Vec<(StageId, QueryCircuit)> {
        let all = self.stages();
        match cp {
            Checkpoint::Final => all.into_iter().map(|(id, c)| (id, c.clone())).collect(),
            Checkpoint::PostM1 => vec![(StageId::A1, self.alice[0].clone())],
            Checkpoint::PostM2 => all.into_iter().take(2).map(|(id, c)| (id, c.clone())).collect(),
            Checkpoint::PostQueries if !self.is_two_round() => {
                all.into_iter().map(|(id, c)| (id, c.prefix(c.post_queries()))).collect()
            }
            Checkpoint::PostQueries => {
                let last = all.iter().rposition(|(_, c)| c.d() > 0).unwrap_or(0);
                all.into_iter()
                    .take(last + 1)
                    .enumerate()
                    .map(|(i, (id, c))| (id, if i == last { c.prefix(c.post_queries()) } else { c.clone() }))
                    .collect()
            }
        }
    }

    pub fn register(&self, label: &str) -> Result<&Register> {
        self.registers
            .iter()
            .find(|r| r.label == label)
            .ok_or_else(|| QcmiError::Layout(format!("unknown register {label}")))
    }

    pub fn owned_by(&self, party: Party) -> Vec<&str> {
        self.registers.iter().filter(|r| r.owner == party).map(|r| r.label.as_str()).collect()
    }

    /// Protocol registers only, for branch runs against a fixed oracle.
    pub fn sampled_layout(&self) -> Result<SystemLayout> {
        SystemLayout::with_cap(self.registers.iter().map(|r| (r.label.clone(), r.dim)), VECTOR_DIM_CAP)
    }

    /// Protocol registers, deferred-measurement registers, then `H`.
    pub fn purified_layout(&self) -> Result<SystemLayout> {
        let mut factors: Vec<(String, usize)> = self.registers.iter().map(|r| (r.label.clone(), r.dim)).collect();
        for (_, c) in self.stages() {
            for (src, env) in c.env_registers() {
                if !factors.iter().any(|f| f.0 == env) {
                    factors.push((env, self.register(&src)?.dim));
                }
            }
        }
        factors.push((FUNCTION_REGISTER.to_string(), oracle_count(self.n)));
        SystemLayout::with_cap(factors, VECTOR_DIM_CAP)
    }

    /// Number of oracle queries per stage `(A1, B, A2)`.
    pub fn query_counts(&self) -> (usize, usize, usize) {
        (self.alice[0].d(), self.bob.d(), self.alice.get(1).map_or(0, QueryCircuit::d))
    }
}
