//! Toy key-agreement and public-key protocols in the random-oracle model.

pub mod circuit;

pub use circuit::{query_input_distribution, run_branches, run_purified, Branch, ClassicalFn, QueryCircuit, QueryEvent, QueryInput, Step};
pub mod builtins;
pub mod spec;

pub use spec::{Builtin, Checkpoint, Message, Party, ProtocolKind, ProtocolSpec, Register, StageId};
pub mod run;

pub use run::{
    agreement_probability, make_protocol, run_protocol, AgreementMethod, OracleMode, ProtocolRun, RunState, Transcript,
};
