pub mod attacks;
pub mod cli;
pub mod ensemble;
pub mod error;
pub mod lemmas;
pub mod oraclesim;
pub mod protocols;
pub mod qentropy;
pub mod qmat;
pub mod recovery;
pub mod report;
pub mod xorwalk;

pub use error::{QcmiError, Result};
