//! Oracle permutation-invariant decision rules for the exchangeable Gaussian
//! sequence model, with exact and sampled permutation enumeration and Monte
//! Carlo risk estimation.

pub mod cli;
pub mod error;
pub mod losses;
pub mod model;
pub mod numeric;
pub mod oracles;
pub mod permutation;
pub mod posterior;
pub mod risk;
pub mod rule;
pub mod simple_rule;

pub use error::{OracleError, Result};
pub use rule::DecisionRule;
