//! Likelihood-free inference of latent states in state-space models whose
//! transition dynamics are unknown.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::large_enum_variant)]

pub mod acquisition;
pub mod bench;
pub mod engine;
pub mod error;
pub mod gp;
pub mod lmc;
pub mod optim;
pub mod oracle;
pub mod posterior;
pub mod ssm;
pub mod surrogate;
pub mod transition;

pub use error::{Error, Result};
