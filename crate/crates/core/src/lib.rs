//! Permutation-equivariant learned optimizer for set-structured, linearly
//! constrained dispatch problems.
//!
//! A set network ([`neural`]) maps a variable-size set of agents to one virtual
//! prediction per agent; a closed-form gauge map ([`gauge`]) turns it into a
//! decision that satisfies every local and coupled constraint. [`oracle`] solves
//! the problem exactly for labels and evaluation, and [`pipeline`] ties data
//! generation, training, and evaluation together.

pub mod check;
pub mod cli;
pub mod composite;
pub mod config;
pub mod error;
pub mod gauge;
pub mod neural;
pub mod ops;
pub mod oracle;
pub mod pipeline;
pub mod problem;

pub use error::{Error, Result};

/// Tool name and version stamped into every output file.
pub const TOOL_VERSION: &str = concat!("loop-pe ", env!("CARGO_PKG_VERSION"));
