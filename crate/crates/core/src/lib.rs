//! Event-driven simulator for LLM inference clusters that split the prompt
//! and token-generation phases onto separate machine pools, plus a
//! provisioning search over cluster designs.

// NaN-rejecting checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cluster;
pub mod config;
pub mod engine;
pub mod error;
pub mod machine;
pub mod metrics;
pub mod perfmodel;
pub mod provision;
pub mod rng;
pub mod trace;
pub mod transfer;

pub use cluster::{ClusterConfig, Design};
pub use config::FlatConfig;
pub use engine::{run, RunOptions, SimOutput};
pub use error::{Error, Result};
