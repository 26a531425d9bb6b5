//! Toolkit for building instruction-tuning corpora and evaluating models on
//! held-out task clusters.
//!
//! The crate covers the data side of an instruction-tuning study end to end:
//! dataset ingestion and registry management ([`registry`]), instruction
//! templating ([`templating`]), examples-proportional mixture sampling
//! ([`mixture`]), fixed-budget sequence packing ([`tokenpack`]),
//! cluster-holdout split planning ([`splits`]), zero/few-shot prompt assembly
//! ([`fewshot`]), rank-classification and generation scoring ([`eval`]), and
//! n-gram contamination auditing ([`contamination`]). The [`pipeline`] module
//! ties the pieces together behind a config-driven command interface.
//!
//! Every random choice flows from a single root seed through named substreams
//! (see [`seed`]), so any artifact can be reproduced bit-for-bit from its
//! config.

pub mod config;
pub mod contamination;
pub mod error;
pub mod eval;
pub mod fewshot;
pub mod mixture;
pub mod pipeline;
pub mod registry;
pub mod seed;
pub mod splits;
pub mod templating;
pub mod tokenpack;

pub use error::Error;
