//! Learn context-aware access-control policies for tool-calling agents from
//! benign execution traces, and enforce them per tool invocation.
//!
//! The pipeline runs in two phases:
//!
//! * **staging:** [`trace`] parses trace logs into per-trace tool sequences,
//!   [`cfg`] learns the permitted tool orderings, [`embed`] and [`cluster`]
//!   group similar invocations of each tool, and [`induce`] turns every group
//!   into a rule (input regexes plus numeric attribute ranges). [`learn`]
//!   wires these together and [`policy`] stores the resulting per-tool
//!   policies.
//! * **enforcement:** [`enforce`] evaluates each invocation against its
//!   policy and returns an allow / alert / terminate [`enforce::Verdict`],
//!   either in-process or through the HTTP check service.
//!
//! [`eval`] generates labeled benign/violation corpora and computes FAR, FRR
//! and BEFR over learn-then-enforce experiments.
//!
//! See the crate's `examples/` directory for one runnable program per
//! capability.

pub mod cfg;
pub mod cli;
pub mod cluster;
pub mod embed;
pub mod enforce;
pub mod error;
pub mod eval;
pub mod hash;
pub mod induce;
pub mod learn;
pub mod policy;
pub mod trace;

pub use error::{Error, Result};
