//! Federated-learning schedule simulator and optimizer.
//!
//! The crate answers one question: given delay and energy budgets, how many
//! local gradient steps (`tau`) should each client run between aggregations,
//! and how many aggregations (`K`) fit in the budget? It provides
//!
//! * [`model`]: convex linear models, datasets and client partitions,
//! * [`engine`]: the FedAvg training loop with budget accounting,
//! * [`resource`]: straggler delay, communication and energy models,
//! * [`bounds`]: convergence-bound formulas and trajectory diagnostics,
//! * [`optimizer`]: the closed-form KKT solver and its grid oracle,
//! * [`harness`]: configuration, experiments and CSV metrics.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod engine;
pub mod error;
pub mod harness;
pub mod model;
pub mod optimizer;
pub mod resource;

pub use error::{Error, Result};
