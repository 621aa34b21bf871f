//! Multi-task federated learning over heterogeneous clients.
//!
//! The crate simulates a server and a set of community clients that jointly
//! train a small regression network. Each client keeps a personalized model
//! pulled toward the shared global model, uploads of unavailable clients are
//! estimated from the most similar available client, and uploads can be
//! protected with the Laplace mechanism under a fixed or dynamic per-round
//! privacy budget.
//!
//! Module map:
//! - [`nn`]: the network, its loss, analytic gradients and SGD.
//! - [`data`]: synthetic community generator, CSV loader, normalization.
//! - [`availability`]: seeded per-round communication failures.
//! - [`similarity`]: pairwise update similarity and delta substitution.
//! - [`privacy`]: clipping, Laplace noise, budget accounting.
//! - [`metrics`]: NRMSE, round reports, comparison tables.
//! - [`fl`]: round orchestration and the four method variants.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod availability;
pub mod data;
mod error;
pub mod fl;
pub mod metrics;
pub mod nn;
pub mod privacy;
pub mod seed;
pub mod similarity;

pub use error::{Error, Result};
