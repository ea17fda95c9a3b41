//! Federated unlearning with auxiliary classifier heads.
//!
//! Clients train a shared model with federated averaging. Clients that may
//! later ask to forget data additionally train an auxiliary copy of the
//! classifier head on a relabelled dataset; forgetting is then a single
//! linear combination of the global head and the auxiliary head(s).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod federation;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod unlearning;

pub use error::{Error, Result};
