//! Bandit-driven participant selection for federated recommendation.
//!
//! The crate simulates a heterogeneous client fleet training a
//! factor-attention recommender on MovieLens-style data, scores every client
//! by reputation, update relevance, data quality and latency, and compares
//! UCB-family selection against random and clustering baselines.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod orchestrator;
pub mod partition;
pub mod recmodel;
pub mod rng;
pub mod selection;
pub mod sysmodel;
pub mod utility;

pub use error::{Error, Result};
