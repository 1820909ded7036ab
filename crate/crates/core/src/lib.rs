//! Federated learning simulation with class-imbalance-aware client selection.
//!
//! The server never sees client data. After each round it probes every
//! uploaded model with a small, class-balanced auxiliary set, turns the
//! per-class output-layer gradient norms into an estimated class composition,
//! and scores the client's imbalance as the KL divergence of that composition
//! from uniform. A combinatorial UCB bandit then picks the next round's
//! participants, greedily adding clients whose estimated compositions keep the
//! combined set closest to balanced.
//!
//! Module map:
//!
//! - [`nn`]: dense ReLU/softmax classifier, exact backpropagation, SGD.
//! - [`data`]: synthetic Gaussian-class data, non-IID and IID client shards,
//!   the auxiliary set, and a plain-text dataset format.
//! - [`fed`]: local training, FedAvg aggregation, evaluation, one round.
//! - [`estimator`]: composition estimates, KL-to-uniform, rewards, EWMA.
//! - [`bandit`]: CUCB selection with class balancing, plus baselines.
//! - [`experiment`]: configuration, presets, orchestration, CSV metrics.
//!
//! Class labels and client ids are 0-based everywhere.

pub mod bandit;
pub mod data;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod fed;
pub mod nn;
pub(crate) mod rng;

pub use error::{Error, Result};
