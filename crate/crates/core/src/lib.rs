//! Dataset condensation for implicit-feedback recommendation data.
//!
//! The pipeline has three stages:
//!
//! 1. [`augment`] trains a proxy recommender on the original interactions and
//!    mines top-ranked unexposed items per user, producing a data pool made of
//!    the original pairs plus pseudo pairs.
//! 2. [`condense`] learns a Bernoulli probability for every pool pair with a
//!    policy-gradient (score-function) estimator driven by a one-step inner
//!    model update, keeping the probabilities inside the box/budget region by
//!    Euclidean projection.
//! 3. [`eval`] trains a fresh recommender on the condensed set and reports
//!    Recall@K / NDCG@K on held-out interactions.
//!
//! [`baselines`] provides Random, Majority, SVP-CF and one-step gradient
//! matching for comparison.

pub mod augment;
pub mod baselines;
pub mod cli;
pub mod condense;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod synthetic;

pub use error::{Error, Result};
