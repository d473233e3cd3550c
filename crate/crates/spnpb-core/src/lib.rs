//! Stochastic predictive recurrent network with parametric bias (SPNPB).
//!
//! The crate contains the network and its reverse-mode differentiation
//! ([`nn`], [`model`]), the maximum-likelihood trainer ([`trainer`]), online
//! adaptation of the parametric bias ([`adapt`]), the variance-minimizing
//! receding-horizon controller ([`controller`]), the stochastic mobile-base
//! simulator ([`sim`]) and the experiment harness ([`harness`]).

// `!(x <= y)` is used on purpose so NaN lands on the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod controller;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod exec;
pub mod harness;
pub mod model;
pub mod nn;
pub mod norm;
pub mod pca;
pub mod persist;
pub mod sim;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{GaussianPrediction, ModelConfig, ModelParams, PbEntry, RecurrentState};
pub use norm::NormStats;
