//! Budget-constrained transfer allocation under noisy income estimates.
//!
//! A planner must split a fixed budget `B` into nonnegative per-household
//! transfers so as to minimize the average squared shortfall from a poverty
//! line `z`, observing only noisy estimates of household income. This crate
//! provides:
//!
//! - the exact full-information allocation (Euclidean projection onto the
//!   budget simplex, [`allocation`]),
//! - a constrained James–Stein correction of the plug-in allocation and its
//!   risk diagnostics ([`shrinkage`]),
//! - nonparametric maximum-likelihood estimation of the mixing distribution
//!   of latent incomes, posterior means, and a truncated-normal parametric
//!   alternative ([`prior`]),
//! - the full menu of decision rules behind a uniform interface ([`rules`]),
//! - targeting and loss metrics ([`metrics`]), and
//! - a seeded, replicable Monte-Carlo experiment engine ([`sim`]).
//!
//! The numeric kernels are generic over the scalar type through [`scalar::Real`]
//! (`f32` or `f64`); the simulation harness and the type aliases below are
//! fixed to `f64`.

#![forbid(unsafe_code)]

use thiserror::Error;

pub mod allocation;
pub mod metrics;
pub mod prior;
pub mod rules;
pub mod scalar;
pub mod shrinkage;
pub mod sim;
pub mod stats;

pub use scalar::Real;

/// Errors produced by the allocation, estimation, and evaluation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("input must be sorted ascending (violated at index {index})")]
    Unsorted { index: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("undefined for a zero transfer vector")]
    ZeroVector,
}

pub type Result<T> = std::result::Result<T, Error>;

/// Default-precision aliases for the generic core types.
pub type GapVector64 = allocation::GapVector<f64>;
pub type Transfers64 = allocation::TransferVector<f64>;
pub type Prior64 = prior::DiscretePrior<f64>;
pub type Panel64 = prior::NoisyPanel<f64>;
pub type Policy64 = rules::PolicyContext<f64>;
