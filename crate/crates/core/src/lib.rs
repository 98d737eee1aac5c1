//! Continuous-time Feynman-Kac particle engine.
//!
//! The crate simulates the Moran-type mean-field particle system with its
//! genealogical tree ([`mean_field`]), the conditional system with a frozen
//! ancestral line ([`conditional`]) and the particle Gibbs-Glauber chain on
//! path space ([`gibbs`]). The [`oracle`] module solves finite-state models
//! exactly; [`estimators`] compares the two.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditional;
pub mod config;
pub mod error;
pub mod estimators;
pub mod gibbs;
pub mod mean_field;
pub mod models;
pub mod numerics;
pub mod oracle;
pub mod output;
pub mod paths;
pub mod rng;
pub mod runner;
pub mod stats;

pub use error::{FkError, Result};
pub use models::{FiniteCtmcModel, InitialLaw, Model, StateSpace};
pub use paths::{CadlagPath, PathFunctional};
