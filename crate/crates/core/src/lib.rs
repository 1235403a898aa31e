//! Desk-scale laboratory for membership inference against machine unlearning.
//!
//! The crate trains small MLPs on synthetic data, unlearns subsets with
//! several methods, and attacks the model pair to tell unseen, forgotten and
//! retained examples apart.

// `!(x > 0.0)` style checks reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod data;
pub mod defense;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod unlearn;

pub use error::{Error, Result};
