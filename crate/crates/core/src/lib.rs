//! Causal survival analysis for "does winning an award lengthen life?"
//! questions: g-estimation of a rank-preserving structural accelerated
//! failure time model with artificial censoring, the classical Cox,
//! person-years and discrete-hazard comparisons, and a Monte Carlo harness
//! showing how each behaves under healthy-performer survivor bias.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clogit;
pub mod domain;
pub mod error;
pub mod gestimation;
pub mod io;
pub mod numeric;
pub mod report;
pub mod rpsaftm;
pub mod simulation;
pub mod survival;

pub use error::{Error, Result};
