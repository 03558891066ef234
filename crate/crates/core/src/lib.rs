//! Psychometric analysis engine for multi-item measurements.
//!
//! This crate holds the numerical core and performs no IO. It only needs
//! `alloc`, so it builds for `no_std` targets; file formats, the module
//! registry, the HTTP service and the CLI live in the `psychoforge` crate.
//!
//! - [`dataset`]: response tables, scoring, total scores
//! - [`classical`]: difficulty, item-total correlations, upper-lower index,
//!   distractor tables, Cronbach's alpha, criterion validity
//! - [`regression`]: logistic ICCs on an observed matching criterion, with an
//!   optional lower asymptote
//! - [`irt`]: 2PL/3PL, GPCM and NRM item models, marginal maximum likelihood
//!   EM, ability scoring and information
//! - [`dif`]: logistic-regression DIF and likelihood ratio tests
//! - [`cat`]: post-hoc computerized adaptive testing simulation
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod cat;
pub mod classical;
pub mod dataset;
pub mod dif;
pub mod error;
pub mod irt;
pub mod linalg;
pub mod math;
pub mod regression;
pub mod rng;

pub use error::{Error, Result};
