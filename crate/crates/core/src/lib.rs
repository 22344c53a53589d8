//! Constrained training of feed-forward predictors with Lagrangian duality.
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`] and [`nn`]: a scalar reverse-mode tape, perceptrons, Adam
//!   and the base losses.
//! * [`constraint`]: violation degrees, Lagrangian losses and dual ascent.
//! * [`trainer`]: the baseline, fixed-multiplier and dual-ascent regimes for
//!   per-sample and group constraints, plus evaluation.
//! * [`oracle`]: an augmented-Lagrangian solver used to label data and to
//!   measure projection distances.
//! * [`domains`]: power flow, gas flow, monotonicity and fairness packs.
//! * [`report`]: configuration-driven experiments, tables and the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod constraint;
pub mod data;
pub mod domains;
pub mod error;
pub mod nn;
pub mod oracle;
pub mod report;
pub mod trainer;

pub use error::{Error, Result};
