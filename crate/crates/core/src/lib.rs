//! Numerical laboratory for weak laws of large numbers for maximal partial
//! sums of pairwise independent random variables.
//!
//! The crate is organised bottom-up:
//!
//! * [`slowly_varying`]: slowly varying functions, normalizers `b_n`,
//!   de Bruijn conjugates and Karamata sums.
//! * [`distributions`]: tail-specified laws with exact truncated moments,
//!   envelopes and uniform-integrability gaps.
//! * [`generators`]: seeded sample paths (i.i.d., Joffe pairwise
//!   independent, the counterexample sequence, dependent models).
//! * [`maxsum_stats`]: maximal partial-sum statistics and Monte Carlo
//!   convergence estimates.
//! * [`dyadic`]: scale-indexed quantities of the dyadic blocking argument.
//! * [`cli`]: the config-driven batch runner behind the `wlln-lab` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod distributions;
pub mod dyadic;
pub mod error;
pub mod exec;
pub mod generators;
pub mod maxsum_stats;
pub mod slowly_varying;

pub use error::{Error, Result};
