//! Behavioral mixed-signal simulator and experiment harness for a
//! capacitive-RRAM ternary content-addressable memory: a 3T1R1C cell built
//! from an exponential RRAM model and square-law transistors, composed into
//! match-line columns, with search/read/write schedules, energy accounting,
//! and corner/supply sweep experiments.

// Validation guards are written as negated comparisons (`!(x > 0.0)`) so
// that NaN fails them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array;
pub mod cell;
pub mod circuit;
pub mod config;
pub mod device;
pub mod error;
pub mod experiments;
pub mod report;

pub use error::{Error, Result};
