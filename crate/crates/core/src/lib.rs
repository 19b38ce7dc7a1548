//! Pulse-level simulator and analysis toolkit for a deterministic microwave
//! quantum link between two transmon-qutrit nodes.

// `!(x > 0.0)` is used on purpose so NaN fails validation; index loops mirror
// the numerical formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dynamics;
pub mod error;
pub mod harness;
pub mod io;
pub mod pulse;
pub mod quantum;
pub mod readout;
pub mod tomography;
pub mod waveguide;

pub use error::{Error, Result};
