//! Joint+marginal moment-SOS heuristics for polynomial optimization.
//!
//! One coordinate at a time is treated as a uniformly distributed parameter.
//! The dual of the resulting parametric semidefinite relaxation yields a
//! univariate polynomial lying below the coordinate's optimal value
//! function; minimizing it fixes that coordinate.

pub mod algo;
pub mod bench;
pub mod bounds;
pub mod conic;
pub mod error;
pub mod localopt;
pub mod moments;
pub mod poly;
pub mod relax;
pub mod univar;

pub use error::{Error, Result};
