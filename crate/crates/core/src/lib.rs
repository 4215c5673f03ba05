//! Exact squared Earth Mover's Distance losses for single-label
//! classification, a self-guided ground-distance estimator, an exact
//! transport oracle, and a small from-scratch training toolkit.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod cli;
pub mod error;
pub mod ground_distance;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod net;
pub mod ot_oracle;

pub use error::{Error, Result};
pub use ground_distance::GroundMatrix;
pub use losses::{LossResult, ProbDist, Target};
pub use matrix::Matrix;
