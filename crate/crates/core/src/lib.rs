//! Localized support vector machines on Voronoi partitions of the unit ball.
//!
//! The input space is split into the Voronoi cells of an r-net, an independent
//! Gaussian-kernel hinge-loss SVM is trained on every cell, and the cell
//! solutions are glued into one decision function. Around that core sit the
//! pieces needed to check classification-rate theory empirically:
//!
//! - [`geometry`]: r-net construction, Voronoi assignment, near/far cell labelling
//! - [`kernel`]: Gaussian kernel, smoothing convolutions, incomplete gamma
//! - [`solver`]: exact dual coordinate ascent for one cell
//! - [`model`]: the assembled localized predictor
//! - [`tvsvm`]: per-cell hyperparameter selection on a validation half
//! - [`distributions`]: synthetic distributions with known margin exponents
//! - [`analysis`]: risk estimation, exponent calculator, rate experiments

// Parameter checks are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod dataset;
pub mod distributions;
pub mod error;
pub mod geometry;
pub mod kernel;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod solver;
pub mod tvsvm;

pub use analysis::{RateReport, RiskEstimate, TheoryExponents};
pub use dataset::Dataset;
pub use distributions::{ExponentSheet, Family, MarginDistribution};
pub use error::{Error, Result};
pub use geometry::{CellClassification, Partition};
pub use kernel::KernelParams;
pub use model::{DecisionFunction, LocalizedModel};
pub use solver::{CellModel, CellProblem, SolverOptions};
pub use tvsvm::{NetMode, ParameterNets, TvReport};

/// Formats a float with 17 significant digits; parsing the result returns the
/// identical value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Tolerance for points that sit on the unit sphere up to rounding.
pub(crate) const BALL_SLACK: f64 = 1e-12;

pub(crate) fn check_in_ball(x: &[f64]) -> Result<()> {
    let n = norm(x);
    if n.is_nan() || n > 1.0 + BALL_SLACK {
        return Err(Error::OutsideUnitBall { norm: n });
    }
    Ok(())
}
