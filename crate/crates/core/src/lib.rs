//! Monte Carlo and exact tools for studying how the test risk of ridge
//! regression behaves as the sample size or model size grows.

// `!(x > 0.0)` is used on purpose so NaN is rejected along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops over matrix entries read closer to the formulas than iterator chains.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::too_many_arguments, clippy::type_complexity)]

pub mod conjecture;
pub mod counterexample;
pub mod error;
pub mod experiment;
pub mod features;
pub mod general;
pub mod linalg;
pub mod problem;
pub mod projection;
pub mod spectrum;
pub mod stats;
pub mod stream;
pub mod tuner;

pub use error::{Error, Result};
pub use problem::{GaussianProblem, ProjectionProblem, SampleBatch};
pub use spectrum::{
    coupled_spectrum_pair, expected_risk_iso, optimal_lambda_iso, optimal_risk_iso,
    singular_spectrum, IsoModel, SpectrumSample,
};
pub use stats::{EstimateFlags, RiskEstimate};
