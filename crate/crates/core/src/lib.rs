//! Gaussian-process regression with derivative constraints for locating
//! stationary points of a noisy curve.
//!
//! Everything is generic over the floating-point type through [`Real`];
//! `f64` and `f32` aliases are provided below.

// `!(a < b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dgp;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod mcem;
pub mod optim;
pub mod scalar;
pub mod simstudy;
pub mod stats;
pub mod summarize;

pub use dgp::{
    constrained_cov, log_marginal_likelihood, marginal_cov_a, posterior_predictive, sample_dgp_paths,
    scaled_predictive, DgpPrior, MarginalEvaluator, PredictiveDistribution,
};
pub use error::{DgpError, Result};
pub use kernel::{se_cov, se_cov01, se_cov10, se_cov11, KernelParams, Theta};
pub use linalg::Matrix;
pub use mcem::{
    run_mcem, run_mcem_multiple, run_mcem_pooled, Dataset, McemConfig, McemState, Mode, PosteriorDraws, TPrior,
};
pub use scalar::Real;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type KernelParams64 = KernelParams<f64>;
pub type KernelParams32 = KernelParams<f32>;
pub type Theta64 = Theta<f64>;
pub type Theta32 = Theta<f32>;
pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type McemConfig64 = McemConfig<f64>;
pub type McemConfig32 = McemConfig<f32>;
pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type PosteriorDraws64 = PosteriorDraws<f64>;
pub type PosteriorDraws32 = PosteriorDraws<f32>;
pub type TPrior64 = TPrior<f64>;
pub type TPrior32 = TPrior<f32>;
pub type Mode64 = Mode<f64>;
pub type Mode32 = Mode<f32>;
