//! Gaussian–Markov bridges whose pinning time is random: exact samplers and
//! closed-form Bayesian inference on the pinning time and on future values,
//! plus Monte Carlo oracles that check every closed form.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayes_engine;
pub mod cli;
pub mod cov_model;
pub mod det_bridge;
pub mod error;
pub mod length_law;
pub mod mc_oracle;
pub mod quad;
pub mod random_bridge;
pub mod rng;

pub use bayes_engine::{
    expect_joint, filtration_estimate, phi_weight, phi_weight_fn, posterior_multi, posterior_single, predict, predict_multi,
    psi_weight, psi_weight_fn, Branch, Observation, PosteriorMeasure, PredictiveLaw, WeightFn,
};
pub use cov_model::{CovarianceModel, ValidationReport};
pub use det_bridge::{BridgeSpec, GaussianKernel};
pub use error::{BridgeError, Result};
pub use length_law::{LawSpec, LengthLaw, Window};
pub use random_bridge::{sample_random_bridge, zero_set_detector, BridgePath, PathSampler};
