//! Generalized estimating equations for binary outcomes in two-arm cluster
//! randomized trials, with bias-corrected sandwich variances, Wald t
//! inference, and a correlated-binary simulation harness.
//!
//! The estimation code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which the simulation and I/O layers use.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod datagen;
pub mod error;
pub mod gee;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod model;
pub mod sandwich;
pub mod scalar;
pub mod sim;
pub mod special;

pub use data::{Arm, ArmSummary, Cluster, TrialDataset};
pub use error::{Error, FailureReason, Result};
pub use gee::{fit_gee, CorrelationStructure};
pub use model::{EffectMeasure, Family, Link, MeanModel, ModelSpec};
pub use sandwich::EstimatorKind;
pub use scalar::Scalar;

pub type GeeFit = gee::GeeFit<f64>;
pub type GeeFit32 = gee::GeeFit<f32>;
pub type FitOptions = gee::FitOptions<f64>;
pub type VarianceEstimate = sandwich::VarianceEstimate<f64>;
pub type InferenceResult = inference::InferenceResult<f64>;
pub type Mat = linalg::Mat<f64>;
