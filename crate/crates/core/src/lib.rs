//! Diffeomorphic image registration with a factored Levenberg-Marquardt
//! optimizer.
//!
//! Kernels are generic over the scalar type (see [`Real`]); the aliases at
//! the crate root fix the 64-bit precision used by the driver and harness.

// NaN-rejecting parameter checks are written as negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod driver;
pub mod error;
pub mod field;
pub mod filter;
pub mod harness;
pub mod io;
pub mod lmopt;
pub mod pyramid;
pub mod scalar;
pub mod similarity;

pub use driver::{endpoint_error, register, RegConfig, RegResult, RegistrationError, TraceRow};
pub use error::{Error, Result};
pub use field::{compose_warp, jacobian_det_min, normalize_step, sample_trilinear, Dims, StepScale};
pub use lmopt::{
    adam_step, demons_step_mse, lm_iterate, lm_step_pointwise, lm_step_tiled, rejection_test, AdamConfig, AdamState,
    DemonsConfig, LmConfig, LmState, Optimizer, OptimizerConfig, UpdateRule,
};
pub use pyramid::{downsample, upsample_warp, Level, PyramidSchedule};
pub use scalar::Real;
pub use similarity::{residual, residual_lncc, residual_mi, residual_mse, MetricConfig, MetricKind, ResidualReport};

pub type Volume3 = field::Volume<f64>;
pub type DispField3 = field::DispField<f64>;
pub type Volume3f = field::Volume<f32>;
pub type DispField3f = field::DispField<f32>;
