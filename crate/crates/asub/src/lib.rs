//! Active subspaces from Gaussian-process surrogates: the closed-form
//! gradient outer-product matrix `C` of a fitted GP, sequential design for
//! learning it, and hyperparameter uncertainty on its eigenvalues.
//!
//! Everything numerical is generic over [`Real`] (`f32` or `f64`); the
//! `*64` aliases below fix the scalar to `f64`.

pub mod asm_core;
pub mod baselines;
pub mod benchfns;
pub mod error;
pub mod gp;
pub mod kernels;
pub mod linalg;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod sequential;
pub mod uq;

pub use error::{Error, Result};
pub use scalar::Real;

pub type KernelSpec64 = kernels::KernelSpec<f64>;
pub type Dataset64 = gp::Dataset<f64>;
pub type GpModel64 = gp::GpModel<f64>;
pub type HyperPosterior64 = gp::HyperPosterior<f64>;
pub type WTensor64 = asm_core::WTensor<f64>;
pub type CEstimate64 = asm_core::CEstimate<f64>;
pub type Subspace64 = asm_core::Subspace<f64>;
pub type AcqCoeffs64 = sequential::AcqCoeffs<f64>;
pub type RunRecord64 = sequential::RunRecord<f64>;
pub type EigenIntervals64 = uq::EigenIntervals<f64>;
