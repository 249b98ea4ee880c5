//! Nonparametric kernel estimation of mean and variance functions for
//! curve-valued covariates.
//!
//! The model is `Y = m(X) + sqrt(v(X)) ε` with `X` a curve. The mean `m` is
//! estimated by Nadaraya–Watson smoothing under a semi-metric `d_m`; the
//! variance `v` is estimated either by smoothing squared residuals
//! `(Y_i − m̂(X_i))²` under a second semi-metric `d_v` (the residual method),
//! or directly as `ŝ(x) − m̂(x)²` with `ŝ` a smooth of `Y²`.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the crate
//! root exposes `f64` aliases for everyday use.

pub mod bench;
pub mod cli;
pub mod curves;
pub mod error;
pub mod estimators;
mod fsutil;
pub mod kernel;
mod linalg;
pub mod scalar;
pub mod semimetric;
pub mod simulate;

pub use error::{Error, Result};
pub use kernel::{Kernel, KernelKind, WeightPolicy};
pub use scalar::Scalar;
pub use semimetric::SemiMetricSpec;
pub use curves::DerivMethod;
pub use estimators::{SelfInclusion, VarianceMethod};

pub type Grid = curves::Grid<f64>;
pub type Curve = curves::Curve<f64>;
pub type CurveSet = curves::CurveSet<f64>;
pub type SemiMetric = semimetric::SemiMetric<f64>;
pub type DistanceMatrix = semimetric::DistanceMatrix<f64>;
pub type MeanFit = estimators::MeanFit<f64>;
pub type VarianceFit = estimators::VarianceFit<f64>;
pub type SmootherMatrix = estimators::SmootherMatrix<f64>;
pub type BandwidthGrid = estimators::BandwidthGrid<f64>;
pub type SimulatedDataset = simulate::SimulatedDataset<f64>;

pub type Curve32 = curves::Curve<f32>;
pub type CurveSet32 = curves::CurveSet<f32>;
pub type MeanFit32 = estimators::MeanFit<f32>;
pub type VarianceFit32 = estimators::VarianceFit<f32>;
