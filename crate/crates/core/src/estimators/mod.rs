//! Mean and variance function estimators.
//!
//! [`MeanFit`] is a Nadaraya–Watson smoother of the responses. A
//! [`VarianceFit`] smooths either squared residuals from a mean fit
//! ([`VarianceMethod::Residual`]) or the squared responses, from which the
//! squared mean estimate is subtracted ([`VarianceMethod::Direct`]).

mod cv;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curves::{Curve, CurveSet};
use crate::error::{Error, Result};
use crate::kernel::{check_bandwidth, nw_estimate, nw_weights_masked, Kernel, KernelKind, WeightPolicy};
use crate::scalar::Scalar;
use crate::semimetric::{DistanceMatrix, Embedding, SemiMetric, SemiMetricSpec};

pub use cv::{
    cv_bandwidth, cv_bandwidth_from_distances, default_bandwidth_grid, BandwidthGrid, CvCandidate, CvOptions,
    CvResult, DEFAULT_GRID_SIZE, DEFAULT_MAX_FALLBACK_RATE,
};

/// Whether the in-sample fit at `X_i` uses observation `i` itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelfInclusion {
    #[default]
    IncludeSelf,
    LeaveOneOut,
}

impl std::str::FromStr for SelfInclusion {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "include_self" => Ok(SelfInclusion::IncludeSelf),
            "leave_one_out" => Ok(SelfInclusion::LeaveOneOut),
            _ => Err(format!("unknown self-inclusion {s:?}; valid: include_self, leave_one_out")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    Residual,
    Direct,
}

impl VarianceMethod {
    pub fn name(self) -> &'static str {
        match self {
            VarianceMethod::Residual => "residual",
            VarianceMethod::Direct => "direct",
        }
    }
}

impl std::str::FromStr for VarianceMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "residual" => Ok(VarianceMethod::Residual),
            "direct" => Ok(VarianceMethod::Direct),
            _ => Err(format!("unknown variance method {s:?}; valid: residual, direct")),
        }
    }
}

/// A point prediction and whether the empty-neighborhood fallback produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction<T> {
    pub value: T,
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariancePrediction<T> {
    pub value: T,
    pub fallback: bool,
    /// Direct method only: `ŝ − m̂²` was negative and clipped to zero.
    pub clipped: bool,
}

/// Kernel smoother over a fixed training sample: the part shared by the
/// mean fit and the variance fit.
#[derive(Debug, Clone)]
struct Smoother<T, K> {
    metric: SemiMetric<T>,
    embedding: Embedding<T>,
    distances: DistanceMatrix<T>,
    kernel: K,
    bandwidth: T,
    policy: WeightPolicy,
}

impl<T: Scalar, K: Kernel<T> + Clone> Smoother<T, K> {
    fn new(train: &CurveSet<T>, spec: SemiMetricSpec, kernel: K, bandwidth: T, policy: WeightPolicy) -> Result<Self> {
        check_bandwidth(bandwidth)?;
        let metric = SemiMetric::trained(spec, train)?;
        let embedding = metric.embed(train)?;
        let distances = embedding.self_matrix();
        Ok(Self {
            metric,
            embedding,
            distances,
            kernel,
            bandwidth,
            policy,
        })
    }

    fn len(&self) -> usize {
        self.embedding.len()
    }

    fn smooth_at(&self, distances: &[T], skip: Option<usize>, values: &[T]) -> Result<Prediction<T>> {
        let w = nw_weights_masked(distances, skip, self.bandwidth, &self.kernel, self.policy)?;
        Ok(Prediction {
            value: nw_estimate(&w.values, values)?,
            fallback: w.fallback,
        })
    }

    fn embed(&self, xs: &CurveSet<T>) -> Result<Embedding<T>> {
        if !crate::curves::same_grid(xs.grid(), self.embedding.grid()) {
            return Err(Error::GridMismatch);
        }
        self.metric.embed(xs)
    }

    fn smooth_set(&self, xs: &CurveSet<T>, values: &[T]) -> Result<Vec<Prediction<T>>> {
        let e = self.embed(xs)?;
        (0..e.len())
            .into_par_iter()
            .map(|i| self.smooth_at(&self.embedding.distances_to(e.row(i)), None, values))
            .collect()
    }

    fn in_sample(&self, values: &[T], mode: SelfInclusion) -> Result<Vec<Prediction<T>>> {
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                let skip = match mode {
                    SelfInclusion::IncludeSelf => None,
                    SelfInclusion::LeaveOneOut => Some(i),
                };
                self.smooth_at(self.distances.row(i), skip, values)
            })
            .collect()
    }
}

fn validate_training<T: Scalar>(train: &CurveSet<T>, responses: &[T]) -> Result<()> {
    if train.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 training curves, got {}",
            train.len()
        )));
    }
    if responses.len() != train.len() {
        return Err(Error::LengthMismatch {
            expected: train.len(),
            got: responses.len(),
        });
    }
    if responses.iter().any(|y| !y.is_finite()) {
        return Err(Error::NonFinite("responses"));
    }
    Ok(())
}

/// Frozen Nadaraya–Watson fit of the mean function.
#[derive(Debug, Clone)]
pub struct MeanFit<T, K = KernelKind> {
    train: CurveSet<T>,
    responses: Vec<T>,
    smoother: Smoother<T, K>,
}

pub fn fit_mean<T: Scalar, K: Kernel<T> + Clone>(
    train: &CurveSet<T>,
    responses: &[T],
    spec: SemiMetricSpec,
    kernel: K,
    bandwidth: T,
    policy: WeightPolicy,
) -> Result<MeanFit<T, K>> {
    MeanFit::new(train, responses, spec, kernel, bandwidth, policy)
}

impl<T: Scalar, K: Kernel<T> + Clone> MeanFit<T, K> {
    pub fn new(
        train: &CurveSet<T>,
        responses: &[T],
        spec: SemiMetricSpec,
        kernel: K,
        bandwidth: T,
        policy: WeightPolicy,
    ) -> Result<Self> {
        validate_training(train, responses)?;
        Ok(Self {
            train: train.clone(),
            responses: responses.to_vec(),
            smoother: Smoother::new(train, spec, kernel, bandwidth, policy)?,
        })
    }

    pub fn train(&self) -> &CurveSet<T> {
        &self.train
    }

    pub fn responses(&self) -> &[T] {
        &self.responses
    }

    pub fn bandwidth(&self) -> T {
        self.smoother.bandwidth
    }

    pub fn spec(&self) -> SemiMetricSpec {
        self.smoother.metric.spec()
    }

    pub fn kernel(&self) -> &K {
        &self.smoother.kernel
    }

    pub fn policy(&self) -> WeightPolicy {
        self.smoother.policy
    }

    /// Cached `d_m(X_i, X_j)`.
    pub fn distances(&self) -> &DistanceMatrix<T> {
        &self.smoother.distances
    }

    pub fn predict(&self, x: &Curve<T>) -> Result<Prediction<T>> {
        let xs = CurveSet::from_curves(vec![x.clone()])?;
        Ok(self.predict_set(&xs)?[0])
    }

    pub fn predict_set(&self, xs: &CurveSet<T>) -> Result<Vec<Prediction<T>>> {
        self.smoother.smooth_set(xs, &self.responses)
    }

    /// In-sample fitted values `m̂_i = Σ_j w_ij Y_j`.
    pub fn fitted(&self, mode: SelfInclusion) -> Result<Vec<Prediction<T>>> {
        self.smoother.in_sample(&self.responses, mode)
    }

    pub fn smoother_matrix(&self) -> Result<SmootherMatrix<T>> {
        self.smoother_matrix_with(SelfInclusion::IncludeSelf)
    }

    pub fn smoother_matrix_with(&self, mode: SelfInclusion) -> Result<SmootherMatrix<T>> {
        let s = &self.smoother;
        let n = s.len();
        let rows: Vec<_> = (0..n)
            .into_par_iter()
            .map(|i| {
                let skip = (mode == SelfInclusion::LeaveOneOut).then_some(i);
                nw_weights_masked(s.distances.row(i), skip, s.bandwidth, &s.kernel, s.policy)
            })
            .collect::<Result<_>>()?;
        let mut entries = Vec::with_capacity(n * n);
        let mut fallback = Vec::with_capacity(n);
        for w in rows {
            entries.extend(w.values);
            fallback.push(w.fallback);
        }
        Ok(SmootherMatrix { n, entries, fallback })
    }

    /// `R̂_i = (Y_i − m̂_i)²`.
    pub fn squared_residuals(&self, mode: SelfInclusion) -> Result<Residuals<T>> {
        let fitted = self.fitted(mode)?;
        let values = self
            .responses
            .iter()
            .zip(&fitted)
            .map(|(y, m)| {
                let r = *y - m.value;
                r * r
            })
            .collect();
        Ok(Residuals {
            values,
            fallback_count: fitted.iter().filter(|p| p.fallback).count(),
        })
    }
}

pub fn predict_mean<T: Scalar, K: Kernel<T> + Clone>(fit: &MeanFit<T, K>, x: &Curve<T>) -> Result<Prediction<T>> {
    fit.predict(x)
}

pub fn smoother_matrix<T: Scalar, K: Kernel<T> + Clone>(fit: &MeanFit<T, K>) -> Result<SmootherMatrix<T>> {
    fit.smoother_matrix()
}

pub fn squared_residuals<T: Scalar, K: Kernel<T> + Clone>(
    fit: &MeanFit<T, K>,
    mode: SelfInclusion,
) -> Result<Residuals<T>> {
    fit.squared_residuals(mode)
}

/// In-sample weights `w_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherMatrix<T> {
    n: usize,
    entries: Vec<T>,
    fallback: Vec<bool>,
}

impl<T: Scalar> SmootherMatrix<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    /// Rows produced by the nearest-neighbor fallback.
    pub fn fallback_rows(&self) -> &[bool] {
        &self.fallback
    }

    pub fn apply(&self, values: &[T]) -> Result<Vec<T>> {
        (0..self.n).map(|i| nw_estimate(self.row(i), values)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residuals<T> {
    pub values: Vec<T>,
    pub fallback_count: usize,
}

/// Frozen variance-function fit.
#[derive(Debug, Clone)]
pub struct VarianceFit<T, K = KernelKind> {
    method: VarianceMethod,
    mean: MeanFit<T, K>,
    pseudo_responses: Vec<T>,
    smoother: Smoother<T, K>,
    self_inclusion: SelfInclusion,
    residual_fallbacks: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn fit_variance<T: Scalar, K: Kernel<T> + Clone>(
    method: VarianceMethod,
    mean: &MeanFit<T, K>,
    spec_v: SemiMetricSpec,
    kernel: K,
    bandwidth_v: T,
    self_inclusion: SelfInclusion,
    policy: WeightPolicy,
) -> Result<VarianceFit<T, K>> {
    VarianceFit::new(method, mean, spec_v, kernel, bandwidth_v, self_inclusion, policy)
}

/// Residual-method fit from externally supplied squared residuals, e.g.
/// `(Y_i − m(X_i))²` when the true mean is known.
pub fn fit_variance_from_residuals<T: Scalar, K: Kernel<T> + Clone>(
    mean: &MeanFit<T, K>,
    residuals: &[T],
    spec_v: SemiMetricSpec,
    kernel: K,
    bandwidth_v: T,
    policy: WeightPolicy,
) -> Result<VarianceFit<T, K>> {
    if residuals.len() != mean.train.len() {
        return Err(Error::LengthMismatch {
            expected: mean.train.len(),
            got: residuals.len(),
        });
    }
    if residuals.iter().any(|r| !r.is_finite() || *r < T::zero()) {
        return Err(Error::InvalidInput("squared residuals must be finite and nonnegative".into()));
    }
    Ok(VarianceFit {
        method: VarianceMethod::Residual,
        mean: mean.clone(),
        pseudo_responses: residuals.to_vec(),
        smoother: Smoother::new(&mean.train, spec_v, kernel, bandwidth_v, policy)?,
        self_inclusion: SelfInclusion::IncludeSelf,
        residual_fallbacks: 0,
    })
}

impl<T: Scalar, K: Kernel<T> + Clone> VarianceFit<T, K> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        method: VarianceMethod,
        mean: &MeanFit<T, K>,
        spec_v: SemiMetricSpec,
        kernel: K,
        bandwidth_v: T,
        self_inclusion: SelfInclusion,
        policy: WeightPolicy,
    ) -> Result<Self> {
        let (pseudo_responses, residual_fallbacks) = pseudo_responses(method, mean, self_inclusion)?;
        Ok(Self {
            method,
            mean: mean.clone(),
            pseudo_responses,
            smoother: Smoother::new(&mean.train, spec_v, kernel, bandwidth_v, policy)?,
            self_inclusion,
            residual_fallbacks,
        })
    }

    pub fn method(&self) -> VarianceMethod {
        self.method
    }

    pub fn mean(&self) -> &MeanFit<T, K> {
        &self.mean
    }

    /// `R̂_i` for the residual method, `Y_i²` for the direct method.
    pub fn pseudo_responses(&self) -> &[T] {
        &self.pseudo_responses
    }

    pub fn bandwidth(&self) -> T {
        self.smoother.bandwidth
    }

    pub fn spec(&self) -> SemiMetricSpec {
        self.smoother.metric.spec()
    }

    pub fn self_inclusion(&self) -> SelfInclusion {
        self.self_inclusion
    }

    /// In-sample mean fits that fell back while computing `R̂`.
    pub fn residual_fallbacks(&self) -> usize {
        self.residual_fallbacks
    }

    pub fn distances(&self) -> &DistanceMatrix<T> {
        &self.smoother.distances
    }

    pub fn predict(&self, x: &Curve<T>) -> Result<VariancePrediction<T>> {
        let xs = CurveSet::from_curves(vec![x.clone()])?;
        Ok(self.predict_set(&xs)?[0])
    }

    pub fn predict_set(&self, xs: &CurveSet<T>) -> Result<Vec<VariancePrediction<T>>> {
        let smooth = self.smoother.smooth_set(xs, &self.pseudo_responses)?;
        match self.method {
            VarianceMethod::Residual => Ok(smooth
                .into_iter()
                .map(|p| VariancePrediction {
                    value: p.value,
                    fallback: p.fallback,
                    clipped: false,
                })
                .collect()),
            VarianceMethod::Direct => {
                let means = self.mean.predict_set(xs)?;
                Ok(smooth.into_iter().zip(means).map(|(s, m)| direct_value(s, m)).collect())
            }
        }
    }
}

fn direct_value<T: Scalar>(second_moment: Prediction<T>, mean: Prediction<T>) -> VariancePrediction<T> {
    let raw = second_moment.value - mean.value * mean.value;
    let clipped = raw < T::zero();
    VariancePrediction {
        value: if clipped { T::zero() } else { raw },
        fallback: second_moment.fallback || mean.fallback,
        clipped,
    }
}

fn pseudo_responses<T: Scalar, K: Kernel<T> + Clone>(
    method: VarianceMethod,
    mean: &MeanFit<T, K>,
    mode: SelfInclusion,
) -> Result<(Vec<T>, usize)> {
    match method {
        VarianceMethod::Residual => {
            let r = mean.squared_residuals(mode)?;
            Ok((r.values, r.fallback_count))
        }
        VarianceMethod::Direct => Ok((mean.responses.iter().map(|y| *y * *y).collect(), 0)),
    }
}

/// Pseudo-responses a variance fit would smooth, without building the fit;
/// used to cross-validate `h_v` before fitting.
pub fn variance_pseudo_responses<T: Scalar, K: Kernel<T> + Clone>(
    method: VarianceMethod,
    mean: &MeanFit<T, K>,
    mode: SelfInclusion,
) -> Result<Vec<T>> {
    Ok(pseudo_responses(method, mean, mode)?.0)
}

pub fn predict_variance<T: Scalar, K: Kernel<T> + Clone>(
    fit: &VarianceFit<T, K>,
    x: &Curve<T>,
) -> Result<VariancePrediction<T>> {
    fit.predict(x)
}
