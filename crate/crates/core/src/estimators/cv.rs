//! Leave-one-out cross-validation over a global bandwidth grid.

use rayon::prelude::*;

use crate::curves::CurveSet;
use crate::error::{Error, Result};
use crate::kernel::{nw_estimate, nw_weights_masked, Kernel, WeightPolicy};
use crate::scalar::Scalar;
use crate::semimetric::{self_distance_matrix, DistanceMatrix, SemiMetric, SemiMetricSpec};

pub const DEFAULT_GRID_SIZE: usize = 20;
pub const DEFAULT_MAX_FALLBACK_RATE: f64 = 0.10;

/// Strictly increasing positive bandwidth candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthGrid<T> {
    candidates: Vec<T>,
}

impl<T: Scalar> BandwidthGrid<T> {
    pub fn new(candidates: Vec<T>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::InvalidInput("bandwidth grid is empty".into()));
        }
        if candidates.iter().any(|h| !(h.is_finite() && *h > T::zero())) {
            return Err(Error::InvalidInput("bandwidths must be positive and finite".into()));
        }
        if candidates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("bandwidth grid must be strictly increasing".into()));
        }
        Ok(Self { candidates })
    }

    /// Sorts and deduplicates before validating.
    pub fn from_unsorted(mut candidates: Vec<T>) -> Result<Self> {
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        candidates.dedup();
        Self::new(candidates)
    }

    pub fn candidates(&self) -> &[T] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// `size` candidates at quantile levels evenly spaced on `[0.05, 1]` of the
/// positive off-diagonal distances. The level-`q` quantile is the smallest
/// distance whose empirical CDF reaches `q`, so `q = 1` is the maximum.
pub fn default_bandwidth_grid<T: Scalar>(distances: &DistanceMatrix<T>, size: usize) -> Result<BandwidthGrid<T>> {
    if size == 0 {
        return Err(Error::InvalidInput("bandwidth grid size must be positive".into()));
    }
    let mut positive = distances.positive_off_diagonal();
    if positive.is_empty() {
        return Err(Error::DegenerateDistances);
    }
    positive.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = positive.len();
    let levels: Vec<f64> = if size == 1 {
        vec![1.0]
    } else {
        (0..size)
            .map(|k| 0.05 + 0.95 * k as f64 / (size - 1) as f64)
            .collect()
    };
    let candidates = levels
        .into_iter()
        .map(|q| {
            // guard against q * n landing a hair above an integer
            let rank = ((q * n as f64) - 1e-9).ceil().max(1.0) as usize;
            positive[rank.min(n) - 1]
        })
        .collect();
    BandwidthGrid::from_unsorted(candidates)
}

#[derive(Debug, Clone, Copy)]
pub struct CvOptions {
    pub policy: WeightPolicy,
    /// Candidates whose leave-one-out fallback rate exceeds this are disqualified.
    pub max_fallback_rate: f64,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            policy: WeightPolicy::default(),
            max_fallback_rate: DEFAULT_MAX_FALLBACK_RATE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvCandidate<T> {
    pub bandwidth: T,
    /// `Σ_i (resp_i − NW_{−i}(X_i))²`; `None` when a leave-one-out fit failed
    /// under the error policy.
    pub score: Option<T>,
    pub fallback_rate: T,
    pub qualified: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult<T> {
    pub bandwidth: T,
    pub candidates: Vec<CvCandidate<T>>,
}

/// Cross-validated bandwidth for smoothing `responses` over `train` with `spec`.
pub fn cv_bandwidth<T: Scalar, K: Kernel<T>>(
    train: &CurveSet<T>,
    responses: &[T],
    spec: SemiMetricSpec,
    kernel: &K,
    grid: &BandwidthGrid<T>,
    options: CvOptions,
) -> Result<CvResult<T>> {
    let metric = SemiMetric::trained(spec, train)?;
    let distances = self_distance_matrix(&metric, train)?;
    cv_bandwidth_from_distances(&distances, responses, kernel, grid, options)
}

pub fn cv_bandwidth_from_distances<T: Scalar, K: Kernel<T>>(
    distances: &DistanceMatrix<T>,
    responses: &[T],
    kernel: &K,
    grid: &BandwidthGrid<T>,
    options: CvOptions,
) -> Result<CvResult<T>> {
    let n = distances.rows();
    if !distances.is_square() || n != responses.len() {
        return Err(Error::LengthMismatch {
            expected: n,
            got: responses.len(),
        });
    }
    if n < 2 {
        return Err(Error::InvalidInput("cross-validation needs at least 2 observations".into()));
    }
    let candidates: Vec<CvCandidate<T>> = grid
        .candidates()
        .par_iter()
        .map(|&h| score_candidate(distances, responses, kernel, h, options))
        .collect::<Result<_>>()?;

    let mut best: Option<(T, T)> = None;
    for c in &candidates {
        if let (true, Some(s)) = (c.qualified, c.score) {
            if best.is_none_or(|(_, bs)| s < bs) {
                best = Some((c.bandwidth, s));
            }
        }
    }
    let (bandwidth, _) = best.ok_or(Error::AllCandidatesDisqualified)?;
    Ok(CvResult { bandwidth, candidates })
}

fn score_candidate<T: Scalar, K: Kernel<T>>(
    distances: &DistanceMatrix<T>,
    responses: &[T],
    kernel: &K,
    h: T,
    options: CvOptions,
) -> Result<CvCandidate<T>> {
    let n = responses.len();
    let mut score = T::zero();
    let mut fallbacks = 0usize;
    for i in 0..n {
        match nw_weights_masked(distances.row(i), Some(i), h, kernel, options.policy) {
            Ok(w) => {
                if w.fallback {
                    fallbacks += 1;
                }
                let r = responses[i] - nw_estimate(&w.values, responses)?;
                score += r * r;
            }
            Err(Error::EmptyNeighborhood(_)) => {
                return Ok(CvCandidate {
                    bandwidth: h,
                    score: None,
                    fallback_rate: T::one(),
                    qualified: false,
                })
            }
            Err(e) => return Err(e),
        }
    }
    let rate = T::from_usize_lossy(fallbacks) / T::from_usize_lossy(n);
    Ok(CvCandidate {
        bandwidth: h,
        score: Some(score),
        fallback_rate: rate,
        qualified: rate.as_f64() <= options.max_fallback_rate,
    })
}
