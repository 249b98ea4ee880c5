//! Kernels supported on `[0, 1]` and Nadaraya–Watson weights.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// An asymmetric kernel: nonnegative on `[0, 1]`, zero elsewhere.
pub trait Kernel<T>: Send + Sync {
    fn eval(&self, u: T) -> T;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// `1 − u²`
    #[default]
    Quadratic,
    /// `1`
    Uniform,
    /// `1 − u`
    Triangle,
}

impl KernelKind {
    pub const ALL: [KernelKind; 3] = [KernelKind::Quadratic, KernelKind::Uniform, KernelKind::Triangle];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Quadratic => "quadratic",
            KernelKind::Uniform => "uniform",
            KernelKind::Triangle => "triangle",
        }
    }
}

impl<T: Scalar> Kernel<T> for KernelKind {
    fn eval(&self, u: T) -> T {
        if !(u >= T::zero() && u <= T::one()) {
            return T::zero();
        }
        match self {
            KernelKind::Quadratic => T::one() - u * u,
            KernelKind::Uniform => T::one(),
            KernelKind::Triangle => T::one() - u,
        }
    }
}

impl<T, K: Kernel<T> + ?Sized> Kernel<T> for &K {
    fn eval(&self, u: T) -> T {
        (**self).eval(u)
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        KernelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown kernel {s:?}; valid kinds: quadratic, uniform, triangle"))
    }
}

pub fn kernel_eval<T: Scalar>(kind: KernelKind, u: T) -> T {
    kind.eval(u)
}

/// What to do when no observation falls inside the bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightPolicy {
    Error,
    /// All weight on the nearest observation (smallest index on ties).
    #[default]
    NearestNeighborFallback,
}

impl FromStr for WeightPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "error" => Ok(WeightPolicy::Error),
            "nearest_neighbor_fallback" | "fallback" => Ok(WeightPolicy::NearestNeighborFallback),
            _ => Err(format!(
                "unknown policy {s:?}; valid policies: error, nearest_neighbor_fallback"
            )),
        }
    }
}

/// Normalized Nadaraya–Watson weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub values: Vec<T>,
    /// True when the neighborhood was empty and the nearest-neighbor fallback fired.
    pub fallback: bool,
}

pub(crate) fn check_bandwidth<T: Scalar>(h: T) -> Result<()> {
    if h > T::zero() && h.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidBandwidth(h.as_f64()))
    }
}

/// `w_i = K(d_i/h) / Σ_j K(d_j/h)`.
pub fn nw_weights<T: Scalar, K: Kernel<T> + ?Sized>(
    distances: &[T],
    h: T,
    kernel: &K,
    policy: WeightPolicy,
) -> Result<Weights<T>> {
    nw_weights_masked(distances, None, h, kernel, policy)
}

/// As [`nw_weights`], with observation `skip` (if any) forced to weight zero
/// and excluded from the fallback search.
pub(crate) fn nw_weights_masked<T: Scalar, K: Kernel<T> + ?Sized>(
    distances: &[T],
    skip: Option<usize>,
    h: T,
    kernel: &K,
    policy: WeightPolicy,
) -> Result<Weights<T>> {
    check_bandwidth(h)?;
    if distances.is_empty() || (skip.is_some() && distances.len() < 2) {
        return Err(Error::InvalidInput("no observations to weight".into()));
    }
    if distances.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("distances"));
    }
    let mut values: Vec<T> = distances
        .iter()
        .enumerate()
        .map(|(i, d)| if Some(i) == skip { T::zero() } else { kernel.eval(*d / h) })
        .collect();
    let mut total = T::zero();
    for v in &values {
        total += *v;
    }
    if total > T::zero() {
        for v in &mut values {
            *v /= total;
        }
        return Ok(Weights {
            values,
            fallback: false,
        });
    }
    match policy {
        WeightPolicy::Error => Err(Error::EmptyNeighborhood(h.as_f64())),
        WeightPolicy::NearestNeighborFallback => {
            let mut best: Option<usize> = None;
            for (i, d) in distances.iter().enumerate() {
                if Some(i) == skip {
                    continue;
                }
                if best.is_none_or(|b| *d < distances[b]) {
                    best = Some(i);
                }
            }
            let mut values = vec![T::zero(); distances.len()];
            values[best.expect("at least one candidate")] = T::one();
            Ok(Weights {
                values,
                fallback: true,
            })
        }
    }
}

/// `Σ w_i v_i`.
pub fn nw_estimate<T: Scalar>(weights: &[T], values: &[T]) -> Result<T> {
    if weights.len() != values.len() {
        return Err(Error::LengthMismatch {
            expected: weights.len(),
            got: values.len(),
        });
    }
    let mut acc = T::zero();
    for (w, v) in weights.iter().zip(values) {
        acc += *w * *v;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct Scaled(KernelKind, f64);

    impl Kernel<f64> for Scaled {
        fn eval(&self, u: f64) -> f64 {
            self.1 * self.0.eval(u)
        }
    }

    #[test]
    fn kernel_values() {
        assert_eq!(kernel_eval(KernelKind::Quadratic, 0.0), 1.0);
        assert_eq!(kernel_eval(KernelKind::Quadratic, 0.5), 0.75);
        assert_eq!(kernel_eval(KernelKind::Triangle, 0.25), 0.75);
        assert_eq!(kernel_eval(KernelKind::Uniform, 1.0), 1.0);
        for k in KernelKind::ALL {
            assert_eq!(kernel_eval(k, 1.5), 0.0);
            assert_eq!(kernel_eval(k, -0.1), 0.0);
            assert_eq!(kernel_eval(k, f64::NAN), 0.0);
        }
    }

    #[test]
    fn kernel_names_parse() {
        for k in KernelKind::ALL {
            assert_eq!(k.name().parse::<KernelKind>().unwrap(), k);
        }
        let err = "quartic".parse::<KernelKind>().unwrap_err();
        assert!(err.contains("quadratic") && err.contains("uniform") && err.contains("triangle"));
    }

    #[test]
    fn single_observation() {
        let w = nw_weights(&[0.2], 1.0, &KernelKind::Quadratic, WeightPolicy::Error).unwrap();
        assert_eq!(w.values, vec![1.0]);
        assert!(!w.fallback);
    }

    #[test]
    fn tied_distances_split_evenly() {
        let w = nw_weights(&[0.0, 0.0], 1.0, &KernelKind::Quadratic, WeightPolicy::Error).unwrap();
        assert_eq!(w.values, vec![0.5, 0.5]);
    }

    #[test]
    fn outside_support_gets_nothing() {
        let w = nw_weights(&[0.5, 2.0], 1.0, &KernelKind::Quadratic, WeightPolicy::Error).unwrap();
        assert_eq!(w.values, vec![1.0, 0.0]);
    }

    #[test]
    fn empty_neighborhood_policies() {
        let d = [3.0, 2.0, 2.0, 5.0];
        assert!(matches!(
            nw_weights(&d, 1.0, &KernelKind::Quadratic, WeightPolicy::Error),
            Err(Error::EmptyNeighborhood(_))
        ));
        let w = nw_weights(&d, 1.0, &KernelKind::Quadratic, WeightPolicy::NearestNeighborFallback).unwrap();
        assert!(w.fallback);
        assert_eq!(w.values, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn quadratic_boundary_point_is_empty() {
        // K(1) = 0 for the quadratic kernel
        let w = nw_weights(&[1.0], 1.0, &KernelKind::Quadratic, WeightPolicy::NearestNeighborFallback).unwrap();
        assert!(w.fallback);
        let w = nw_weights(&[1.0], 1.0, &KernelKind::Uniform, WeightPolicy::Error).unwrap();
        assert!(!w.fallback);
    }

    #[test]
    fn masked_fallback_skips_self() {
        let d = [0.0, 4.0, 3.0];
        let w = nw_weights_masked(&d, Some(0), 1.0, &KernelKind::Quadratic, WeightPolicy::NearestNeighborFallback).unwrap();
        assert_eq!(w.values, vec![0.0, 0.0, 1.0]);
        assert!(w.fallback);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(nw_weights(&[0.1], 0.0, &KernelKind::Quadratic, WeightPolicy::Error).is_err());
        assert!(nw_weights(&[0.1], f64::INFINITY, &KernelKind::Quadratic, WeightPolicy::Error).is_err());
        assert!(nw_weights(&[f64::NAN], 1.0, &KernelKind::Quadratic, WeightPolicy::Error).is_err());
        assert!(nw_weights::<f64, KernelKind>(&[], 1.0, &KernelKind::Quadratic, WeightPolicy::Error).is_err());
    }

    #[test]
    fn estimate_examples() {
        assert_eq!(nw_estimate(&[0.5, 0.5], &[2.0, 2.0]).unwrap(), 2.0);
        assert_eq!(nw_estimate(&[1.0, 0.0], &[3.0, 7.0]).unwrap(), 3.0);
        assert_eq!(nw_estimate(&[0.25, 0.75], &[4.0, 8.0]).unwrap(), 7.0);
        assert!(nw_estimate(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn kernel_works_in_single_precision() {
        let w = nw_weights(&[0.5f32, 0.0], 1.0, &KernelKind::Quadratic, WeightPolicy::Error).unwrap();
        assert!((w.values[0] - 0.75 / 1.75).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn weights_normalized_and_local(
            d in proptest::collection::vec(0.0f64..3.0, 1..30),
            h in 0.05f64..4.0,
            kind in prop_oneof![Just(KernelKind::Quadratic), Just(KernelKind::Uniform), Just(KernelKind::Triangle)],
        ) {
            let w = nw_weights(&d, h, &kind, WeightPolicy::NearestNeighborFallback).unwrap();
            prop_assert!(w.values.iter().all(|v| *v >= 0.0));
            let s: f64 = w.values.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            if !w.fallback {
                for (di, wi) in d.iter().zip(&w.values) {
                    if *di > h {
                        prop_assert_eq!(*wi, 0.0);
                    }
                }
            }
        }

        #[test]
        fn scaling_kernel_leaves_weights(
            d in proptest::collection::vec(0.0f64..3.0, 1..30),
            h in 0.05f64..4.0,
            c in 0.01f64..100.0,
        ) {
            let a = nw_weights(&d, h, &KernelKind::Quadratic, WeightPolicy::NearestNeighborFallback).unwrap();
            let b = nw_weights(&d, h, &Scaled(KernelKind::Quadratic, c), WeightPolicy::NearestNeighborFallback).unwrap();
            prop_assert_eq!(a.fallback, b.fallback);
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn estimate_stays_in_range(
            pairs in proptest::collection::vec((0.0f64..3.0, -10.0f64..10.0), 1..20),
            h in 0.1f64..4.0,
        ) {
            let (d, v): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let w = nw_weights(&d, h, &KernelKind::Quadratic, WeightPolicy::NearestNeighborFallback).unwrap();
            let est = nw_estimate(&w.values, &v).unwrap();
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(est >= lo - 1e-12 && est <= hi + 1e-12);
        }
    }
}
