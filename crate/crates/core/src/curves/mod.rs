//! Curves sampled on a shared grid: quadrature and derivatives.

mod bspline;
pub mod csv_io;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use bspline::SplineDerivative;

/// Strictly increasing abscissae shared by a family of curves.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    points: Vec<T>,
    weights: Vec<T>,
}

impl<T: Scalar> Grid<T> {
    pub fn new(points: Vec<T>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("grid"));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("points must be strictly increasing".into()));
        }
        let weights = trapezoid_weights(&points);
        Ok(Self { points, weights })
    }

    /// `size` equally spaced points on `[lo, hi]`, endpoints included.
    pub fn uniform(lo: T, hi: T, size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 points, got {size}")));
        }
        // (lo (m − k) + hi k) / m keeps symmetric grids exactly symmetric
        let m = T::from_usize_lossy(size - 1);
        let points = (0..size)
            .map(|k| {
                let k = T::from_usize_lossy(k);
                (lo * (m - k) + hi * k) / m
            })
            .collect();
        Self::new(points)
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    /// Composite trapezoid quadrature weights: `∫ f ≈ Σ w_k f(t_k)`.
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> T {
        self.points[0]
    }

    pub fn last(&self) -> T {
        self.points[self.points.len() - 1]
    }

    /// Trapezoid integral of samples taken on this grid, accumulated with
    /// Neumaier compensation in grid order.
    pub fn integrate(&self, values: &[T]) -> T {
        debug_assert_eq!(values.len(), self.points.len());
        compensated_sum(self.weights.iter().zip(values).map(|(w, v)| *w * *v))
    }
}

pub(crate) fn compensated_sum<T: Scalar>(terms: impl Iterator<Item = T>) -> T {
    let mut sum = T::zero();
    let mut comp = T::zero();
    for x in terms {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn trapezoid_weights<T: Scalar>(points: &[T]) -> Vec<T> {
    let half = T::lit(0.5);
    let n = points.len();
    let mut w = vec![T::zero(); n];
    for k in 0..n - 1 {
        let dt = (points[k + 1] - points[k]) * half;
        w[k] += dt;
        w[k + 1] += dt;
    }
    w
}

pub(crate) fn same_grid<T: Scalar>(a: &Arc<Grid<T>>, b: &Arc<Grid<T>>) -> bool {
    Arc::ptr_eq(a, b) || a.points == b.points
}

/// One functional observation.
#[derive(Debug, Clone)]
pub struct Curve<T> {
    grid: Arc<Grid<T>>,
    values: Vec<T>,
}

impl<T: Scalar> Curve<T> {
    pub fn new(grid: Arc<Grid<T>>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("curve values"));
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(grid: Arc<Grid<T>>, f: impl Fn(T) -> T) -> Result<Self> {
        let values = grid.points().iter().map(|&t| f(t)).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<Grid<T>> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same grid, new samples.
    pub fn with_values(&self, values: Vec<T>) -> Result<Self> {
        Self::new(self.grid.clone(), values)
    }

    pub fn shares_grid(&self, other: &Curve<T>) -> bool {
        same_grid(&self.grid, &other.grid)
    }
}

impl<T: PartialEq> PartialEq for Curve<T> {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values && self.grid.points == other.grid.points
    }
}

/// `n ≥ 1` curves on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSet<T> {
    grid: Arc<Grid<T>>,
    curves: Vec<Curve<T>>,
}

impl<T: Scalar> CurveSet<T> {
    /// Builds a set from raw rows of samples.
    pub fn new(grid: Arc<Grid<T>>, rows: Vec<Vec<T>>) -> Result<Self> {
        let curves = rows
            .into_iter()
            .map(|r| Curve::new(grid.clone(), r))
            .collect::<Result<Vec<_>>>()?;
        Self::from_curves_on(grid, curves)
    }

    pub fn from_curves(curves: Vec<Curve<T>>) -> Result<Self> {
        let grid = curves
            .first()
            .ok_or_else(|| Error::InvalidInput("a curve set needs at least one curve".into()))?
            .grid
            .clone();
        Self::from_curves_on(grid, curves)
    }

    fn from_curves_on(grid: Arc<Grid<T>>, curves: Vec<Curve<T>>) -> Result<Self> {
        if curves.is_empty() {
            return Err(Error::InvalidInput("a curve set needs at least one curve".into()));
        }
        if curves.iter().any(|c| !same_grid(&c.grid, &grid)) {
            return Err(Error::GridMismatch);
        }
        Ok(Self { grid, curves })
    }

    pub fn grid(&self) -> &Arc<Grid<T>> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn get(&self, i: usize) -> &Curve<T> {
        &self.curves[i]
    }

    pub fn curves(&self) -> &[Curve<T>] {
        &self.curves
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Curve<T>> {
        self.curves.iter()
    }

    /// Curves at the given indices, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let curves = indices
            .iter()
            .map(|&i| {
                self.curves.get(i).cloned().ok_or_else(|| {
                    Error::InvalidInput(format!("curve index {i} out of range {}", self.len()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_curves_on(self.grid.clone(), curves)
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let idx: Vec<usize> = range.collect();
        self.select(&idx)
    }
}

impl<'a, T> IntoIterator for &'a CurveSet<T> {
    type Item = &'a Curve<T>;
    type IntoIter = std::slice::Iter<'a, Curve<T>>;

    fn into_iter(self) -> Self::IntoIter {
        self.curves.iter()
    }
}

/// Trapezoid integral of a curve over `[t_1, t_T]`.
pub fn integrate<T: Scalar>(c: &Curve<T>) -> T {
    c.grid.integrate(&c.values)
}

/// How derivatives are computed from raw samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
#[derive(Default)]
pub enum DerivMethod {
    /// Repeated central differences, first-order one-sided at the endpoints.
    #[default]
    FiniteDiff,
    /// Least-squares B-spline with `knots` interior knots at grid quantiles.
    Bspline { knots: usize, degree: usize },
}


/// Derivative operator with any per-grid setup done once.
#[derive(Debug, Clone)]
pub enum Differentiator<T> {
    Identity,
    FiniteDiff { order: usize, grid: Arc<Grid<T>> },
    Spline(SplineDerivative<T>),
}

impl<T: Scalar> Differentiator<T> {
    pub fn new(grid: &Arc<Grid<T>>, order: usize, method: DerivMethod) -> Result<Self> {
        if order == 0 {
            return Ok(Differentiator::Identity);
        }
        match method {
            DerivMethod::FiniteDiff => {
                if grid.len() < order + 1 {
                    return Err(Error::GridTooShort {
                        points: grid.len(),
                        what: format!("a finite-difference derivative of order {order}"),
                    });
                }
                Ok(Differentiator::FiniteDiff {
                    order,
                    grid: grid.clone(),
                })
            }
            DerivMethod::Bspline { knots, degree } => Ok(Differentiator::Spline(
                SplineDerivative::new(grid, order, knots, degree)?,
            )),
        }
    }

    pub fn apply_values(&self, values: &[T]) -> Vec<T> {
        match self {
            Differentiator::Identity => values.to_vec(),
            Differentiator::FiniteDiff { order, grid } => {
                let mut out = values.to_vec();
                for _ in 0..*order {
                    out = finite_diff_once(grid.points(), &out);
                }
                out
            }
            Differentiator::Spline(s) => s.apply(values),
        }
    }

    pub fn apply(&self, c: &Curve<T>) -> Result<Curve<T>> {
        c.with_values(self.apply_values(&c.values))
    }

    pub fn apply_set(&self, set: &CurveSet<T>) -> Result<CurveSet<T>> {
        if let Differentiator::Identity = self {
            return Ok(set.clone());
        }
        let rows = set.iter().map(|c| self.apply_values(&c.values)).collect();
        CurveSet::new(set.grid.clone(), rows)
    }
}

fn finite_diff_once<T: Scalar>(t: &[T], f: &[T]) -> Vec<T> {
    let n = t.len();
    let mut d = Vec::with_capacity(n);
    d.push((f[1] - f[0]) / (t[1] - t[0]));
    for k in 1..n - 1 {
        d.push((f[k + 1] - f[k - 1]) / (t[k + 1] - t[k - 1]));
    }
    d.push((f[n - 1] - f[n - 2]) / (t[n - 1] - t[n - 2]));
    d
}

/// Derivative of order `order` evaluated on the curve's own grid.
pub fn derivative<T: Scalar>(c: &Curve<T>, order: usize, method: DerivMethod) -> Result<Curve<T>> {
    Differentiator::new(&c.grid, order, method)?.apply(c)
}
