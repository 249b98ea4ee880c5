//! Semi-metrics between curves and the empirical small-ball diagnostic.
//!
//! Every supported semi-metric reduces to a weighted Euclidean distance
//! between per-curve feature vectors: derivative samples weighted by the
//! trapezoid rule for [`SemiMetricSpec::DerivL2`], principal-component
//! scores with unit weights for [`SemiMetricSpec::PcaProjection`]. Curves are
//! embedded once and all pairwise work happens on the embeddings.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curves::{same_grid, Curve, CurveSet, DerivMethod, Differentiator, Grid};
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SemiMetricSpec {
    /// `sqrt(∫ (a^(q) − b^(q))² dt)`.
    DerivL2 {
        order: usize,
        #[serde(flatten)]
        method: DerivMethod,
    },
    /// Euclidean distance between the first `dim` principal-component scores.
    PcaProjection { dim: usize },
}

impl SemiMetricSpec {
    pub fn l2(order: usize) -> Self {
        SemiMetricSpec::DerivL2 {
            order,
            method: DerivMethod::FiniteDiff,
        }
    }
}

/// Principal directions of the quadrature-weighted second-moment operator.
#[derive(Debug, Clone)]
pub struct PcaBasis<T> {
    grid: Arc<Grid<T>>,
    // loadings[k][j] = sqrt(w_j) u_k[j], so score_k(x) = Σ_j loadings[k][j] x_j
    loadings: Vec<Vec<T>>,
    eigenvalues: Vec<T>,
}

impl<T: Scalar> PcaBasis<T> {
    pub fn fit(train: &CurveSet<T>, dim: usize) -> Result<Self> {
        let n = train.len();
        let t = train.grid().len();
        if dim == 0 || dim > n.min(t) {
            return Err(Error::InvalidDimension { dim, max: n.min(t) });
        }
        let sqrt_w: Vec<T> = train.grid().weights().iter().map(|w| w.sqrt()).collect();
        let mut moment = vec![T::zero(); t * t];
        for c in train {
            let z: Vec<T> = c.values().iter().zip(&sqrt_w).map(|(x, s)| *x * *s).collect();
            for a in 0..t {
                for b in a..t {
                    moment[a * t + b] += z[a] * z[b];
                }
            }
        }
        let inv_n = T::one() / T::from_usize_lossy(n);
        for a in 0..t {
            for b in a..t {
                let v = moment[a * t + b] * inv_n;
                moment[a * t + b] = v;
                moment[b * t + a] = v;
            }
        }
        let (values, vectors) = symmetric_eigen(&moment, t);
        let loadings = vectors
            .into_iter()
            .take(dim)
            .map(|u| u.iter().zip(&sqrt_w).map(|(u, s)| *u * *s).collect())
            .collect();
        Ok(Self {
            grid: train.grid().clone(),
            loadings,
            eigenvalues: values.into_iter().take(dim).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.loadings.len()
    }

    pub fn eigenvalues(&self) -> &[T] {
        &self.eigenvalues
    }

    pub fn scores(&self, c: &Curve<T>) -> Vec<T> {
        self.loadings
            .iter()
            .map(|l| l.iter().zip(c.values()).map(|(a, b)| *a * *b).sum())
            .collect()
    }
}

/// A semi-metric ready for use: the spec plus any trained state.
#[derive(Debug, Clone)]
pub struct SemiMetric<T> {
    spec: SemiMetricSpec,
    basis: Option<PcaBasis<T>>,
}

impl<T: Scalar> SemiMetric<T> {
    /// Untrained semi-metric. Derivative semi-metrics need no training.
    pub fn new(spec: SemiMetricSpec) -> Self {
        Self { spec, basis: None }
    }

    /// Semi-metric trained on `train` when the spec requires it.
    pub fn trained(spec: SemiMetricSpec, train: &CurveSet<T>) -> Result<Self> {
        let mut m = Self::new(spec);
        m.train(train)?;
        Ok(m)
    }

    pub fn train(&mut self, train: &CurveSet<T>) -> Result<()> {
        if let SemiMetricSpec::PcaProjection { dim } = self.spec {
            self.basis = Some(PcaBasis::fit(train, dim)?);
        }
        Ok(())
    }

    pub fn spec(&self) -> SemiMetricSpec {
        self.spec
    }

    pub fn basis(&self) -> Option<&PcaBasis<T>> {
        self.basis.as_ref()
    }

    /// Feature vectors for every curve in `set`.
    pub fn embed(&self, set: &CurveSet<T>) -> Result<Embedding<T>> {
        match self.spec {
            SemiMetricSpec::DerivL2 { order, method } => {
                let diff = Differentiator::new(set.grid(), order, method)?;
                let rows = set.iter().map(|c| diff.apply_values(c.values())).collect();
                Ok(Embedding {
                    grid: set.grid().clone(),
                    weights: set.grid().weights().to_vec(),
                    rows,
                })
            }
            SemiMetricSpec::PcaProjection { .. } => {
                let basis = self.basis.as_ref().ok_or(Error::UntrainedProjection)?;
                if !same_grid(&basis.grid, set.grid()) {
                    return Err(Error::GridMismatch);
                }
                let rows = set.iter().map(|c| basis.scores(c)).collect();
                Ok(Embedding {
                    grid: set.grid().clone(),
                    weights: vec![T::one(); basis.dim()],
                    rows,
                })
            }
        }
    }

    pub fn embed_curve(&self, c: &Curve<T>) -> Result<Embedding<T>> {
        self.embed(&CurveSet::from_curves(vec![c.clone()])?)
    }
}

/// Per-curve features such that `d(a, b) = sqrt(Σ_k w_k (a_k − b_k)²)`.
#[derive(Debug, Clone)]
pub struct Embedding<T> {
    grid: Arc<Grid<T>>,
    weights: Vec<T>,
    rows: Vec<Vec<T>>,
}

impl<T: Scalar> Embedding<T> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn grid(&self) -> &Arc<Grid<T>> {
        &self.grid
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.rows[i]
    }

    fn check_compatible(&self, other: &Embedding<T>) -> Result<()> {
        if !same_grid(&self.grid, &other.grid) {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    fn pair(&self, a: &[T], b: &[T]) -> T {
        let mut acc = T::zero();
        for ((w, x), y) in self.weights.iter().zip(a).zip(b) {
            let d = *x - *y;
            acc += *w * d * d;
        }
        acc.sqrt()
    }

    /// Distances from one external feature vector to every row.
    pub fn distances_to(&self, features: &[T]) -> Vec<T> {
        self.rows.iter().map(|r| self.pair(features, r)).collect()
    }

    /// Distances from row `i` of `other` to every row of `self`.
    pub fn distances_from(&self, other: &Embedding<T>, i: usize) -> Result<Vec<T>> {
        self.check_compatible(other)?;
        Ok(self.distances_to(&other.rows[i]))
    }

    /// `rows × cols` matrix of distances from rows of `self` to rows of `other`.
    pub fn cross_matrix(&self, other: &Embedding<T>) -> Result<DistanceMatrix<T>> {
        self.check_compatible(other)?;
        let data: Vec<Vec<T>> = self
            .rows
            .par_iter()
            .map(|a| other.rows.iter().map(|b| self.pair(a, b)).collect())
            .collect();
        Ok(DistanceMatrix::from_rows(self.len(), other.len(), data))
    }

    /// Symmetric matrix with an exact zero diagonal.
    pub fn self_matrix(&self) -> DistanceMatrix<T> {
        let n = self.len();
        let upper: Vec<Vec<T>> = (0..n)
            .into_par_iter()
            .map(|i| ((i + 1)..n).map(|j| self.pair(&self.rows[i], &self.rows[j])).collect())
            .collect();
        let mut data = vec![T::zero(); n * n];
        for (i, row) in upper.iter().enumerate() {
            for (k, d) in row.iter().enumerate() {
                let j = i + 1 + k;
                data[i * n + j] = *d;
                data[j * n + i] = *d;
            }
        }
        DistanceMatrix {
            rows: n,
            cols: n,
            data,
        }
    }
}

/// Dense `rows × cols` matrix of nonnegative distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DistanceMatrix<T> {
    fn from_rows(rows: usize, cols: usize, data: Vec<Vec<T>>) -> Self {
        Self {
            rows,
            cols,
            data: data.into_iter().flatten().collect(),
        }
    }

    /// Builds a matrix from row-major entries, validating them.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if data.iter().any(|d| !d.is_finite()) {
            return Err(Error::NonFinite("distance matrix"));
        }
        if data.iter().any(|d| *d < T::zero()) {
            return Err(Error::InvalidInput("distances must be nonnegative".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Largest entry (zero for an empty matrix).
    pub fn max(&self) -> T {
        self.data.iter().fold(T::zero(), |m, d| m.max(*d))
    }

    /// Strictly positive entries above the diagonal of a square matrix,
    /// or all strictly positive entries otherwise.
    pub fn positive_off_diagonal(&self) -> Vec<T> {
        if self.is_square() {
            let n = self.rows;
            (0..n)
                .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
                .map(|(i, j)| self.get(i, j))
                .filter(|d| *d > T::zero())
                .collect()
        } else {
            self.data.iter().copied().filter(|d| *d > T::zero()).collect()
        }
    }
}

pub fn distance<T: Scalar>(metric: &SemiMetric<T>, a: &Curve<T>, b: &Curve<T>) -> Result<T> {
    if !a.shares_grid(b) {
        return Err(Error::GridMismatch);
    }
    let pair = CurveSet::from_curves(vec![a.clone(), b.clone()])?;
    let e = metric.embed(&pair)?;
    Ok(e.pair(&e.rows[0], &e.rows[1]))
}

/// Entry `(i, j)` is `d(A_i, B_j)`.
pub fn distance_matrix<T: Scalar>(
    metric: &SemiMetric<T>,
    a: &CurveSet<T>,
    b: &CurveSet<T>,
) -> Result<DistanceMatrix<T>> {
    if !same_grid(a.grid(), b.grid()) {
        return Err(Error::GridMismatch);
    }
    metric.embed(a)?.cross_matrix(&metric.embed(b)?)
}

pub fn self_distance_matrix<T: Scalar>(metric: &SemiMetric<T>, a: &CurveSet<T>) -> Result<DistanceMatrix<T>> {
    Ok(metric.embed(a)?.self_matrix())
}

/// Empirical `φ(h)`: fraction of training curves within distance `h` of `x`.
pub fn small_ball_fraction<T: Scalar>(
    metric: &SemiMetric<T>,
    train: &CurveSet<T>,
    x: &Curve<T>,
    h: T,
) -> Result<T> {
    crate::kernel::check_bandwidth(h)?;
    if !same_grid(train.grid(), x.grid()) {
        return Err(Error::GridMismatch);
    }
    let e = metric.embed(train)?;
    let xf = metric.embed_curve(x)?;
    Ok(fraction_within(&e.distances_to(xf.row(0)), h))
}

pub(crate) fn fraction_within<T: Scalar>(distances: &[T], h: T) -> T {
    let count = distances.iter().filter(|d| **d <= h).count();
    T::from_usize_lossy(count) / T::from_usize_lossy(distances.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize) -> Arc<Grid<f64>> {
        Arc::new(Grid::uniform(-1.0, 1.0, n).unwrap())
    }

    fn curve(g: &Arc<Grid<f64>>, f: impl Fn(f64) -> f64) -> Curve<f64> {
        Curve::from_fn(g.clone(), f).unwrap()
    }

    #[test]
    fn identical_curves_are_at_zero() {
        let g = grid(31);
        let x = curve(&g, |t| t.sin());
        for spec in [SemiMetricSpec::l2(0), SemiMetricSpec::l2(1), SemiMetricSpec::l2(2)] {
            assert_eq!(distance(&SemiMetric::new(spec), &x, &x).unwrap(), 0.0);
        }
    }

    #[test]
    fn order_zero_constant_gap() {
        let g = grid(11);
        let d = distance(
            &SemiMetric::new(SemiMetricSpec::l2(0)),
            &curve(&g, |_| 0.0),
            &curve(&g, |_| 1.0),
        )
        .unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn order_one_linear_gap() {
        let g = grid(51);
        let d = distance(
            &SemiMetric::new(SemiMetricSpec::l2(1)),
            &curve(&g, |t| t),
            &curve(&g, |t| 2.0 * t),
        )
        .unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let a = curve(&grid(11), |t| t);
        let b = curve(&grid(12), |t| t);
        assert!(matches!(
            distance(&SemiMetric::new(SemiMetricSpec::l2(0)), &a, &b),
            Err(Error::GridMismatch)
        ));
    }

    #[test]
    fn untrained_projection_is_rejected() {
        let g = grid(11);
        let a = curve(&g, |t| t);
        let m = SemiMetric::new(SemiMetricSpec::PcaProjection { dim: 1 });
        assert!(matches!(distance(&m, &a, &a), Err(Error::UntrainedProjection)));
    }

    #[test]
    fn projection_dimension_is_bounded_by_training_size() {
        let g = grid(11);
        let set = CurveSet::from_curves(vec![curve(&g, |t| t), curve(&g, |t| t * t)]).unwrap();
        assert!(SemiMetric::trained(SemiMetricSpec::PcaProjection { dim: 3 }, &set).is_err());
        assert!(SemiMetric::trained(SemiMetricSpec::PcaProjection { dim: 2 }, &set).is_ok());
    }

    #[test]
    fn full_projection_recovers_l2_in_span() {
        // curves in span{1, t}; two components capture them exactly, so the
        // projection distance equals the order-0 L2 distance
        let g = grid(41);
        let set = CurveSet::from_curves(vec![
            curve(&g, |t| 1.0 + t),
            curve(&g, |t| 2.0 - t),
            curve(&g, |t| 0.5 * t),
        ])
        .unwrap();
        let pca = SemiMetric::trained(SemiMetricSpec::PcaProjection { dim: 2 }, &set).unwrap();
        let l2 = SemiMetric::new(SemiMetricSpec::l2(0));
        for i in 0..3 {
            for j in 0..3 {
                let a = distance(&pca, set.get(i), set.get(j)).unwrap();
                let b = distance(&l2, set.get(i), set.get(j)).unwrap();
                assert!((a - b).abs() < 1e-9, "{i},{j}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn singleton_self_matrix_is_zero() {
        let g = grid(5);
        let set = CurveSet::from_curves(vec![curve(&g, |t| t)]).unwrap();
        let m = distance_matrix(&SemiMetric::new(SemiMetricSpec::l2(0)), &set, &set).unwrap();
        assert_eq!((m.rows(), m.cols()), (1, 1));
        assert_eq!(m.get(0, 0), 0.0);
    }

    #[test]
    fn matrix_matches_pairwise_calls() {
        let g = grid(21);
        let set = CurveSet::from_curves(vec![
            curve(&g, |t| t.sin()),
            curve(&g, |t| t * t),
            curve(&g, |t| (3.0 * t).cos()),
        ])
        .unwrap();
        for spec in [SemiMetricSpec::l2(0), SemiMetricSpec::l2(1)] {
            let metric = SemiMetric::new(spec);
            let m = self_distance_matrix(&metric, &set).unwrap();
            let cross = distance_matrix(&metric, &set, &set).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let d = distance(&metric, set.get(i), set.get(j)).unwrap();
                    assert_eq!(m.get(i, j), d);
                    assert_eq!(cross.get(i, j), d);
                }
            }
        }
    }

    #[test]
    fn duplicate_curves_give_zero_entries() {
        let g = grid(21);
        let a = curve(&g, |t| t.sin());
        let set = CurveSet::from_curves(vec![a.clone(), curve(&g, |t| t), a]).unwrap();
        let m = self_distance_matrix(&SemiMetric::new(SemiMetricSpec::l2(0)), &set).unwrap();
        assert_eq!(m.get(0, 2), 0.0);
        assert!(m.get(0, 1) > 0.0);
        assert!(m.get(1, 2) > 0.0);
    }

    #[test]
    fn small_ball_extremes() {
        let g = grid(11);
        let set = CurveSet::from_curves(vec![
            curve(&g, |_| 0.0),
            curve(&g, |_| 1.0),
            curve(&g, |_| 3.0),
        ])
        .unwrap();
        let metric = SemiMetric::new(SemiMetricSpec::l2(0));
        let far = self_distance_matrix(&metric, &set).unwrap().max();
        assert_eq!(small_ball_fraction(&metric, &set, set.get(0), far * 1.01).unwrap(), 1.0);
        let x = curve(&g, |_| 10.0);
        assert_eq!(small_ball_fraction(&metric, &set, &x, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn small_ball_counts_hand_instance() {
        // constants c on [-1,1]: d(x, c) = sqrt(2)|x - c|
        let g = grid(11);
        let set = CurveSet::from_curves(
            [0.0, 1.0, 2.0, 4.0].iter().map(|&c| curve(&g, move |_| c)).collect(),
        )
        .unwrap();
        let metric = SemiMetric::new(SemiMetricSpec::l2(0));
        let x = curve(&g, |_| 0.5);
        let s2 = 2f64.sqrt();
        // distances: 0.5s2, 0.5s2, 1.5s2, 3.5s2
        assert_eq!(small_ball_fraction(&metric, &set, &x, 0.4 * s2).unwrap(), 0.0);
        assert_eq!(small_ball_fraction(&metric, &set, &x, 0.6 * s2).unwrap(), 0.5);
        assert_eq!(small_ball_fraction(&metric, &set, &x, 2.0 * s2).unwrap(), 0.75);
        assert_eq!(small_ball_fraction(&metric, &set, &x, 4.0 * s2).unwrap(), 1.0);
    }

    #[test]
    fn spec_json_shape() {
        let spec = SemiMetricSpec::DerivL2 {
            order: 2,
            method: DerivMethod::Bspline { knots: 20, degree: 3 },
        };
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(
            json,
            r#"{"kind":"deriv_l2","order":2,"method":"bspline","knots":20,"degree":3}"#
        );
        let back: SemiMetricSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        let pca: SemiMetricSpec = serde_json::from_str(r#"{"kind":"pca_projection","dim":3}"#).unwrap();
        assert_eq!(pca, SemiMetricSpec::PcaProjection { dim: 3 });
    }

    proptest! {
        #[test]
        fn polynomial_shift_invariance(
            xs in proptest::collection::vec(-2.0f64..2.0, 33),
            ys in proptest::collection::vec(-2.0f64..2.0, 33),
            c0 in -5.0f64..5.0,
            c1 in -5.0f64..5.0,
        ) {
            // order q ignores polynomials of degree < q added to both curves
            let g = grid(33);
            let a = Curve::new(g.clone(), xs.clone()).unwrap();
            let b = Curve::new(g.clone(), ys.clone()).unwrap();
            for order in [1usize, 2] {
                let shift = |t: f64| if order == 1 { c0 } else { c0 + c1 * t };
                let a2 = Curve::new(g.clone(), xs.iter().zip(g.points()).map(|(x, t)| x + shift(*t)).collect()).unwrap();
                let b2 = Curve::new(g.clone(), ys.iter().zip(g.points()).map(|(y, t)| y + shift(*t)).collect()).unwrap();
                let m = SemiMetric::new(SemiMetricSpec::l2(order));
                let d1 = distance(&m, &a, &b).unwrap();
                let d2 = distance(&m, &a2, &b2).unwrap();
                prop_assert!((d1 - d2).abs() <= 1e-8 * (1.0 + d1));
            }
        }

        #[test]
        fn symmetric_and_nonnegative(
            xs in proptest::collection::vec(-2.0f64..2.0, 15),
            ys in proptest::collection::vec(-2.0f64..2.0, 15),
            order in 0usize..3,
        ) {
            let g = grid(15);
            let a = Curve::new(g.clone(), xs).unwrap();
            let b = Curve::new(g, ys).unwrap();
            let m = SemiMetric::new(SemiMetricSpec::l2(order));
            let ab = distance(&m, &a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, distance(&m, &b, &a).unwrap());
        }
    }
}
