//! Least-squares B-spline smoothing used for derivative estimation.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::HouseholderQr;
use crate::scalar::Scalar;

use super::Grid;

/// Fits a clamped B-spline to samples by least squares and evaluates the
/// analytic derivative of the fit on the same grid.
#[derive(Debug, Clone)]
pub struct SplineDerivative<T> {
    rows: usize,
    cols: usize,
    qr: HouseholderQr<T>,
    // rows x cols, row-major: derivative of basis j at grid point i
    deriv_basis: Vec<T>,
}

impl<T: Scalar> SplineDerivative<T> {
    pub fn new(grid: &Arc<Grid<T>>, order: usize, interior_knots: usize, degree: usize) -> Result<Self> {
        if degree <= order {
            return Err(Error::InvalidInput(format!(
                "spline degree {degree} must exceed derivative order {order}"
            )));
        }
        let rows = grid.len();
        let cols = interior_knots + degree + 1;
        if cols > rows {
            return Err(Error::GridTooShort {
                points: rows,
                what: format!("a spline with {interior_knots} knots of degree {degree}"),
            });
        }
        let knots = clamped_knots(grid.points(), interior_knots, degree);
        let mut design = Vec::with_capacity(rows * cols);
        for &t in grid.points() {
            design.extend(basis_values(&knots, degree, t));
        }
        let qr = HouseholderQr::new(design, rows, cols)?;

        let mut deriv_basis = vec![T::zero(); rows * cols];
        for j in 0..cols {
            let mut coef = vec![T::zero(); cols];
            coef[j] = T::one();
            let (dk, dc, ddeg) = differentiate(&knots, &coef, degree, order);
            for (i, &t) in grid.points().iter().enumerate() {
                let b = basis_values(&dk, ddeg, t);
                deriv_basis[i * cols + j] = b.iter().zip(&dc).map(|(b, c)| *b * *c).sum();
            }
        }
        Ok(Self {
            rows,
            cols,
            qr,
            deriv_basis,
        })
    }

    pub fn apply(&self, values: &[T]) -> Vec<T> {
        let coef = self.qr.solve(values);
        (0..self.rows)
            .map(|i| {
                let row = &self.deriv_basis[i * self.cols..(i + 1) * self.cols];
                row.iter().zip(&coef).map(|(b, c)| *b * *c).sum()
            })
            .collect()
    }
}

/// Boundary knots repeated `degree + 1` times; interior knots at evenly spaced
/// quantiles of the grid points (linear interpolation between order statistics).
fn clamped_knots<T: Scalar>(points: &[T], interior: usize, degree: usize) -> Vec<T> {
    let lo = points[0];
    let hi = points[points.len() - 1];
    let mut knots = vec![lo; degree + 1];
    let last = T::from_usize_lossy(points.len() - 1);
    for k in 1..=interior {
        let p = T::from_usize_lossy(k) / T::from_usize_lossy(interior + 1);
        let pos = p * last;
        let i = pos.floor().to_usize().unwrap_or(0).min(points.len() - 2);
        let frac = pos - T::from_usize_lossy(i);
        knots.push(points[i] + frac * (points[i + 1] - points[i]));
    }
    knots.extend(std::iter::repeat_n(hi, degree + 1));
    knots
}

/// Values of all `knots.len() - degree - 1` basis functions at `x`
/// (Cox–de Boor), right-continuous except at the final knot.
fn basis_values<T: Scalar>(knots: &[T], degree: usize, x: T) -> Vec<T> {
    let nb = knots.len() - degree - 1;
    let last = knots[knots.len() - 1];
    let mut n: Vec<T> = (0..knots.len() - 1)
        .map(|i| {
            let inside = if x == last {
                // close the last non-degenerate interval
                knots[i] < knots[i + 1] && knots[i + 1] == last
            } else {
                knots[i] <= x && x < knots[i + 1]
            };
            if inside {
                T::one()
            } else {
                T::zero()
            }
        })
        .collect();
    for k in 1..=degree {
        for i in 0..knots.len() - 1 - k {
            let mut v = T::zero();
            let d1 = knots[i + k] - knots[i];
            if d1 > T::zero() {
                v += (x - knots[i]) / d1 * n[i];
            }
            let d2 = knots[i + k + 1] - knots[i + 1];
            if d2 > T::zero() {
                v += (knots[i + k + 1] - x) / d2 * n[i + 1];
            }
            n[i] = v;
        }
    }
    n.truncate(nb);
    n
}

/// Differentiates a spline `order` times, returning (knots, coefficients, degree).
fn differentiate<T: Scalar>(knots: &[T], coef: &[T], degree: usize, order: usize) -> (Vec<T>, Vec<T>, usize) {
    let mut t = knots.to_vec();
    let mut c = coef.to_vec();
    let mut k = degree;
    for _ in 0..order {
        let kk = T::from_usize_lossy(k);
        let next: Vec<T> = (0..c.len() - 1)
            .map(|i| {
                let span = t[i + k + 1] - t[i + 1];
                if span > T::zero() {
                    kk * (c[i + 1] - c[i]) / span
                } else {
                    T::zero()
                }
            })
            .collect();
        c = next;
        t = t[1..t.len() - 1].to_vec();
        k -= 1;
    }
    (t, c, k)
}
