//! Small dense kernels used by the spline derivative and the projection semi-metric.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Householder QR factorization of a tall `rows x cols` matrix, kept for
/// repeated least-squares solves against the same design.
#[derive(Debug, Clone)]
pub(crate) struct HouseholderQr<T> {
    rows: usize,
    cols: usize,
    // row-major; reflectors stored below the diagonal, R on and above it
    a: Vec<T>,
    rdiag: Vec<T>,
}

impl<T: Scalar> HouseholderQr<T> {
    pub(crate) fn new(mut a: Vec<T>, rows: usize, cols: usize) -> Result<Self> {
        assert_eq!(a.len(), rows * cols);
        if rows < cols {
            return Err(Error::RankDeficient(format!(
                "{cols} basis functions but only {rows} samples"
            )));
        }
        let mut rdiag = vec![T::zero(); cols];
        for k in 0..cols {
            let mut norm = T::zero();
            for i in k..rows {
                norm = norm.hypot(a[i * cols + k]);
            }
            if norm == T::zero() {
                rdiag[k] = T::zero();
                continue;
            }
            if a[k * cols + k] < T::zero() {
                norm = -norm;
            }
            for i in k..rows {
                a[i * cols + k] /= norm;
            }
            a[k * cols + k] += T::one();
            for j in (k + 1)..cols {
                let mut s = T::zero();
                for i in k..rows {
                    s += a[i * cols + k] * a[i * cols + j];
                }
                s = -s / a[k * cols + k];
                for i in k..rows {
                    let v = a[i * cols + k];
                    a[i * cols + j] += s * v;
                }
            }
            rdiag[k] = -norm;
        }
        let scale = rdiag.iter().fold(T::zero(), |m, r| m.max(r.abs()));
        let tol = T::epsilon().sqrt() * scale;
        if let Some(k) = rdiag.iter().position(|r| r.abs() <= tol) {
            return Err(Error::RankDeficient(format!(
                "column {k} of {cols} is numerically dependent"
            )));
        }
        Ok(Self { rows, cols, a, rdiag })
    }

    /// Least-squares solution of `A x = b`.
    pub(crate) fn solve(&self, b: &[T]) -> Vec<T> {
        let (rows, cols) = (self.rows, self.cols);
        assert_eq!(b.len(), rows);
        let mut y = b.to_vec();
        for k in 0..cols {
            let mut s = T::zero();
            for i in k..rows {
                s += self.a[i * cols + k] * y[i];
            }
            s = -s / self.a[k * cols + k];
            for i in k..rows {
                y[i] += s * self.a[i * cols + k];
            }
        }
        let mut x = vec![T::zero(); cols];
        for k in (0..cols).rev() {
            let mut s = y[k];
            for j in (k + 1)..cols {
                s -= self.a[k * cols + j] * x[j];
            }
            x[k] = s / self.rdiag[k];
        }
        x
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in decreasing order and the matching unit eigenvectors
/// (`vectors[k]` belongs to `values[k]`).
pub(crate) fn symmetric_eigen<T: Scalar>(matrix: &[T], n: usize) -> (Vec<T>, Vec<Vec<T>>) {
    assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let total: T = a.iter().map(|x| *x * *x).sum::<T>().sqrt();
    let two = T::lit(2.0);
    for _sweep in 0..100 {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() <= T::epsilon() * total || total == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[j * n + j]
            .partial_cmp(&a[i * n + i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order
        .iter()
        .map(|&i| (0..n).map(|k| v[k * n + i]).collect())
        .collect();
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qr_solves_exact_system() {
        // 3x2 overdetermined with consistent rhs: x = (1, -2)
        let a: Vec<f64> = vec![1.0, 0.0, 1.0, 1.0, 1.0, 2.0];
        let b = vec![1.0, -1.0, -3.0];
        let qr = HouseholderQr::new(a, 3, 2).unwrap();
        let x = qr.solve(&b);
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn qr_least_squares_matches_normal_equations() {
        // fit a line to (0,0), (1,1), (2,1): slope 0.5, intercept 1/6
        let a: Vec<f64> = vec![1.0, 0.0, 1.0, 1.0, 1.0, 2.0];
        let qr = HouseholderQr::new(a, 3, 2).unwrap();
        let x = qr.solve(&[0.0, 1.0, 1.0]);
        assert!((x[0] - 1.0 / 6.0).abs() < 1e-12);
        assert!((x[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn qr_detects_dependent_columns() {
        let a = vec![1.0, 2.0, 2.0, 4.0, 3.0, 6.0];
        assert!(matches!(
            HouseholderQr::new(a, 3, 2),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        // [[2,1],[1,2]] has eigenvalues 3 and 1
        let (vals, vecs) = symmetric_eigen(&[2.0f64, 1.0, 1.0, 2.0], 2);
        assert!((vals[0] - 3.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
        let s = 0.5f64.sqrt();
        assert!((vecs[0][0].abs() - s).abs() < 1e-12);
        assert!((vecs[0][0] - vecs[0][1]).abs() < 1e-12);
    }

    #[test]
    fn jacobi_reconstructs_matrix() {
        let m = [4.0f64, 1.0, -2.0, 1.0, 3.0, 0.5, -2.0, 0.5, 5.0];
        let (vals, vecs) = symmetric_eigen(&m, 3);
        for i in 0..3 {
            for j in 0..3 {
                let r: f64 = (0..3).map(|k| vals[k] * vecs[k][i] * vecs[k][j]).sum();
                assert!((r - m[i * 3 + j]).abs() < 1e-10);
            }
        }
    }
}
