//! Train/validation workflow for spectrometric data: fix the mean
//! semi-metric, then choose the variance semi-metric order by validation
//! error against held-out squared residuals.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::curves::{CurveSet, DerivMethod};
use crate::error::{Error, Result};
use crate::estimators::{
    cv_bandwidth_from_distances, default_bandwidth_grid, CvOptions, MeanFit, SelfInclusion, VarianceFit,
    VarianceMethod, DEFAULT_GRID_SIZE, DEFAULT_MAX_FALLBACK_RATE,
};
use crate::fsutil::write_atomic;
use crate::kernel::{KernelKind, WeightPolicy};
use crate::scalar::Scalar;
use crate::semimetric::{SemiMetric, SemiMetricSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChemoConfig {
    pub train_size: usize,
    pub mean_order: usize,
    pub variance_orders: Vec<usize>,
    pub deriv_method: DerivMethod,
    pub kernel: KernelKind,
    pub bandwidth_grid_size: usize,
    pub self_inclusion: SelfInclusion,
    pub policy: WeightPolicy,
    pub max_fallback_rate: f64,
}

impl Default for ChemoConfig {
    fn default() -> Self {
        Self {
            train_size: 150,
            mean_order: 2,
            variance_orders: vec![0, 1, 2],
            deriv_method: DerivMethod::Bspline { knots: 20, degree: 3 },
            kernel: KernelKind::Quadratic,
            bandwidth_grid_size: DEFAULT_GRID_SIZE,
            self_inclusion: SelfInclusion::IncludeSelf,
            policy: WeightPolicy::NearestNeighborFallback,
            max_fallback_rate: DEFAULT_MAX_FALLBACK_RATE,
        }
    }
}

impl ChemoConfig {
    fn spec(&self, order: usize) -> SemiMetricSpec {
        SemiMetricSpec::DerivL2 {
            order,
            method: self.deriv_method,
        }
    }

    fn cv_options(&self) -> CvOptions {
        CvOptions {
            policy: self.policy,
            max_fallback_rate: self.max_fallback_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderResult {
    pub order: usize,
    pub h_v: f64,
    /// `None` when every validation prediction used the fallback.
    pub validation_mse: Option<f64>,
    pub fallbacks: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub index: usize,
    pub v_hat: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChemoReport {
    pub config: ChemoConfig,
    pub n_train: usize,
    pub n_validation: usize,
    pub h_m: f64,
    pub mean_fallbacks: usize,
    pub orders: Vec<OrderResult>,
    pub chosen_order: usize,
    pub validation_mse: f64,
    /// Validation samples under the chosen order; `index` is the row in the
    /// full dataset.
    pub plot: Vec<PlotRow>,
}

fn cv_h<T: Scalar>(cfg: &ChemoConfig, spec: SemiMetricSpec, x: &CurveSet<T>, resp: &[T]) -> Result<T> {
    let dm = SemiMetric::trained(spec, x)?.embed(x)?.self_matrix();
    let grid = default_bandwidth_grid(&dm, cfg.bandwidth_grid_size)?;
    Ok(cv_bandwidth_from_distances(&dm, resp, &cfg.kernel, &grid, cfg.cv_options())?.bandwidth)
}

/// Splits `curves`/`y` into the first `cfg.train_size` rows and the rest.
pub fn chemo_workflow<T: Scalar>(cfg: &ChemoConfig, curves: &CurveSet<T>, y: &[T]) -> Result<ChemoReport> {
    if y.len() != curves.len() {
        return Err(Error::LengthMismatch {
            expected: curves.len(),
            got: y.len(),
        });
    }
    if cfg.train_size < 2 || cfg.train_size >= curves.len() {
        return Err(Error::InvalidInput(format!(
            "train size {} must be in [2, {})",
            cfg.train_size,
            curves.len()
        )));
    }
    if cfg.variance_orders.is_empty() {
        return Err(Error::InvalidInput("no candidate variance orders".into()));
    }
    let n = curves.len();
    let train = curves.slice(0..cfg.train_size)?;
    let val = curves.slice(cfg.train_size..n)?;
    let (y_train, y_val) = y.split_at(cfg.train_size);

    let spec_m = cfg.spec(cfg.mean_order);
    let h_m = cv_h(cfg, spec_m, &train, y_train)?;
    let mean = MeanFit::new(&train, y_train, spec_m, cfg.kernel, h_m, cfg.policy)?;
    let m_val = mean.predict_set(&val)?;
    let mean_fallbacks = m_val.iter().filter(|p| p.fallback).count();
    if mean_fallbacks == m_val.len() {
        return Err(Error::InvalidInput(
            "every validation mean prediction used the nearest-neighbor fallback".into(),
        ));
    }
    let r_val: Vec<T> = m_val
        .iter()
        .zip(y_val)
        .map(|(p, y)| {
            let e = *y - p.value;
            e * e
        })
        .collect();
    let r_train = mean.squared_residuals(cfg.self_inclusion)?.values;

    let mut orders = Vec::with_capacity(cfg.variance_orders.len());
    let mut best: Option<(usize, f64, Vec<T>)> = None;
    for &order in &cfg.variance_orders {
        let spec_v = cfg.spec(order);
        let h_v = cv_h(cfg, spec_v, &train, &r_train)?;
        let fit = VarianceFit::new(
            VarianceMethod::Residual,
            &mean,
            spec_v,
            cfg.kernel,
            h_v,
            cfg.self_inclusion,
            cfg.policy,
        )?;
        let preds = fit.predict_set(&val)?;
        let fallbacks = preds.iter().filter(|p| p.fallback).count();
        let v_hat: Vec<T> = preds.iter().map(|p| p.value).collect();
        let mse = if fallbacks == preds.len() {
            None
        } else {
            Some(super::discrete_mse(&v_hat, &r_val)?.as_f64())
        };
        if let Some(m) = mse {
            if best.as_ref().is_none_or(|(_, b, _)| m < *b) {
                best = Some((order, m, v_hat));
            }
        }
        orders.push(OrderResult {
            order,
            h_v: h_v.as_f64(),
            validation_mse: mse,
            fallbacks,
        });
    }
    let (chosen_order, validation_mse, v_hat) = best.ok_or_else(|| {
        Error::InvalidInput("every candidate order fell back on all validation predictions".into())
    })?;
    let plot = v_hat
        .iter()
        .zip(&r_val)
        .enumerate()
        .map(|(k, (v, r))| PlotRow {
            index: cfg.train_size + k,
            v_hat: v.as_f64(),
            r_squared: r.as_f64(),
        })
        .collect();
    Ok(ChemoReport {
        config: cfg.clone(),
        n_train: cfg.train_size,
        n_validation: n - cfg.train_size,
        h_m: h_m.as_f64(),
        mean_fallbacks,
        orders,
        chosen_order,
        validation_mse,
        plot,
    })
}

/// Plot data as CSV with columns `index,v_hat,r_squared`.
pub fn write_plot_csv(path: &Path, rows: &[PlotRow]) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "index,v_hat,r_squared").map_err(|e| Error::io(path, e))?;
    for r in rows {
        writeln!(buf, "{},{},{}", r.index, r.v_hat, r.r_squared).map_err(|e| Error::io(path, e))?;
    }
    write_atomic(path, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::Grid;
    use std::sync::Arc;

    fn smooth_set(n: usize, shift: usize) -> CurveSet<f64> {
        let g = Arc::new(Grid::uniform(0.0, 1.0, 60).unwrap());
        let rows = (0..n)
            .map(|i| {
                let a = ((i + shift) % n) as f64 / n as f64;
                g.points().iter().map(|t| (3.0 * t + a).sin() + a * t * t).collect()
            })
            .collect();
        CurveSet::new(g, rows).unwrap()
    }

    fn cfg(train: usize) -> ChemoConfig {
        ChemoConfig {
            train_size: train,
            deriv_method: DerivMethod::FiniteDiff,
            ..ChemoConfig::default()
        }
    }

    #[test]
    fn duplicated_noiseless_validation_is_near_zero() {
        let n = 40;
        let train = smooth_set(n, 0);
        let mut rows: Vec<Vec<f64>> = train.iter().map(|c| c.values().to_vec()).collect();
        rows.extend(rows.clone());
        let all = CurveSet::new(train.grid().clone(), rows).unwrap();
        let y: Vec<f64> = all.iter().map(crate::curves::integrate).collect();
        let report = chemo_workflow(&cfg(n), &all, &y).unwrap();
        assert_eq!(report.plot.len(), n);
        assert!(report.validation_mse < 1e-3, "{}", report.validation_mse);
        assert_eq!(report.orders.len(), 3);
        let best = report
            .orders
            .iter()
            .filter_map(|o| o.validation_mse)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(best, report.validation_mse);
    }

    #[test]
    fn split_validated() {
        let set = smooth_set(10, 0);
        let y = vec![0.0; 10];
        assert!(chemo_workflow(&cfg(10), &set, &y).is_err());
        assert!(chemo_workflow(&cfg(1), &set, &y).is_err());
        assert!(chemo_workflow(&cfg(5), &set, &y[..9]).is_err());
    }

    #[test]
    fn plot_csv_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("plot.csv");
        write_plot_csv(
            &p,
            &[PlotRow {
                index: 3,
                v_hat: 0.5,
                r_squared: 0.25,
            }],
        )
        .unwrap();
        assert_eq!(std::fs::read_to_string(p).unwrap(), "index,v_hat,r_squared\n3,0.5,0.25\n");
    }
}
