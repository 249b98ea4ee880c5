//! Monte-Carlo harness comparing the residual and direct variance estimators.
//!
//! One replication draws a dataset from stream `(base_seed, rep_index)`,
//! selects `h_m` by leave-one-out CV on `Y`, and for each variance method
//! selects `h_v` by CV on that method's pseudo-responses before scoring
//! `v̂(X_i)` against the true `v(X_i)` at the training curves.

mod chemo;

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curves::{CurveSet, DerivMethod};
use crate::error::{Error, Result};
use crate::estimators::{
    cv_bandwidth_from_distances, default_bandwidth_grid, variance_pseudo_responses, CvOptions, MeanFit,
    SelfInclusion, VarianceFit, VarianceMethod, DEFAULT_GRID_SIZE, DEFAULT_MAX_FALLBACK_RATE,
};
use crate::kernel::{KernelKind, WeightPolicy};
use crate::scalar::Scalar;
use crate::semimetric::{DistanceMatrix, SemiMetric, SemiMetricSpec};
use crate::simulate::{gen_dataset_stream, Example, SimSpec, SimulatedDataset, DEFAULT_GRID_SIZE as CURVE_GRID_SIZE};

pub use chemo::{chemo_workflow, write_plot_csv, ChemoConfig, ChemoReport, OrderResult, PlotRow};

/// Replications allowed to fail before an experiment aborts.
pub const MAX_FAILED_FRACTION: f64 = 0.20;

/// `(1/n) Σ (estimate_i − truth_i)²`.
pub fn discrete_mse<T: Scalar>(estimates: &[T], truths: &[T]) -> Result<T> {
    if estimates.len() != truths.len() {
        return Err(Error::LengthMismatch {
            expected: truths.len(),
            got: estimates.len(),
        });
    }
    if estimates.is_empty() {
        return Err(Error::InvalidInput("mse of empty sequences".into()));
    }
    let mut acc = T::zero();
    for (e, t) in estimates.iter().zip(truths) {
        let d = *e - *t;
        acc += d * d;
    }
    Ok(acc / T::from_usize_lossy(estimates.len()))
}

/// Median of a sample; the mean of the two middle values for even sizes.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[k] } else { 0.5 * (v[k - 1] + v[k]) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub example: Example,
    pub n: usize,
    pub n_reps: usize,
    pub base_seed: u64,
    pub grid_size: usize,
    pub spec_m: SemiMetricSpec,
    pub spec_v: SemiMetricSpec,
    pub kernel: KernelKind,
    pub bandwidth_grid_size: usize,
    pub self_inclusion: SelfInclusion,
    pub policy: WeightPolicy,
    pub max_fallback_rate: f64,
    pub methods: Vec<VarianceMethod>,
    /// ex3 only: smooth over the analytic derivative curves (order lowered by
    /// one) instead of differentiating the sampled curves.
    #[serde(default)]
    pub analytic_derivatives: bool,
}

impl ExperimentConfig {
    /// Defaults: n = 200, 100 replications, quadratic kernel, order-0 L2 for
    /// ex1/ex2 and order-1 L2 for ex3, both methods.
    pub fn new(example: Example, base_seed: u64) -> Self {
        let order = match example {
            Example::Ex1 | Example::Ex2 => 0,
            Example::Ex3 => 1,
        };
        let spec = SemiMetricSpec::DerivL2 {
            order,
            method: DerivMethod::FiniteDiff,
        };
        Self {
            example,
            n: 200,
            n_reps: 100,
            base_seed,
            grid_size: CURVE_GRID_SIZE,
            spec_m: spec,
            spec_v: spec,
            kernel: KernelKind::Quadratic,
            bandwidth_grid_size: DEFAULT_GRID_SIZE,
            self_inclusion: SelfInclusion::IncludeSelf,
            policy: WeightPolicy::NearestNeighborFallback,
            max_fallback_rate: DEFAULT_MAX_FALLBACK_RATE,
            methods: vec![VarianceMethod::Residual, VarianceMethod::Direct],
            analytic_derivatives: false,
        }
    }

    pub fn sim_spec(&self) -> SimSpec {
        SimSpec {
            example: self.example,
            n: self.n,
            grid_size: self.grid_size,
            seed: self.base_seed,
        }
    }

    fn cv_options(&self) -> CvOptions {
        CvOptions {
            policy: self.policy,
            max_fallback_rate: self.max_fallback_rate,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_reps == 0 {
            return Err(Error::InvalidInput("n_reps must be at least 1".into()));
        }
        if self.n < 2 {
            return Err(Error::InvalidInput("n must be at least 2".into()));
        }
        if self.bandwidth_grid_size == 0 {
            return Err(Error::InvalidInput("bandwidth grid size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub h_v: f64,
    pub mse: f64,
    /// Predictions at the training curves that used the fallback.
    pub fallbacks: usize,
    /// Direct method: predictions clipped at zero.
    pub clipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep_index: usize,
    pub h_m: Option<f64>,
    pub residual_fallbacks: usize,
    pub methods: BTreeMap<VarianceMethod, MethodResult>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure: Option<String>,
}

impl ReplicationRecord {
    fn failed(rep_index: usize, h_m: Option<f64>, why: &Error) -> Self {
        Self {
            rep_index,
            h_m,
            residual_fallbacks: 0,
            methods: BTreeMap::new(),
            failure: Some(why.to_string()),
        }
    }
}

fn covariates<T: Scalar>(cfg: &ExperimentConfig, ds: &SimulatedDataset<T>) -> (CurveSet<T>, SemiMetricSpec, SemiMetricSpec) {
    let lower = |s: SemiMetricSpec| match s {
        SemiMetricSpec::DerivL2 { order, method } if order > 0 => SemiMetricSpec::DerivL2 {
            order: order - 1,
            method,
        },
        other => other,
    };
    match (&ds.derivs, cfg.analytic_derivatives) {
        (Some(d), true) => (d.clone(), lower(cfg.spec_m), lower(cfg.spec_v)),
        _ => (ds.curves.clone(), cfg.spec_m, cfg.spec_v),
    }
}

fn distances<T: Scalar>(spec: SemiMetricSpec, curves: &CurveSet<T>) -> Result<DistanceMatrix<T>> {
    Ok(SemiMetric::trained(spec, curves)?.embed(curves)?.self_matrix())
}

/// Runs one replication on stream `(cfg.base_seed, rep_index)`.
pub fn run_replication(cfg: &ExperimentConfig, rep_index: usize) -> Result<ReplicationRecord> {
    if cfg.methods.is_empty() {
        return Ok(empty_record(rep_index));
    }
    let ds: SimulatedDataset<f64> = gen_dataset_stream(&cfg.sim_spec(), rep_index as u64)?;
    run_replication_on(cfg, rep_index, &ds)
}

fn empty_record(rep_index: usize) -> ReplicationRecord {
    ReplicationRecord {
        rep_index,
        h_m: None,
        residual_fallbacks: 0,
        methods: BTreeMap::new(),
        failure: None,
    }
}

/// Runs the estimation pipeline on a given dataset. Cross-validation
/// disqualifying every candidate marks the replication failed instead of
/// returning an error.
pub fn run_replication_on<T: Scalar>(
    cfg: &ExperimentConfig,
    rep_index: usize,
    ds: &SimulatedDataset<T>,
) -> Result<ReplicationRecord> {
    if cfg.methods.is_empty() {
        return Ok(empty_record(rep_index));
    }
    let (x, spec_m, spec_v) = covariates(cfg, ds);
    let opts = cfg.cv_options();
    let kernel = cfg.kernel;

    let dm = distances(spec_m, &x)?;
    let grid_m = default_bandwidth_grid(&dm, cfg.bandwidth_grid_size)?;
    let h_m = match cv_bandwidth_from_distances(&dm, &ds.y, &kernel, &grid_m, opts) {
        Ok(r) => r.bandwidth,
        Err(e @ Error::AllCandidatesDisqualified) => return Ok(ReplicationRecord::failed(rep_index, None, &e)),
        Err(e) => return Err(e),
    };
    let mean = MeanFit::new(&x, &ds.y, spec_m, kernel, h_m, cfg.policy)?;
    let dv = if spec_v == spec_m { dm } else { distances(spec_v, &x)? };
    let grid_v = default_bandwidth_grid(&dv, cfg.bandwidth_grid_size)?;

    let mut record = empty_record(rep_index);
    record.h_m = Some(h_m.as_f64());
    for &method in &cfg.methods {
        let pseudo = variance_pseudo_responses(method, &mean, cfg.self_inclusion)?;
        let h_v = match cv_bandwidth_from_distances(&dv, &pseudo, &kernel, &grid_v, opts) {
            Ok(r) => r.bandwidth,
            Err(e @ Error::AllCandidatesDisqualified) => {
                return Ok(ReplicationRecord::failed(rep_index, Some(h_m.as_f64()), &e))
            }
            Err(e) => return Err(e),
        };
        let fit = VarianceFit::new(method, &mean, spec_v, kernel, h_v, cfg.self_inclusion, cfg.policy)?;
        if method == VarianceMethod::Residual {
            record.residual_fallbacks = fit.residual_fallbacks();
        }
        let preds = fit.predict_set(&x)?;
        let v_hat: Vec<T> = preds.iter().map(|p| p.value).collect();
        record.methods.insert(
            method,
            MethodResult {
                h_v: h_v.as_f64(),
                mse: discrete_mse(&v_hat, &ds.true_v)?.as_f64(),
                fallbacks: preds.iter().filter(|p| p.fallback).count(),
                clipped: preds.iter().filter(|p| p.clipped).count(),
            },
        );
    }
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub median_mse: f64,
    pub replications: usize,
    pub total_fallbacks: usize,
    pub total_clipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub records: Vec<ReplicationRecord>,
    pub summary: BTreeMap<VarianceMethod, MethodSummary>,
    pub failed_replications: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_clock_secs: Option<f64>,
}

impl ExperimentReport {
    pub fn median(&self, method: VarianceMethod) -> Option<f64> {
        self.summary.get(&method).map(|s| s.median_mse)
    }

    /// Summary recomputed from the stored records.
    pub fn recompute_summary(records: &[ReplicationRecord]) -> BTreeMap<VarianceMethod, MethodSummary> {
        let mut per: BTreeMap<VarianceMethod, Vec<&MethodResult>> = BTreeMap::new();
        for r in records.iter().filter(|r| r.failure.is_none()) {
            for (m, res) in &r.methods {
                per.entry(*m).or_default().push(res);
            }
        }
        per.into_iter()
            .map(|(m, results)| {
                let mses: Vec<f64> = results.iter().map(|r| r.mse).collect();
                (
                    m,
                    MethodSummary {
                        median_mse: median(&mses).unwrap_or(f64::NAN),
                        replications: results.len(),
                        total_fallbacks: results.iter().map(|r| r.fallbacks).sum(),
                        total_clipped: results.iter().map(|r| r.clipped).sum(),
                    },
                )
            })
            .collect()
    }
}

/// Runs `cfg.n_reps` replications on the current rayon pool. Records are
/// ordered by replication index, so the report does not depend on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let started = Instant::now();
    let mut records = (0..cfg.n_reps)
        .into_par_iter()
        .map(|rep| run_replication(cfg, rep))
        .collect::<Result<Vec<_>>>()?;
    records.sort_by_key(|r| r.rep_index);
    let failed: Vec<&ReplicationRecord> = records.iter().filter(|r| r.failure.is_some()).collect();
    if failed.len() as f64 > MAX_FAILED_FRACTION * cfg.n_reps as f64 {
        let detail = failed
            .iter()
            .take(5)
            .map(|r| format!("rep {}: {}", r.rep_index, r.failure.as_deref().unwrap_or("")))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::TooManyFailures {
            failed: failed.len(),
            total: cfg.n_reps,
            detail,
        });
    }
    let failed_replications = failed.len();
    let summary = ExperimentReport::recompute_summary(&records);
    let elapsed = started.elapsed().as_secs_f64();
    let mut report = ExperimentReport {
        config: cfg.clone(),
        records,
        summary,
        failed_replications,
        wall_clock_secs: None,
    };
    report.wall_clock_secs = Some(elapsed);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub median_residual_mse: f64,
    pub failed_replications: usize,
}

/// Median residual-method MSE at each sample size, with the same seeds for
/// every size.
pub fn convergence_check(template: &ExperimentConfig, n_values: &[usize], n_reps: usize) -> Result<Vec<ConvergenceRow>> {
    if n_values.len() < 2 {
        return Err(Error::InvalidInput("convergence check needs at least two sample sizes".into()));
    }
    if n_values.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("sample sizes must be nondecreasing".into()));
    }
    n_values
        .iter()
        .map(|&n| {
            let cfg = ExperimentConfig {
                n,
                n_reps,
                methods: vec![VarianceMethod::Residual],
                ..template.clone()
            };
            let report = run_experiment(&cfg)?;
            Ok(ConvergenceRow {
                n,
                median_residual_mse: report.median(VarianceMethod::Residual).unwrap_or(f64::NAN),
                failed_replications: report.failed_replications,
            })
        })
        .collect()
}
