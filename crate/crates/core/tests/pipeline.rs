//! Library pipelines replayed step by step from primitive operations.

use std::sync::Arc;

use funvar::bench::{chemo_workflow, discrete_mse, run_replication, ChemoConfig, ExperimentConfig};
use funvar::curves::{CurveSet, DerivMethod, Grid};
use funvar::estimators::{
    cv_bandwidth_from_distances, default_bandwidth_grid, CvOptions, MeanFit, SelfInclusion, VarianceFit,
};
use funvar::kernel::{KernelKind, WeightPolicy};
use funvar::semimetric::{SemiMetric, SemiMetricSpec};
use funvar::simulate::{gen_dataset_stream, read_dataset, write_dataset, Example, SimSpec, SimulatedDataset};
use funvar::VarianceMethod;

#[test]
fn ex2_replication_matches_manual_pipeline() {
    let cfg = ExperimentConfig {
        n: 120,
        ..ExperimentConfig::new(Example::Ex2, 31)
    };
    let rep = 4;
    let record = run_replication(&cfg, rep).unwrap();

    let ds: SimulatedDataset<f64> = gen_dataset_stream(&SimSpec::new(Example::Ex2, 120, 31), rep as u64).unwrap();
    let spec = SemiMetricSpec::l2(0);
    let kernel = KernelKind::Quadratic;
    let opts = CvOptions::default();
    let dm = SemiMetric::trained(spec, &ds.curves).unwrap().embed(&ds.curves).unwrap().self_matrix();
    let grid = default_bandwidth_grid(&dm, 20).unwrap();
    let h_m = cv_bandwidth_from_distances(&dm, &ds.y, &kernel, &grid, opts).unwrap().bandwidth;
    assert_eq!(record.h_m, Some(h_m));
    let mean = MeanFit::new(&ds.curves, &ds.y, spec, kernel, h_m, WeightPolicy::NearestNeighborFallback).unwrap();

    let r_hat = mean.squared_residuals(SelfInclusion::IncludeSelf).unwrap().values;
    let y2: Vec<f64> = ds.y.iter().map(|y| y * y).collect();
    for (method, pseudo) in [(VarianceMethod::Residual, r_hat), (VarianceMethod::Direct, y2)] {
        let h_v = cv_bandwidth_from_distances(&dm, &pseudo, &kernel, &grid, opts).unwrap().bandwidth;
        let fit = VarianceFit::new(
            method,
            &mean,
            spec,
            kernel,
            h_v,
            SelfInclusion::IncludeSelf,
            WeightPolicy::NearestNeighborFallback,
        )
        .unwrap();
        let v: Vec<f64> = fit.predict_set(&ds.curves).unwrap().iter().map(|p| p.value).collect();
        let got = &record.methods[&method];
        assert_eq!(got.h_v, h_v);
        assert_eq!(got.mse, discrete_mse(&v, &ds.true_v).unwrap());
    }
}

#[test]
fn chemo_orders_match_manual_pipeline() {
    let ds: SimulatedDataset<f64> = gen_dataset_stream(&SimSpec::new(Example::Ex3, 90, 12), 0).unwrap();
    let cfg = ChemoConfig {
        train_size: 70,
        deriv_method: DerivMethod::FiniteDiff,
        ..ChemoConfig::default()
    };
    let report = chemo_workflow(&cfg, &ds.curves, &ds.y).unwrap();

    let train = ds.curves.slice(0..70).unwrap();
    let val = ds.curves.slice(70..90).unwrap();
    let kernel = KernelKind::Quadratic;
    let policy = WeightPolicy::NearestNeighborFallback;
    let cv = |spec: SemiMetricSpec, resp: &[f64]| {
        let dm = SemiMetric::trained(spec, &train).unwrap().embed(&train).unwrap().self_matrix();
        let grid = default_bandwidth_grid(&dm, 20).unwrap();
        cv_bandwidth_from_distances(&dm, resp, &kernel, &grid, CvOptions::default()).unwrap().bandwidth
    };
    let spec_m = SemiMetricSpec::l2(2);
    let h_m = cv(spec_m, &ds.y[..70]);
    assert_eq!(report.h_m, h_m);
    let mean = MeanFit::new(&train, &ds.y[..70], spec_m, kernel, h_m, policy).unwrap();
    let r_val: Vec<f64> = mean
        .predict_set(&val)
        .unwrap()
        .iter()
        .zip(&ds.y[70..])
        .map(|(p, y)| (y - p.value).powi(2))
        .collect();
    let r_train = mean.squared_residuals(SelfInclusion::IncludeSelf).unwrap().values;
    for (k, order) in [0, 1, 2].into_iter().enumerate() {
        let spec_v = SemiMetricSpec::l2(order);
        let h_v = cv(spec_v, &r_train);
        let fit = VarianceFit::new(VarianceMethod::Residual, &mean, spec_v, kernel, h_v, SelfInclusion::IncludeSelf, policy)
            .unwrap();
        let v: Vec<f64> = fit.predict_set(&val).unwrap().iter().map(|p| p.value).collect();
        let mse: f64 = v.iter().zip(&r_val).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 20.0;
        assert_eq!(report.orders[k].h_v, h_v);
        let got = report.orders[k].validation_mse.unwrap();
        assert!((got - mse).abs() <= 1e-12 * mse.max(1.0), "order {order}: {got} vs {mse}");
    }
    let best = report
        .orders
        .iter()
        .min_by(|a, b| a.validation_mse.unwrap().total_cmp(&b.validation_mse.unwrap()))
        .unwrap();
    assert_eq!(report.chosen_order, best.order);
    assert_eq!(report.plot.len(), 20);
    assert_eq!(report.plot[0].index, 70);
}

#[test]
fn dataset_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for ex in Example::ALL {
        let ds: SimulatedDataset<f64> = gen_dataset_stream(&SimSpec::new(ex, 25, 99), 2).unwrap();
        write_dataset(&ds, dir.path(), 2).unwrap();
        let back: SimulatedDataset<f64> = read_dataset(ex, dir.path(), 2).unwrap();
        assert_eq!(back.y, ds.y);
        assert_eq!(back.true_m, ds.true_m);
        assert_eq!(back.true_v, ds.true_v);
        assert_eq!(back.curves, ds.curves);
        assert_eq!(back.derivs, ds.derivs);
    }
}

#[test]
fn f32_and_f64_pipelines_agree() {
    let grid64 = Arc::new(Grid::uniform(-1.0, 1.0, 41).unwrap());
    let grid32 = Arc::new(Grid::uniform(-1.0f32, 1.0, 41).unwrap());
    let rows: Vec<Vec<f64>> = (0..30)
        .map(|i| grid64.points().iter().map(|t| (t * (1.0 + i as f64 / 10.0)).sin()).collect())
        .collect();
    let y: Vec<f64> = (0..30).map(|i| (i as f64 / 7.0).cos() + 0.1 * (i % 3) as f64).collect();
    let x64 = CurveSet::new(grid64, rows.clone()).unwrap();
    let x32 = CurveSet::new(grid32, rows.iter().map(|r| r.iter().map(|v| *v as f32).collect()).collect()).unwrap();
    let y32: Vec<f32> = y.iter().map(|v| *v as f32).collect();
    let spec = SemiMetricSpec::l2(0);
    let m64 = MeanFit::new(&x64, &y, spec, KernelKind::Quadratic, 0.8, WeightPolicy::NearestNeighborFallback).unwrap();
    let m32 = MeanFit::new(&x32, &y32, spec, KernelKind::Quadratic, 0.8f32, WeightPolicy::NearestNeighborFallback).unwrap();
    let a = m64.fitted(SelfInclusion::IncludeSelf).unwrap();
    let b = m32.fitted(SelfInclusion::IncludeSelf).unwrap();
    for (p, q) in a.iter().zip(&b) {
        assert!((p.value - q.value as f64).abs() < 1e-4);
    }
}
