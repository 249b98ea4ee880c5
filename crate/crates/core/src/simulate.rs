//! Simulation designs with analytically known mean and variance functionals.
//!
//! Curves live on a uniform grid over `[−1, 1]`. Designs `ex1` and `ex2` use
//! Brownian paths started from a uniform point at `t = −1`; `ex3` uses
//! `sin(ωt) + (a + 2π)t + b`. Responses follow `Y = m(X) + sqrt(v(X)) ε` with
//! standard Gaussian `ε`.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::curves::csv_io::{read_curves_file, read_responses_file, write_curves, write_responses};
use crate::curves::{Curve, CurveSet, Grid};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::scalar::Scalar;

pub const DEFAULT_GRID_SIZE: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Example {
    Ex1,
    Ex2,
    Ex3,
}

impl Example {
    pub const ALL: [Example; 3] = [Example::Ex1, Example::Ex2, Example::Ex3];

    pub fn name(self) -> &'static str {
        match self {
            Example::Ex1 => "ex1",
            Example::Ex2 => "ex2",
            Example::Ex3 => "ex3",
        }
    }
}

impl std::fmt::Display for Example {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Example {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Example::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown example {s:?}; valid: ex1, ex2, ex3"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimSpec {
    pub example: Example,
    pub n: usize,
    pub grid_size: usize,
    pub seed: u64,
}

impl SimSpec {
    pub fn new(example: Example, n: usize, seed: u64) -> Self {
        Self {
            example,
            n,
            grid_size: DEFAULT_GRID_SIZE,
            seed,
        }
    }

    pub fn grid<T: Scalar>(&self) -> Result<Arc<Grid<T>>> {
        Ok(Arc::new(Grid::uniform(-T::one(), T::one(), self.grid_size)?))
    }
}

/// Identifies an independent random stream: one per replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Generator parameters of one curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CurveParams {
    Brownian { start: f64 },
    Sinusoid { omega: f64, a: f64, b: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset<T> {
    pub example: Example,
    pub curves: CurveSet<T>,
    /// Analytic derivatives (`ex3` only).
    pub derivs: Option<CurveSet<T>>,
    pub y: Vec<T>,
    pub true_m: Vec<T>,
    pub true_v: Vec<T>,
    pub params: Vec<CurveParams>,
}

impl<T: Scalar> SimulatedDataset<T> {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Brownian paths on `grid` started at `x(t_1) ~ U(−1, 1)`.
pub fn gen_brownian_curves<T: Scalar, R: Rng + ?Sized>(
    n: usize,
    grid: &Arc<Grid<T>>,
    rng: &mut R,
) -> Result<(CurveSet<T>, Vec<CurveParams>)> {
    let t: Vec<f64> = grid.points().iter().map(|p| p.as_f64()).collect();
    let start_dist = Uniform::new(-1.0, 1.0).expect("valid range");
    let mut rows = Vec::with_capacity(n);
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        let start: f64 = start_dist.sample(rng);
        let mut x = start;
        let mut row = Vec::with_capacity(t.len());
        row.push(T::lit(x));
        for w in t.windows(2) {
            let z: f64 = StandardNormal.sample(rng);
            x += (w[1] - w[0]).sqrt() * z;
            row.push(T::lit(x));
        }
        rows.push(row);
        params.push(CurveParams::Brownian { start });
    }
    Ok((CurveSet::new(grid.clone(), rows)?, params))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinParams {
    pub omega: f64,
    pub a: f64,
    pub b: f64,
}

/// Curves `sin(ωt) + (a + 2π)t + b` and their analytic derivatives.
pub fn sin_curves_from_params<T: Scalar>(
    grid: &Arc<Grid<T>>,
    params: &[SinParams],
) -> Result<(CurveSet<T>, CurveSet<T>)> {
    let mut rows = Vec::with_capacity(params.len());
    let mut drows = Vec::with_capacity(params.len());
    for p in params {
        let slope = p.a + 2.0 * PI;
        let (row, drow) = grid
            .points()
            .iter()
            .map(|t| {
                let t = t.as_f64();
                (
                    T::lit((p.omega * t).sin() + slope * t + p.b),
                    T::lit(p.omega * (p.omega * t).cos() + slope),
                )
            })
            .unzip();
        rows.push(row);
        drows.push(drow);
    }
    Ok((CurveSet::new(grid.clone(), rows)?, CurveSet::new(grid.clone(), drows)?))
}

/// `ω ~ U(0, 2π)`, `a, b ~ U(0, 1)`.
pub fn gen_sin_curves<T: Scalar, R: Rng + ?Sized>(
    n: usize,
    grid: &Arc<Grid<T>>,
    rng: &mut R,
) -> Result<(CurveSet<T>, CurveSet<T>, Vec<CurveParams>)> {
    let omega_dist = Uniform::new(0.0, 2.0 * PI).expect("valid range");
    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    let params: Vec<SinParams> = (0..n)
        .map(|_| SinParams {
            omega: omega_dist.sample(rng),
            a: unit.sample(rng),
            b: unit.sample(rng),
        })
        .collect();
    let (curves, derivs) = sin_curves_from_params(grid, &params)?;
    let params = params
        .into_iter()
        .map(|p| CurveParams::Sinusoid {
            omega: p.omega,
            a: p.a,
            b: p.b,
        })
        .collect();
    Ok((curves, derivs, params))
}

/// True `(m(x), v(x))`, integrals by the trapezoid rule.
pub fn true_functionals<T: Scalar>(example: Example, curve: &Curve<T>, deriv: Option<&Curve<T>>) -> Result<(T, T)> {
    let grid = curve.grid();
    let integrand = |f: &dyn Fn(T, T) -> T, values: &[T]| -> T {
        let samples: Vec<T> = grid.points().iter().zip(values).map(|(t, x)| f(*t, *x)).collect();
        grid.integrate(&samples)
    };
    match example {
        Example::Ex1 => Ok((T::zero(), integrand(&|_, x| x.cos().abs(), curve.values()))),
        Example::Ex2 => Ok((
            integrand(&|t, x| t * x, curve.values()),
            integrand(&|t, x| t.abs() * x * x, curve.values()),
        )),
        Example::Ex3 => {
            let d = deriv.ok_or(Error::MissingDerivative)?;
            if !d.shares_grid(curve) {
                return Err(Error::GridMismatch);
            }
            let pi = T::PI();
            Ok((
                integrand(&|t, dx| dx.abs() * (T::one() - (pi * t).cos()), d.values()),
                integrand(&|t, dx| dx.abs() * (T::one() + (pi * t).cos()), d.values()),
            ))
        }
    }
}

fn truths<T: Scalar>(example: Example, curves: &CurveSet<T>, derivs: Option<&CurveSet<T>>) -> Result<(Vec<T>, Vec<T>)> {
    if let Some(d) = derivs {
        if d.len() != curves.len() {
            return Err(Error::LengthMismatch {
                expected: curves.len(),
                got: d.len(),
            });
        }
    }
    (0..curves.len())
        .map(|i| true_functionals(example, curves.get(i), derivs.map(|d| d.get(i))))
        .collect::<Result<Vec<_>>>()
        .map(|pairs| pairs.into_iter().unzip())
}

/// Builds a dataset on given curves with explicit errors `ε_i`.
pub fn dataset_with_errors<T: Scalar>(
    example: Example,
    curves: CurveSet<T>,
    derivs: Option<CurveSet<T>>,
    params: Vec<CurveParams>,
    errors: &[f64],
) -> Result<SimulatedDataset<T>> {
    if errors.len() != curves.len() {
        return Err(Error::LengthMismatch {
            expected: curves.len(),
            got: errors.len(),
        });
    }
    let (true_m, true_v) = truths(example, &curves, derivs.as_ref())?;
    let y = true_m
        .iter()
        .zip(&true_v)
        .zip(errors)
        .map(|((m, v), e)| *m + v.sqrt() * T::lit(*e))
        .collect();
    Ok(SimulatedDataset {
        example,
        curves,
        derivs,
        y,
        true_m,
        true_v,
        params,
    })
}

/// Builds a dataset on given curves, drawing `ε_i ~ N(0, 1)` from `rng`.
pub fn dataset_from_curves<T: Scalar, R: Rng + ?Sized>(
    example: Example,
    curves: CurveSet<T>,
    derivs: Option<CurveSet<T>>,
    params: Vec<CurveParams>,
    rng: &mut R,
) -> Result<SimulatedDataset<T>> {
    let errors: Vec<f64> = (0..curves.len()).map(|_| StandardNormal.sample(rng)).collect();
    dataset_with_errors(example, curves, derivs, params, &errors)
}

pub fn gen_dataset_with<T: Scalar, R: Rng + ?Sized>(spec: &SimSpec, rng: &mut R) -> Result<SimulatedDataset<T>> {
    if spec.n == 0 {
        return Err(Error::InvalidInput("n must be positive".into()));
    }
    let grid = spec.grid::<T>()?;
    match spec.example {
        Example::Ex1 | Example::Ex2 => {
            let (curves, params) = gen_brownian_curves(spec.n, &grid, rng)?;
            dataset_from_curves(spec.example, curves, None, params, rng)
        }
        Example::Ex3 => {
            let (curves, derivs, params) = gen_sin_curves(spec.n, &grid, rng)?;
            dataset_from_curves(spec.example, curves, Some(derivs), params, rng)
        }
    }
}

/// Dataset drawn from stream `(spec.seed, 0)`.
pub fn gen_dataset<T: Scalar>(spec: &SimSpec) -> Result<SimulatedDataset<T>> {
    gen_dataset_stream(spec, 0)
}

/// Dataset drawn from stream `(spec.seed, stream_id)`.
pub fn gen_dataset_stream<T: Scalar>(spec: &SimSpec, stream_id: u64) -> Result<SimulatedDataset<T>> {
    let mut rng = RngStream::new(spec.seed, stream_id).rng();
    gen_dataset_with(spec, &mut rng)
}

/// File names used by [`write_dataset`] for replication `rep`.
pub fn dataset_paths(dir: &Path, rep: usize) -> (std::path::PathBuf, std::path::PathBuf, std::path::PathBuf) {
    (
        dir.join(format!("curves_{rep:03}.csv")),
        dir.join(format!("responses_{rep:03}.csv")),
        dir.join(format!("truth_{rep:03}.csv")),
    )
}

/// Truth table: `index,true_m,true_v` followed by the generator parameters.
pub fn write_truth<T: Scalar, W: std::io::Write>(ds: &SimulatedDataset<T>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::csv("<truth>", e.to_string());
    let header: &[&str] = match ds.example {
        Example::Ex1 | Example::Ex2 => &["index", "true_m", "true_v", "start"],
        Example::Ex3 => &["index", "true_m", "true_v", "omega", "a", "b"],
    };
    w.write_record(header).map_err(err)?;
    for i in 0..ds.len() {
        let mut row = vec![i.to_string(), ds.true_m[i].to_string(), ds.true_v[i].to_string()];
        match ds.params[i] {
            CurveParams::Brownian { start } => row.push(start.to_string()),
            CurveParams::Sinusoid { omega, a, b } => {
                row.extend([omega.to_string(), a.to_string(), b.to_string()]);
            }
        }
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("<truth>", e))?;
    Ok(())
}

pub fn write_dataset<T: Scalar>(ds: &SimulatedDataset<T>, dir: &Path, rep: usize) -> Result<()> {
    let (c, r, t) = dataset_paths(dir, rep);
    let mut buf = Vec::new();
    write_curves(&ds.curves, &mut buf)?;
    write_atomic(&c, &buf)?;
    buf.clear();
    write_responses(&ds.y, &mut buf)?;
    write_atomic(&r, &buf)?;
    buf.clear();
    write_truth(ds, &mut buf)?;
    write_atomic(&t, &buf)
}

/// Reads back what [`write_dataset`] wrote; `ex3` derivatives are rebuilt
/// from the recorded parameters.
pub fn read_dataset<T: Scalar>(example: Example, dir: &Path, rep: usize) -> Result<SimulatedDataset<T>> {
    let (c, r, t) = dataset_paths(dir, rep);
    let curves: CurveSet<T> = read_curves_file(&c)?;
    let y: Vec<T> = read_responses_file(&r)?;
    let file = std::fs::File::open(&t).map_err(|e| Error::io(&t, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let src = t.display().to_string();
    let (mut true_m, mut true_v, mut params) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(&src, e.to_string()))?;
        let num = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::csv(&src, format!("bad cell {k}")))
        };
        let scalar = |k: usize| -> Result<T> {
            rec.get(k)
                .and_then(|s| T::from_str_radix(s, 10).ok())
                .ok_or_else(|| Error::csv(&src, format!("bad cell {k}")))
        };
        true_m.push(scalar(1)?);
        true_v.push(scalar(2)?);
        params.push(match example {
            Example::Ex1 | Example::Ex2 => CurveParams::Brownian { start: num(3)? },
            Example::Ex3 => CurveParams::Sinusoid {
                omega: num(3)?,
                a: num(4)?,
                b: num(5)?,
            },
        });
    }
    if true_m.len() != curves.len() || y.len() != curves.len() {
        return Err(Error::csv(&src, "row counts of curves, responses and truth differ"));
    }
    let derivs = match example {
        Example::Ex3 => {
            let sp: Vec<SinParams> = params
                .iter()
                .map(|p| match *p {
                    CurveParams::Sinusoid { omega, a, b } => SinParams { omega, a, b },
                    CurveParams::Brownian { .. } => unreachable!(),
                })
                .collect();
            Some(sin_curves_from_params(curves.grid(), &sp)?.1)
        }
        _ => None,
    };
    Ok(SimulatedDataset {
        example,
        curves,
        derivs,
        y,
        true_m,
        true_v,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::{derivative, DerivMethod};

    fn grid(n: usize) -> Arc<Grid<f64>> {
        Arc::new(Grid::uniform(-1.0, 1.0, n).unwrap())
    }

    #[test]
    fn two_point_brownian_is_one_step() {
        let mut rng = RngStream::new(3, 0).rng();
        let (set, params) = gen_brownian_curves(5, &grid(2), &mut rng).unwrap();
        for (c, p) in set.iter().zip(&params) {
            let CurveParams::Brownian { start } = *p else { panic!() };
            assert_eq!(c.values()[0], start);
            assert!((-1.0..1.0).contains(&start));
        }
    }

    #[test]
    fn brownian_increment_and_start_moments() {
        let mut rng = RngStream::new(11, 0).rng();
        let (set, _) = gen_brownian_curves(10_000, &grid(21), &mut rng).unwrap();
        let inc: Vec<f64> = set.iter().map(|c| c.values()[20] - c.values()[0]).collect();
        let mean_inc = inc.iter().sum::<f64>() / inc.len() as f64;
        let var = inc.iter().map(|x| (x - mean_inc).powi(2)).sum::<f64>() / (inc.len() - 1) as f64;
        assert!((var - 2.0).abs() < 0.1, "increment variance {var}");
        let start = set.iter().map(|c| c.values()[0]).sum::<f64>() / 10_000.0;
        assert!(start.abs() < 0.02, "start mean {start}");
    }

    #[test]
    fn degenerate_sinusoid() {
        let g = grid(11);
        let (c, d) = sin_curves_from_params(&g, &[SinParams { omega: 0.0, a: 0.0, b: 0.0 }]).unwrap();
        for (t, (x, dx)) in g.points().iter().zip(c.get(0).values().iter().zip(d.get(0).values())) {
            assert!((x - 2.0 * PI * t).abs() < 1e-12);
            assert!((dx - 2.0 * PI).abs() < 1e-12);
        }
    }

    #[test]
    fn sinusoid_passes_through_b_at_zero() {
        let g = grid(101);
        let mut rng = RngStream::new(5, 2).rng();
        let (c, _, params) = gen_sin_curves(20, &g, &mut rng).unwrap();
        for (curve, p) in c.iter().zip(&params) {
            let CurveParams::Sinusoid { omega, a, b } = *p else { panic!() };
            assert!((0.0..2.0 * PI).contains(&omega) && (0.0..1.0).contains(&a));
            assert!((curve.values()[50] - b).abs() < 1e-12);
        }
    }

    #[test]
    fn finite_difference_matches_analytic_derivative() {
        // central-difference error is about h²ω³/6, so use a 201-point grid
        let g = grid(201);
        let mut rng = RngStream::new(9, 0).rng();
        let (c, d, _) = gen_sin_curves(10, &g, &mut rng).unwrap();
        for (x, dx) in c.iter().zip(d.iter()) {
            let fd = derivative(x, 1, DerivMethod::FiniteDiff).unwrap();
            for k in 1..200 {
                assert!((fd.values()[k] - dx.values()[k]).abs() < 1e-2);
            }
        }
    }

    #[test]
    fn functionals_closed_form() {
        let g = grid(101);
        let zero = Curve::from_fn(g.clone(), |_| 0.0).unwrap();
        let (m, v) = true_functionals(Example::Ex1, &zero, None).unwrap();
        assert_eq!(m, 0.0);
        assert!((v - 2.0).abs() < 1e-12);

        let one = Curve::from_fn(g.clone(), |_| 1.0).unwrap();
        let (m, v) = true_functionals(Example::Ex2, &one, None).unwrap();
        assert!(m.abs() < 1e-12);
        assert!((v - 1.0).abs() < 1e-12);

        let (c, d) = sin_curves_from_params(&g, &[SinParams { omega: 0.0, a: 0.0, b: 0.0 }]).unwrap();
        let (m, v) = true_functionals(Example::Ex3, c.get(0), Some(d.get(0))).unwrap();
        // trapezoid sum of cos(πt) on a symmetric uniform grid is exactly 0 up to rounding
        assert!((m - 4.0 * PI).abs() < 1e-10);
        assert!((v - 4.0 * PI).abs() < 1e-10);
        assert!(matches!(true_functionals(Example::Ex3, c.get(0), None), Err(Error::MissingDerivative)));
    }

    #[test]
    fn ex1_response_mean_within_clt_bound() {
        let ds: SimulatedDataset<f64> = gen_dataset(&SimSpec::new(Example::Ex1, 10_000, 1)).unwrap();
        let mean_y = ds.y.iter().sum::<f64>() / ds.len() as f64;
        let mean_v = ds.true_v.iter().sum::<f64>() / ds.len() as f64;
        assert!(mean_y.abs() < 3.0 * (mean_v / ds.len() as f64).sqrt());
        assert!(ds.true_m.iter().all(|m| *m == 0.0));
        assert!(ds.true_v.iter().all(|v| (0.0..=2.0).contains(v)));
    }

    #[test]
    fn same_stream_same_dataset() {
        let spec = SimSpec::new(Example::Ex3, 50, 42);
        let a: SimulatedDataset<f64> = gen_dataset_stream(&spec, 7).unwrap();
        let b: SimulatedDataset<f64> = gen_dataset_stream(&spec, 7).unwrap();
        assert_eq!(a, b);
        let c: SimulatedDataset<f64> = gen_dataset_stream(&spec, 8).unwrap();
        assert_ne!(a.y, c.y);
    }

    #[test]
    fn forced_unit_curves_give_unit_variance_noise() {
        let g = grid(101);
        let n = 10_000;
        let curves = CurveSet::new(g, vec![vec![1.0; 101]; n]).unwrap();
        let params = vec![CurveParams::Brownian { start: 1.0 }; n];
        let mut rng = RngStream::new(2, 0).rng();
        let ds = dataset_from_curves(Example::Ex2, curves, None, params, &mut rng).unwrap();
        let mean = ds.y.iter().sum::<f64>() / n as f64;
        let var = ds.y.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn truths_nonnegative_for_all_designs() {
        for ex in Example::ALL {
            let ds: SimulatedDataset<f64> = gen_dataset(&SimSpec::new(ex, 200, 17)).unwrap();
            assert!(ds.true_v.iter().all(|v| *v >= 0.0));
            assert_eq!(ds.derivs.is_some(), ex == Example::Ex3);
        }
    }

    #[test]
    fn files_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        for ex in Example::ALL {
            let ds: SimulatedDataset<f64> = gen_dataset(&SimSpec::new(ex, 30, 4)).unwrap();
            write_dataset(&ds, dir.path(), 0).unwrap();
            let back = read_dataset(ex, dir.path(), 0).unwrap();
            assert_eq!(back, ds, "{ex}");
        }
    }

    #[test]
    fn single_precision_generation() {
        let ds: SimulatedDataset<f32> = gen_dataset(&SimSpec::new(Example::Ex2, 10, 4)).unwrap();
        assert_eq!(ds.len(), 10);
        assert!(ds.true_v.iter().all(|v| *v >= 0.0));
    }
}
