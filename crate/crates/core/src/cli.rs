//! Command-line front end: argument parsing, file plumbing and exit codes.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bench::{self, ChemoConfig, ExperimentConfig, ExperimentReport};
use crate::curves::csv_io::{read_curves_file, read_responses_file};
use crate::curves::{CurveSet, DerivMethod};
use crate::error::Error;
use crate::estimators::{
    cv_bandwidth_from_distances, default_bandwidth_grid, variance_pseudo_responses, CvOptions, CvResult, MeanFit,
    Prediction, SelfInclusion, VarianceFit, VarianceMethod, VariancePrediction, DEFAULT_GRID_SIZE,
    DEFAULT_MAX_FALLBACK_RATE,
};
use crate::fsutil::{sha256_file, write_atomic};
use crate::kernel::{KernelKind, WeightPolicy};
use crate::semimetric::{DistanceMatrix, SemiMetric, SemiMetricSpec};
use crate::simulate::{self, Example, SimSpec, SimulatedDataset};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_COMPUTE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "funvar", version, about = "Mean and variance estimation for curve-valued covariates")]
pub struct Cli {
    /// Base seed; required by `simulate`, `bench` and simulated `smallball`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "FUNVAR_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, global = true, default_value = ".")]
    pub output_dir: PathBuf,
    /// Output format for reports and tables.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DerivKind {
    FiniteDiff,
    Bspline,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate simulated datasets.
    Simulate(SimulateArgs),
    /// Fit mean and variance estimators and write a model file.
    Fit(FitArgs),
    /// Predict with a fitted model at new curves.
    Predict(PredictArgs),
    /// Monte-Carlo comparison of the variance estimators.
    Bench(BenchArgs),
    /// Train/validation workflow selecting the variance semi-metric order.
    Chemo(ChemoArgs),
    /// Empirical small-ball probabilities over a bandwidth grid.
    Smallball(SmallballArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DerivArgs {
    /// Derivative method for derivative-based semi-metrics.
    #[arg(long, value_enum)]
    pub deriv_method: Option<DerivKind>,
    /// Interior knots for the B-spline derivative.
    #[arg(long, default_value_t = 20)]
    pub knots: usize,
    #[arg(long, default_value_t = 3)]
    pub degree: usize,
}

impl DerivArgs {
    fn method(&self, default: DerivKind) -> DerivMethod {
        match self.deriv_method.unwrap_or(default) {
            DerivKind::FiniteDiff => DerivMethod::FiniteDiff,
            DerivKind::Bspline => DerivMethod::Bspline {
                knots: self.knots,
                degree: self.degree,
            },
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SmoothArgs {
    /// Kernel: quadratic, uniform or triangle.
    #[arg(long, default_value = "quadratic")]
    pub kernel: KernelKind,
    /// Empty-neighborhood policy: error or nearest_neighbor_fallback.
    #[arg(long, default_value = "nearest_neighbor_fallback")]
    pub policy: WeightPolicy,
    /// Number of cross-validation bandwidth candidates.
    #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
    pub bandwidth_grid_size: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_FALLBACK_RATE)]
    pub max_fallback_rate: f64,
}

impl SmoothArgs {
    fn cv_options(&self) -> CvOptions {
        CvOptions {
            policy: self.policy,
            max_fallback_rate: self.max_fallback_rate,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub example: Example,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Number of replications (stream ids 0..reps).
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    #[arg(long, default_value_t = simulate::DEFAULT_GRID_SIZE)]
    pub grid_size: usize,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub curves: PathBuf,
    #[arg(long)]
    pub responses: PathBuf,
    /// Derivative order of the mean semi-metric.
    #[arg(long, default_value_t = 0)]
    pub mean_order: usize,
    /// Derivative order of the variance semi-metric (defaults to the mean order).
    #[arg(long)]
    pub var_order: Option<usize>,
    /// Use a principal-component projection semi-metric of this dimension for the mean.
    #[arg(long, conflicts_with = "mean_order")]
    pub mean_pca: Option<usize>,
    #[arg(long, conflicts_with = "var_order")]
    pub var_pca: Option<usize>,
    #[command(flatten)]
    pub deriv: DerivArgs,
    #[command(flatten)]
    pub smooth: SmoothArgs,
    #[arg(long, default_value = "residual")]
    pub method: VarianceMethod,
    #[arg(long, default_value = "include_self")]
    pub self_inclusion: SelfInclusion,
    /// Fixed mean bandwidth instead of cross-validation.
    #[arg(long)]
    pub h_m: Option<f64>,
    /// Fixed variance bandwidth instead of cross-validation.
    #[arg(long)]
    pub h_v: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub curves: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub example: Example,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = simulate::DEFAULT_GRID_SIZE)]
    pub grid_size: usize,
    #[arg(long, value_delimiter = ',', default_value = "residual,direct")]
    pub methods: Vec<VarianceMethod>,
    /// Mean semi-metric derivative order (default 0 for ex1/ex2, 1 for ex3).
    #[arg(long)]
    pub mean_order: Option<usize>,
    #[arg(long)]
    pub var_order: Option<usize>,
    #[command(flatten)]
    pub deriv: DerivArgs,
    #[command(flatten)]
    pub smooth: SmoothArgs,
    #[arg(long, default_value = "include_self")]
    pub self_inclusion: SelfInclusion,
    /// ex3: smooth the analytic derivative curves.
    #[arg(long)]
    pub analytic_derivatives: bool,
    /// Record wall-clock time in the report (breaks byte-identical reruns).
    #[arg(long)]
    pub timing: bool,
}

impl BenchArgs {
    pub fn experiment_config(&self, seed: u64) -> ExperimentConfig {
        let base = ExperimentConfig::new(self.example, seed);
        let method = self.deriv.method(DerivKind::FiniteDiff);
        let order_of = |spec: SemiMetricSpec| match spec {
            SemiMetricSpec::DerivL2 { order, .. } => order,
            SemiMetricSpec::PcaProjection { .. } => 0,
        };
        let mean_order = self.mean_order.unwrap_or(order_of(base.spec_m));
        let var_order = self.var_order.unwrap_or(order_of(base.spec_v));
        ExperimentConfig {
            n: self.n,
            n_reps: self.reps,
            grid_size: self.grid_size,
            spec_m: SemiMetricSpec::DerivL2 {
                order: mean_order,
                method,
            },
            spec_v: SemiMetricSpec::DerivL2 {
                order: var_order,
                method,
            },
            kernel: self.smooth.kernel,
            bandwidth_grid_size: self.smooth.bandwidth_grid_size,
            self_inclusion: self.self_inclusion,
            policy: self.smooth.policy,
            max_fallback_rate: self.smooth.max_fallback_rate,
            methods: self.methods.clone(),
            analytic_derivatives: self.analytic_derivatives,
            ..base
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ChemoArgs {
    #[arg(long)]
    pub curves: PathBuf,
    #[arg(long)]
    pub responses: PathBuf,
    #[arg(long, default_value_t = 150)]
    pub train_size: usize,
    #[arg(long, default_value_t = 2)]
    pub mean_order: usize,
    /// Candidate variance semi-metric orders.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub orders: Vec<usize>,
    #[command(flatten)]
    pub deriv: DerivArgs,
    #[command(flatten)]
    pub smooth: SmoothArgs,
    #[arg(long, default_value = "include_self")]
    pub self_inclusion: SelfInclusion,
}

impl ChemoArgs {
    pub fn chemo_config(&self) -> ChemoConfig {
        ChemoConfig {
            train_size: self.train_size,
            mean_order: self.mean_order,
            variance_orders: self.orders.clone(),
            deriv_method: self.deriv.method(DerivKind::Bspline),
            kernel: self.smooth.kernel,
            bandwidth_grid_size: self.smooth.bandwidth_grid_size,
            self_inclusion: self.self_inclusion,
            policy: self.smooth.policy,
            max_fallback_rate: self.smooth.max_fallback_rate,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SmallballArgs {
    /// Curves file; when absent, curves are simulated from `--example`.
    #[arg(long)]
    pub curves: Option<PathBuf>,
    #[arg(long, default_value = "ex1")]
    pub example: Example,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = simulate::DEFAULT_GRID_SIZE)]
    pub grid_size: usize,
    #[arg(long, default_value_t = 0)]
    pub order: usize,
    #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
    pub bandwidth_grid_size: usize,
    #[command(flatten)]
    pub deriv: DerivArgs,
}

/// Failure of a CLI invocation, mapped to an exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Run(e) if e.is_io() => EXIT_IO,
            CliError::Run(_) => EXIT_COMPUTE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn require_seed(cli: &Cli, what: &str) -> CliResult<u64> {
    cli.seed
        .ok_or_else(|| CliError::Usage(format!("{what} requires --seed")))
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    validate(cli)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    pool.install(|| dispatch(cli))
}

fn validate(cli: &Cli) -> CliResult<()> {
    if cli.threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let positive = |v: usize, name: &str| {
        if v == 0 {
            Err(CliError::Usage(format!("{name} must be positive")))
        } else {
            Ok(())
        }
    };
    let rate = |r: f64| {
        if (0.0..=1.0).contains(&r) {
            Ok(())
        } else {
            Err(CliError::Usage("--max-fallback-rate must be in [0, 1]".into()))
        }
    };
    match &cli.command {
        Command::Simulate(a) => {
            require_seed(cli, "simulate")?;
            positive(a.n, "--n")?;
            positive(a.reps, "--reps")?;
            if a.grid_size < 2 {
                return Err(CliError::Usage("--grid-size must be at least 2".into()));
            }
        }
        Command::Bench(a) => {
            require_seed(cli, "bench")?;
            if a.n < 2 {
                return Err(CliError::Usage("--n must be at least 2".into()));
            }
            positive(a.reps, "--reps")?;
            positive(a.smooth.bandwidth_grid_size, "--bandwidth-grid-size")?;
            rate(a.smooth.max_fallback_rate)?;
        }
        Command::Fit(a) => {
            positive(a.smooth.bandwidth_grid_size, "--bandwidth-grid-size")?;
            rate(a.smooth.max_fallback_rate)?;
            for h in [a.h_m, a.h_v].into_iter().flatten() {
                if !(h > 0.0 && h.is_finite()) {
                    return Err(CliError::Usage(format!("bandwidth {h} must be positive and finite")));
                }
            }
        }
        Command::Chemo(a) => {
            positive(a.smooth.bandwidth_grid_size, "--bandwidth-grid-size")?;
            rate(a.smooth.max_fallback_rate)?;
            if a.orders.is_empty() {
                return Err(CliError::Usage("--orders must list at least one order".into()));
            }
        }
        Command::Smallball(a) => {
            if a.curves.is_none() {
                require_seed(cli, "smallball without --curves")?;
                if a.n < 2 {
                    return Err(CliError::Usage("--n must be at least 2".into()));
                }
            }
            positive(a.bandwidth_grid_size, "--bandwidth-grid-size")?;
        }
        Command::Predict(_) => {}
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    let out = &cli.output_dir;
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, require_seed(cli, "simulate")?, out),
        Command::Fit(a) => cmd_fit(a, out),
        Command::Predict(a) => cmd_predict(a, out, cli.format.unwrap_or(Format::Csv)),
        Command::Bench(a) => cmd_bench(a, require_seed(cli, "bench")?, out, cli.format.unwrap_or(Format::Json)),
        Command::Chemo(a) => cmd_chemo(a, out, cli.format.unwrap_or(Format::Json)),
        Command::Smallball(a) => cmd_smallball(a, cli.seed, out, cli.format.unwrap_or(Format::Csv)),
    }
}

fn json_bytes<S: Serialize>(value: &S) -> CliResult<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).map_err(Error::from)?;
    v.push(b'\n');
    Ok(v)
}

fn cmd_simulate(a: &SimulateArgs, seed: u64, out: &Path) -> CliResult<()> {
    let spec = SimSpec {
        example: a.example,
        n: a.n,
        grid_size: a.grid_size,
        seed,
    };
    for rep in 0..a.reps {
        let ds: SimulatedDataset<f64> = simulate::gen_dataset_stream(&spec, rep as u64)?;
        simulate::write_dataset(&ds, out, rep)?;
    }
    println!("wrote {} {} dataset(s) to {}", a.reps, a.example, out.display());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileRef {
    fn new(path: &Path) -> CliResult<Self> {
        let abs = std::fs::canonicalize(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            sha256: sha256_file(&abs)?,
            path: abs,
        })
    }

    fn verify(&self) -> CliResult<()> {
        let found = sha256_file(&self.path)?;
        if found != self.sha256 {
            return Err(Error::HashMismatch {
                path: self.path.display().to_string(),
                expected: self.sha256.clone(),
                found,
            }
            .into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub bandwidth: f64,
    pub score: Option<f64>,
    pub fallback_rate: f64,
    pub qualified: bool,
}

fn cv_rows(r: &CvResult<f64>) -> Vec<CvRow> {
    r.candidates
        .iter()
        .map(|c| CvRow {
            bandwidth: c.bandwidth,
            score: c.score,
            fallback_rate: c.fallback_rate,
            qualified: c.qualified,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStage {
    pub spec: SemiMetricSpec,
    pub bandwidth: f64,
    /// Absent when the bandwidth was given on the command line.
    pub cv: Option<Vec<CvRow>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceStage {
    pub method: VarianceMethod,
    pub spec: SemiMetricSpec,
    pub bandwidth: f64,
    pub cv: Option<Vec<CvRow>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub mean_fallbacks: usize,
    pub residual_fallbacks: usize,
    pub variance_fallbacks: usize,
    pub clipped: usize,
}

/// Everything needed to rebuild a fit from its training files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitModel {
    pub curves: FileRef,
    pub responses: FileRef,
    pub kernel: KernelKind,
    pub policy: WeightPolicy,
    pub self_inclusion: SelfInclusion,
    pub mean: MeanStage,
    pub variance: VarianceStage,
    pub counters: Counters,
}

impl FitModel {
    fn refit(&self, x: &CurveSet<f64>, y: &[f64]) -> CliResult<VarianceFit<f64>> {
        let mean = MeanFit::new(x, y, self.mean.spec, self.kernel, self.mean.bandwidth, self.policy)?;
        Ok(VarianceFit::new(
            self.variance.method,
            &mean,
            self.variance.spec,
            self.kernel,
            self.variance.bandwidth,
            self.self_inclusion,
            self.policy,
        )?)
    }
}

fn select_bandwidth(
    dm: &DistanceMatrix<f64>,
    resp: &[f64],
    smooth: &SmoothArgs,
    fixed: Option<f64>,
) -> CliResult<(f64, Option<Vec<CvRow>>)> {
    if let Some(h) = fixed {
        return Ok((h, None));
    }
    let grid = default_bandwidth_grid(dm, smooth.bandwidth_grid_size)?;
    let r = cv_bandwidth_from_distances(dm, resp, &smooth.kernel, &grid, smooth.cv_options())?;
    Ok((r.bandwidth, Some(cv_rows(&r))))
}

fn prediction_table(mean: &[Prediction<f64>], var: &[VariancePrediction<f64>]) -> Vec<u8> {
    let mut buf = Vec::new();
    let flag = |b: bool| u8::from(b);
    let _ = writeln!(buf, "index,m_hat,m_fallback,v_hat,v_fallback,v_clipped");
    for (i, (m, v)) in mean.iter().zip(var).enumerate() {
        let _ = writeln!(
            buf,
            "{i},{},{},{},{},{}",
            m.value,
            flag(m.fallback),
            v.value,
            flag(v.fallback),
            flag(v.clipped)
        );
    }
    buf
}

#[derive(Serialize)]
struct PredictionRow {
    index: usize,
    m_hat: f64,
    m_fallback: bool,
    v_hat: f64,
    v_fallback: bool,
    v_clipped: bool,
}

fn prediction_json(mean: &[Prediction<f64>], var: &[VariancePrediction<f64>]) -> CliResult<Vec<u8>> {
    let rows: Vec<PredictionRow> = mean
        .iter()
        .zip(var)
        .enumerate()
        .map(|(index, (m, v))| PredictionRow {
            index,
            m_hat: m.value,
            m_fallback: m.fallback,
            v_hat: v.value,
            v_fallback: v.fallback,
            v_clipped: v.clipped,
        })
        .collect();
    json_bytes(&rows)
}

fn cmd_fit(a: &FitArgs, out: &Path) -> CliResult<()> {
    let x: CurveSet<f64> = read_curves_file(&a.curves)?;
    let y: Vec<f64> = read_responses_file(&a.responses)?;
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            got: y.len(),
        }
        .into());
    }
    let method = a.deriv.method(DerivKind::FiniteDiff);
    let spec_m = match a.mean_pca {
        Some(dim) => SemiMetricSpec::PcaProjection { dim },
        None => SemiMetricSpec::DerivL2 {
            order: a.mean_order,
            method,
        },
    };
    let spec_v = match (a.var_pca, a.var_order) {
        (Some(dim), _) => SemiMetricSpec::PcaProjection { dim },
        (None, Some(order)) => SemiMetricSpec::DerivL2 { order, method },
        (None, None) => spec_m,
    };
    let smooth = &a.smooth;
    let dm = SemiMetric::trained(spec_m, &x)?.embed(&x)?.self_matrix();
    let (h_m, cv_m) = select_bandwidth(&dm, &y, smooth, a.h_m)?;
    let mean = MeanFit::new(&x, &y, spec_m, smooth.kernel, h_m, smooth.policy)?;
    let pseudo = variance_pseudo_responses(a.method, &mean, a.self_inclusion)?;
    let dv = if spec_v == spec_m {
        dm
    } else {
        SemiMetric::trained(spec_v, &x)?.embed(&x)?.self_matrix()
    };
    let (h_v, cv_v) = select_bandwidth(&dv, &pseudo, smooth, a.h_v)?;
    let fit = VarianceFit::new(a.method, &mean, spec_v, smooth.kernel, h_v, a.self_inclusion, smooth.policy)?;

    let m_pred = mean.predict_set(&x)?;
    let v_pred = fit.predict_set(&x)?;
    let model = FitModel {
        curves: FileRef::new(&a.curves)?,
        responses: FileRef::new(&a.responses)?,
        kernel: smooth.kernel,
        policy: smooth.policy,
        self_inclusion: a.self_inclusion,
        mean: MeanStage {
            spec: spec_m,
            bandwidth: h_m,
            cv: cv_m,
        },
        variance: VarianceStage {
            method: a.method,
            spec: spec_v,
            bandwidth: h_v,
            cv: cv_v,
        },
        counters: Counters {
            mean_fallbacks: m_pred.iter().filter(|p| p.fallback).count(),
            residual_fallbacks: fit.residual_fallbacks(),
            variance_fallbacks: v_pred.iter().filter(|p| p.fallback).count(),
            clipped: v_pred.iter().filter(|p| p.clipped).count(),
        },
    };
    write_atomic(&out.join("model.json"), &json_bytes(&model)?)?;
    write_atomic(&out.join("fitted.csv"), &prediction_table(&m_pred, &v_pred))?;
    println!("h_m = {h_m}, h_v = {h_v}; wrote model.json and fitted.csv to {}", out.display());
    Ok(())
}

fn cmd_predict(a: &PredictArgs, out: &Path, format: Format) -> CliResult<()> {
    let text = std::fs::read(&a.model).map_err(|e| Error::io(&a.model, e))?;
    let model: FitModel = serde_json::from_slice(&text).map_err(Error::from)?;
    model.curves.verify()?;
    model.responses.verify()?;
    let x: CurveSet<f64> = read_curves_file(&model.curves.path)?;
    let y: Vec<f64> = read_responses_file(&model.responses.path)?;
    let fit = model.refit(&x, &y)?;
    let new: CurveSet<f64> = read_curves_file(&a.curves)?;
    let m_pred = fit.mean().predict_set(&new)?;
    let v_pred = fit.predict_set(&new)?;
    let (name, bytes) = match format {
        Format::Csv => ("predictions.csv", prediction_table(&m_pred, &v_pred)),
        Format::Json => ("predictions.json", prediction_json(&m_pred, &v_pred)?),
    };
    write_atomic(&out.join(name), &bytes)?;
    println!("wrote {} predictions to {}", m_pred.len(), out.join(name).display());
    Ok(())
}

fn records_csv(report: &ExperimentReport) -> Vec<u8> {
    let mut buf = Vec::new();
    let _ = writeln!(buf, "rep,method,h_m,h_v,mse,fallbacks,clipped,failure");
    for r in &report.records {
        let h_m = r.h_m.map(|h| h.to_string()).unwrap_or_default();
        let failure = r.failure.as_deref().unwrap_or("").replace(',', ";");
        if r.methods.is_empty() {
            let _ = writeln!(buf, "{},,{h_m},,,,,{failure}", r.rep_index);
        }
        for (m, res) in &r.methods {
            let _ = writeln!(
                buf,
                "{},{},{h_m},{},{},{},{},{failure}",
                r.rep_index,
                m.name(),
                res.h_v,
                res.mse,
                res.fallbacks,
                res.clipped
            );
        }
    }
    buf
}

fn summary_csv(report: &ExperimentReport) -> Vec<u8> {
    let mut buf = Vec::new();
    let _ = writeln!(buf, "method,median_mse,replications,total_fallbacks,total_clipped");
    for (m, s) in &report.summary {
        let _ = writeln!(
            buf,
            "{},{},{},{},{}",
            m.name(),
            s.median_mse,
            s.replications,
            s.total_fallbacks,
            s.total_clipped
        );
    }
    buf
}

fn cmd_bench(a: &BenchArgs, seed: u64, out: &Path, format: Format) -> CliResult<()> {
    let cfg = a.experiment_config(seed);
    let mut report = bench::run_experiment(&cfg)?;
    if !a.timing {
        report.wall_clock_secs = None;
    }
    let stem = format!("bench_{}", a.example);
    match format {
        Format::Json => write_atomic(&out.join(format!("{stem}.json")), &json_bytes(&report)?)?,
        Format::Csv => {
            write_atomic(&out.join(format!("{stem}_summary.csv")), &summary_csv(&report))?;
            write_atomic(&out.join(format!("{stem}_records.csv")), &records_csv(&report))?;
        }
    }
    for (m, s) in &report.summary {
        println!("{} median MSE {} over {} replications", m.name(), s.median_mse, s.replications);
    }
    Ok(())
}

fn cmd_chemo(a: &ChemoArgs, out: &Path, format: Format) -> CliResult<()> {
    let x: CurveSet<f64> = read_curves_file(&a.curves)?;
    let y: Vec<f64> = read_responses_file(&a.responses)?;
    let report = bench::chemo_workflow(&a.chemo_config(), &x, &y)?;
    match format {
        Format::Json => write_atomic(&out.join("chemo_report.json"), &json_bytes(&report)?)?,
        Format::Csv => {
            let mut buf = Vec::new();
            let _ = writeln!(buf, "order,h_v,validation_mse,fallbacks");
            for o in &report.orders {
                let mse = o.validation_mse.map(|m| m.to_string()).unwrap_or_default();
                let _ = writeln!(buf, "{},{},{mse},{}", o.order, o.h_v, o.fallbacks);
            }
            write_atomic(&out.join("chemo_orders.csv"), &buf)?;
        }
    }
    bench::write_plot_csv(&out.join("chemo_plot.csv"), &report.plot)?;
    println!(
        "chosen order {} with validation MSE {}",
        report.chosen_order, report.validation_mse
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallBallRow {
    pub h: f64,
    pub phi: f64,
}

/// `φ(h)`: fraction of ordered pairs `i ≠ j` with `d(X_i, X_j) ≤ h`, over the
/// default bandwidth grid. The last row is at the maximum distance.
pub fn small_ball_table(dm: &DistanceMatrix<f64>, size: usize) -> crate::Result<Vec<SmallBallRow>> {
    let grid = default_bandwidth_grid(dm, size)?;
    let n = dm.rows();
    let mut pairs: Vec<f64> = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        pairs.extend(dm.row(i).iter().enumerate().filter(|(j, _)| *j != i).map(|(_, d)| *d));
    }
    pairs.sort_by(f64::total_cmp);
    let total = pairs.len() as f64;
    let mut hs: Vec<f64> = grid.candidates().to_vec();
    let max = dm.max();
    if hs.last() != Some(&max) {
        hs.push(max);
    }
    Ok(hs
        .into_iter()
        .map(|h| SmallBallRow {
            h,
            phi: pairs.partition_point(|d| *d <= h) as f64 / total,
        })
        .collect())
}

fn cmd_smallball(a: &SmallballArgs, seed: Option<u64>, out: &Path, format: Format) -> CliResult<()> {
    let x: CurveSet<f64> = match (&a.curves, seed) {
        (Some(p), _) => read_curves_file(p)?,
        (None, Some(seed)) => {
            let spec = SimSpec {
                example: a.example,
                n: a.n,
                grid_size: a.grid_size,
                seed,
            };
            simulate::gen_dataset_stream::<f64>(&spec, 0)?.curves
        }
        (None, None) => return Err(CliError::Usage("smallball without --curves requires --seed".into())),
    };
    let spec = SemiMetricSpec::DerivL2 {
        order: a.order,
        method: a.deriv.method(DerivKind::FiniteDiff),
    };
    let dm = SemiMetric::trained(spec, &x)?.embed(&x)?.self_matrix();
    let rows = small_ball_table(&dm, a.bandwidth_grid_size)?;
    let (name, bytes) = match format {
        Format::Json => ("smallball.json", json_bytes(&rows)?),
        Format::Csv => {
            let mut buf = Vec::new();
            let _ = writeln!(buf, "h,phi");
            for r in &rows {
                let _ = writeln!(buf, "{},{}", r.h, r.phi);
            }
            ("smallball.csv", buf)
        }
    };
    write_atomic(&out.join(name), &bytes)?;
    println!("wrote {} rows to {}", rows.len(), out.join(name).display());
    Ok(())
}
