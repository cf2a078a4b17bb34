use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use nlts::baselines::{fit_knn, fit_krr, fit_rf};
use nlts::bench::{
    self, emit_report, report_csv, report_json, run_benchmark_with, BaselineConfig, BenchConfig, Estimator,
    NetworkShape, ReportFormat,
};
use nlts::dgp::{embed, read_series_csv, simulate, write_series_csv, DgpSpec};
use nlts::net::NetworkDocument;
use nlts::theory::{
    covering_bound_clipped, covering_bound_sparse, oracle_rate_term, phi_rate, sparsity_budget, CompositionClass,
    NetworkClassParams,
};
use nlts::train::{empirical_risk, fit_npdnn, fit_spdnn, TrainConfig};
use nlts::{Error, Regressor};

/// Nonlinear time-series regression with sparse deep networks: simulation,
/// fitting, Monte Carlo benchmarks and rate calculators.
#[derive(Debug, Parser)]
#[command(name = "nlts", version)]
struct Cli {
    /// Per-replication progress on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a series from one of the autoregressive models.
    Simulate(SimulateArgs),
    /// Fit an estimator to a series stored as CSV.
    Fit(FitArgs),
    /// Run a Monte Carlo benchmark described by a JSON config.
    Bench(BenchArgs),
    /// Covering-number bounds and the oracle-inequality rate term.
    Bounds(BoundsArgs),
    /// Minimax rate, effective smoothness and sparsity budget of a composition class.
    Rates(RatesArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// JSON file with `dgp`, `T`, `burn_in` and `seed`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Study model name, used when no config is given.
    #[arg(long, value_enum, conflicts_with = "config")]
    model: Option<ModelArg>,
    #[arg(long = "T")]
    t: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV (header `y`); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Expar,
    Tar,
    Far,
    Aar,
    Sim,
    #[value(name = "sim_v0.5")]
    SimV05,
    #[value(name = "sim_v1")]
    SimV1,
    #[value(name = "sim_v5")]
    SimV5,
}

impl ModelArg {
    fn spec(self) -> DgpSpec {
        match self {
            ModelArg::Expar => DgpSpec::expar(),
            ModelArg::Tar => DgpSpec::tar(),
            ModelArg::Far => DgpSpec::far(),
            ModelArg::Aar => DgpSpec::aar(),
            ModelArg::Sim => DgpSpec::sim(),
            ModelArg::SimV05 => DgpSpec::sim_v(0.5),
            ModelArg::SimV1 => DgpSpec::sim_v(1.0),
            ModelArg::SimV5 => DgpSpec::sim_v(5.0),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    #[serde(default = "schema_version")]
    schema_version: u32,
    dgp: DgpSpec,
    #[serde(rename = "T", default = "default_t")]
    t: usize,
    #[serde(default = "default_burn_in")]
    burn_in: usize,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Series CSV with header `y`.
    #[arg(long)]
    data: PathBuf,
    /// JSON file with `estimator`, `d`, `train`, `arch`, `baselines`, `lambda_grid`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    estimator: Option<EstimatorArg>,
    /// Lag order.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fit summary JSON (with the network for npdnn/spdnn); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Krr,
    Knn,
    Rf,
    Npdnn,
    Spdnn,
}

impl From<EstimatorArg> for Estimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Krr => Estimator::Krr,
            EstimatorArg::Knn => Estimator::Knn,
            EstimatorArg::Rf => Estimator::Rf,
            EstimatorArg::Npdnn => Estimator::Npdnn,
            EstimatorArg::Spdnn => Estimator::Spdnn,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitConfig {
    #[serde(default = "schema_version")]
    schema_version: u32,
    #[serde(default = "default_estimator")]
    estimator: Estimator,
    #[serde(default = "default_d")]
    d: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    arch: NetworkShape,
    #[serde(default)]
    baselines: BaselineConfig,
    #[serde(default)]
    lambda_grid: Option<Vec<f64>>,
}

impl Default for FitConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Debug, Serialize)]
struct FitSummary {
    estimator: Estimator,
    n: usize,
    d: usize,
    training_mse: f64,
    selected_lambda: Option<f64>,
    selected_k: Option<usize>,
    selected_gamma: Option<f64>,
    selected_alpha: Option<f64>,
    selected_mtry: Option<usize>,
    epochs: Option<usize>,
    clamp: Option<f64>,
    network: Option<NetworkDocument>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `base_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `replications`.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Worker threads (0 = one per core).
    #[arg(long, env = "NLTS_THREADS", default_value_t = 0)]
    threads: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct BoundsArgs {
    /// Sparsity (number of nonzero parameters).
    #[arg(long = "S")]
    s: f64,
    /// Number of hidden layers.
    #[arg(long = "L")]
    l: f64,
    /// Width.
    #[arg(long = "N")]
    n: f64,
    /// Parameter bound (at least 1).
    #[arg(long = "B", default_value_t = 1.0)]
    b: f64,
    /// Output clamp.
    #[arg(long = "F", default_value_t = 1.0)]
    f: f64,
    /// Clipping threshold of the clipped class.
    #[arg(long)]
    tau: Option<f64>,
    /// Covering radius in (0, 1).
    #[arg(long)]
    delta: f64,
    /// Sample size for the rate term.
    #[arg(long = "T")]
    t: Option<f64>,
}

#[derive(Debug, Args)]
struct RatesArgs {
    /// Number of composed layers minus one.
    #[arg(long)]
    q: usize,
    /// Smoothness per layer; a single value is used for every layer.
    #[arg(long, value_delimiter = ',', required = true)]
    beta: Vec<f64>,
    /// Effective input dimension per layer; a single value is used for every layer.
    #[arg(long, value_delimiter = ',', required = true)]
    t: Vec<usize>,
    /// Layer dimensions d_0..d_q (d_{q+1} = 1 is appended); defaults to t.
    #[arg(long, value_delimiter = ',')]
    d: Option<Vec<usize>>,
    /// Sample size.
    #[arg(long = "T")]
    sample_size: f64,
    /// Log power of the sparsity budget.
    #[arg(long, default_value_t = 1.0)]
    r: f64,
    /// Constant of the sparsity budget.
    #[arg(long, default_value_t = 1.0)]
    cs: f64,
}

fn schema_version() -> u32 {
    bench::SCHEMA_VERSION
}
fn default_t() -> usize {
    400
}
fn default_burn_in() -> usize {
    bench::DEFAULT_BURN_IN
}
fn default_estimator() -> Estimator {
    Estimator::Npdnn
}
fn default_d() -> usize {
    1
}

fn check_schema(v: u32) -> Result<(), Error> {
    if v != bench::SCHEMA_VERSION {
        return Err(Error::Parameter(format!(
            "unsupported schema_version {v} (expected {})",
            bench::SCHEMA_VERSION
        )));
    }
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => bench::write_atomic(p, text.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn run_simulate(args: SimulateArgs) -> Result<(), Error> {
    let (spec, mut t, mut burn_in, mut seed) = match (&args.config, args.model) {
        (Some(path), _) => {
            let cfg: SimulateConfig = read_json(path)?;
            check_schema(cfg.schema_version)?;
            (cfg.dgp, cfg.t, cfg.burn_in, cfg.seed)
        }
        (None, Some(m)) => (m.spec(), default_t(), default_burn_in(), 0),
        (None, None) => return Err(Error::Parameter("simulate needs --config or --model".into())),
    };
    t = args.t.unwrap_or(t);
    burn_in = args.burn_in.unwrap_or(burn_in);
    seed = args.seed.unwrap_or(seed);
    let series = simulate(&spec, t, burn_in, seed)?;
    match &args.out {
        Some(p) => write_series_csv(p, &series),
        None => {
            let mut text = String::from("y\n");
            for v in &series {
                text.push_str(&v.to_string());
                text.push('\n');
            }
            write_output(None, &text)
        }
    }
}

fn run_fit(args: FitArgs) -> Result<(), Error> {
    let mut cfg = match &args.config {
        Some(p) => read_json::<FitConfig>(p)?,
        None => FitConfig::default(),
    };
    check_schema(cfg.schema_version)?;
    if let Some(e) = args.estimator {
        cfg.estimator = e.into();
    }
    cfg.d = args.d.unwrap_or(cfg.d);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    let series = read_series_csv(&args.data)?;
    let data = embed(&series, cfg.d)?;
    let b = &cfg.baselines;
    let mut summary = FitSummary {
        estimator: cfg.estimator,
        n: data.len(),
        d: cfg.d,
        training_mse: f64::NAN,
        selected_lambda: None,
        selected_k: None,
        selected_gamma: None,
        selected_alpha: None,
        selected_mtry: None,
        epochs: None,
        clamp: None,
        network: None,
    };
    let model: Box<dyn Regressor> = match cfg.estimator {
        Estimator::Krr => {
            let m = fit_krr(&data, b.folds, &b.krr_gamma_grid, &b.krr_ridge_grid, cfg.seed)?;
            summary.selected_gamma = Some(m.gamma);
            summary.selected_alpha = Some(m.alpha);
            Box::new(m)
        }
        Estimator::Knn => {
            let m = fit_knn(&data, &b.knn_k_grid, b.folds, cfg.seed)?;
            summary.selected_k = Some(m.k);
            Box::new(m)
        }
        Estimator::Rf => {
            let m = fit_rf(&data, &b.forest, cfg.seed)?;
            summary.selected_mtry = Some(m.mtry);
            Box::new(m)
        }
        Estimator::Npdnn | Estimator::Spdnn => {
            let arch = cfg.arch.architecture(cfg.d)?;
            let mut train = cfg.train.clone();
            train.seed = cfg.seed;
            let fit = if cfg.estimator == Estimator::Npdnn {
                fit_npdnn(&data, &arch, &train)?
            } else {
                fit_spdnn(&data, &arch, &train, cfg.lambda_grid.as_deref())?
            };
            summary.selected_lambda = fit.selected_lambda;
            summary.epochs = Some(fit.epochs_used);
            summary.clamp = Some(fit.estimator.clamp);
            summary.network = Some(NetworkDocument::from(&fit.estimator.net));
            Box::new(fit.estimator)
        }
    };
    summary.training_mse = empirical_risk(model.as_ref(), &data)?;
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    write_output(args.out.as_deref(), &text)
}

fn run_bench(args: BenchArgs, verbose: bool) -> Result<(), Error> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut cfg: BenchConfig = serde_json::from_str(&text)?;
    if let Some(s) = args.seed {
        cfg.base_seed = s;
    }
    if let Some(r) = args.reps {
        cfg.replications = r;
    }
    cfg.validate()?;
    let report = run_benchmark_with(&cfg, args.threads, |rep, rows| {
        if verbose {
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            eprintln!("replication {rep} done ({} rows, {failed} failed)", rows.len());
        }
    })?;
    let format = match args.format {
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Json => ReportFormat::Json,
    };
    match &args.out {
        Some(p) => emit_report(&report, p, format)?,
        None => {
            let text = match format {
                ReportFormat::Csv => report_csv(&report)?,
                ReportFormat::Json => report_json(&report)?,
            };
            write_output(None, &text)?;
        }
    }
    if verbose {
        eprint!("{}", bench::summary(&report));
    }
    Ok(())
}

fn run_bounds(args: BoundsArgs) -> Result<(), Error> {
    let mut p = NetworkClassParams::new(args.s, args.l, args.n, args.b).with_clamp(args.f);
    let sparse = covering_bound_sparse(&p, args.delta)?;
    let mut out = format!("covering_bound_sparse = {sparse}\n");
    if let Some(tau) = args.tau {
        p = p.with_tau(tau);
        let clipped = covering_bound_clipped(&p, args.delta)?;
        out.push_str(&format!("covering_bound_clipped = {clipped}\n"));
    }
    if let Some(t) = args.t {
        let term = oracle_rate_term(&p, t)?;
        out.push_str(&format!("rate_term = {term} x C\n"));
    }
    write_output(None, &out)
}

fn broadcast<T: Copy>(name: &str, v: &[T], len: usize) -> Result<Vec<T>, Error> {
    match v.len() {
        1 => Ok(vec![v[0]; len]),
        n if n == len => Ok(v.to_vec()),
        n => Err(Error::Parameter(format!(
            "--{name} has {n} entries, expected 1 or {len}"
        ))),
    }
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn run_rates(args: RatesArgs) -> Result<(), Error> {
    let layers = args.q + 1;
    let beta = broadcast("beta", &args.beta, layers)?;
    let t_vec = broadcast("t", &args.t, layers)?;
    let mut d_vec = match &args.d {
        Some(d) => broadcast("d", d, layers)?,
        None => t_vec.clone(),
    };
    d_vec.push(1);
    let cls = CompositionClass::new(args.q, d_vec, t_vec, beta, 1.0)?;
    let rate = phi_rate(&cls, args.sample_size)?;
    let budget = sparsity_budget(rate.kappa, args.sample_size, args.r, args.cs)?;
    let out = format!(
        "beta_star = {}\nphi_T = {}\nkappa = {}\nS_T = {}\n",
        fmt_list(&rate.beta_star),
        rate.phi,
        rate.kappa,
        budget
    );
    write_output(None, &out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let verbose = cli.verbose > 0;
    let result = match cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Fit(a) => run_fit(a),
        Command::Bench(a) => run_bench(a, verbose),
        Command::Bounds(a) => run_bounds(a),
        Command::Rates(a) => run_rates(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
