//! Command-line driver for the spiked-model GMVP experiments.
//!
//! Exit codes: 0 success, 2 configuration error (including flag parsing),
//! 3 data error (missing or malformed input files).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use scrgmvp::estimators::EstimatorId;
use scrgmvp::experiments::{
    run_backtest, run_compare, run_consistency, summarize, BacktestConfig, ExperimentConfig,
};
use scrgmvp::io::{
    log_returns, model_from_config, parse_n_grid, parse_spike_counts, read_price_csv,
    read_returns_csv, subset_columns, write_grid_scan_csv, write_records_csv, write_summary_csv,
    ConfigFile, RunManifest,
};
use scrgmvp::risk::{grid_scan, grid_search, AsymptoticInputs};
use scrgmvp::sampling::{sample_covariance, ReturnsMatrix};
use scrgmvp::spectral::{detect_spikes_auto, BhatMode, DetectConfig, SampleSpectrum, SpikeEstimates};
use scrgmvp::spiked::SpikedCovariance;
use scrgmvp::{Error, Result};

#[derive(Parser)]
#[command(name = "scrgmvp", version, about = "Spiked-model minimum variance portfolio toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare the regularized portfolio's realized risk with its
    /// deterministic equivalent across sample sizes.
    SimulateConsistency(SimulateArgs),
    /// Monte-Carlo comparison of the five estimators plus the oracle bound.
    SimulateCompare(SimulateArgs),
    /// Rolling out-of-sample backtest over a returns (or price) CSV.
    Backtest(BacktestArgs),
    /// One-shot weight estimation on a returns CSV.
    Weights(WeightsArgs),
    /// Dump the asymptotic-risk surface over the (phi1, phi2) grid.
    GridScan(GridScanArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Config file ([model], [experiment], [io] sections); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Asset count M of the synthetic model.
    #[arg(long)]
    dim: Option<usize>,
}

impl ModelArgs {
    fn load(&self) -> Result<(ConfigFile, SpikedCovariance)> {
        let mut config = match &self.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        if config.get("model", "dim").is_none() {
            config.set("model", "dim", "50");
        }
        if let Some(dim) = self.dim {
            config.set("model", "dim", dim.to_string());
        }
        if config.get_all("model", "spike").is_empty() {
            // Default synthetic design: three positive spikes and one
            // negative spike on canonical basis vectors.
            for spike in ["1 20", "2 10", "3 5", "-1 -0.99"] {
                config.set("model", "spike", spike);
            }
        }
        let model = model_from_config(&config)?;
        Ok((config, model))
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Base seed for reproducible repetitions.
    #[arg(long)]
    seed: Option<u64>,
    /// Repetitions per sample size.
    #[arg(long)]
    reps: Option<usize>,
    /// Sample sizes: a value, a comma list, or lo:hi:step.
    #[arg(long, value_name = "GRID")]
    n_grid: Option<String>,
    /// Comma list of estimator ids (scme,shre,wshre,sce,scre,oracle).
    #[arg(long)]
    estimators: Option<String>,
    /// Points per phi axis in the parameter grid search.
    #[arg(long)]
    grid_resolution: Option<usize>,
    /// Records CSV destination.
    #[arg(long)]
    out: PathBuf,
    /// Summary CSV destination (default: <out>.summary.csv).
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Resolved-configuration echo destination.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Worker threads (0 = automatic).
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct BacktestArgs {
    /// Returns CSV (schema: date,TICKER1,...).
    #[arg(long, conflicts_with = "prices")]
    input: Option<PathBuf>,
    /// Price CSV; weekly log returns are computed on load.
    #[arg(long)]
    prices: Option<PathBuf>,
    /// Keep a random subset of this many asset columns.
    #[arg(long)]
    subset: Option<usize>,
    /// Seed of the column subset draw.
    #[arg(long, default_value_t = 0)]
    subset_seed: u64,
    /// Training window length.
    #[arg(long, default_value_t = 200)]
    window: usize,
    /// Held-out test horizon.
    #[arg(long, default_value_t = 30)]
    horizon: usize,
    /// Window step.
    #[arg(long, default_value_t = 1)]
    step: usize,
    /// Cap on window positions (default: all available).
    #[arg(long)]
    reps: Option<usize>,
    /// Fixed spike counts r1,r2 ('auto' detects per window).
    #[arg(long, default_value = "3,1")]
    spikes: String,
    /// Spike-mass estimator variant: consistent, verbatim, one-minus-j.
    #[arg(long, default_value = "consistent")]
    bhat_denominator: String,
    #[arg(long)]
    estimators: Option<String>,
    #[arg(long, default_value_t = 100)]
    grid_resolution: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct WeightsArgs {
    /// Returns CSV (schema: date,TICKER1,...).
    #[arg(long)]
    input: PathBuf,
    /// Estimator id.
    #[arg(long, default_value = "scre")]
    estimator: String,
    /// Fixed spike counts r1,r2, or 'auto'.
    #[arg(long, default_value = "auto")]
    spikes: String,
    #[arg(long, default_value = "consistent")]
    bhat_denominator: String,
    #[arg(long, default_value_t = 100)]
    grid_resolution: usize,
    /// Output CSV (asset,weight); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridScanArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Sample size fixing the aspect ratio J = M/n.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    grid_resolution: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config(_) | Error::InvalidModel(_) => ExitCode::from(2),
                Error::Data(_) | Error::Io(_) | Error::InsufficientData(_) => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SimulateConsistency(args) => simulate(args, true),
        Command::SimulateCompare(args) => simulate(args, false),
        Command::Backtest(args) => backtest(args),
        Command::Weights(args) => weights(args),
        Command::GridScan(args) => gridscan(args),
    }
}

fn parse_estimators(raw: &str) -> Result<Vec<EstimatorId>> {
    raw.split(',').map(|id| id.trim().parse()).collect()
}

fn summary_path(out: &Path, summary: Option<PathBuf>) -> PathBuf {
    summary.unwrap_or_else(|| {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".summary.csv");
        out.with_file_name(name)
    })
}

fn timestamp() -> String {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs().to_string())
        .unwrap_or_else(|_| "0".into())
}

fn write_manifest(
    path: Option<&Path>,
    config: ConfigFile,
    base_seed: u64,
    subset_seed: Option<u64>,
) -> Result<()> {
    if let Some(path) = path {
        let manifest = RunManifest {
            config,
            base_seed,
            subset_seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            created: timestamp(),
        };
        std::fs::write(path, manifest.render())?;
    }
    Ok(())
}

fn config_or(config: &ConfigFile, section: &str, key: &str, fallback: &str) -> String {
    config.get(section, key).unwrap_or(fallback).to_string()
}

fn simulate(args: SimulateArgs, consistency: bool) -> Result<()> {
    scrgmvp::configure_workers(args.workers)?;
    let (mut config, model) = args.model.load()?;

    let seed: u64 = match args.seed {
        Some(seed) => seed,
        None => config_or(&config, "experiment", "seed", "42")
            .parse()
            .map_err(|_| Error::Config("seed must be an integer".into()))?,
    };
    let default_reps = if consistency { "100" } else { "1000" };
    let reps: usize = match args.reps {
        Some(reps) => reps,
        None => config_or(&config, "experiment", "reps", default_reps)
            .parse()
            .map_err(|_| Error::Config("reps must be an integer".into()))?,
    };
    let n_grid_raw = args
        .n_grid
        .unwrap_or_else(|| config_or(&config, "experiment", "n-grid", "60:500:20"));
    let n_grid = parse_n_grid(&n_grid_raw)?;
    let estimators_raw = args
        .estimators
        .unwrap_or_else(|| config_or(&config, "experiment", "estimators", "scme,shre,wshre,sce,scre,oracle"));
    let estimators = parse_estimators(&estimators_raw)?;
    let grid_resolution: usize = match args.grid_resolution {
        Some(res) => res,
        None => config_or(&config, "experiment", "grid-resolution", "100")
            .parse()
            .map_err(|_| Error::Config("grid-resolution must be an integer".into()))?,
    };

    let experiment = ExperimentConfig {
        model,
        n_grid,
        reps,
        base_seed: seed,
        estimators,
        grid_resolution,
        wshre_c: 1.0,
    };
    let records =
        if consistency { run_consistency(&experiment)? } else { run_compare(&experiment)? };
    write_records_csv(&args.out, &records)?;
    write_summary_csv(&summary_path(&args.out, args.summary), &summarize(&records)?)?;

    config.set("experiment", "seed", seed.to_string());
    config.set("experiment", "reps", reps.to_string());
    config.set("experiment", "n-grid", n_grid_raw);
    config.set("experiment", "estimators", estimators_raw);
    config.set("experiment", "grid-resolution", grid_resolution.to_string());
    config.set("io", "out", args.out.display().to_string());
    write_manifest(args.manifest.as_deref(), config, seed, None)?;
    Ok(())
}

fn load_backtest_panel(args: &BacktestArgs) -> Result<ReturnsMatrix> {
    let returns = match (&args.input, &args.prices) {
        (Some(path), None) => read_returns_csv(path)?.0,
        (None, Some(path)) => log_returns(&read_price_csv(path)?)?,
        _ => {
            return Err(Error::Config(
                "provide exactly one of --input (returns) or --prices".into(),
            ))
        }
    };
    match args.subset {
        Some(k) => subset_columns(&returns, k, args.subset_seed),
        None => Ok(returns),
    }
}

fn backtest(args: BacktestArgs) -> Result<()> {
    scrgmvp::configure_workers(args.workers)?;
    let returns = load_backtest_panel(&args)?;
    let estimators = match &args.estimators {
        Some(raw) => parse_estimators(raw)?,
        None => EstimatorId::ALL.to_vec(),
    };
    let spikes =
        if args.spikes == "auto" { None } else { Some(parse_spike_counts(&args.spikes)?) };
    let bhat_mode: BhatMode = args.bhat_denominator.parse()?;

    let config = BacktestConfig {
        window: args.window,
        horizon: args.horizon,
        step: args.step,
        max_windows: args.reps,
        estimators,
        spikes,
        grid_resolution: args.grid_resolution,
        bhat_mode,
        wshre_c: 1.0,
        detect: DetectConfig::default(),
    };
    let records = run_backtest(&returns, &config)?;
    write_records_csv(&args.out, &records)?;
    write_summary_csv(&summary_path(&args.out, args.summary), &summarize(&records)?)?;

    let mut echo = ConfigFile::default();
    if let Some(input) = &args.input {
        echo.set("io", "input", input.display().to_string());
    }
    if let Some(prices) = &args.prices {
        echo.set("io", "prices", prices.display().to_string());
    }
    if let Some(subset) = args.subset {
        echo.set("experiment", "subset", subset.to_string());
    }
    echo.set("experiment", "window", args.window.to_string());
    echo.set("experiment", "horizon", args.horizon.to_string());
    echo.set("experiment", "step", args.step.to_string());
    echo.set("experiment", "spikes", &args.spikes);
    echo.set("experiment", "bhat-denominator", &args.bhat_denominator);
    echo.set("experiment", "grid-resolution", args.grid_resolution.to_string());
    echo.set("io", "out", args.out.display().to_string());
    write_manifest(
        args.manifest.as_deref(),
        echo,
        0,
        args.subset.map(|_| args.subset_seed),
    )?;
    Ok(())
}

fn weights(args: WeightsArgs) -> Result<()> {
    let (returns, _dates) = read_returns_csv(&args.input)?;
    let id: EstimatorId = args.estimator.parse()?;
    let bhat_mode: BhatMode = args.bhat_denominator.parse()?;
    let n = returns.n();
    let s = sample_covariance(&returns)?;

    let portfolio = match id {
        EstimatorId::Scme => scrgmvp::estimators::weights_scme(&s)?,
        EstimatorId::Shre => scrgmvp::estimators::weights_shre(&returns)?,
        EstimatorId::Wshre => scrgmvp::estimators::weights_wshre(&s, n, 1.0)?,
        EstimatorId::Sce | EstimatorId::Scre => {
            let spectrum = SampleSpectrum::from_sample_covariance(&s, n)?;
            let (r1, r2) = if args.spikes == "auto" {
                let (r1, r2, _) = detect_spikes_auto(&spectrum, DetectConfig::default())?;
                (r1, r2)
            } else {
                parse_spike_counts(&args.spikes)?
            };
            let estimates = SpikeEstimates::from_spectrum(&spectrum, r1, r2, bhat_mode)?;
            let corrected =
                scrgmvp::estimators::CorrectedSpectrumEstimator::data_driven(&spectrum, &estimates)?;
            if id == EstimatorId::Sce {
                scrgmvp::estimators::weights_sce(&corrected)?
            } else {
                let inputs = AsymptoticInputs::from_estimates(&estimates)?;
                let gs = grid_search(&inputs, args.grid_resolution)?;
                scrgmvp::estimators::weights_scre(&corrected, &gs.params(&inputs)?)?
            }
        }
        EstimatorId::Oracle => {
            return Err(Error::Config(
                "the oracle needs a known population model, not a returns file".into(),
            ))
        }
    };

    let mut out = String::from("asset,weight\n");
    let fallback: Vec<String> = (1..=returns.dim()).map(|i| format!("A{i}")).collect();
    let labels = returns.labels().unwrap_or(&fallback);
    for (label, weight) in labels.iter().zip(portfolio.weights().iter()) {
        out.push_str(&format!("{label},{weight:.16e}\n"));
    }
    match &args.out {
        Some(path) => std::fs::write(path, out)?,
        None => print!("{out}"),
    }
    Ok(())
}

fn gridscan(args: GridScanArgs) -> Result<()> {
    let (_config, model) = args.model.load()?;
    if args.n <= model.dim() {
        return Err(Error::Config(format!(
            "n = {} must exceed M = {} so the aspect ratio stays below 1",
            args.n,
            model.dim()
        )));
    }
    let inputs = AsymptoticInputs::from_model(&model, args.n)?;
    let rows = grid_scan(&inputs, args.grid_resolution);
    write_grid_scan_csv(&args.out, &rows)?;
    Ok(())
}
