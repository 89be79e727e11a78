use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use harmonic_lse::asymptotics::{plug_in_gamma, GammaMode, SelfConvolution, DEFAULT_J_MAX};
use harmonic_lse::diagrams::{census, CorrelationMatrix};
use harmonic_lse::estimator::{estimate, SeparationPolicy};
use harmonic_lse::harness::{run_replications, ExperimentConfig};
use harmonic_lse::simulate::{observe, HarmonicModel, ObserveOptions, SamplePath, SamplingGrid};
use harmonic_lse::spectral::NoiseSpec;
use harmonic_lse::subordination::{TransformConfig, TransformSpec};
use harmonic_lse::{Error, Result};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "harmonic-lse",
    version,
    about = "Hidden periodicities in subordinated long-memory noise"
)]
struct Cli {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for Monte Carlo runs.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one observed path x(t) = g(t) + G(xi(t)).
    Simulate(SimulateArgs),
    /// Least-squares estimate of the harmonics of a sampled path.
    Estimate(EstimateArgs),
    /// Asymptotic covariance Gamma_k of every harmonic.
    Asymptotics(AsymptoticsArgs),
    /// Monte Carlo experiment from a configuration file.
    Montecarlo(MontecarloArgs),
    /// Hermite product moment and diagram census.
    Moments(MomentsArgs),
}

#[derive(Args)]
struct ModelInputs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    noise: PathBuf,
    #[arg(long)]
    transform: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    inputs: ModelInputs,
    #[arg(long = "horizon", short = 'T')]
    horizon: f64,
    #[arg(long)]
    step: f64,
    #[arg(long, default_value_t = 0.0)]
    origin: f64,
    /// Also write the signal and noise columns.
    #[arg(long)]
    components: bool,
    #[arg(long)]
    allow_rank_violation: bool,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    n_harmonics: usize,
    /// Frequency band as `lo,hi`.
    #[arg(long, value_parser = parse_band)]
    band: (f64, f64),
    /// Model file with the true parameters; adds normalized errors.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
}

#[derive(Args)]
struct AsymptoticsArgs {
    #[command(flatten)]
    inputs: ModelInputs,
    #[arg(long, default_value_t = GammaMode::Derived)]
    mode: GammaMode,
    #[arg(long, default_value_t = DEFAULT_J_MAX)]
    j_max: usize,
}

#[derive(Args)]
struct MontecarloArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct MomentsArgs {
    /// Hermite orders, e.g. `2,2,3,3`.
    #[arg(long, value_delimiter = ',', required = true)]
    orders: Vec<usize>,
    /// CSV file with the correlation matrix rows.
    #[arg(long, conflicts_with = "uniform")]
    corr: Option<PathBuf>,
    /// Equal off-diagonal correlation.
    #[arg(long)]
    uniform: Option<f64>,
}

fn parse_band(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected `lo,hi`")?;
    let lo = lo.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let hi = hi.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((lo, hi))
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Config(e.to_string()))
}

struct Loaded {
    model: HarmonicModel,
    noise: NoiseSpec,
    transform: TransformSpec,
}

fn load_inputs(inputs: &ModelInputs) -> Result<Loaded> {
    let raw: TransformConfig = read_toml(&inputs.transform)?;
    let base = inputs.transform.parent().unwrap_or(Path::new("."));
    Ok(Loaded {
        model: read_toml(&inputs.model)?,
        noise: read_toml(&inputs.noise)?,
        transform: TransformSpec::from_config(&raw, base)?,
    })
}

/// Writes `text` to `<out>/<name>` with `--out`, otherwise to stdout.
fn emit(out: Option<&Path>, name: &str, text: &str) -> Result<()> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(name);
            std::fs::write(&path, text)?;
            log::info!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let inputs = load_inputs(&args.inputs)?;
    let grid = SamplingGrid::new(args.horizon, args.step)?.with_origin(args.origin);
    inputs.model.check_nyquist(&grid)?;
    let options = ObserveOptions {
        keep_components: args.components,
        allow_rank_violation: args.allow_rank_violation,
    };
    let path = observe(
        &inputs.model,
        &inputs.noise,
        &inputs.transform,
        &grid,
        cli.seed.unwrap_or(0),
        options,
    )?;
    let mut buf = Vec::new();
    path.write_csv(&mut buf)?;
    emit(cli.out.as_deref(), "path.csv", &String::from_utf8_lossy(&buf))
}

fn estimate_cmd(cli: &Cli, args: &EstimateArgs) -> Result<()> {
    let path = SamplePath::load(&args.input)?;
    let policy = SeparationPolicy {
        constant: args.separation,
    };
    let mut result = estimate(&path, args.n_harmonics, args.band, &policy)?;
    if let Some(truth) = &args.truth {
        let model: HarmonicModel = read_toml(truth)?;
        result = result.with_truth(model.harmonics())?;
    }
    if !result.converged {
        log::warn!(
            "refinement stopped after {} iterations with gradient {:e}",
            result.iterations,
            result.gradient_norm
        );
    }
    emit(cli.out.as_deref(), "estimate.toml", &to_toml(&result)?)
}

fn asymptotics(cli: &Cli, args: &AsymptoticsArgs) -> Result<()> {
    let inputs = load_inputs(&args.inputs)?;
    let conv = SelfConvolution::new(inputs.noise);
    let report = plug_in_gamma(
        inputs.model.harmonics(),
        &inputs.transform,
        &conv,
        args.j_max,
        args.mode,
    )?;
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir)?;
        report.write_csv(std::fs::File::create(dir.join("gamma.csv"))?)?;
    }
    emit(cli.out.as_deref(), "gamma.toml", &to_toml(&report)?)
}

#[derive(Serialize)]
struct Runtime {
    workers: usize,
    seconds: f64,
}

fn montecarlo(cli: &Cli, args: &MontecarloArgs) -> Result<()> {
    let mut exp = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = cli.seed {
        exp.config.seed = seed;
    }
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let out = cli
        .out
        .clone()
        .or_else(|| exp.config.output.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let start = Instant::now();
    let report = run_replications(&exp, workers)?;
    let seconds = start.elapsed().as_secs_f64();
    report.write(&out)?;
    // timing lives apart from the report so that reports stay reproducible
    std::fs::write(out.join("runtime.toml"), to_toml(&Runtime { workers, seconds })?)?;
    for h in &report.horizons {
        log::info!(
            "T = {}: {} of {} replications used, {} non-converged, {} failed",
            h.horizon,
            h.included,
            h.replications,
            h.non_converged,
            h.failed
        );
    }
    log::info!("report written to {} in {seconds:.1}s", out.display());
    Ok(())
}

fn read_correlation(path: &Path) -> Result<CorrelationMatrix> {
    let text = std::fs::read_to_string(path)?;
    let rows = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    CorrelationMatrix::new(rows)
}

fn moments(cli: &Cli, args: &MomentsArgs) -> Result<()> {
    let corr = match (&args.corr, args.uniform) {
        (Some(path), _) => read_correlation(path)?,
        (None, Some(r)) => CorrelationMatrix::uniform(args.orders.len(), r)?,
        (None, None) => return Err(Error::Config("one of --corr or --uniform is required".into())),
    };
    emit(
        cli.out.as_deref(),
        "moments.toml",
        &to_toml(&census(&args.orders, &corr)?)?,
    )
}

fn exit_code(e: &Error) -> u8 {
    if e.is_validation() || matches!(e, Error::Io(_)) {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(&cli, a),
        Command::Estimate(a) => estimate_cmd(&cli, a),
        Command::Asymptotics(a) => asymptotics(&cli, a),
        Command::Montecarlo(a) => montecarlo(&cli, a),
        Command::Moments(a) => moments(&cli, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
