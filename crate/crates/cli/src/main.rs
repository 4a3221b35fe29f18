use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use cyltrack::error::Error;
use cyltrack::estimators::DEFAULT_CI_LEVEL;
use cyltrack::experiment::{
    self, connect_sample, estimate_sample, evaluate_sample, list_samples, ExperimentSpec,
    ParamsSource,
};
use cyltrack::io;

const THREADS_ENV: &str = "CYLTRACK_THREADS";

/// Simulate, estimate and reconnect particle tracks on a partially observed
/// cylinder.
#[derive(Parser)]
#[command(name = "cyltrack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate movies and write one sample bundle per replication.
    Simulate(Experiment),
    /// Run the estimators on sample bundles.
    Estimate(Batch),
    /// Reconnect exits and entries of sample bundles.
    Connect(Batch),
    /// Score reconnections against the ground truth.
    Evaluate(Batch),
    /// Run the whole pipeline over a grid and write figure tables.
    Sweep(Experiment),
}

#[derive(Args)]
struct Experiment {
    /// Experiment file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    /// Parameter sources, comma separated.
    #[arg(long, value_delimiter = ',')]
    params: Option<Vec<ParamsSource>>,
    #[arg(long)]
    k_best: Option<usize>,
    /// Worker threads (capped by CYLTRACK_THREADS).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct Batch {
    /// A sample bundle, a directory of bundles, or a `simulate` output.
    #[arg(long)]
    samples: PathBuf,
    /// Directory for the report; defaults to `--samples`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parameter sources, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "true")]
    params: Vec<ParamsSource>,
    #[arg(long, default_value_t = 1)]
    k_best: usize,
    #[arg(long, default_value_t = DEFAULT_CI_LEVEL)]
    ci_level: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Parameter(_) | Error::Config { .. }) => 2,
        Some(err) if err.is_io() => 3,
        Some(_) => 1,
        None if e.downcast_ref::<std::io::Error>().is_some() => 3,
        None => 1,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(args) => simulate(&args),
        Command::Sweep(args) => sweep(&args),
        Command::Estimate(args) => estimate(&args),
        Command::Connect(args) => connect(&args),
        Command::Evaluate(args) => evaluate(&args),
    }
}

fn load_spec(args: &Experiment) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::load(&args.config)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(n) = args.replications {
        spec.replications = n;
    }
    if let Some(params) = &args.params {
        spec.params = params.clone();
    }
    if let Some(k) = args.k_best {
        spec.k_best = k;
    }
    spec.validate().map_err(|e| Error::Config {
        path: args.config.clone(),
        message: e.to_string(),
    })?;
    Ok(spec)
}

fn threads(requested: Option<usize>) -> Result<usize> {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut n = requested.unwrap_or(available).max(1);
    if let Ok(cap) = std::env::var(THREADS_ENV) {
        let cap: usize = cap.trim().parse().ok().filter(|&c| c > 0).ok_or_else(|| {
            Error::Parameter(format!(
                "{THREADS_ENV} must be a positive integer, got `{cap}`"
            ))
        })?;
        n = n.min(cap);
    }
    Ok(n)
}

fn simulate(args: &Experiment) -> Result<()> {
    let spec = load_spec(args)?;
    let rows = experiment::write_samples(&spec, &args.out, threads(args.threads)?)?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    println!(
        "wrote {} samples to {} ({failed} failed)",
        rows.len() - failed,
        args.out.display()
    );
    Ok(())
}

fn sweep(args: &Experiment) -> Result<()> {
    let spec = load_spec(args)?;
    let records = experiment::run_sweep(&spec, threads(args.threads)?)?;
    experiment::write_sweep(&args.out, &records)?;
    let config = args.out.join("experiment.toml");
    std::fs::write(&config, spec.to_toml()).map_err(|source| Error::Io {
        path: config.clone(),
        source,
    })?;
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    println!(
        "ran {} replications into {} ({failed} failed)",
        records.len(),
        args.out.display()
    );
    Ok(())
}

fn for_each_sample<T>(
    args: &Batch,
    mut f: impl FnMut(&str, &cyltrack::simulator::ObservedSample, &io::SampleMeta) -> Vec<T>,
) -> Result<Vec<T>> {
    let samples = list_samples(&args.samples)?;
    if samples.is_empty() {
        anyhow::bail!("no sample bundles under {}", args.samples.display());
    }
    if !(args.ci_level > 0.0 && args.ci_level < 1.0) {
        return Err(Error::Parameter("ci-level must lie in (0, 1)".into()).into());
    }
    let mut rows = Vec::new();
    for (name, dir) in samples {
        let (sample, meta) = io::read_sample(&dir)?;
        rows.extend(f(&name, &sample, &meta));
    }
    Ok(rows)
}

fn report_path(args: &Batch, file: &str) -> Result<PathBuf> {
    let dir = args.out.as_deref().unwrap_or(&args.samples);
    io::create_dir(dir)?;
    Ok(Path::new(dir).join(file))
}

fn estimate(args: &Batch) -> Result<()> {
    let rows = for_each_sample(args, |name, sample, _| {
        vec![estimate_sample(name, sample, args.ci_level)]
    })?;
    let path = report_path(args, "estimates.csv")?;
    io::write_rows(&path, &rows)?;
    let failed = rows.iter().filter(|r| !r.error.is_empty()).count();
    println!(
        "estimated {} samples into {} ({failed} flagged)",
        rows.len(),
        path.display()
    );
    Ok(())
}

fn connect(args: &Batch) -> Result<()> {
    let rows = for_each_sample(args, |name, sample, meta| {
        args.params
            .iter()
            .flat_map(|&p| connect_sample(name, sample, meta, p, args.k_best, args.ci_level))
            .collect()
    })?;
    let path = report_path(args, "connections.csv")?;
    io::write_rows(&path, &rows)?;
    let failed = rows.iter().filter(|r| !r.error.is_empty()).count();
    println!(
        "wrote {} configurations to {} ({failed} flagged)",
        rows.len(),
        path.display()
    );
    Ok(())
}

fn evaluate(args: &Batch) -> Result<()> {
    let rows = for_each_sample(args, |name, sample, meta| {
        args.params
            .iter()
            .flat_map(|&p| evaluate_sample(name, sample, meta, p, args.k_best, args.ci_level))
            .collect()
    })?;
    let path = report_path(args, "scores.csv")?;
    io::write_rows(&path, &rows)?;
    let failed = rows.iter().filter(|r| !r.error.is_empty()).count();
    println!(
        "scored {} configurations into {} ({failed} flagged)",
        rows.len(),
        path.display()
    );
    Ok(())
}
