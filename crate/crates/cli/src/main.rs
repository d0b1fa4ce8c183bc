use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use rcms::engine::{self, read_summary, write_summary, Axis, RunStatus, Scenario, SweepSpec};
use rcms::error::{ConfigError, RunError};
use rcms::srp::save_checkpoint;

mod plot;

#[derive(Parser)]
#[command(name = "rcms", version, about = "Region clustering simulator for vehicular networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write the event log and metrics.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the seed in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every (value, seed, scheme) combination along one axis.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// max_speed, tti_target or packet_count.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long)]
        values: String,
        /// Comma-separated seeds or a half-open range such as `0..5`.
        #[arg(long, default_value = "0")]
        seeds: String,
        #[arg(long, default_value = "rcms,vmasc_like,msca_like")]
        schemes: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw one SVG line chart per metric of a sweep summary.
    Plot {
        #[arg(long)]
        summary: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a scenario file without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("{0}")]
    Invariant(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("plot: {0}")]
    Plot(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(RunError::InvariantViolation { .. }) | CliError::Invariant(_) => 3,
            CliError::Run(
                RunError::Config(_) | RunError::Network(_) | RunError::Trace(_) | RunError::Srp(_),
            ) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn parse_list<T: std::str::FromStr>(field: &str, text: &str) -> Result<Vec<T>, ConfigError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| ConfigError::new(field, format!("cannot parse `{s}`")))
        })
        .collect()
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, ConfigError> {
    match text.split_once("..") {
        Some((a, b)) => {
            let bad = |s: &str| ConfigError::new("seeds", format!("cannot parse `{s}`"));
            let lo: u64 = a.trim().parse().map_err(|_| bad(a))?;
            let hi: u64 = b.trim().parse().map_err(|_| bad(b))?;
            Ok((lo..hi).collect())
        }
        None => parse_list("seeds", text),
    }
}

fn run(scenario: &Path, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let mut sc = Scenario::load(scenario)?;
    if let Some(seed) = seed {
        sc.seed = seed;
    }
    let output = engine::run(&sc)?;
    out_dir(out)?;
    let log_path = out.join("events.log");
    let mut w = create(&log_path)?;
    output.log.write_to(&mut w).map_err(io_err(&log_path))?;
    w.flush().map_err(io_err(&log_path))?;
    let metrics_path = out.join("metrics.csv");
    fs::write(&metrics_path, output.metrics_csv(sc.scheme.as_str(), sc.seed)).map_err(io_err(&metrics_path))?;
    if let Some((model, _)) = &output.trained {
        let path = out.join("checkpoint.txt");
        save_checkpoint(model, &path).map_err(io_err(&path))?;
    }
    for (name, value) in output.ledger.scalars() {
        println!("{name} = {value}");
    }
    output.into_result()?;
    Ok(())
}

fn sweep(
    scenario: &Path,
    axis: &str,
    values: &str,
    seeds: &str,
    schemes: &str,
    out: &Path,
) -> Result<(), CliError> {
    let template = Scenario::load(scenario)?;
    let spec = SweepSpec {
        axis: axis.parse::<Axis>()?,
        values: parse_list("values", values)?,
        seeds: parse_seeds(seeds)?,
        schemes: parse_list("schemes", schemes)?,
    };
    let result = engine::sweep(&template, &spec)?;
    out_dir(out)?;
    let runs_path = out.join("runs.csv");
    result.write_runs(create(&runs_path)?)?;
    let summary_path = out.join("summary.csv");
    write_summary(&result.summary(template.seed), create(&summary_path)?)?;

    let mut invariant = None;
    for r in &result.runs {
        match &r.status {
            RunStatus::Ok => {}
            RunStatus::Invariant(d) => {
                eprintln!("{} value={} seed={}: {d}", r.scheme, r.value, r.seed);
                invariant.get_or_insert_with(|| d.clone());
            }
            RunStatus::Failed(d) => eprintln!("{} value={} seed={} failed: {d}", r.scheme, r.value, r.seed),
        }
    }
    println!("{} runs written to {}", result.runs.len(), out.display());
    match invariant {
        Some(d) => Err(CliError::Invariant(d)),
        None => Ok(()),
    }
}

fn plot_summary(summary: &Path, out: &Path) -> Result<(), CliError> {
    let rows = read_summary(File::open(summary).map_err(io_err(summary))?)?;
    out_dir(out)?;
    for path in plot::charts(&rows, out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn validate(scenario: &Path) -> Result<(), CliError> {
    let sc = Scenario::load(scenario)?;
    engine::build_network(&sc)?;
    println!("ok: {} vehicles, {} s, scheme {}", sc.vehicle_count, sc.sim_duration, sc.scheme.as_str());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { scenario, seed, out } => run(scenario, *seed, out),
        Command::Sweep {
            scenario,
            axis,
            values,
            seeds,
            schemes,
            out,
        } => sweep(scenario, axis, values, seeds, schemes, out),
        Command::Plot { summary, out } => plot_summary(summary, out),
        Command::Validate { scenario } => validate(scenario),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let cfg = ConfigError::new("vehicle_count", "must be at least 1");
        assert_eq!(CliError::Config(cfg.clone()).exit_code(), 2);
        assert_eq!(CliError::Run(RunError::Config(cfg)).exit_code(), 2);
        let violation = RunError::InvariantViolation {
            count: 1,
            first: "two cores".into(),
        };
        assert_eq!(CliError::Run(violation).exit_code(), 3);
        assert_eq!(CliError::Invariant("x".into()).exit_code(), 3);
        assert_eq!(CliError::Plot("x".into()).exit_code(), 1);
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("4, 7").unwrap(), vec![4, 7]);
        assert!(parse_seeds("a..3").is_err());
        assert_eq!(parse_list::<f64>("values", "15,20").unwrap(), vec![15.0, 20.0]);
        assert_eq!(parse_list::<f64>("values", "x").unwrap_err().field, "values");
    }
}
