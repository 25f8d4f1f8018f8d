use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use isospin::error::Error;
use isospin::scenario::{self, Source};

#[derive(Parser)]
#[command(name = "isospin", version, about = "Run isospin scenario files")]
struct Cli {
    /// error, warn, info, debug or trace
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,

    /// Worker threads for sweeps and parallel kernels (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one scenario into an output directory.
    Run(RunArgs),
    /// Execute a scenario once per value of one scalar key.
    Sweep(SweepArgs),
    /// List the bundled scenarios.
    List,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file, or `bundle:scenarios/<name>.scn`.
    #[arg(long)]
    scenario: String,
    #[arg(long, required_unless_present = "validate_only")]
    out: Option<PathBuf>,
    /// Load and validate every input, then stop.
    #[arg(long)]
    validate_only: bool,
    /// Override a numeric key, e.g. `--set field.bz=210`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    scenario: String,
    /// Dotted scenario key, e.g. `field.bz` or `params.polarization`.
    #[arg(long)]
    axis: String,
    /// Comma-separated values.
    #[arg(long, allow_hyphen_values = true)]
    values: String,
    #[arg(long)]
    out: PathBuf,
}

fn bad_arg(flag: &str, field: &str, message: impl Into<String>) -> Error {
    Error::Validation {
        record: flag.to_string(),
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_overrides(items: &[String]) -> Result<Vec<(String, f64)>, Error> {
    items
        .iter()
        .map(|item| {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| bad_arg("--set", item, "expected KEY=VALUE"))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| bad_arg("--set", key, format!("not a number: {value}")))?;
            Ok((key.trim().to_string(), v))
        })
        .collect()
}

fn parse_values(text: &str) -> Result<Vec<f64>, Error> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| bad_arg("--values", s, "not a number"))
        })
        .collect()
}

fn fail(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(scenario::exit_code(err) as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }

    match cli.command {
        Command::List => {
            for name in scenario::bundled_scenarios() {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
        Command::Run(args) => {
            let source = Source::parse(&args.scenario, None);
            let overrides = match parse_overrides(&args.set) {
                Ok(o) => o,
                Err(e) => return fail(&e),
            };
            if args.validate_only {
                return match scenario::prepare(&source, &overrides) {
                    Ok(_) => {
                        println!("{}: valid", source.describe());
                        ExitCode::SUCCESS
                    }
                    Err(e) => fail(&e),
                };
            }
            let out = args.out.expect("clap enforces --out");
            let summary = scenario::run(&source, &out, &overrides);
            match &summary.error {
                Some(e) => eprintln!("error: {e}"),
                None => {
                    for f in &summary.outputs {
                        println!("{}", out.join(f).display());
                    }
                }
            }
            ExitCode::from(summary.exit_code as u8)
        }
        Command::Sweep(args) => {
            let source = Source::parse(&args.scenario, None);
            let values = match parse_values(&args.values) {
                Ok(v) => v,
                Err(e) => return fail(&e),
            };
            match scenario::sweep(&source, &args.axis, &values, &args.out) {
                Ok(points) => {
                    let failed = points.iter().filter(|p| p.exit_code != 0).count();
                    println!("{} points, {failed} failed; index at {}", points.len(), args.out.join("index.csv").display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
    }
}
