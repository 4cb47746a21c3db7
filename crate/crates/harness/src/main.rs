//! `dlps` command-line tool: dataset generation, measurement simulation,
//! posterior sampling, re-scoring and the acceptance checks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dlps_harness::config::ExperimentConfig;
use dlps_harness::dataset::{make_synthetic_dataset, write_dataset, SyntheticKind, SyntheticSpec};
use dlps_harness::experiment::{evaluate, run_experiment, sample, simulate, MetricsReport};
use dlps_harness::verify;

#[derive(Parser)]
#[command(name = "dlps", version, about = "Discrete Langevin posterior sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory with images and a manifest.
    MakeData(MakeDataArgs),
    /// Simulate and store one measurement per evaluation image.
    Simulate(ConfigArgs),
    /// Sample reconstructions from stored measurements and score them.
    Sample(ConfigArgs),
    /// Re-score stored reconstructions.
    Evaluate(ConfigArgs),
    /// Simulate then sample.
    Run(ConfigArgs),
    /// Run the acceptance checks and print one PASS or FAIL line each.
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Binary,
    Color,
}

#[derive(Args)]
struct MakeDataArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "binary")]
    kind: DataKind,
    /// Quantization levels of colour fields.
    #[arg(long, default_value_t = 4)]
    levels: usize,
    #[arg(long, default_value_t = 16)]
    height: usize,
    #[arg(long, default_value_t = 16)]
    width: usize,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    #[arg(long, default_value_t = 16)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overrides the number of chains per image.
    #[arg(long)]
    chains: Option<usize>,
    /// Overrides any key, e.g. `--set sampler.outer_steps=40`. Values are
    /// parsed as TOML and fall back to plain strings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct OracleArgs {
    /// Scratch directory for the determinism check; a temporary one when absent.
    #[arg(long)]
    work: Option<PathBuf>,
}

fn parse_value(text: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

fn set_key(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).with_context(|| format!("empty key in {key:?}"))?;
    let mut node = table;
    for part in parts {
        let entry = node.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("{part:?} in {key:?} is not a table"),
        };
    }
    node.insert(last.to_string(), value);
    Ok(())
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        table.insert("seed".into(), toml::Value::Integer(i64::try_from(seed).context("seed exceeds i64")?));
    }
    if let Some(out) = &args.output {
        table.insert("output".into(), toml::Value::String(out.to_string_lossy().into_owned()));
    }
    if let Some(chains) = args.chains {
        table.insert("n_chains".into(), toml::Value::Integer(i64::try_from(chains)?));
    }
    for set in &args.sets {
        let (key, value) = set.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {set:?}"))?;
        set_key(&mut table, key.trim(), parse_value(value.trim()))?;
    }
    let merged = toml::to_string(&table)?;
    ExperimentConfig::from_toml(&merged).with_context(|| format!("invalid configuration {}", args.config.display()))
}

fn print_report(report: &MetricsReport) {
    print!("{}", report.summary());
}

fn make_data(args: &MakeDataArgs) -> Result<()> {
    let kind = match args.kind {
        DataKind::Binary => SyntheticKind::Binary,
        DataKind::Color => SyntheticKind::Color { levels: args.levels },
    };
    let spec = SyntheticSpec {
        kind,
        height: args.height,
        width: args.width,
        channels: args.channels,
        count: args.count,
        seed: args.seed,
    };
    let data = make_synthetic_dataset(&spec)?;
    let manifest = write_dataset(&data, &args.out)?;
    println!("wrote {} images, manifest {}", data.len(), manifest.display());
    Ok(())
}

fn oracle(args: &OracleArgs) -> Result<bool> {
    let scratch;
    let work: &Path = match &args.work {
        Some(dir) => dir,
        None => {
            scratch = std::env::temp_dir().join(format!("dlps-oracle-{}", std::process::id()));
            &scratch
        }
    };
    let outcomes = verify::run_all(work);
    if args.work.is_none() {
        let _ = std::fs::remove_dir_all(work);
    }
    for outcome in &outcomes {
        println!("{outcome}");
    }
    Ok(outcomes.iter().all(|o| o.passed))
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match &cli.command {
        Command::MakeData(args) => make_data(args)?,
        Command::Simulate(args) => {
            let cfg = load_config(args)?;
            let measurements = simulate(&cfg)?;
            println!("simulated {} measurements into {}", measurements.len(), cfg.output.display());
        }
        Command::Sample(args) => print_report(&sample(&load_config(args)?)?),
        Command::Evaluate(args) => print_report(&evaluate(&load_config(args)?)?),
        Command::Run(args) => print_report(&run_experiment(&load_config(args)?)?),
        Command::Oracle(args) => {
            if !oracle(args)? {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_parse_as_toml_with_string_fallback() {
        assert_eq!(parse_value("3"), toml::Value::Integer(3));
        assert_eq!(parse_value("0.5"), toml::Value::Float(0.5));
        assert_eq!(parse_value("true"), toml::Value::Boolean(true));
        assert_eq!(parse_value("cosine"), toml::Value::String("cosine".into()));
        assert_eq!(parse_value("\"x\""), toml::Value::String("x".into()));
    }

    #[test]
    fn dotted_keys_create_tables() {
        let mut t = toml::Table::new();
        set_key(&mut t, "sampler.eta", toml::Value::Float(0.1)).unwrap();
        set_key(&mut t, "seed", toml::Value::Integer(4)).unwrap();
        assert_eq!(t["sampler"]["eta"], toml::Value::Float(0.1));
        assert!(set_key(&mut t, "seed.x", toml::Value::Integer(1)).is_err());
    }
}
