use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use reduction_lab::acceptance::{parse_ids, run_criteria};
use reduction_lab::commands::{self, OutputFile};
use reduction_lab::config::{parse_config, ModeName, Overrides, RunConfig};
use reduction_lab::output::{table, verdict_table};
use reduction_lab::runner::{run_parallel, thread_count};

/// Simulation and verification of energy-driven stochastic state reduction.
#[derive(Debug, Parser)]
#[command(name = "reduction-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write one trajectory per path kind as CSV.
    Simulate(RunArgs),
    /// Run a Monte Carlo ensemble; exits nonzero unless every check passes.
    Ensemble(RunArgs),
    /// Integrate the mean-state equation with RK4.
    Lindblad(RunArgs),
    /// Print a claim/measured/threshold/verdict table. Without `--config`
    /// runs the acceptance criteria; `--checks` then selects criterion numbers.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Base seed; overrides the file.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of sample paths; overrides the file.
    #[arg(long)]
    paths: Option<usize>,
    /// Comma-separated check names; overrides the file.
    #[arg(long, value_delimiter = ',')]
    checks: Option<Vec<String>>,
    /// Path source.
    #[arg(long, value_parser = ["sde", "closed-form", "both"])]
    mode: Option<String>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the file, defaults to the current directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

fn load(path: &Path, common: &Common, out: Option<&PathBuf>) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut config = parse_config(&text).with_context(|| format!("in {}", path.display()))?;
    let mode = common.mode.as_deref().map(str::parse::<ModeName>).transpose().map_err(anyhow::Error::msg)?;
    config.apply(&Overrides {
        seed: common.seed,
        paths: common.paths,
        mode,
        checks: common.checks.clone(),
        out: out.cloned(),
    });
    Ok(config)
}

fn write_all(config: &RunConfig, files: &[OutputFile]) -> Result<()> {
    let dir = config.output.dir.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for f in files {
        let path = dir.join(&f.name);
        fs::write(&path, &f.contents).with_context(|| format!("writing {}", path.display()))?;
        println!("{}", path.display());
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate(a) => {
            let config = load(&a.config, &a.common, a.out.as_ref())?;
            let files = commands::simulate(&config.resolve()?)?;
            write_all(&config, &files)?;
            Ok(true)
        }
        Command::Ensemble(a) => {
            let config = load(&a.config, &a.common, a.out.as_ref())?;
            let out = commands::ensemble(&config, &config.resolve()?, thread_count())?;
            write_all(&config, &out.files)?;
            Ok(out.all_passed)
        }
        Command::Lindblad(a) => {
            let config = load(&a.config, &a.common, a.out.as_ref())?;
            let file = commands::lindblad(&config.resolve()?)?;
            write_all(&config, &[file])?;
            Ok(true)
        }
        Command::Verify(a) => match &a.config {
            Some(path) => {
                let config = load(path, &a.common, None)?;
                let summary = run_parallel(config.resolve()?.ensemble_config(), thread_count())?;
                print!("{}", verdict_table(&summary));
                Ok(summary.all_passed())
            }
            None => {
                let ids = parse_ids(&a.common.checks.unwrap_or_default().join(","))?;
                let results = run_criteria(&ids, |r| eprintln!("{}", r.line()));
                let rows: Vec<Vec<String>> = results
                    .iter()
                    .map(|r| {
                        vec![
                            format!("{}. {}", r.id, r.claim),
                            r.measured.clone(),
                            r.threshold.clone(),
                            String::from(if r.passed { "PASS" } else { "FAIL" }),
                        ]
                    })
                    .collect();
                print!("{}", table(&["claim", "measured", "threshold", "verdict"], &rows));
                Ok(results.iter().all(|r| r.passed))
            }
        },
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
