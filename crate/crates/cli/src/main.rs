//! `rbsde-lab`: scenario runner and check-suite driver.
//!
//! Exit status: 0 when every requested assertion passes, 1 when one fails
//! (the first failure is printed as a single line on stderr), 2 on
//! configuration or runtime errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rbsde_core::scenario::{execute, RunOutput, ScenarioConfig, ScenarioRegistry};
use rbsde_core::suites::{calibrate, run_suite, DEFAULT_SEED, SUITES};

const THREADS_VAR: &str = "RBSDE_LAB_THREADS";

#[derive(Parser)]
#[command(name = "rbsde-lab", version, about = "Reflected BSDEs on finite filtered spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario (config file or built-in name) and write its reports.
    Run {
        config: String,
        /// Output directory; defaults to the config's `output`, then `reports`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario with the penalization sweep and print the convergence table.
    Sweep {
        config: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a randomized check suite (or `all`) and print its report.
    Check {
        suite: String,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Overrides every per-check instance count.
        #[arg(long)]
        instances: Option<usize>,
        /// Also write the report CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List built-in scenarios and check suites.
    List,
    /// Recompute the empirical constants and print (or write) them as JSON.
    Calibrate {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 20000)]
        instances: usize,
        #[arg(long, default_value_t = 1.5)]
        margin: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// An assertion failure, as opposed to an error.
struct Failed(String);

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .with_context(|| format!("{THREADS_VAR} must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")?;
    Ok(())
}

/// A readable file is a config; otherwise the name must be a built-in.
fn load_config(arg: &str) -> Result<(ScenarioConfig, PathBuf)> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {arg}"))?;
        let config = ScenarioConfig::from_json(&text).with_context(|| format!("in {arg}"))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        return Ok((config, dir));
    }
    let registry = ScenarioRegistry::default();
    match registry.get(arg) {
        Some(c) => Ok((c, PathBuf::from("."))),
        None => bail!(
            "`{arg}` is neither a config file nor a built-in scenario (known: {})",
            registry.names().join(", ")
        ),
    }
}

fn output_dir(cli: Option<PathBuf>, config: &ScenarioConfig) -> PathBuf {
    cli.or_else(|| config.output.clone()).unwrap_or_else(|| PathBuf::from("reports"))
}

fn finish(out: &RunOutput, dir: &Path) -> Result<Result<(), Failed>> {
    let files = out.write(dir)?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    Ok(match out.failure_cause() {
        Some(cause) => Err(Failed(cause)),
        None => Ok(()),
    })
}

fn dispatch(command: Command) -> Result<Result<(), Failed>> {
    match command {
        Command::Run { config, out } => {
            let (cfg, base) = load_config(&config)?;
            let res = execute(&cfg, &base, false)?;
            if let Some(rep) = &res.report {
                print!("{}", rep.to_csv()?);
            }
            finish(&res, &output_dir(out, &cfg))
        }
        Command::Sweep { config, out } => {
            let (cfg, base) = load_config(&config)?;
            let res = execute(&cfg, &base, true)?;
            print!("{}", res.convergence_csv.as_deref().unwrap_or_default());
            finish(&res, &output_dir(out, &cfg))
        }
        Command::Check {
            suite,
            seed,
            instances,
            out,
        } => {
            let rep = run_suite(&suite, seed, instances)?;
            let csv = rep.to_csv()?;
            print!("{csv}");
            if let Some(path) = out {
                std::fs::write(&path, &csv).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(match rep.failures().first() {
                Some(row) => Err(Failed(format!(
                    "suite `{suite}`: check `{}` failed: worst {:e} exceeds {:e}",
                    row.check, row.worst, row.threshold
                ))),
                None => Ok(()),
            })
        }
        Command::List => {
            println!("scenarios:");
            for name in ScenarioRegistry::default().names() {
                println!("  {name}");
            }
            println!("suites:");
            for name in SUITES.iter().chain(&["all"]) {
                println!("  {name}");
            }
            Ok(Ok(()))
        }
        Command::Calibrate {
            seed,
            instances,
            margin,
            out,
        } => {
            if !(margin >= 1.0) {
                bail!("--margin must be at least 1, got {margin}");
            }
            let json = calibrate(seed, instances, margin)?.to_json();
            match out {
                Some(path) => std::fs::write(&path, &json).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{json}"),
            }
            Ok(Ok(()))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = configure_threads().and_then(|()| dispatch(cli.command));
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failed(cause))) => {
            eprintln!("FAILED: {cause}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
