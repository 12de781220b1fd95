use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ope_lab::error::OpeError;
use ope_lab::sweep::{emit_report, parse_config, run_sweep, SweepConfig};

/// Off-policy evaluation experiments for large action spaces.
#[derive(Parser)]
#[command(name = "ope-lab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Path to the TOML run configuration.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the estimator sweep and write CSV, summary, and SVG artifacts.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        /// Output directory for results.csv, summary.txt, and charts.
        #[arg(long)]
        out: PathBuf,
        /// Override the action-space grid, e.g. 10,100,1000.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<usize>>,
        /// Override the replication count.
        #[arg(long)]
        replications: Option<usize>,
        /// Override the base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the estimator list, e.g. dm,ips,dr,mips,mdr.
        #[arg(long, value_delimiter = ',')]
        estimators: Option<Vec<String>>,
    },
    /// Parse and validate a configuration, reporting any problems.
    Validate {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Print the oracle policy value for every grid cell.
    Oracle {
        #[command(flatten)]
        config: ConfigArg,
    },
}

fn exit_code_for(err: &OpeError) -> u8 {
    match err {
        OpeError::Validation(_) => 1,
        OpeError::Io(_) => 3,
        _ => 2,
    }
}

fn load_config(path: &PathBuf) -> Result<SweepConfig, OpeError> {
    let mut config = parse_config(path)?;
    if let Ok(seed) = std::env::var("OPE_LAB_SEED") {
        let seed: u64 = seed.parse().map_err(|_| {
            OpeError::Validation(format!("OPE_LAB_SEED must be an unsigned integer, got '{seed}'"))
        })?;
        config.base_seed = seed;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), OpeError> {
    match cli.command {
        Command::Run {
            config,
            out,
            grid,
            replications,
            seed,
            estimators,
        } => {
            let mut cfg = load_config(&config.config)?;
            if let Some(grid) = grid {
                cfg.action_space_grid = grid;
            }
            if let Some(r) = replications {
                cfg.n_replications = r;
            }
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            if let Some(est) = estimators {
                cfg.estimators = est;
            }
            cfg.validate()?;
            let table = run_sweep(&cfg)?;
            let paths = emit_report(&table, &out)?;
            for p in paths {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Validate { config } => {
            load_config(&config.config)?;
            println!("ok");
            Ok(())
        }
        Command::Oracle { config } => {
            let cfg = load_config(&config.config)?;
            println!("n_actions,true_value,standard_error");
            for &a in &cfg.action_space_grid {
                let v = ope_lab::sweep::cell_true_value(&cfg, a)?;
                println!("{a},{},{}", v.value, v.standard_error);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
