use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mixsel_cli::commands;
use mixsel_cli::{CliResult, RunConfig};

/// Simulation and estimation of demand under endogenous market entry.
#[derive(Parser)]
#[command(name = "mixsel", version)]
struct Cli {
    /// JSON configuration file; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set dgp.n_markets=500`. Repeatable;
    /// applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Master seed (same as `--set seed=N`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (same as `--set output_dir=DIR`).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a panel: panel.csv, truth.json, entry_summary.csv.
    Simulate,
    /// Fit the mixture entry model for each K in first_stage.k_range.
    FitEntry {
        #[arg(long)]
        panel: PathBuf,
    },
    /// Choose the number of market types by BIC.
    SelectK {
        #[arg(long)]
        panel: PathBuf,
    },
    /// Estimate demand for every configured estimator column.
    EstimateDemand {
        #[arg(long)]
        panel: PathBuf,
        /// Mixture fits written by fit-entry; missing K values are fitted.
        #[arg(long = "first-stage")]
        first_stage: Vec<PathBuf>,
    },
    /// Run the Monte Carlo experiment.
    Montecarlo,
    /// Render the result tables found in a directory as markdown.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let mut overrides = cli.set;
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(dir) = &cli.output_dir {
        overrides.push(format!("output_dir={}", serde_json::Value::String(dir.display().to_string())));
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    if cli.print_config {
        // a closed pipe (e.g. `| head`) is not an error
        let _ = writeln!(std::io::stdout(), "{}", cfg.to_json());
        return Ok(());
    }
    let manifest = match &cli.command {
        Command::Simulate => commands::cmd_simulate(&cfg)?,
        Command::FitEntry { panel } => commands::cmd_fit_entry(&cfg, panel)?,
        Command::SelectK { panel } => commands::cmd_select_k(&cfg, panel)?,
        Command::EstimateDemand { panel, first_stage } => commands::cmd_estimate_demand(&cfg, panel, first_stage)?,
        Command::Montecarlo => commands::cmd_montecarlo(&cfg)?.0,
        Command::Report { input } => {
            let (manifest, text) = commands::cmd_report(&cfg, input)?;
            let _ = write!(std::io::stdout(), "{text}");
            manifest
        }
    };
    for f in &manifest.outputs {
        eprintln!("wrote {}", cfg.output_dir.join(&f.path).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
