use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pcrm_cli::commands::{self, ReportFormat};

#[derive(Parser)]
#[command(name = "pcrm", version, about = "Precision CRM dose finding: simulation, calibration and trial conduct")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulation grid described by a TOML config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "pcrm-out")]
        out: PathBuf,
        /// Overrides `master_seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print an indifference-interval skeleton and its dose labels.
    Skeleton {
        #[arg(long, default_value_t = 0.25)]
        target: f64,
        #[arg(long, default_value_t = 6)]
        doses: usize,
        /// Prior guess of the MTD (1-based); defaults to 2, or 1 with a single dose.
        #[arg(long)]
        nu: Option<usize>,
        /// Half-width of the indifference interval.
        #[arg(long, default_value_t = 0.08)]
        delta: f64,
        #[arg(long, default_value_t = 3.0)]
        intercept: f64,
    },
    /// Run the trial-conduct HTTP service.
    Serve {
        #[arg(long, env = "PCRM_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "PCRM_DATA_DIR", default_value = "pcrm-data")]
        data_dir: PathBuf,
    },
    /// Re-render a results CSV written by `simulate`.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
        format: ReportFormat,
    },
    /// Print a config file with the full five-scenario simulation grid.
    DefaultConfig,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { config, out, seed, threads } => {
            let result = commands::simulate(&config, &out, seed, threads)?;
            print!("{}", std::fs::read_to_string(&result.summary)?);
            eprintln!("wrote {}, {} and {}", result.csv.display(), result.summary.display(), result.json.display());
        }
        Command::Skeleton { target, doses, nu, delta, intercept } => {
            let nu = nu.unwrap_or(doses.min(2));
            print!("{}", commands::skeleton_text(target, doses, nu, delta, intercept)?);
        }
        Command::Serve { port, data_dir } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(pcrm_cli::service::serve(port, data_dir))?;
        }
        Command::Report { input, format } => print!("{}", commands::render_report(&input, format)?),
        Command::DefaultConfig => print!("{}", pcrm_cli::config::DEFAULT_GRID),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
