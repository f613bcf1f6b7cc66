use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hiercurtail::sim::{compare_runs, export_correlation, run_simulation, ControllerKind};
use hiercurtail::{RunConfig, SimError};

#[derive(Debug, Parser)]
#[command(name = "hiercurtail", version, about = "Simulate curtailment control of a PV plant")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one controller over a configured scenario and write traces and metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the controller named in the config.
        #[arg(long)]
        controller: Option<ControllerKind>,
        /// Overrides the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare the metrics of two run directories.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Write the hourly correlation matrices and clusters for a config.
    Corr {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn execute(cmd: Command) -> Result<(), SimError> {
    match cmd {
        Command::Run { config, controller, out, seed } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(kind) = controller {
                cfg.controller.kind = kind;
            }
            if let Some(dir) = out {
                cfg.output.dir = dir;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let outcome = run_simulation(&cfg)?;
            let r = &outcome.report;
            println!("controller               {}", r.controller);
            println!("steps                    {}", r.steps);
            println!("mileage mean/max (kW)    {:.3} / {:.3}", r.mileage_mean_kw, r.mileage_max_kw);
            println!("regulation (kWh)         {:.3}", r.regulation_kwh);
            let pct = |v: Option<f64>| v.map_or_else(|| "n/a".into(), |x| format!("{x:.2} %"));
            println!("commitment satisfied     {}", pct(r.commitment_satisfied_pct));
            println!("regd satisfied           {}", pct(r.regd_satisfied_pct));
            println!("output written to        {}", cfg.output.dir.display());
        }
        Command::Compare { a, b } => print!("{}", compare_runs(&a, &b)?.to_table()),
        Command::Corr { config, out } => {
            let cfg = RunConfig::load(&config)?;
            for path in export_correlation(&cfg, &out)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
