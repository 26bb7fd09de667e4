use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ftaic::harness::{save_csv, write_comparison_csv};
use ftaic::{run_comparison, Artifacts, Mode, Result, ScenarioConfig};

#[derive(Parser)]
#[command(version, about = "Fault-tolerant active inference arm simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its time series.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory written by `calibrate`; fitted on demand if omitted.
        #[arg(long)]
        artifacts: Option<PathBuf>,
    },
    /// Run every mode over several seeds and write the MSE table.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the camera model and calibrate the FDI monitors.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, mode, seed, out, artifacts } => {
            let mut cfg = ScenarioConfig::load(&config)?;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out = out
                .or_else(|| cfg.output.clone())
                .ok_or_else(|| ftaic::Error::Config("no output path (use --out or `output`)".into()))?;
            let artifacts = match artifacts {
                Some(dir) => Artifacts::load(&dir)?,
                None => Artifacts::prepare(&cfg)?,
            };
            let result = ftaic::harness::run_with(&cfg, &artifacts)?;
            save_csv(&result.records, &out)?;
            let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4e}")).unwrap_or_else(|| "-".into());
            println!(
                "{}: faulty-joint MSE {}, healthy-joint MSE {}, verdict {} -> {}",
                cfg.mode,
                fmt(result.mse.faulty),
                fmt(result.mse.healthy),
                result.verdict.isolated_source.as_str(),
                out.display()
            );
        }
        Command::Compare { config, seeds, out } => {
            let cfg = ScenarioConfig::load(&config)?;
            let seeds: Vec<u64> = (0..seeds).map(|i| cfg.seed + i).collect();
            let rows = run_comparison(&cfg, &Mode::ALL, &seeds)?;
            write_comparison_csv(&rows, std::io::stdout().lock())?;
            write_comparison_csv(&rows, std::fs::File::create(&out)?)?;
        }
        Command::Calibrate { config, out } => {
            let cfg = ScenarioConfig::load(&config)?;
            Artifacts::prepare(&cfg)?.save(&out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}
