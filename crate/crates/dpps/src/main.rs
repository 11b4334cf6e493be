//! Command-line entry points for the simulator.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dpps::harness::{
    calibrate, check_invariants, run_experiment, run_sensitivity_sweep, ExperimentConfig,
    HarnessError, RunOptions, SweepAxis,
};

#[derive(Parser)]
#[command(
    name = "dpps",
    about = "Differentially private perturbed push-sum simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override a config entry, e.g. `--set topology.d=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, HarnessError> {
        ExperimentConfig::from_file_with_overrides(&self.config, &self.set)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv / summary.json.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run one experiment per axis value with matched seeds; writes sweep.csv.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// One of: shared_layers, out_degree, n_nodes.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values, e.g. `2,4,6,8`.
        #[arg(long)]
        values: String,
    },
    /// Fit the sensitivity-estimate constants on a noiseless run of the
    /// config; writes calibration.json.
    Calibrate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Safety margin applied on top of the fitted constant.
        #[arg(long, default_value_t = 0.1)]
        headroom: f64,
    },
    /// Parse and validate a config, printing warnings.
    ValidateConfig {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the config at reduced rounds with every per-round invariant
    /// asserted; exits 2 on the first violation.
    CheckInvariants {
        #[command(flatten)]
        config: ConfigArgs,
        /// Round cap (defaults to min(config rounds, 100)).
        #[arg(long)]
        rounds: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { config } => {
            let cfg = config.load()?;
            let artifacts = run_experiment(&cfg, &RunOptions::default())?;
            for warning in &artifacts.warnings {
                eprintln!("warning: {warning}");
            }
            let s = &artifacts.summary;
            println!(
                "final_acc={:.4} ras={:.6} peak_sensitivity={:.6} rounds={} wall_time={:.2}s",
                s.final_acc, s.ras, s.peak_sensitivity, s.total_rounds, s.wall_time_seconds
            );
            println!(
                "wrote {} and {}",
                cfg.output_dir.join("metrics.csv").display(),
                cfg.output_dir.join("summary.json").display()
            );
            Ok(())
        }
        Command::Sweep {
            config,
            axis,
            values,
        } => {
            let cfg = config.load()?;
            let axis = SweepAxis::parse(&axis).ok_or_else(|| HarnessError::Validation {
                key: "--axis".to_string(),
                message: format!(
                    "unknown axis `{axis}`; expected shared_layers, out_degree or n_nodes"
                ),
            })?;
            let parsed: Result<Vec<u64>, _> =
                values.split(',').map(|v| v.trim().parse::<u64>()).collect();
            let parsed = parsed.map_err(|e| HarnessError::Validation {
                key: "--values".to_string(),
                message: e.to_string(),
            })?;
            let rows = run_sensitivity_sweep(&cfg, axis, &parsed, true)?;
            println!("axis={}", axis.name());
            for row in &rows {
                println!(
                    "value={} ras={:.6} peak_sensitivity={:.6}",
                    row.axis_value, row.ras, row.peak_sensitivity
                );
            }
            println!("wrote {}", cfg.output_dir.join("sweep.csv").display());
            Ok(())
        }
        Command::Calibrate { config, headroom } => {
            let cfg = config.load()?;
            let fit = calibrate(&cfg, headroom)?;
            println!(
                "c_prime={:.6} lambda={:.2} rounds_used={}",
                fit.c_prime, fit.lambda, fit.rounds_used
            );
            let path = cfg.output_dir.join("calibration.json");
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).ok();
            }
            std::fs::write(
                &path,
                serde_json::to_string_pretty(&fit).expect("serializable"),
            )
            .map_err(|e| HarnessError::OutputIo {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::ValidateConfig { config } => {
            let cfg = config.load()?;
            let warnings = cfg.validate()?;
            for warning in &warnings {
                println!("warning: {warning}");
            }
            println!("config ok ({} warnings)", warnings.len());
            Ok(())
        }
        Command::CheckInvariants { config, rounds } => {
            let cfg = config.load()?;
            let artifacts = check_invariants(&cfg, rounds)?;
            println!(
                "all per-round invariants held for {} rounds (ras={:.6})",
                artifacts.summary.total_rounds, artifacts.summary.ras
            );
            Ok(())
        }
    }
}
