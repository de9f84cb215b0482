use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use compsim::scenario::LayoutScale;
use compsim_cli::commands::{self, CliError};
use compsim_cli::config::{self, ConfigError, Overrides, RunConfig, Violation};

/// Downlink multi-TRP system-level simulator: single-TRP baseline, dynamic
/// point selection and non-coherent joint transmission.
#[derive(Parser, Debug)]
#[command(name = "compsim", version)]
struct Cli {
    /// Configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run this seed only, replacing the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Layout scale: full or desk.
    #[arg(long, global = true)]
    scale: Option<LayoutScale>,
    /// Set a configuration key, e.g. `engine.warmup_ttis=500`. Repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the configured scheme for every seed.
    Run,
    /// Find the baseline arrival rate for an RU target.
    Calibrate {
        /// RU target; defaults to the configured `target_ru`.
        #[arg(long)]
        target: Option<f64>,
    },
    /// All configured schemes at all sweep targets, with a gain report.
    Sweep,
    /// Rebuild the gain report from the runs under the output directory.
    Report,
    /// Print the TRP layout as CSV.
    DumpLayout,
    /// Print per-link large-scale gains of dropped UEs as CSV.
    DumpGains {
        /// Number of UEs to drop.
        #[arg(long, default_value_t = 20)]
        count: u64,
    },
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| {
        ConfigError::Invalid(vec![Violation {
            field: "--config".into(),
            message: "a configuration file is required".into(),
        }])
    })?;
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        scale: cli.scale,
        pairs: cli.overrides.clone(),
    };
    Ok(config::load(path, &overrides)?)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Run => {
            let cfg = load(cli)?;
            let r = commands::cmd_run(&cfg)?;
            let p = &r.pooled;
            println!(
                "{} {} n_tx={} ru={:.4} mean_upt={:.4e} edge_upt={:.4e} samples={} seeds={} -> {}",
                p.scenario,
                p.scheme,
                p.n_tx,
                p.achieved_ru,
                p.mean_upt_bps,
                p.edge_upt_bps,
                p.n_samples,
                p.n_seeds,
                r.cell_dir.display()
            );
        }
        Command::Calibrate { target } => {
            let cfg = load(cli)?;
            let target = match target.or(cfg.target_ru) {
                Some(t) => t,
                None => {
                    return Err(ConfigError::Invalid(vec![Violation {
                        field: "target".into(),
                        message: "pass --target or set target_ru".into(),
                    }])
                    .into())
                }
            };
            let (rec, cached) = commands::cmd_calibrate(&cfg, target)?;
            println!(
                "{} n_tx={} target_ru={} lambda_per_s={} achieved_ru={:.4}{}",
                rec.scenario,
                rec.n_tx,
                rec.target_ru,
                rec.lambda_per_s,
                rec.achieved_ru,
                if cached { " (cached)" } else { "" }
            );
        }
        Command::Sweep => {
            let cfg = load(cli)?;
            match commands::cmd_sweep(&cfg) {
                Ok(table) => print!("{}", table.to_text()),
                Err(CliError::PartialSweep {
                    failed,
                    total,
                    messages,
                    table,
                }) => {
                    print!("{}", table.to_text());
                    return Err(CliError::PartialSweep {
                        failed,
                        total,
                        messages,
                        table,
                    });
                }
                Err(e) => return Err(e),
            }
        }
        Command::Report => {
            let dir = match (&cli.out, &cli.config) {
                (Some(out), _) => out.clone(),
                (None, Some(_)) => load(cli)?.out_dir,
                (None, None) => {
                    return Err(ConfigError::Invalid(vec![Violation {
                        field: "--out".into(),
                        message: "pass --out or --config".into(),
                    }])
                    .into())
                }
            };
            print!("{}", commands::cmd_report(&dir)?.to_text());
        }
        Command::DumpLayout => print!("{}", commands::cmd_dump_layout(&load(cli)?)),
        Command::DumpGains { count } => print!("{}", commands::cmd_dump_gains(&load(cli)?, *count)),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
