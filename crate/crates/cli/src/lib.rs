//! Command-line driver for the Dualformer forecaster.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error,
//! 4 training failure, 5 verification failure.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dualformer::pipeline::write_jsonl;
use dualformer::spectral::SyntheticPeriodicSignal;

use crate::commands::*;
use crate::config::{RunConfig, SCHEMA};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "dualformer", version, about = "Dual time/frequency transformer for time-series forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Key=value configuration file (see `dualformer keys`).
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set alpha=0.4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self, base: RunConfig) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load_onto(base, p)?,
            None => base,
        };
        cfg.apply_overrides(&self.set)?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes checkpoint.json, history.jsonl, metrics.jsonl
    /// and config.txt into out_dir.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score a checkpoint on one split, next to the naive last-value baseline.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset CSV; defaults to the one recorded in the checkpoint.
        #[arg(long)]
        data: Option<String>,
        /// train, val or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sliding-window periodicity weight per channel.
    Analyze {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 96)]
        window: usize,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, default_value_t = 3)]
        harmonics: usize,
        /// Use only the first N rows (0 = all).
        #[arg(long, default_value_t = 0)]
        max_rows: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the harmonic-energy lower bound on random synthetic signals.
    VerifyTheorem {
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 4.5)]
        lambda_min: f64,
        #[arg(long, default_value_t = 100.0)]
        lambda_max: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write one record per signal here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare model gradients with finite differences on a tiny config.
    Gradcheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 2)]
        windows: usize,
        /// Finite-difference step.
        #[arg(long, default_value_t = 1e-2)]
        step: f64,
        /// Largest acceptable relative error.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, hide = true)]
        corrupt_backward: Option<String>,
    },
    /// Train one model per value of alpha, k_lags or n_harmonics.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_parser = ["alpha", "k_lags", "n_harmonics"])]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit a periodic-plus-noise series as CSV.
    Synth {
        #[arg(long, default_value_t = 24)]
        period: usize,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        /// Harmonic amplitudes, comma-separated.
        #[arg(long, value_delimiter = ',', default_value = "1,0.5")]
        coeffs: Vec<f64>,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Add periodic and residual columns.
        #[arg(long)]
        components: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List every configuration key with its default.
    Keys,
}

fn sink(out: &Option<PathBuf>) -> CliResult<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::Data(format!("cannot create {}: {e}", p.display())))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit<T: Serialize>(records: &[T], out: &Option<PathBuf>) -> CliResult<()> {
    let mut w = sink(out)?;
    write_jsonl(records, &mut w)?;
    w.flush()?;
    Ok(())
}

fn line<T: Serialize>(record: &T) -> CliResult<String> {
    Ok(serde_json::to_string(record)?)
}

/// Run one parsed command.
pub fn execute(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Train { cfg } => {
            let cfg = cfg.resolve(RunConfig::default())?;
            let art = cmd_train(&cfg)?;
            for w in &art.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", line(&art.test)?);
            eprintln!(
                "best epoch {} of {}, test mse {:.6} (naive {:.6}); wrote {}",
                art.outcome.best_epoch,
                art.history.len(),
                art.test.model.mse,
                art.test.naive.mse,
                cfg.out_dir
            );
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            out,
        } => {
            let r = cmd_eval(&checkpoint, data.as_deref(), &split)?;
            emit(&[r], &out)?;
        }
        Command::Analyze {
            data,
            window,
            stride,
            harmonics,
            max_rows,
            out,
        } => {
            let mut ds = dualformer::data::load_csv(&data)
                .map_err(|e| CliError::Data(format!("{}: {e}", data.display())))?;
            if max_rows > 0 {
                ds = ds.head(max_rows)?;
            }
            emit(&cmd_analyze(&ds, window, stride, harmonics)?, &out)?;
        }
        Command::VerifyTheorem {
            count,
            lambda_min,
            lambda_max,
            seed,
            out,
        } => {
            let (records, summary) = cmd_verify_theorem(count, lambda_min, lambda_max, seed)?;
            if out.is_some() {
                emit(&records, &out)?;
            }
            println!("{}", line(&summary)?);
            if summary.violations > 0 {
                return Err(CliError::Verification(format!(
                    "{} of {} binding cases violate the bound",
                    summary.violations, summary.binding
                )));
            }
        }
        Command::Gradcheck {
            cfg,
            windows,
            step,
            tol,
            out,
            corrupt_backward,
        } => {
            let cfg = cfg.resolve(RunConfig::tiny())?;
            let groups = cmd_gradcheck(&cfg, windows, step, corrupt_backward.as_deref())?;
            emit(&groups, &out)?;
            let worst = groups
                .iter()
                .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
                .ok_or_else(|| CliError::Data("model has no parameters".into()))?;
            eprintln!("worst group {} with relative error {:.3e}", worst.group, worst.max_rel_err);
            if worst.max_rel_err > tol {
                return Err(CliError::Verification(format!(
                    "group {} exceeds tolerance {tol:e}",
                    worst.group
                )));
            }
        }
        Command::Sweep {
            cfg,
            param,
            values,
            out,
        } => {
            let cfg = cfg.resolve(RunConfig::default())?;
            let rows = cmd_sweep(&cfg, &param, &values)?;
            emit(&rows, &out)?;
            eprint!("{}", sweep_table(&rows));
        }
        Command::Synth {
            period,
            repeats,
            coeffs,
            sigma,
            seed,
            components,
            out,
        } => {
            let spec = SyntheticPeriodicSignal {
                period,
                repeats,
                harmonic_coeffs: coeffs,
                residual_sigma: sigma,
                seed,
            };
            let mut w = sink(&out)?;
            let summary = cmd_synth(&spec, components, &mut w)?;
            w.flush()?;
            eprintln!("{}", line(&summary)?);
        }
        Command::Keys => {
            for (k, v, doc) in SCHEMA {
                println!("{k} = {v}  # {doc}");
            }
        }
    }
    Ok(())
}

/// Parse arguments, run and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
