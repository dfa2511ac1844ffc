use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hbf_jcas::config::ExperimentConfig;
use hbf_jcas::eval::{cmd_beampattern, cmd_eval, cmd_gen, cmd_scaling, cmd_solve_psi, cmd_train, PatternSource, ScalingAxis};
use hbf_jcas::{Error, Result};

#[derive(Parser)]
#[command(name = "hbf-jcas", version, about = "Hybrid beamforming for joint communications and sensing")]
struct Cli {
    /// Experiment config (`key = value` lines); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded channel dataset.
    Gen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the benchmark covariance for the configured pattern.
    SolvePsi {
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn a step schedule from a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Schedule file to write.
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Sweep SNRs and channels for UPGANet, fixed-step PGA and ZF.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        psi: PathBuf,
        /// Learned schedule; falls back to the config value. Without one the
        /// UPGANet rows are skipped.
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export a beampattern: of a covariance (`--psi`) or averaged over the
    /// optimized precoders of a dataset (`--dataset`, optional `--schedule`).
    Beampattern {
        #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
        psi: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, requires = "dataset")]
        schedule: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time one outer iteration across array sizes or user counts.
    Scaling {
        /// `n` (antennas) or `k` (users).
        #[arg(long, default_value = "n")]
        axis: ScalingAxis,
        /// Comma-separated values of the swept dimension.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    match cli.command {
        Command::Gen { out } => {
            let corpus = cmd_gen(&config, &out)?;
            log::info!("wrote {} channels to {}", corpus.len(), out.display());
        }
        Command::SolvePsi { out } => {
            let cov = cmd_solve_psi(&config, &out)?;
            log::info!("alpha {} residual {} converged {}", cov.alpha, cov.residual, cov.converged);
        }
        Command::Train { dataset, out, report } => {
            let rep = cmd_train(&config, &dataset, &out, report.as_deref())?;
            log::info!(
                "validation loss {} -> {} after {} epochs",
                rep.initial_val_loss,
                rep.best_val_loss(),
                rep.epochs.len()
            );
        }
        Command::Eval {
            dataset,
            psi,
            schedule,
            out,
        } => {
            let schedule = schedule.or_else(|| config.schedule.clone());
            let res = cmd_eval(&config, &dataset, &psi, schedule.as_deref(), &out)?;
            log::info!("wrote {} rows to {}", res.records.len(), out.display());
        }
        Command::Beampattern {
            psi,
            dataset,
            schedule,
            out,
        } => {
            let source = match (psi, dataset) {
                (Some(p), _) => PatternSource::Covariance(p),
                (None, Some(d)) => PatternSource::Optimized {
                    dataset: d,
                    schedule: schedule.or_else(|| config.schedule.clone()),
                },
                (None, None) => return Err(Error::Config("beampattern needs --psi or --dataset".into())),
            };
            cmd_beampattern(&config, &source, &out)?;
        }
        Command::Scaling { axis, values, out } => {
            for row in cmd_scaling(&config, axis, &values, &out)? {
                log::info!("N={} K={}: {:.3e} s", row.n_antennas, row.n_users, row.seconds_per_iteration);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
