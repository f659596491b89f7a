//! Command-line front end for the semantic observer.
//!
//! Exit codes: 0 success or gate PASS, 1 operational error, 2 gate FAIL.

pub mod commands;
pub mod config;
pub mod stub;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use semobs_core::metrics::ReportFormat;
use semobs_core::time;

use crate::config::Overrides;

#[derive(Debug, Parser)]
#[command(name = "semobs", version, about = "Semantic observer: simulate, evaluate and gate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Markdown,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Markdown => ReportFormat::Markdown,
        }
    }
}

/// Options shared by the commands that run the observer.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// Observer config (TOML, or JSON with a .json extension).
    #[arg(long, env = "SEMOBS_CONFIG")]
    pub config: Option<PathBuf>,
    /// Frame manifest (JSONL, or CSV with a .csv extension).
    #[arg(long, env = "SEMOBS_MANIFEST")]
    pub manifest: PathBuf,
    /// Output directory for logs, resolved config and summary.
    #[arg(long, env = "SEMOBS_OUT", default_value = "out")]
    pub out: PathBuf,
    #[arg(long, env = "SEMOBS_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "SEMOBS_N_MIN")]
    pub n_min: Option<u32>,
    #[arg(long, env = "SEMOBS_DEADLINE")]
    pub deadline: Option<f64>,
    #[arg(long, env = "SEMOBS_RATE")]
    pub rate: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the observer in simulated time against a stochastic or replay backend.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Built-in profile key (e.g. bf16-video) or path to a profile file.
        #[arg(long, env = "SEMOBS_PROFILE")]
        profile: Option<String>,
        /// Replay the outputs recorded in a prediction log instead.
        #[arg(long, env = "SEMOBS_REPLAY", conflicts_with = "profile")]
        replay: Option<PathBuf>,
    },
    /// Score prediction logs. Several logs are treated as shards of one run
    /// unless --per-log is given.
    Evaluate {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        per_log: bool,
        /// Deadline for violation counting; defaults to the one in the log.
        #[arg(long)]
        deadline: Option<f64>,
        #[arg(long, env = "SEMOBS_FORMAT", value_enum, default_value = "json")]
        format: Format,
        /// Output file; stdout if omitted.
        #[arg(long, env = "SEMOBS_OUT")]
        out: Option<PathBuf>,
    },
    /// Check a metrics report against the safety goals.
    Gate {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, env = "SEMOBS_CONFIG")]
        config: PathBuf,
        /// Goals file (JSON list); defaults to the built-in four goals.
        #[arg(long, env = "SEMOBS_GOALS")]
        goals: Option<PathBuf>,
        #[arg(long, env = "SEMOBS_FORMAT", value_enum, default_value = "json")]
        format: Format,
        #[arg(long, env = "SEMOBS_OUT")]
        out: Option<PathBuf>,
    },
    /// Run the observer in wall-clock time against a live inference server.
    RunRemote {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, env = "SEMOBS_ENDPOINT")]
        endpoint: Option<String>,
        /// Process windows back to back instead of pacing to the stream.
        #[arg(long)]
        no_pacing: bool,
    },
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            n_min: self.n_min,
            deadline_s: self.deadline,
            rate_hz: self.rate,
            ..Overrides::default()
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Simulate { run, profile, replay } => {
            let o = Overrides {
                profile,
                replay_log: replay,
                ..run.overrides()
            };
            let cfg = config::resolve(run.config.as_deref(), &o)?;
            commands::simulate(&cfg, &run.manifest, &run.out)
        }
        Command::Evaluate {
            logs,
            per_log,
            deadline,
            format,
            out,
        } => {
            let deadline = deadline
                .map(|d| time::from_secs(d).ok_or_else(|| anyhow::anyhow!("--deadline must be nonnegative")))
                .transpose()?;
            commands::evaluate(&logs, per_log, deadline, format.into(), out.as_deref())
        }
        Command::Gate {
            report,
            config,
            goals,
            format,
            out,
        } => {
            let cfg = config::load_config(&config)?;
            commands::gate(&report, &cfg, goals.as_deref(), format.into(), out.as_deref())
        }
        Command::RunRemote {
            run,
            endpoint,
            no_pacing,
        } => {
            let o = Overrides {
                endpoint,
                no_pacing,
                ..run.overrides()
            };
            let cfg = config::resolve(run.config.as_deref(), &o)?;
            commands::run_remote(&cfg, &run.manifest, &run.out)
        }
    }
}
