//! `voidlab` experiment driver.
//!
//! Precedence for every parameter: command-line flag, then the `--config`
//! file, then the built-in default. A manifest written by a previous run is
//! itself a valid config, so `voidlab --config out/manifest.json` reruns it.

mod figure;
mod output;
mod params;
mod run;
mod validate;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use params::{Experiment, Job};

pub const FORMAT_VERSION: u64 = 1;

/// Bad flags or config contents; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "voidlab", version, about = "Simulations and analysis of slow charged-correlation decay")]
struct Cli {
    /// JSON config, or a manifest to rerun; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root of default output directories
    #[arg(long, global = true, env = "VOIDLAB_OUT", default_value = "voidlab-out")]
    out_root: PathBuf,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    #[command(flatten)]
    Job(Job),
    /// Run an experiment; same as naming the subcommand directly
    Run {
        #[command(subcommand)]
        job: Job,
    },
    /// Schema and capacity checks without running anything
    Validate {
        #[command(subcommand)]
        job: Option<Job>,
    },
}

/// Merges flags over the config file and fills defaults.
pub fn resolve(job: Option<&Job>, config: Option<&Path>) -> Result<Experiment> {
    let file = config.map(params::load_config).transpose()?;
    let command = match (job, &file) {
        (Some(j), Some((c, _))) if j.name() != c => {
            return Err(UsageError(format!(
                "config is for `{c}` but the command line asks for `{}`",
                j.name()
            ))
            .into())
        }
        (Some(j), _) => j.name().to_string(),
        (None, Some((c, _))) => c.clone(),
        (None, None) => return Err(UsageError("no subcommand given and no --config".into()).into()),
    };
    let mut merged = file.map(|(_, p)| p).unwrap_or_default();
    if let Some(j) = job {
        merged.extend(j.flags());
    }
    Experiment::resolve(&command, merged)
}

fn dispatch(cli: Cli) -> Result<()> {
    let job = match &cli.command {
        Some(Command::Validate { job }) => {
            let report = validate::diagnose(job.as_ref(), cli.config.as_deref());
            println!("{}", serde_json::to_string_pretty(&report)?);
            return Ok(());
        }
        Some(Command::Job(j)) | Some(Command::Run { job: j }) => Some(j),
        None => None,
    };
    let experiment = resolve(job, cli.config.as_deref())?;
    let dir = job
        .and_then(Job::out)
        .unwrap_or_else(|| cli.out_root.join(experiment.name()));
    let manifest = run::execute(&experiment, &dir)?;
    println!("{}", manifest.display());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<voidlab::Error>() {
            return match e {
                voidlab::Error::Capacity(_) => 3,
                voidlab::Error::Argument(_) | voidlab::Error::Domain(_) | voidlab::Error::Config(_) => 2,
                voidlab::Error::NoPlateau { .. } => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
