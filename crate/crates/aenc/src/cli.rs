use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::config::{CeilingMethod, RunConfig};
use crate::error::{AencError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "aenc",
    version,
    about = "Multi-subject fMRI encoding models: train, score, sweep, ensemble, ceilings"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Dataset manifest (JSON).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Run configuration (JSON); flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed applied to training, sweep sampling and synthesis.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parallel sweep workers.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a manifest and every tensor it references.
    Validate(Common),
    /// Generate a synthetic dataset with planted parameters.
    Synth(Common),
    /// Train an encoder.
    Train(Common),
    /// Score a checkpoint on held-out movies.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated movie labels.
        #[arg(long, value_delimiter = ',')]
        movies: Option<Vec<String>>,
        /// Also write prediction tensors.
        #[arg(long)]
        predictions: bool,
    },
    /// Run a random hyperparameter sweep.
    Sweep(Common),
    /// Build a parcel-wise top-k ensemble, or merge scored outputs per movie.
    Ensemble {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        k: Option<usize>,
        /// Sweep output directory.
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        movies: Option<Vec<String>>,
        #[arg(long = "validation-movies", value_delimiter = ',')]
        validation_movies: Option<Vec<String>>,
        /// Scored output directories to combine by best per (subject, movie).
        #[arg(long, num_args = 1..)]
        combine: Vec<PathBuf>,
    },
    /// Split-half or cross-subject ceiling estimates.
    Ceiling {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_method)]
        method: Option<CeilingMethod>,
        #[arg(long, value_delimiter = ',')]
        movies: Option<Vec<String>>,
    },
    /// Per-parcel difference between a ceiling table and a score table.
    Gap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        feature: Option<PathBuf>,
        #[arg(long)]
        ceiling: Option<PathBuf>,
    },
}

fn parse_method(s: &str) -> std::result::Result<CeilingMethod, String> {
    match s {
        "split-half" => Ok(CeilingMethod::SplitHalf),
        "cross" => Ok(CeilingMethod::Cross),
        _ => Err(format!("unknown method `{s}` (split-half | cross)")),
    }
}

/// Fully resolved invocation.
pub struct Invocation {
    pub config: RunConfig,
    pub out: Option<PathBuf>,
    pub force: bool,
}

impl Invocation {
    pub fn out(&self) -> Result<&std::path::Path> {
        self.out
            .as_deref()
            .ok_or_else(|| AencError::Usage("--out is required".into()))
    }
}

fn resolve(common: &Common) -> Result<Invocation> {
    let mut config = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = &common.manifest {
        config.manifest = Some(m.clone());
    }
    if let Some(seed) = common.seed {
        config.set_seed(seed);
    }
    if let Some(w) = common.workers {
        config.workers = w;
    }
    if let Some(m) = &config.manifest {
        config.manifest = Some(std::path::absolute(m).map_err(AencError::io(m))?);
    }
    Ok(Invocation {
        config,
        out: common.out.clone(),
        force: common.force,
    })
}

fn dispatch(command: Command) -> Result<String> {
    match command {
        Command::Validate(c) => commands::validate(resolve(&c)?),
        Command::Synth(c) => commands::synth(resolve(&c)?),
        Command::Train(c) => commands::train(resolve(&c)?),
        Command::Score {
            common,
            checkpoint,
            movies,
            predictions,
        } => {
            let mut inv = resolve(&common)?;
            if checkpoint.is_some() {
                inv.config.score.checkpoint = checkpoint;
            }
            if movies.is_some() {
                inv.config.score.movies = movies;
            }
            inv.config.score.predictions |= predictions;
            commands::score(inv)
        }
        Command::Sweep(c) => commands::sweep(resolve(&c)?),
        Command::Ensemble {
            common,
            k,
            records,
            movies,
            validation_movies,
            combine,
        } => {
            let mut inv = resolve(&common)?;
            let e = &mut inv.config.ensemble;
            e.k = k.unwrap_or(e.k);
            if records.is_some() {
                e.records = records;
            }
            if movies.is_some() {
                e.movies = movies;
            }
            if validation_movies.is_some() {
                e.validation_movies = validation_movies;
            }
            if !combine.is_empty() {
                e.combine = combine;
            }
            commands::ensemble(inv)
        }
        Command::Ceiling {
            common,
            method,
            movies,
        } => {
            let mut inv = resolve(&common)?;
            if let Some(m) = method {
                inv.config.ceiling.method = m;
            }
            if movies.is_some() {
                inv.config.ceiling.movies = movies;
            }
            commands::ceiling(inv)
        }
        Command::Gap {
            common,
            feature,
            ceiling,
        } => {
            let mut inv = resolve(&common)?;
            if feature.is_some() {
                inv.config.gap.feature = feature;
            }
            if ceiling.is_some() {
                inv.config.gap.ceiling = ceiling;
            }
            commands::gap(inv)
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 success, 1 validation failure, 2 runtime error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
