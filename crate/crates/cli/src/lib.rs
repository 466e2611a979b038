//! Command-line front end: `synth`, `cwt`, `train`, `detect` and `latent`.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{ConfigError, RunConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "gwvae",
    version,
    about = "Guided-wave anomaly detection with a convolutional VAE"
)]
pub struct Cli {
    /// Flat `key = value` file; `#` starts a comment.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (for `synth`, the corpus file).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<String>,
    /// Worker threads for CWT and batch inference.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides any configuration key.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic tone-burst corpus.
    Synth {
        #[arg(long)]
        n_baseline: Option<usize>,
        #[arg(long)]
        n_damage: Option<usize>,
    },
    /// Convert a corpus into normalized scalograms and manifests.
    Cwt {
        /// GWS1 corpus.
        #[arg(long, value_name = "PATH")]
        input: Option<String>,
        /// Also write PGM previews.
        #[arg(long)]
        pgm: bool,
    },
    /// Train on a baseline manifest and derive thresholds.
    Train {
        #[arg(long, value_name = "PATH")]
        manifest: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Classify a labeled manifest.
    Detect {
        #[arg(long, value_name = "PATH")]
        manifest: Option<String>,
        #[arg(long, value_name = "PATH")]
        model: Option<String>,
        #[arg(long, value_name = "PATH")]
        thresholds: Option<String>,
    },
    /// Export latent means.
    Latent {
        #[arg(long, value_name = "PATH")]
        manifest: Option<String>,
        #[arg(long, value_name = "PATH")]
        model: Option<String>,
    },
}

/// Applies defaults, the config file, `--set` pairs and flags, in that order.
pub fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path.display(), e))?;
        cfg.apply_text(&text)?;
    }
    for pair in &cli.set {
        cfg.apply_assignment(pair)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    let set = |slot: &mut String, value: &Option<String>| {
        if let Some(v) = value {
            slot.clone_from(v);
        }
    };
    match &cli.command {
        Command::Synth {
            n_baseline,
            n_damage,
        } => {
            set(&mut cfg.corpus, &cli.out);
            if let Some(n) = n_baseline {
                cfg.synth.n_baseline = *n;
            }
            if let Some(n) = n_damage {
                cfg.synth.n_damage = *n;
            }
        }
        other => {
            set(&mut cfg.out, &cli.out);
            match other {
                Command::Cwt { input, pgm } => {
                    set(&mut cfg.corpus, input);
                    cfg.write_pgm |= pgm;
                }
                Command::Train { manifest, epochs } => {
                    set(&mut cfg.manifest, manifest);
                    if let Some(e) = epochs {
                        cfg.epochs = *e;
                    }
                }
                Command::Detect {
                    manifest,
                    model,
                    thresholds,
                } => {
                    set(&mut cfg.manifest, manifest);
                    set(&mut cfg.model, model);
                    set(&mut cfg.thresholds, thresholds);
                }
                Command::Latent { manifest, model } => {
                    set(&mut cfg.manifest, manifest);
                    set(&mut cfg.model, model);
                }
                Command::Synth { .. } => unreachable!(),
            }
        }
    }
    Ok(cfg)
}

/// Parses `args` (program name first) and runs the selected command.
pub fn run<I, T>(args: I, log: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            write!(log, "{e}")?;
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.render().to_string())),
    };
    let cfg = resolve(&cli)?;
    match cli.command {
        Command::Synth { .. } => commands::cmd_synth(&cfg, log).map(drop),
        Command::Cwt { .. } => commands::cmd_cwt(&cfg, log).map(drop),
        Command::Train { .. } => commands::cmd_train(&cfg, log).map(drop),
        Command::Detect { .. } => commands::cmd_detect(&cfg, log).map(drop),
        Command::Latent { .. } => commands::cmd_latent(&cfg, log).map(drop),
    }
}
