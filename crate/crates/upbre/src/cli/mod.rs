//! The `upbre` command line: argument parsing, config overlay and dispatch.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for numerical or
//! I/O failures.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;
use std::sync::OnceLock;

use clap::{Parser, Subcommand};

pub use config::{emit_config, parse_config_file, parse_config_str, NoiseKind, RunConfig};
pub use manifest::{config_hash, Manifest};

use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "upbre",
    version,
    about = "TV-regularized tomographic reconstruction with Bregman-risk parameter selection"
)]
pub struct Cli {
    /// Flat TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads (0 = all cores); falls back to UPBRE_THREADS.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Output directory.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate Poisson counts of a Shepp-Logan scan and write them with the
    /// log-corrected sinogram.
    Simulate {
        /// Data seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Flat-field flux per ray.
        #[arg(long)]
        flux: Option<f64>,
        /// Dark level per ray.
        #[arg(long)]
        dark: Option<f64>,
        /// Divide counts by this photon-yield correction.
        #[arg(long)]
        photon_scale: Option<f64>,
    },
    /// Reconstruct one image at a fixed regularization weight.
    Reconstruct {
        /// Regularization weight γ.
        #[arg(long)]
        gamma: Option<f64>,
        /// Measurement file from `simulate`; simulated on the fly if absent.
        #[arg(long)]
        counts: Option<PathBuf>,
        #[arg(long)]
        photon_scale: Option<f64>,
    },
    /// Evaluate the risk-estimator curve over a γ grid.
    Sweep {
        /// Bregman function: ms, kl or is.
        #[arg(long)]
        bregman: Option<String>,
        /// Finite-difference probe step ε.
        #[arg(long)]
        eps_fd: Option<f64>,
        /// Smoothed-log threshold ε.
        #[arg(long)]
        eps_log: Option<f64>,
        /// Grid spec, log:lo:hi:n or linear:lo:hi:n.
        #[arg(long)]
        gamma_grid: Option<String>,
        /// Noise model: poisson or gaussian.
        #[arg(long)]
        noise: Option<String>,
        /// Gaussian variance σ² (with --noise gaussian).
        #[arg(long)]
        sigma2: Option<f64>,
        /// Probe seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Probe vectors averaged per evaluation.
        #[arg(long)]
        n_probes: Option<usize>,
        #[arg(long)]
        counts: Option<PathBuf>,
    },
    /// Run repeated simulated experiments comparing the estimator minimizer
    /// against the ground-truth oracles.
    Trial {
        /// Number of trials.
        #[arg(long)]
        repeat: Option<usize>,
        /// Trial master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        bregman: Option<String>,
        #[arg(long)]
        eps_fd: Option<f64>,
        /// Golden-section refinement of every minimizer.
        #[arg(long)]
        refine: bool,
    },
    /// The concentration-of-measure toy example: closed-form bound, sampled
    /// minimizers and empirical coverage.
    Concentration {
        /// Noise level σ of the toy objective.
        #[arg(long)]
        sigma: Option<f64>,
        /// Number of sampled minimizers.
        #[arg(long)]
        samples: Option<u64>,
        /// Sample seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the Stein and Poisson identity suites.
    Check {
        /// Monte-Carlo samples for the Gaussian identity.
        #[arg(long)]
        samples: Option<usize>,
    },
}

fn thread_cap(cli_threads: Option<usize>, cfg_threads: usize) -> usize {
    cli_threads
        .or_else(|| {
            std::env::var("UPBRE_THREADS")
                .ok()
                .and_then(|s| s.parse().ok())
        })
        .unwrap_or(cfg_threads)
}

static POOL_INIT: OnceLock<()> = OnceLock::new();

fn init_threads(n: usize) {
    if n == 0 {
        return;
    }
    POOL_INIT.get_or_init(|| {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    });
}

/// Loads the config, applies flag overrides and dispatches the subcommand.
pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => parse_config_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.display().to_string();
    }
    let threads = thread_cap(cli.threads, cfg.threads);
    cfg.threads = threads;
    init_threads(threads);

    match cli.command {
        Command::Simulate {
            seed,
            flux,
            dark,
            photon_scale,
        } => {
            if let Some(s) = seed {
                cfg.data_seed = s;
            }
            if let Some(v) = flux {
                cfg.flux = v;
            }
            if let Some(v) = dark {
                cfg.dark = v;
            }
            if let Some(v) = photon_scale {
                cfg.photon_scale = v;
            }
            cfg.validate()?;
            commands::simulate(&cfg)
        }
        Command::Reconstruct {
            gamma,
            counts,
            photon_scale,
        } => {
            if let Some(v) = gamma {
                cfg.gamma = v;
            }
            if let Some(v) = photon_scale {
                cfg.photon_scale = v;
            }
            cfg.validate()?;
            commands::reconstruct(&cfg, counts.as_deref())
        }
        Command::Sweep {
            bregman,
            eps_fd,
            eps_log,
            gamma_grid,
            noise,
            sigma2,
            seed,
            n_probes,
            counts,
        } => {
            if let Some(v) = bregman {
                cfg.bregman = v.parse()?;
            }
            if let Some(v) = eps_fd {
                cfg.eps_fd = v;
            }
            if let Some(v) = eps_log {
                cfg.eps_log = v;
            }
            if let Some(v) = gamma_grid {
                cfg.gamma_grid = v;
            }
            if let Some(v) = noise {
                cfg.noise = v.parse()?;
            }
            if let Some(v) = sigma2 {
                cfg.sigma2 = v;
            }
            if let Some(s) = seed {
                cfg.probe_seed = s;
            }
            if let Some(v) = n_probes {
                cfg.n_probes = v;
            }
            cfg.validate()?;
            commands::sweep(&cfg, counts.as_deref())
        }
        Command::Trial {
            repeat,
            seed,
            bregman,
            eps_fd,
            refine,
        } => {
            if let Some(v) = repeat {
                cfg.repeat = v;
            }
            if let Some(s) = seed {
                cfg.trial_seed = s;
            }
            if let Some(v) = bregman {
                cfg.bregman = v.parse()?;
            }
            if let Some(v) = eps_fd {
                cfg.eps_fd = v;
            }
            if refine {
                cfg.refine = true;
            }
            cfg.validate()?;
            commands::trial(&cfg)
        }
        Command::Concentration {
            sigma,
            samples,
            seed,
        } => {
            if let Some(v) = sigma {
                cfg.sigma = v;
            }
            if let Some(v) = samples {
                cfg.samples = v as usize;
            }
            if let Some(s) = seed {
                cfg.data_seed = s;
            }
            cfg.validate()?;
            commands::concentration(&cfg)
        }
        Command::Check { samples } => {
            if let Some(v) = samples {
                cfg.check_samples = v;
            }
            cfg.validate()?;
            commands::check(&cfg)
        }
    }
}

/// Exit code contract: 0 success, 2 config error, 3 numerical failure.
pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) if e.is_config() => 2,
        Err(_) => 3,
    }
}

impl From<clap::Error> for Error {
    fn from(e: clap::Error) -> Self {
        Error::Config(e.to_string())
    }
}
