//! Flat key-value run configuration with a strict schema.
//!
//! Configs are TOML files with a single table; unknown keys are rejected and
//! every field has a documented default, so an empty file is a valid
//! full-scale configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bregman::{BregmanKind, BregmanSpec};
use crate::estimator::NoiseModel;
use crate::geometry::{make_geometry, GridSpec, ScanGeometry};
use crate::recon::FistaConfig;
use crate::select::{GammaGrid, TrialConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Poisson,
    Gaussian,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poisson" => Ok(NoiseKind::Poisson),
            "gaussian" => Ok(NoiseKind::Gaussian),
            other => Err(Error::config(format!(
                "noise: unknown model {other:?}, expected poisson or gaussian"
            ))),
        }
    }
}

/// Everything a run needs, with defaults matching the full-scale protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Projection angles (kπ/n_angles for k = 0..n_angles-1).
    pub n_angles: usize,
    /// Offsets equally spaced on [-1, 1].
    pub n_offsets: usize,
    /// Simulation (data) grid side.
    pub fine_grid: usize,
    /// Reconstruction grid side.
    pub coarse_grid: usize,
    /// Flat-field photon flux per ray.
    pub flux: f64,
    /// Dark-field level per ray.
    pub dark: f64,
    /// Counts are divided by this on load (CCD photon-yield correction).
    pub photon_scale: f64,
    pub bregman: BregmanKind,
    /// Smoothing threshold of the modified logarithm.
    pub eps_log: f64,
    /// Finite-difference step of the trace probe.
    pub eps_fd: f64,
    /// Sweep grid, `log:lo:hi:n` or `linear:lo:hi:n`.
    pub gamma_grid: String,
    pub noise: NoiseKind,
    /// Gaussian noise variance (used only with `noise = "gaussian"`).
    pub sigma2: f64,
    /// Probe vectors averaged per estimator evaluation.
    pub n_probes: usize,
    pub max_iters: usize,
    pub inner_tv_iters: usize,
    pub rel_tol: f64,
    /// Golden-section refinement of grid minimizers.
    pub refine: bool,
    /// Trials per batch.
    pub repeat: usize,
    /// Regularization weight for the `reconstruct` subcommand.
    pub gamma: f64,
    /// Toy-model noise level for the `concentration` subcommand.
    pub sigma: f64,
    /// Sampled minimizers for the `concentration` subcommand.
    pub samples: usize,
    /// Trials for the empirical coverage check.
    pub coverage_trials: usize,
    /// Monte-Carlo samples for the `check` subcommand.
    pub check_samples: usize,
    pub data_seed: u64,
    pub probe_seed: u64,
    pub trial_seed: u64,
    /// Worker threads; 0 means all cores.
    pub threads: usize,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n_angles: 512,
            n_offsets: 2048,
            fine_grid: 2048,
            coarse_grid: 512,
            flux: 1e4,
            dark: 0.0,
            photon_scale: 1.0,
            bregman: BregmanKind::Ms,
            eps_log: 0.1,
            eps_fd: 0.1,
            gamma_grid: "log:1e-5:3e-4:33".into(),
            noise: NoiseKind::Poisson,
            sigma2: 1.0,
            n_probes: 1,
            max_iters: 500,
            inner_tv_iters: 20,
            rel_tol: 1e-6,
            refine: false,
            repeat: 10,
            gamma: 1e-4,
            sigma: 0.1,
            samples: 200,
            coverage_trials: 10_000,
            check_samples: 200_000,
            data_seed: 1,
            probe_seed: 2,
            trial_seed: 3,
            threads: 0,
            out_dir: "out".into(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, key: &str| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{key}: must be positive, got {v}")))
            }
        };
        let at_least_one = |v: usize, key: &str| -> Result<()> {
            if v >= 1 {
                Ok(())
            } else {
                Err(Error::config(format!("{key}: must be at least 1")))
            }
        };
        at_least_one(self.n_angles, "n_angles")?;
        if self.n_offsets < 2 {
            return Err(Error::config("n_offsets: must be at least 2"));
        }
        at_least_one(self.fine_grid, "fine_grid")?;
        at_least_one(self.coarse_grid, "coarse_grid")?;
        if self.fine_grid < self.coarse_grid {
            return Err(Error::config(format!(
                "fine_grid: must be at least coarse_grid ({} < {})",
                self.fine_grid, self.coarse_grid
            )));
        }
        positive(self.flux, "flux")?;
        if !(self.dark >= 0.0) || !self.dark.is_finite() {
            return Err(Error::config(format!(
                "dark: must be nonnegative, got {}",
                self.dark
            )));
        }
        positive(self.photon_scale, "photon_scale")?;
        positive(self.eps_log, "eps_log")?;
        positive(self.eps_fd, "eps_fd")?;
        positive(self.sigma2, "sigma2")?;
        positive(self.rel_tol, "rel_tol")?;
        positive(self.sigma, "sigma")?;
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::config(format!(
                "gamma: must be nonnegative, got {}",
                self.gamma
            )));
        }
        at_least_one(self.n_probes, "n_probes")?;
        at_least_one(self.max_iters, "max_iters")?;
        at_least_one(self.inner_tv_iters, "inner_tv_iters")?;
        at_least_one(self.repeat, "repeat")?;
        at_least_one(self.samples, "samples")?;
        at_least_one(self.coverage_trials, "coverage_trials")?;
        at_least_one(self.check_samples, "check_samples")?;
        self.parse_gamma_grid()?;
        Ok(())
    }

    pub fn parse_gamma_grid(&self) -> Result<GammaGrid> {
        self.gamma_grid
            .parse()
            .map_err(|e| Error::config(format!("gamma_grid: {e}")))
    }

    pub fn geometry(&self) -> Result<ScanGeometry> {
        make_geometry(self.n_angles, self.n_offsets)
    }

    pub fn fine_grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.fine_grid)
    }

    pub fn coarse_grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.coarse_grid)
    }

    pub fn bregman_spec(&self) -> Result<BregmanSpec> {
        BregmanSpec::new(self.bregman, self.eps_log)
    }

    pub fn fista(&self) -> FistaConfig {
        FistaConfig {
            max_iters: self.max_iters,
            inner_tv_iters: self.inner_tv_iters,
            rel_tol: self.rel_tol,
            step: None,
        }
    }

    pub fn noise_model(&self) -> NoiseModel {
        match self.noise {
            NoiseKind::Poisson => NoiseModel::Poisson,
            NoiseKind::Gaussian => NoiseModel::Gaussian { sigma2: self.sigma2 },
        }
    }

    pub fn trial_config(&self) -> Result<TrialConfig> {
        Ok(TrialConfig {
            phantom: crate::phantom::EllipsePhantom::shepp_logan(),
            fine_grid: self.fine_grid_spec()?,
            coarse_grid: self.coarse_grid_spec()?,
            geometry: self.geometry()?,
            flux: self.flux,
            dark: self.dark,
            grid: self.parse_gamma_grid()?,
            fista: self.fista(),
            eps_fd: self.eps_fd,
            refine: self.refine,
            noiseless: false,
        })
    }
}

/// Parses a config file, rejecting unknown keys.
pub fn parse_config_file(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Canonical emitted form; reparsing it reproduces the config exactly.
pub fn emit_config(cfg: &RunConfig) -> String {
    toml::to_string(cfg).expect("config serializes")
}
