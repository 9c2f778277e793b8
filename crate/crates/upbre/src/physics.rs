//! Beer-Lambert transmission model: expected photon counts, Poisson count
//! simulation and the flat/dark log-correction of counts to Radon data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::geometry::{Image, ScanGeometry};
use crate::radon::{project, Sinogram};
use crate::{Error, Result};

/// Corrected counts below this floor are clamped before the logarithm, so
/// the corrected sinogram stays finite on rays where noise pushed the count
/// at or below the dark level. Half a photon keeps the bias bounded.
pub const CLAMP_FLOOR: f64 = 0.5;

/// Largest admissible Poisson mean for count simulation.
pub const MAX_POISSON_MEAN: f64 = 1e15;

/// Per-ray photon data of one scan: counts `b`, flat field `f`, dark field `d`.
///
/// Counts are stored as reals so that probe-perturbed evaluations `b + εω`
/// off the integer lattice remain representable.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub counts: Vec<f64>,
    pub flat: Vec<f64>,
    pub dark: Vec<f64>,
}

impl MeasurementSet {
    pub fn new(counts: Vec<f64>, flat: Vec<f64>, dark: Vec<f64>) -> Result<Self> {
        if counts.len() != flat.len() || counts.len() != dark.len() {
            return Err(Error::invalid("counts, flat and dark must share one length"));
        }
        if !flat.iter().all(|&f| f > 0.0 && f.is_finite()) {
            return Err(Error::invalid("flat field must be strictly positive"));
        }
        if !dark.iter().all(|&d| d >= 0.0 && d.is_finite()) {
            return Err(Error::invalid("dark field must be nonnegative"));
        }
        if !counts.iter().all(|&c| c.is_finite()) {
            return Err(Error::invalid("counts must be finite"));
        }
        Ok(MeasurementSet { counts, flat, dark })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Divides raw counts by `scale`, e.g. the 6.5 visible-to-X-ray photon
    /// yield of a scintillator-coupled CCD. Flat and dark fields are expected
    /// to already be in corrected units.
    pub fn scale_counts(&mut self, scale: f64) -> Result<()> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid("photon scale must be positive"));
        }
        for c in &mut self.counts {
            *c /= scale;
        }
        Ok(())
    }

    /// Replaces the stored counts, e.g. with a probe-perturbed copy.
    pub fn with_counts(&self, counts: Vec<f64>) -> Result<Self> {
        MeasurementSet::new(counts, self.flat.clone(), self.dark.clone())
    }
}

/// The nonlinear forward operator of a transmission scan over a fixed
/// geometry and calibration: `A(x) = d + f · exp(-Rx)` componentwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardModel {
    geometry: ScanGeometry,
    flat: Vec<f64>,
    dark: Vec<f64>,
}

impl ForwardModel {
    pub fn new(geometry: ScanGeometry, flat: Vec<f64>, dark: Vec<f64>) -> Result<Self> {
        let m = geometry.n_rays();
        if flat.len() != m || dark.len() != m {
            return Err(Error::invalid("flat/dark length must equal the ray count"));
        }
        if !flat.iter().all(|&f| f > 0.0 && f.is_finite()) {
            return Err(Error::invalid("flat field must be strictly positive"));
        }
        if !dark.iter().all(|&d| d >= 0.0 && d.is_finite()) {
            return Err(Error::invalid("dark field must be nonnegative"));
        }
        Ok(ForwardModel { geometry, flat, dark })
    }

    /// Constant flat flux and dark level on every ray.
    pub fn uniform(geometry: ScanGeometry, flux: f64, dark_level: f64) -> Result<Self> {
        let m = geometry.n_rays();
        ForwardModel::new(geometry, vec![flux; m], vec![dark_level; m])
    }

    pub fn geometry(&self) -> &ScanGeometry {
        &self.geometry
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn dark(&self) -> &[f64] {
        &self.dark
    }

    /// Expected counts `A(x)_i = d_i + f_i e^{-(Rx)_i}`.
    pub fn forward(&self, x: &Image) -> Vec<f64> {
        let rx = project(x, &self.geometry);
        rx.values()
            .iter()
            .zip(self.flat.iter().zip(&self.dark))
            .map(|(&r, (&f, &d))| d + f * (-r).exp())
            .collect()
    }

    /// Draws one Poisson count per ray around `A(x_true)`.
    ///
    /// Each ray uses its own ChaCha stream keyed by `(seed, ray index)`, so
    /// parallel and serial simulation agree bit for bit.
    pub fn simulate_counts(&self, x_true: &Image, seed: u64) -> Result<MeasurementSet> {
        let means = self.forward(x_true);
        if let Some(bad) = means.iter().find(|&&m| !(m <= MAX_POISSON_MEAN)) {
            return Err(Error::numerical(format!(
                "Poisson mean {bad} exceeds the {MAX_POISSON_MEAN:e} limit"
            )));
        }
        let counts: Vec<f64> = means
            .par_iter()
            .enumerate()
            .map(|(i, &mean)| {
                if mean <= 0.0 {
                    return 0.0;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                Poisson::new(mean).expect("positive finite mean").sample(&mut rng)
            })
            .collect();
        MeasurementSet::new(counts, self.flat.clone(), self.dark.clone())
    }

    /// Exact expected counts stored as a measurement set (noiseless data).
    pub fn exact_counts(&self, x_true: &Image) -> Result<MeasurementSet> {
        let means = self.forward(x_true);
        MeasurementSet::new(means, self.flat.clone(), self.dark.clone())
    }
}

/// Result of log-correcting counts: the estimated Radon data plus the number
/// of rays whose corrected count hit the clamp floor.
#[derive(Debug, Clone)]
pub struct LogCorrected {
    pub sinogram: Sinogram,
    pub clamped_rays: usize,
}

/// Converts counts to Radon data: `ỹ_i = -log((b_i - d_i) / f_i)`, with
/// `b_i - d_i` clamped from below at [`CLAMP_FLOOR`].
pub fn log_correct(mset: &MeasurementSet, geometry: &ScanGeometry) -> Result<LogCorrected> {
    if mset.len() != geometry.n_rays() {
        return Err(Error::invalid("measurement length does not match geometry"));
    }
    let mut clamped = 0usize;
    let values: Vec<f64> = mset
        .counts
        .iter()
        .zip(mset.dark.iter().zip(&mset.flat))
        .map(|(&b, (&d, &f))| {
            let mut corrected = b - d;
            if corrected < CLAMP_FLOOR {
                corrected = CLAMP_FLOOR;
                clamped += 1;
            }
            -(corrected / f).ln()
        })
        .collect();
    Ok(LogCorrected {
        sinogram: Sinogram::new(geometry.clone(), values)?,
        clamped_rays: clamped,
    })
}
