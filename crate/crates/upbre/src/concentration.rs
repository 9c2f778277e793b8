//! A worked example of concentration of measure for discrete-parameter
//! minimizer selection.
//!
//! The toy objective is the random quadratic
//! `φ(b, γ) = (b₁+1)²γ² - (b₂+1)²γ + b₁²/2 + 2b₂²` with independent Gaussian
//! `b₁, b₂`. Its minimizer over γ has the closed form
//! `(b₂+1)²/(2(b₁+1)²)`, and the minimizer of `E φ` is exactly 1/2 for every
//! noise level. Under uniform sub-Gaussian concentration of `φ_b(γ)` with
//! variance proxy `V`, strong convexity `λ` of the expectation and a local
//! Lipschitz constant `L`, the grid argmin `γ̂` lands within `d` of the
//! expectation minimizer, except with probability bounded in closed form.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::select::GammaGrid;
use crate::{Error, Result};

/// The toy model: noise level σ, Lipschitz neighborhood radius `r` and the
/// strong convexity constant of the expected objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyModel {
    pub sigma: f64,
    pub r: f64,
    pub lambda_sc: f64,
}

impl ToyModel {
    pub fn new(sigma: f64) -> Result<Self> {
        ToyModel::with_radius(sigma, 0.1)
    }

    pub fn with_radius(sigma: f64, r: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("sigma must be positive"));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::invalid("radius must be positive"));
        }
        Ok(ToyModel {
            sigma,
            r,
            lambda_sc: 2.0,
        })
    }

    /// Local Lipschitz constant `L = (1+2r)(1+σ)²`.
    pub fn lipschitz(&self) -> f64 {
        (1.0 + 2.0 * self.r) * (1.0 + self.sigma) * (1.0 + self.sigma)
    }

    /// Variance proxy `V = σ²`.
    pub fn variance_proxy(&self) -> f64 {
        self.sigma * self.sigma
    }

    /// Neighborhood radius `d = 9L/(2λ)`.
    pub fn radius(&self) -> f64 {
        9.0 * self.lipschitz() / (2.0 * self.lambda_sc)
    }

    /// Minimizer of the expected objective. The coefficient expectations
    /// `E(b₁+1)² = E(b₂+1)² = 1+σ²` cancel, giving exactly one half.
    pub fn expected_minimizer(&self) -> f64 {
        let second_moment = 1.0 + self.sigma * self.sigma;
        second_moment / (2.0 * second_moment)
    }
}

/// The random quadratic objective.
pub fn phi(b1: f64, b2: f64, gamma: f64) -> f64 {
    let a = (b1 + 1.0) * (b1 + 1.0);
    let c = (b2 + 1.0) * (b2 + 1.0);
    a * gamma * gamma - c * gamma + 0.5 * b1 * b1 + 2.0 * b2 * b2
}

/// Closed-form minimizer of `φ_b`.
pub fn phi_minimizer(b1: f64, b2: f64) -> f64 {
    let c = (b2 + 1.0) * (b2 + 1.0);
    let a = (b1 + 1.0) * (b1 + 1.0);
    c / (2.0 * a)
}

/// Sampled closed-form minimizers over independent Gaussian draws.
#[derive(Debug, Clone)]
pub struct MinimizerSample {
    pub values: Vec<f64>,
    /// Draws rejected because `b₁ + 1` was exactly zero (probability zero;
    /// counted for the record).
    pub resampled: usize,
}

impl MinimizerSample {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

pub fn sample_minimizers(model: &ToyModel, n_samples: usize, seed: u64) -> MinimizerSample {
    assert!(n_samples >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n_samples);
    let mut resampled = 0usize;
    while values.len() < n_samples {
        let b1 = model.sigma * rng.sample::<f64, _>(StandardNormal);
        let b2 = model.sigma * rng.sample::<f64, _>(StandardNormal);
        if b1 + 1.0 == 0.0 {
            resampled += 1;
            continue;
        }
        values.push(phi_minimizer(b1, b2));
    }
    MinimizerSample { values, resampled }
}

/// Closed-form lower bound on `P[γ̂ ∈ Γ | A]` with `c = (λ/4)d²`:
/// `1 - exp(-(c - Ld)²/(4V)) - exp(-c²/(4V))`, clipped at zero.
///
/// Requires `Ld < (λ/4)d²`, which holds for `d = 9L/(2λ)`.
pub fn probability_bound(model: &ToyModel) -> Result<f64> {
    let l = model.lipschitz();
    let v = model.variance_proxy();
    let d = model.radius();
    let c = 0.25 * model.lambda_sc * d * d;
    if !(l * d < c) {
        return Err(Error::invalid(format!(
            "precondition Ld < (lambda/4)d^2 violated: Ld = {}, c = {c}",
            l * d
        )));
    }
    let first = (-((c - l * d) * (c - l * d)) / (4.0 * v)).exp();
    let second = (-(c * c) / (4.0 * v)).exp();
    Ok((1.0 - first - second).max(0.0))
}

/// Empirical check of the bound: fraction of trials in which the grid argmin
/// of `φ_b` lies within `d` of the expectation minimizer.
#[derive(Debug, Clone)]
pub struct CoverageReport {
    pub coverage: f64,
    pub bound: f64,
    pub n_trials: usize,
    /// Binomial standard error of the coverage estimate.
    pub se: f64,
}

impl CoverageReport {
    /// The bound is a lower bound; allow three standard errors of slack.
    pub fn consistent_with_bound(&self) -> bool {
        self.coverage >= self.bound - 3.0 * self.se
    }
}

pub fn empirical_coverage(
    model: &ToyModel,
    grid: &GammaGrid,
    n_trials: usize,
    seed: u64,
) -> Result<CoverageReport> {
    if n_trials == 0 {
        return Err(Error::invalid("n_trials must be positive"));
    }
    let gamma_star = model.expected_minimizer();
    let d = model.radius();
    if !grid.values().iter().any(|&g| (g - gamma_star).abs() <= d) {
        return Err(Error::invalid(
            "grid has no point inside the target neighborhood",
        ));
    }
    let bound = probability_bound(model)?;
    let hits: usize = (0..n_trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let b1 = model.sigma * rng.sample::<f64, _>(StandardNormal);
            let b2 = model.sigma * rng.sample::<f64, _>(StandardNormal);
            let mut best = grid.values()[0];
            let mut best_v = phi(b1, b2, best);
            for &g in &grid.values()[1..] {
                let v = phi(b1, b2, g);
                if v < best_v {
                    best = g;
                    best_v = v;
                }
            }
            usize::from((best - gamma_star).abs() <= d)
        })
        .sum();
    let coverage = hits as f64 / n_trials as f64;
    let se = (coverage * (1.0 - coverage) / n_trials as f64).sqrt();
    Ok(CoverageReport {
        coverage,
        bound,
        n_trials,
        se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::select::golden_section_min;

    #[test]
    fn phi_at_mean_data() {
        for gamma in [0.0, 0.25, 0.5, 1.0, 2.0] {
            assert_eq!(phi(0.0, 0.0, gamma), gamma * gamma - gamma);
        }
        assert_eq!(phi(0.0, 0.0, 0.5), -0.25);
    }

    #[test]
    fn closed_form_minimizer_examples() {
        assert_eq!(phi_minimizer(1.0, 1.0), 0.5);
        assert_eq!(phi_minimizer(0.0, 0.0), 0.5);
    }

    #[test]
    fn closed_form_matches_golden_section() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..30 {
            let b1 = 0.3 * rng.sample::<f64, _>(StandardNormal);
            let b2 = 0.3 * rng.sample::<f64, _>(StandardNormal);
            let want = phi_minimizer(b1, b2);
            let (got, _) =
                golden_section_min(|g| Ok(phi(b1, b2, g)), (0.0, 8.0), 1e-12, 400).unwrap();
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn expected_minimizer_is_exactly_half() {
        for sigma in [1e-3, 0.1, 0.2, 0.3, 1.0] {
            let m = ToyModel::new(sigma).unwrap();
            assert_eq!(m.expected_minimizer(), 0.5);
        }
    }

    #[test]
    fn paper_bounds_to_six_decimals() {
        let cases = [(0.1, 0.999848), (0.2, 0.987820), (0.3, 0.975685)];
        for (sigma, want) in cases {
            let m = ToyModel::new(sigma).unwrap();
            let bound = probability_bound(&m).unwrap();
            assert!(
                (bound - want).abs() < 5e-7,
                "sigma {sigma}: bound {bound:.6} vs {want}"
            );
        }
    }

    #[test]
    fn lipschitz_values_match() {
        let want = [1.452, 1.728, 2.028];
        for (sigma, w) in [0.1, 0.2, 0.3].iter().zip(want) {
            let m = ToyModel::new(*sigma).unwrap();
            assert!((m.lipschitz() - w).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_noise_concentrates_on_half() {
        let m = ToyModel::new(1e-9).unwrap();
        let s = sample_minimizers(&m, 100, 3);
        for v in &s.values {
            assert!((v - 0.5).abs() < 1e-6);
        }
        assert_eq!(s.resampled, 0);
    }

    #[test]
    fn sample_mean_near_reported_value() {
        let m = ToyModel::new(0.1).unwrap();
        let s = sample_minimizers(&m, 200, 11);
        let mean = s.mean();
        assert!((0.50..=0.54).contains(&mean), "sample mean {mean}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = ToyModel::new(0.2).unwrap();
        assert_eq!(sample_minimizers(&m, 50, 8).values, sample_minimizers(&m, 50, 8).values);
    }

    #[test]
    fn coverage_degenerate_noise() {
        let m = ToyModel::new(1e-9).unwrap();
        let grid = GammaGrid::linspace(0.01, 8.0, 200).unwrap();
        let rep = empirical_coverage(&m, &grid, 500, 1).unwrap();
        assert_eq!(rep.coverage, 1.0);
    }

    #[test]
    fn coverage_single_point_grid() {
        // A one-point grid inside the neighborhood is always covered.
        let m = ToyModel::new(0.1).unwrap();
        let grid = GammaGrid::linspace(0.5, 0.5, 1).unwrap();
        let rep = empirical_coverage(&m, &grid, 200, 2).unwrap();
        assert_eq!(rep.coverage, 1.0);
    }

    #[test]
    fn coverage_meets_bound() {
        let m = ToyModel::new(0.1).unwrap();
        let grid = GammaGrid::linspace(0.01, 10.0, 300).unwrap();
        let rep = empirical_coverage(&m, &grid, 2000, 5).unwrap();
        assert!(rep.consistent_with_bound(), "{rep:?}");
    }

    #[test]
    fn radius_choice_satisfies_precondition() {
        // d = 9L/(2λ) makes Ld = 72L²/(16λ) < 81L²/(16λ) = (λ/4)d².
        for sigma in [0.05, 0.1, 0.2, 0.3, 0.7] {
            let m = ToyModel::new(sigma).unwrap();
            let d = m.radius();
            assert!(m.lipschitz() * d < 0.25 * m.lambda_sc * d * d);
            assert!(probability_bound(&m).is_ok());
        }
    }
}
