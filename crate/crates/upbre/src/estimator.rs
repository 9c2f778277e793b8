//! Unbiased predictive Bregman-risk estimators.
//!
//! For a regularization map `B_γ`, forward operator `A` and Bregman function
//! `f`, write `g_γ = ∇f ∘ A ∘ B_γ`. The estimators evaluate
//!
//! * `G-UPBRE(γ) = D_f(b, A(x^γ)) + (σ²/ε)·ωᵀ(g_γ(b+εω) - g_γ(b))` for
//!   Gaussian data with known variance σ², and
//! * `P-UPBRE(γ) = D_f(b, A(x^γ)) + (1/ε)·ωᵀ diag(b)(g_γ(b+εω) - g_γ(b))`
//!   for Poisson counts,
//!
//! where ω is a Rademacher probe vector. Up to an additive constant that does
//! not depend on γ, both are unbiased (the Poisson one after a first-order
//! shift approximation) for the predictive risk
//! `E D_f(A(x*), A(x^γ))`. Minimizing either over γ therefore selects a
//! regularization parameter without access to `x*`. The additive constant is
//! never estimated, so estimator values are comparable within one curve but
//! never across different Bregman functions.
//!
//! The module also ships Monte-Carlo and exact-enumeration checks of the two
//! identities the construction rests on (Gaussian integration by parts and
//! the Poisson unit-shift identity).

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::bregman::BregmanSpec;
use crate::derive_seed;
use crate::geometry::GridSpec;
use crate::physics::{log_correct, ForwardModel, MeasurementSet};
use crate::radon::lipschitz_estimate;
use crate::recon::{reconstruct, FistaConfig, TvProblem};
use crate::{Error, Result};

/// Random ±1 probe with a recorded seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeVector {
    omega: Vec<f64>,
    seed: u64,
}

impl ProbeVector {
    /// Independent fair ±1 entries; this distribution minimizes the variance
    /// of the trace probe among all zero-mean unit-covariance choices.
    pub fn rademacher(len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let omega = (0..len)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        ProbeVector { omega, seed }
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }
}

/// Which noise model the trace correction assumes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    Gaussian { sigma2: f64 },
    Poisson,
}

impl NoiseModel {
    pub fn label(&self) -> &'static str {
        match self {
            NoiseModel::Gaussian { .. } => "gaussian",
            NoiseModel::Poisson => "poisson",
        }
    }
}

/// One estimator evaluation at a fixed γ.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorEval {
    pub gamma: f64,
    pub divergence_term: f64,
    pub trace_term: f64,
    pub total: f64,
    pub eps_fd: f64,
    pub noise: NoiseModel,
}

/// The map `b ↦ A(B_γ(b))` for a fixed γ.
///
/// The tomography pipeline implements this with log-correction followed by
/// the FISTA solve and the Beer-Lambert forward operator; tests substitute
/// linear or constant stubs.
pub trait GammaPipeline: Sync {
    fn predict(&self, counts: &[f64]) -> Result<Vec<f64>>;
    fn gamma(&self) -> f64;
}

/// `g_γ(b) = ∇f(A(B_γ(b)))`.
pub fn g_gamma(pipe: &impl GammaPipeline, spec: &BregmanSpec, counts: &[f64]) -> Result<Vec<f64>> {
    Ok(spec.gradient(&pipe.predict(counts)?))
}

fn finite_or_err(value: f64, what: &str, gamma: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::numerical(format!(
            "{what} is non-finite at gamma = {gamma}"
        )))
    }
}

/// Shared estimator core; averages the trace probe over the given probes.
pub fn upbre_multi_probe(
    pipe: &impl GammaPipeline,
    spec: &BregmanSpec,
    counts: &[f64],
    noise: NoiseModel,
    probes: &[ProbeVector],
    eps_fd: f64,
) -> Result<EstimatorEval> {
    if !(eps_fd > 0.0 && eps_fd.is_finite()) {
        return Err(Error::invalid("eps_fd must be positive"));
    }
    if probes.is_empty() {
        return Err(Error::invalid("at least one probe vector is required"));
    }
    if let NoiseModel::Gaussian { sigma2 } = noise {
        if !(sigma2 > 0.0) {
            return Err(Error::invalid("sigma2 must be positive"));
        }
    }
    let gamma = pipe.gamma();
    let predicted = pipe.predict(counts)?;
    let divergence_term =
        finite_or_err(spec.divergence(counts, &predicted), "divergence term", gamma)?;
    let g0 = spec.gradient(&predicted);

    let mut trace_sum = 0.0;
    for probe in probes {
        if probe.len() != counts.len() {
            return Err(Error::invalid("probe length does not match data length"));
        }
        let omega = probe.omega();
        let perturbed: Vec<f64> = counts
            .iter()
            .zip(omega)
            .map(|(&b, &w)| b + eps_fd * w)
            .collect();
        let g1 = spec.gradient(&pipe.predict(&perturbed)?);
        let raw: f64 = match noise {
            NoiseModel::Gaussian { sigma2 } => {
                sigma2
                    * omega
                        .iter()
                        .zip(g1.iter().zip(&g0))
                        .map(|(&w, (&a, &b))| w * (a - b))
                        .sum::<f64>()
            }
            NoiseModel::Poisson => omega
                .iter()
                .zip(counts)
                .zip(g1.iter().zip(&g0))
                .map(|((&w, &b), (&a, &c))| w * b * (a - c))
                .sum(),
        };
        trace_sum += finite_or_err(raw / eps_fd, "trace term", gamma)?;
    }
    let trace_term = trace_sum / probes.len() as f64;
    Ok(EstimatorEval {
        gamma,
        divergence_term,
        trace_term,
        total: divergence_term + trace_term,
        eps_fd,
        noise,
    })
}

/// Gaussian-noise estimator at one γ.
pub fn g_upbre(
    pipe: &impl GammaPipeline,
    spec: &BregmanSpec,
    counts: &[f64],
    sigma2: f64,
    probe: &ProbeVector,
    eps_fd: f64,
) -> Result<EstimatorEval> {
    upbre_multi_probe(
        pipe,
        spec,
        counts,
        NoiseModel::Gaussian { sigma2 },
        std::slice::from_ref(probe),
        eps_fd,
    )
}

/// Poisson-count estimator at one γ.
pub fn p_upbre(
    pipe: &impl GammaPipeline,
    spec: &BregmanSpec,
    counts: &[f64],
    probe: &ProbeVector,
    eps_fd: f64,
) -> Result<EstimatorEval> {
    upbre_multi_probe(
        pipe,
        spec,
        counts,
        NoiseModel::Poisson,
        std::slice::from_ref(probe),
        eps_fd,
    )
}

/// The tomography pipeline: counts are log-corrected, reconstructed on the
/// given grid by FISTA at a fixed γ, and pushed through the Beer-Lambert
/// forward operator.
pub struct TomoPipeline<'a> {
    model: &'a ForwardModel,
    grid: GridSpec,
    gamma: f64,
    cfg: FistaConfig,
}

impl<'a> TomoPipeline<'a> {
    /// Resolves the FISTA step once (a power-method estimate of `1/‖R‖²`)
    /// so that repeated evaluations share it.
    pub fn new(model: &'a ForwardModel, grid: GridSpec, gamma: f64, cfg: &FistaConfig) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::invalid("gamma must be finite and nonnegative"));
        }
        let mut cfg = *cfg;
        if cfg.step.is_none() {
            let norm2 = lipschitz_estimate(model.geometry(), grid, 80);
            if norm2 <= 0.0 {
                return Err(Error::numerical("operator norm estimate is zero"));
            }
            cfg.step = Some(1.0 / (1.05 * norm2));
        }
        Ok(TomoPipeline { model, grid, gamma, cfg })
    }

    /// Same resolved configuration at a different γ.
    pub fn at_gamma(&self, gamma: f64) -> Result<TomoPipeline<'a>> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::invalid("gamma must be finite and nonnegative"));
        }
        Ok(TomoPipeline {
            model: self.model,
            grid: self.grid,
            gamma,
            cfg: self.cfg,
        })
    }

    pub fn config(&self) -> &FistaConfig {
        &self.cfg
    }

    /// `B_γ(b)`: log-correct then solve.
    pub fn reconstruct_from(&self, counts: &[f64]) -> Result<crate::geometry::Image> {
        let mset = MeasurementSet::new(
            counts.to_vec(),
            self.model.flat().to_vec(),
            self.model.dark().to_vec(),
        )?;
        let corrected = log_correct(&mset, self.model.geometry())?;
        let problem = TvProblem {
            sinogram: &corrected.sinogram,
            grid: self.grid,
            gamma: self.gamma,
        };
        reconstruct(&problem, &self.cfg)
    }
}

impl GammaPipeline for TomoPipeline<'_> {
    fn predict(&self, counts: &[f64]) -> Result<Vec<f64>> {
        Ok(self.model.forward(&self.reconstruct_from(counts)?))
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// Estimator evaluations over a γ grid, one shared probe set per curve.
#[derive(Debug, Clone)]
pub struct EstimatorCurve {
    pub evals: Vec<EstimatorEval>,
    pub probe_seed: u64,
    pub eps_fd: f64,
    pub noise: NoiseModel,
}

impl EstimatorCurve {
    /// γ of the smallest total, ties broken toward smaller γ.
    pub fn argmin(&self) -> Option<&EstimatorEval> {
        self.evals
            .iter()
            .fold(None, |best: Option<&EstimatorEval>, e| match best {
                Some(b) if b.total <= e.total => Some(b),
                _ => Some(e),
            })
    }
}

/// Sweeps the estimator over `gammas` for the tomography pipeline, sharing
/// one probe draw (or `n_probes` draws, averaged) across the whole curve.
#[allow(clippy::too_many_arguments)]
pub fn sweep_curve(
    model: &ForwardModel,
    grid: GridSpec,
    spec: &BregmanSpec,
    counts: &[f64],
    gammas: &[f64],
    noise: NoiseModel,
    probe_seed: u64,
    n_probes: usize,
    eps_fd: f64,
    cfg: &FistaConfig,
) -> Result<EstimatorCurve> {
    if n_probes == 0 {
        return Err(Error::invalid("n_probes must be at least 1"));
    }
    let probes: Vec<ProbeVector> = (0..n_probes)
        .map(|k| ProbeVector::rademacher(counts.len(), derive_seed(probe_seed, k as u64)))
        .collect();
    let base = TomoPipeline::new(model, grid, 0.0, cfg)?;
    let evals: Result<Vec<EstimatorEval>> = gammas
        .par_iter()
        .map(|&gamma| {
            let pipe = base.at_gamma(gamma)?;
            upbre_multi_probe(&pipe, spec, counts, noise, &probes, eps_fd)
        })
        .collect();
    Ok(EstimatorCurve {
        evals: evals?,
        probe_seed,
        eps_fd,
        noise,
    })
}

/// A test function `h : R^m → R^m` with its analytic diagonal Jacobian,
/// used by the identity checks below.
pub struct DiagTestFn {
    name: String,
    h: Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
    diag: Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
}

impl DiagTestFn {
    pub fn new(
        name: impl Into<String>,
        h: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        diag: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        DiagTestFn {
            name: name.into(),
            h: Box::new(h),
            diag: Box::new(diag),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, b: &[f64]) -> Vec<f64> {
        (self.h)(b)
    }

    /// `(∂h_1/∂b_1, …, ∂h_m/∂b_m)` at `b`.
    pub fn diag_jacobian(&self, b: &[f64]) -> Vec<f64> {
        (self.diag)(b)
    }

    pub fn identity() -> Self {
        DiagTestFn::new("identity", |b| b.to_vec(), |b| vec![1.0; b.len()])
    }

    pub fn constant(c: f64) -> Self {
        DiagTestFn::new(
            format!("constant({c})"),
            move |b| vec![c; b.len()],
            |b| vec![0.0; b.len()],
        )
    }

    pub fn componentwise_square() -> Self {
        DiagTestFn::new(
            "square",
            |b| b.iter().map(|&v| v * v).collect(),
            |b| b.iter().map(|&v| 2.0 * v).collect(),
        )
    }

    /// `h_i(b) = exp(b_i / kappa)`, gently curved for large `kappa`.
    pub fn scaled_exponential(kappa: f64) -> Self {
        DiagTestFn::new(
            format!("exp(b/{kappa})"),
            move |b| b.iter().map(|&v| (v / kappa).exp()).collect(),
            move |b| b.iter().map(|&v| (v / kappa).exp() / kappa).collect(),
        )
    }

    /// The three functions used by the identity acceptance checks.
    pub fn standard_suite() -> Vec<DiagTestFn> {
        vec![
            DiagTestFn::identity(),
            DiagTestFn::componentwise_square(),
            DiagTestFn::scaled_exponential(4.0),
        ]
    }
}

/// Monte-Carlo comparison of `E[h(b)ᵀ(b-β)]` against `σ²·E[Σ ∂h_i/∂b_i(b)]`
/// for `b ~ N(β, σ²I)`, with a paired-difference standard error.
#[derive(Debug, Clone)]
pub struct SteinReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub se: f64,
    pub n_samples: usize,
}

impl SteinReport {
    /// Agreement at the three-standard-error level.
    pub fn passes(&self) -> bool {
        (self.lhs - self.rhs).abs() <= 3.0 * self.se
    }
}

pub fn stein_identity_check(
    h: &DiagTestFn,
    beta: &[f64],
    sigma2: f64,
    n_samples: usize,
    seed: u64,
) -> SteinReport {
    assert!(sigma2 > 0.0 && n_samples >= 2);
    let sigma = sigma2.sqrt();
    let m = beta.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lhs_sum = 0.0;
    let mut rhs_sum = 0.0;
    // Welford accumulation of the paired difference.
    let mut diff_mean = 0.0;
    let mut diff_m2 = 0.0;
    let mut b = vec![0.0f64; m];
    for k in 0..n_samples {
        for (bi, &mu) in b.iter_mut().zip(beta) {
            let z: f64 = rng.sample(StandardNormal);
            *bi = mu + sigma * z;
        }
        let hb = h.eval(&b);
        let l: f64 = hb
            .iter()
            .zip(b.iter().zip(beta))
            .map(|(&hv, (&bv, &mu))| hv * (bv - mu))
            .sum();
        let r: f64 = sigma2 * h.diag_jacobian(&b).iter().sum::<f64>();
        lhs_sum += l;
        rhs_sum += r;
        let d = l - r;
        let delta = d - diff_mean;
        diff_mean += delta / (k + 1) as f64;
        diff_m2 += delta * (d - diff_mean);
    }
    let n = n_samples as f64;
    let se = (diff_m2 / (n - 1.0) / n).sqrt();
    SteinReport {
        name: h.name().to_string(),
        lhs: lhs_sum / n,
        rhs: rhs_sum / n,
        se,
        n_samples,
    }
}

/// Exact-enumeration comparison of the Poisson identity
/// `E[h(b)ᵀ(b-β)] = E[bᵀ(h(b) - h^{[-1]}(b))]` over a truncated lattice.
#[derive(Debug, Clone)]
pub struct PoissonReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub tail_mass: f64,
}

impl PoissonReport {
    pub fn abs_diff(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

const POISSON_TAIL_LIMIT: f64 = 1e-12;

fn poisson_pmf_table(beta: f64, n_max: usize) -> Vec<f64> {
    let mut table = vec![0.0; n_max + 1];
    if beta == 0.0 {
        table[0] = 1.0;
        return table;
    }
    table[0] = (-beta).exp();
    for k in 1..=n_max {
        table[k] = table[k - 1] * beta / k as f64;
    }
    table
}

fn lattice_tail_mass(tables: &[Vec<f64>]) -> f64 {
    let covered: f64 = tables.iter().map(|t| t.iter().sum::<f64>()).product();
    1.0 - covered
}

/// Smallest truncation bound with lattice tail mass comfortably below the
/// rejection threshold for the given means.
pub fn truncation_for(betas: &[f64]) -> usize {
    let max_beta = betas.iter().cloned().fold(0.0, f64::max);
    let mut n = max_beta.ceil() as usize + 10;
    loop {
        let tables: Vec<Vec<f64>> = betas.iter().map(|&b| poisson_pmf_table(b, n)).collect();
        if lattice_tail_mass(&tables) < POISSON_TAIL_LIMIT / 10.0 {
            return n;
        }
        n += 10;
    }
}

fn enumerate_poisson_lattice(
    h: &DiagTestFn,
    beta: &[f64],
    truncation: usize,
    mut accumulate: impl FnMut(f64, &[f64], &[f64]),
) -> Result<f64> {
    let m = beta.len();
    if m == 0 || m > 3 {
        return Err(Error::invalid("exact enumeration supports 1 <= m <= 3"));
    }
    if beta.iter().any(|&b| !(b >= 0.0) || !b.is_finite()) {
        return Err(Error::invalid("means must be nonnegative"));
    }
    let tables: Vec<Vec<f64>> = beta.iter().map(|&b| poisson_pmf_table(b, truncation)).collect();
    let tail = lattice_tail_mass(&tables);
    if !(tail < POISSON_TAIL_LIMIT) {
        return Err(Error::invalid(format!(
            "truncation {truncation} leaves tail mass {tail:e}, above {POISSON_TAIL_LIMIT:e}"
        )));
    }
    let mut idx = vec![0usize; m];
    let mut b = vec![0.0f64; m];
    loop {
        let mut prob = 1.0;
        for (d, t) in idx.iter().zip(&tables) {
            prob *= t[*d];
        }
        for (bv, d) in b.iter_mut().zip(&idx) {
            *bv = *d as f64;
        }
        if prob > 0.0 {
            let hb = h.eval(&b);
            accumulate(prob, &b, &hb);
        }
        // Odometer increment over {0..=truncation}^m.
        let mut pos = 0;
        loop {
            if pos == m {
                return Ok(tail);
            }
            idx[pos] += 1;
            if idx[pos] <= truncation {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

pub fn poisson_identity_check(
    h: &DiagTestFn,
    beta: &[f64],
    truncation: usize,
) -> Result<PoissonReport> {
    if beta.iter().any(|&b| b > 10.0) {
        return Err(Error::invalid("identity check enumerates means up to 10"));
    }
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let mut shifted = vec![0.0f64; beta.len()];
    let tail = enumerate_poisson_lattice(h, beta, truncation, |prob, b, hb| {
        let l: f64 = hb
            .iter()
            .zip(b.iter().zip(beta))
            .map(|(&hv, (&bv, &mu))| hv * (bv - mu))
            .sum();
        let mut r = 0.0;
        for i in 0..b.len() {
            if b[i] == 0.0 {
                continue;
            }
            shifted.copy_from_slice(b);
            shifted[i] -= 1.0;
            let h_shift = h.eval(&shifted);
            r += b[i] * (hb[i] - h_shift[i]);
        }
        lhs += prob * l;
        rhs += prob * r;
    })?;
    Ok(PoissonReport {
        name: h.name().to_string(),
        lhs,
        rhs,
        tail_mass: tail,
    })
}

/// Exact enumeration of the unit-shift term `E[bᵀ(h(b) - h^{[-1]}(b))]` and
/// its first-order approximation `E[bᵀ ∂h(b)]`; the two converge as the
/// means grow.
pub fn poisson_shift_vs_derivative(
    h: &DiagTestFn,
    beta: &[f64],
    truncation: usize,
) -> Result<(f64, f64)> {
    let mut exact = 0.0;
    let mut first_order = 0.0;
    let mut shifted = vec![0.0f64; beta.len()];
    enumerate_poisson_lattice(h, beta, truncation, |prob, b, hb| {
        let diag = h.diag_jacobian(b);
        let mut e = 0.0;
        let mut fo = 0.0;
        for i in 0..b.len() {
            fo += b[i] * diag[i];
            if b[i] == 0.0 {
                continue;
            }
            shifted.copy_from_slice(b);
            shifted[i] -= 1.0;
            let h_shift = h.eval(&shifted);
            e += b[i] * (hb[i] - h_shift[i]);
        }
        exact += prob * e;
        first_order += prob * fo;
    })?;
    Ok((exact, first_order))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bregman::BregmanKind;

    struct ConstantPipe {
        out: Vec<f64>,
    }

    impl GammaPipeline for ConstantPipe {
        fn predict(&self, _counts: &[f64]) -> Result<Vec<f64>> {
            Ok(self.out.clone())
        }
        fn gamma(&self) -> f64 {
            0.0
        }
    }

    struct LinearPipe {
        w: Vec<Vec<f64>>,
    }

    impl GammaPipeline for LinearPipe {
        fn predict(&self, counts: &[f64]) -> Result<Vec<f64>> {
            Ok(self
                .w
                .iter()
                .map(|row| row.iter().zip(counts).map(|(a, b)| a * b).sum())
                .collect())
        }
        fn gamma(&self) -> f64 {
            0.0
        }
    }

    /// predict(b) = b²/2 per component so that with the MS function the
    /// composite map is g(b) = b².
    struct SquarePipe;

    impl GammaPipeline for SquarePipe {
        fn predict(&self, counts: &[f64]) -> Result<Vec<f64>> {
            Ok(counts.iter().map(|&b| 0.5 * b * b).collect())
        }
        fn gamma(&self) -> f64 {
            0.0
        }
    }

    fn ms() -> BregmanSpec {
        BregmanSpec::with_default_smoothing(BregmanKind::Ms)
    }

    #[test]
    fn probe_entries_are_signs() {
        let p = ProbeVector::rademacher(1000, 42);
        assert!(p.omega().iter().all(|&w| w == 1.0 || w == -1.0));
        assert_eq!(p, ProbeVector::rademacher(1000, 42));
        assert_ne!(p, ProbeVector::rademacher(1000, 43));
        // Roughly balanced.
        let sum: f64 = p.omega().iter().sum();
        assert!(sum.abs() < 150.0);
    }

    #[test]
    fn constant_pipeline_has_zero_trace() {
        let pipe = ConstantPipe { out: vec![1.0, 2.0, 3.0] };
        let b = [4.0, 5.0, 6.0];
        let probe = ProbeVector::rademacher(3, 7);
        let g = g_upbre(&pipe, &ms(), &b, 0.5, &probe, 0.1).unwrap();
        assert_eq!(g.trace_term, 0.0);
        let p = p_upbre(&pipe, &ms(), &b, &probe, 0.1).unwrap();
        assert_eq!(p.trace_term, 0.0);
        assert_eq!(p.total, p.divergence_term);
    }

    #[test]
    fn zero_counts_zero_poisson_trace() {
        let pipe = SquarePipe;
        let b = [0.0, 0.0, 0.0, 0.0];
        let probe = ProbeVector::rademacher(4, 11);
        let p = p_upbre(&pipe, &ms(), &b, &probe, 0.1).unwrap();
        assert_eq!(p.trace_term, 0.0);
    }

    #[test]
    fn g_gamma_is_gradient_of_prediction() {
        let pipe = ConstantPipe { out: vec![1.5, -0.5] };
        let g = g_gamma(&pipe, &ms(), &[0.0, 0.0]).unwrap();
        assert_eq!(g, vec![3.0, -1.0]);
        let again = g_gamma(&pipe, &ms(), &[0.0, 0.0]).unwrap();
        assert_eq!(g, again);
    }

    #[test]
    fn linear_stub_trace_is_quadratic_form() {
        // With predict = Wb and the MS function, the Gaussian trace term is
        // exactly 2σ²·ωᵀWω for any ε.
        let w = vec![
            vec![0.5, 0.1, 0.0],
            vec![-0.2, 0.8, 0.3],
            vec![0.0, 0.25, -0.4],
        ];
        let pipe = LinearPipe { w: w.clone() };
        let b = [1.0, 2.0, 3.0];
        let sigma2 = 0.7;
        for seed in 0..20 {
            let probe = ProbeVector::rademacher(3, seed);
            let om = probe.omega().to_vec();
            let eval = g_upbre(&pipe, &ms(), &b, sigma2, &probe, 0.3).unwrap();
            let mut quad = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    quad += om[i] * w[i][j] * om[j];
                }
            }
            assert!((eval.trace_term - 2.0 * sigma2 * quad).abs() < 1e-10);
        }
    }

    #[test]
    fn probe_mean_estimates_trace() {
        let w = vec![
            vec![0.5, 0.1, -0.3, 0.2],
            vec![-0.2, 0.8, 0.3, 0.0],
            vec![0.1, 0.25, -0.4, 0.15],
            vec![0.0, -0.1, 0.2, 0.6],
        ];
        let trace_w: f64 = (0..4).map(|i| w[i][i]).sum();
        let pipe = LinearPipe { w };
        let b = [1.0, 2.0, 3.0, 4.0];
        let sigma2 = 0.5;
        let n = 3000usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for k in 0..n {
            let probe = ProbeVector::rademacher(4, k as u64);
            let eval = g_upbre(&pipe, &ms(), &b, sigma2, &probe, 0.1).unwrap();
            sum += eval.trace_term;
            sumsq += eval.trace_term * eval.trace_term;
        }
        let mean = sum / n as f64;
        let var = (sumsq / n as f64 - mean * mean).max(0.0);
        let se = (var / n as f64).sqrt();
        let want = 2.0 * sigma2 * trace_w;
        assert!(
            (mean - want).abs() <= 3.0 * se + 1e-12,
            "mean {mean} vs {want} (se {se})"
        );
    }

    #[test]
    fn scalar_square_stub_derivative() {
        // g(b) = b² so the Poisson trace term approaches b·g'(b) = 2b².
        let pipe = SquarePipe;
        let b = [3.0];
        let probe = ProbeVector::rademacher(1, 5);
        let eval = p_upbre(&pipe, &ms(), &b, &probe, 1e-3).unwrap();
        let want = 2.0 * b[0] * b[0];
        assert!(
            ((eval.trace_term - want) / want).abs() <= 1e-2,
            "trace {} vs {want}",
            eval.trace_term
        );
    }

    #[test]
    fn totals_decompose() {
        let pipe = SquarePipe;
        let b = [1.0, 2.0];
        let probe = ProbeVector::rademacher(2, 3);
        let eval = p_upbre(&pipe, &ms(), &b, &probe, 0.1).unwrap();
        assert_eq!(eval.total, eval.divergence_term + eval.trace_term);
    }

    #[test]
    fn eps_robustness_on_smooth_stub() {
        let pipe = SquarePipe;
        let b = [2.0, 3.0, 1.5];
        let probe = ProbeVector::rademacher(3, 9);
        let totals: Vec<f64> = [1e-2, 1e-1, 1e0]
            .iter()
            .map(|&eps| p_upbre(&pipe, &ms(), &b, &probe, eps).unwrap().total)
            .collect();
        let mid = totals[1];
        for &t in &totals {
            assert!(
                ((t - mid) / mid).abs() < 0.05,
                "totals {totals:?} vary by more than 5%"
            );
        }
    }

    #[test]
    fn stein_identity_on_identity_map() {
        let beta = [1.0, -2.0, 0.5, 3.0];
        let sigma2 = 0.09;
        let rep = stein_identity_check(&DiagTestFn::identity(), &beta, sigma2, 100_000, 1);
        // Both sides estimate m·σ² = 0.36.
        assert!(rep.passes(), "{rep:?}");
        assert!((rep.rhs - 4.0 * sigma2).abs() < 1e-12);
        assert!((rep.lhs - 4.0 * sigma2).abs() < 0.01);
    }

    #[test]
    fn stein_identity_on_constant_map() {
        let rep = stein_identity_check(&DiagTestFn::constant(3.0), &[1.0, 2.0], 0.25, 10_000, 2);
        assert_eq!(rep.rhs, 0.0);
        assert!(rep.lhs.abs() <= 3.0 * rep.se + 1e-12);
        assert!(rep.passes());
    }

    #[test]
    fn stein_identity_on_squares() {
        let beta = [0.5, 1.5, -1.0];
        let sigma2 = 0.04;
        let rep =
            stein_identity_check(&DiagTestFn::componentwise_square(), &beta, sigma2, 200_000, 3);
        // LHS expectation is σ²·Σ 2β_i = 2σ²·1.0.
        let want = 2.0 * sigma2 * beta.iter().sum::<f64>();
        assert!(rep.passes(), "{rep:?}");
        assert!((rep.lhs - want).abs() < 0.01);
    }

    #[test]
    fn poisson_identity_constant() {
        let n = truncation_for(&[2.0]);
        let rep = poisson_identity_check(&DiagTestFn::constant(5.0), &[2.0], n).unwrap();
        assert!(rep.lhs.abs() < 1e-12 && rep.rhs.abs() < 1e-12);
    }

    #[test]
    fn poisson_identity_mean_two() {
        let n = truncation_for(&[2.0]);
        let rep = poisson_identity_check(&DiagTestFn::identity(), &[2.0], n).unwrap();
        assert!((rep.lhs - 2.0).abs() < 1e-10, "lhs {}", rep.lhs);
        assert!((rep.rhs - 2.0).abs() < 1e-10, "rhs {}", rep.rhs);
    }

    #[test]
    fn poisson_identity_random_polynomial() {
        let h = DiagTestFn::new(
            "poly",
            |b| {
                vec![
                    0.3 * b[0] * b[0] - 1.2 * b[0] + 0.7 + 0.05 * b[1],
                    0.1 * b[1] * b[1] * b[1] - 0.4 * b[1] + 0.2 * b[0],
                ]
            },
            |b| vec![0.6 * b[0] - 1.2, 0.3 * b[1] * b[1] - 0.4],
        );
        let beta = [3.0, 1.5];
        let n = truncation_for(&beta);
        let rep = poisson_identity_check(&h, &beta, n).unwrap();
        assert!(rep.abs_diff() <= 1e-10, "{rep:?}");
    }

    #[test]
    fn poisson_identity_rejects_bad_truncation() {
        assert!(poisson_identity_check(&DiagTestFn::identity(), &[5.0], 8).is_err());
        assert!(poisson_identity_check(&DiagTestFn::identity(), &[11.0], 100).is_err());
    }

    #[test]
    fn taylor_approximation_tightens_with_mean() {
        let h = DiagTestFn::componentwise_square();
        let beta_small = [5.0];
        let (e1, f1) =
            poisson_shift_vs_derivative(&h, &beta_small, truncation_for(&beta_small)).unwrap();
        let beta_large = [60.0];
        let (e2, f2) =
            poisson_shift_vs_derivative(&h, &beta_large, truncation_for(&beta_large)).unwrap();
        let rel_small = ((e1 - f1) / e1).abs();
        let rel_large = ((e2 - f2) / e2).abs();
        assert!(rel_large < rel_small);
        assert!(rel_large < 0.02, "relative gap {rel_large}");
    }

    #[test]
    fn gaussian_proposition_two_sided() {
        // Full unbiasedness check on a linear smoother: the mean estimator
        // total matches E D_f(x*, Wb) - K with K = f(x*) - E f(b), all sides
        // by Monte-Carlo.
        let w = vec![
            vec![0.6, 0.2, 0.0],
            vec![0.2, 0.5, 0.1],
            vec![0.0, 0.1, 0.7],
        ];
        let pipe = LinearPipe { w };
        let spec = ms();
        let x_star = [1.0, 2.0, 1.5];
        let sigma2: f64 = 0.25;
        let sigma = sigma2.sqrt();
        let n = 100_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut est_sum = 0.0;
        let mut est_sq = 0.0;
        let mut risk_sum = 0.0;
        let mut risk_sq = 0.0;
        for k in 0..n {
            let b: Vec<f64> = x_star
                .iter()
                .map(|&mu| mu + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let probe = ProbeVector::rademacher(3, derive_seed(99, k as u64));
            let eval = g_upbre(&pipe, &spec, &b, sigma2, &probe, 1e-3).unwrap();
            // K sample: f(x*) - f(b); risk sample: D_f(x*, Wb).
            let pred = pipe.predict(&b).unwrap();
            let risk = spec.divergence(&x_star, &pred) - (spec.value(&x_star) - spec.value(&b));
            est_sum += eval.total;
            est_sq += eval.total * eval.total;
            risk_sum += risk;
            risk_sq += risk * risk;
        }
        let nf = n as f64;
        let est_mean = est_sum / nf;
        let est_se = ((est_sq / nf - est_mean * est_mean) / nf).sqrt();
        let risk_mean = risk_sum / nf;
        let risk_se = ((risk_sq / nf - risk_mean * risk_mean) / nf).sqrt();
        let tol = 3.0 * (est_se * est_se + risk_se * risk_se).sqrt();
        assert!(
            (est_mean - risk_mean).abs() <= tol,
            "estimator mean {est_mean} vs risk-minus-K {risk_mean} (tol {tol})"
        );
    }

    #[test]
    fn multi_probe_averages() {
        let pipe = SquarePipe;
        let b = [2.0, 1.0];
        let probes: Vec<ProbeVector> =
            (0..4).map(|k| ProbeVector::rademacher(2, k)).collect();
        let avg =
            upbre_multi_probe(&pipe, &ms(), &b, NoiseModel::Poisson, &probes, 0.1).unwrap();
        let mean_of_singles: f64 = probes
            .iter()
            .map(|p| p_upbre(&pipe, &ms(), &b, p, 0.1).unwrap().trace_term)
            .sum::<f64>()
            / 4.0;
        assert!((avg.trace_term - mean_of_singles).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_arguments() {
        let pipe = SquarePipe;
        let probe = ProbeVector::rademacher(2, 0);
        assert!(p_upbre(&pipe, &ms(), &[1.0, 2.0], &probe, 0.0).is_err());
        assert!(g_upbre(&pipe, &ms(), &[1.0, 2.0], 0.0, &probe, 0.1).is_err());
        let short = ProbeVector::rademacher(1, 0);
        assert!(p_upbre(&pipe, &ms(), &[1.0, 2.0], &short, 0.1).is_err());
    }
}
