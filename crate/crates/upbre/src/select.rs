//! Regularization parameter selection.
//!
//! A coarse grid sweep finds the estimator minimizer; optional golden-section
//! refinement narrows it between the bracketing grid neighbors. The trial
//! harness simulates counts from a fine-grid phantom, reconstructs on a
//! coarse grid (avoiding the inverse crime) and compares the estimator
//! minimizer `γ*_{f,ε}` against two oracle minimizers that use the ground
//! truth: `γ*` of the squared error `‖x^γ - x*‖²` and `γ*_f` of the
//! predictive Bregman error `D_f(A(x*), A(x^γ))`.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::bregman::BregmanSpec;
use crate::derive_seed;
use crate::estimator::{GammaPipeline, ProbeVector, TomoPipeline};
use crate::geometry::{GridSpec, ScanGeometry};
use crate::phantom::EllipsePhantom;
use crate::physics::ForwardModel;
use crate::recon::FistaConfig;
use crate::{Error, Result};

/// Strictly increasing positive γ values.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaGrid {
    values: Vec<f64>,
    spacing: Spacing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spacing {
    Log,
    Linear,
}

impl GammaGrid {
    pub fn new(values: Vec<f64>, spacing: Spacing) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("gamma grid must be nonempty"));
        }
        if !values.iter().all(|&v| v > 0.0 && v.is_finite()) {
            return Err(Error::invalid("gamma grid values must be positive"));
        }
        if !values.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("gamma grid must be strictly increasing"));
        }
        Ok(GammaGrid { values, spacing })
    }

    pub fn logspace(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 0 || !(lo > 0.0) || !(hi >= lo) || (n > 1 && hi <= lo) {
            return Err(Error::invalid("logspace needs n >= 1 and 0 < lo < hi"));
        }
        let values = if n == 1 {
            vec![lo]
        } else {
            let (la, lb) = (lo.ln(), hi.ln());
            (0..n)
                .map(|k| {
                    if k + 1 == n {
                        hi
                    } else {
                        (la + (lb - la) * k as f64 / (n - 1) as f64).exp()
                    }
                })
                .collect()
        };
        GammaGrid::new(values, Spacing::Log)
    }

    pub fn linspace(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 0 || !(lo > 0.0) || !(hi >= lo) || (n > 1 && hi <= lo) {
            return Err(Error::invalid("linspace needs n >= 1 and 0 < lo < hi"));
        }
        let values = if n == 1 {
            vec![lo]
        } else {
            (0..n)
                .map(|k| {
                    if k + 1 == n {
                        hi
                    } else {
                        lo + (hi - lo) * k as f64 / (n - 1) as f64
                    }
                })
                .collect()
        };
        GammaGrid::new(values, Spacing::Linear)
    }

    /// 33 log-spaced values on `[1e-5, 3e-4]`.
    pub fn paper_default() -> Self {
        GammaGrid::logspace(1e-5, 3e-4, 33).expect("fixed arguments are valid")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }
}

impl std::str::FromStr for GammaGrid {
    type Err = Error;

    /// `log:LO:HI:N` or `linear:LO:HI:N`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 4 {
            return Err(Error::config(format!(
                "bad gamma grid {s:?}, expected spacing:lo:hi:n"
            )));
        }
        let lo: f64 = parts[1]
            .parse()
            .map_err(|_| Error::config(format!("bad gamma grid lo {:?}", parts[1])))?;
        let hi: f64 = parts[2]
            .parse()
            .map_err(|_| Error::config(format!("bad gamma grid hi {:?}", parts[2])))?;
        let n: usize = parts[3]
            .parse()
            .map_err(|_| Error::config(format!("bad gamma grid count {:?}", parts[3])))?;
        match parts[0] {
            "log" => GammaGrid::logspace(lo, hi, n),
            "linear" => GammaGrid::linspace(lo, hi, n),
            other => Err(Error::config(format!(
                "unknown gamma grid spacing {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for GammaGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = match self.spacing {
            Spacing::Log => "log",
            Spacing::Linear => "linear",
        };
        write!(
            f,
            "{tag}:{}:{}:{}",
            self.values[0],
            self.values[self.values.len() - 1],
            self.values.len()
        )
    }
}

/// Derivative-free bracketing minimizer for unimodal scalar objectives.
///
/// Stops when the bracket width drops below `tol · (hi - lo)` or after
/// `max_evals` objective evaluations; the returned point is the best one
/// evaluated. Non-finite objective values abort with their location.
pub fn golden_section_min(
    mut objective: impl FnMut(f64) -> Result<f64>,
    bracket: (f64, f64),
    tol: f64,
    max_evals: usize,
) -> Result<(f64, f64)> {
    let (lo, hi) = bracket;
    if !(lo < hi) {
        return Err(Error::invalid("bracket must satisfy lo < hi"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tol must be positive"));
    }
    if max_evals < 2 {
        return Err(Error::invalid("max_evals must be at least 2"));
    }
    let inv_phi = 0.5 * (5.0_f64.sqrt() - 1.0);
    let mut eval = |g: f64| -> Result<f64> {
        let v = objective(g)?;
        if !v.is_finite() {
            return Err(Error::numerical(format!(
                "objective is non-finite at gamma = {g}"
            )));
        }
        Ok(v)
    };
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = eval(x1)?;
    let mut f2 = eval(x2)?;
    let mut evals = 2;
    let (mut best_x, mut best_f) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    while evals < max_evals && (b - a) > tol * (hi - lo) {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = eval(x1)?;
            if f1 < best_f {
                best_x = x1;
                best_f = f1;
            }
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = eval(x2)?;
            if f2 < best_f {
                best_x = x2;
                best_f = f2;
            }
        }
        evals += 1;
    }
    Ok((best_x, best_f))
}

/// Outcome of one γ search (and, from the trial harness, the comparison
/// against the ground-truth oracles when they are available).
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    /// Minimizer of the estimator objective.
    pub gamma_star_est: f64,
    /// Objective value at `gamma_star_est`.
    pub est_value: f64,
    /// Oracle minimizer of `‖x^γ - x*‖²`.
    pub gamma_star_sq: Option<f64>,
    /// Oracle minimizer of `D_f(A(x*), A(x^γ))`.
    pub gamma_star_breg: Option<f64>,
    /// `|γ* - γ*_{f,ε}| / γ*`.
    pub rel_diff_sq: Option<f64>,
    /// `|γ*_f - γ*_{f,ε}| / γ*_f`.
    pub rel_diff_breg: Option<f64>,
    /// Estimator objective on the grid, in grid order.
    pub grid_evaluations: Vec<(f64, f64)>,
    /// Additional evaluations made by golden-section refinement.
    pub refine_evaluations: Vec<(f64, f64)>,
}

// Golden-section refinement budget within one grid cell.
const REFINE_TOL: f64 = 1e-3;
const REFINE_MAX_EVALS: usize = 40;

fn argmin_index(values: &[(f64, f64)]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate().skip(1) {
        if v.1 < values[best].1 {
            best = k;
        }
    }
    best
}

/// Grid sweep with optional golden-section refinement between the bracketing
/// neighbors of the grid argmin. Exact ties resolve to the smallest γ.
pub fn select_gamma(
    mut objective: impl FnMut(f64) -> Result<f64>,
    grid: &GammaGrid,
    refine: bool,
) -> Result<SelectionReport> {
    let mut grid_evaluations = Vec::with_capacity(grid.values().len());
    for &g in grid.values() {
        let v = objective(g)?;
        if !v.is_finite() {
            return Err(Error::numerical(format!(
                "objective is non-finite at gamma = {g}"
            )));
        }
        grid_evaluations.push((g, v));
    }
    let best = argmin_index(&grid_evaluations);
    let (mut gamma_star, mut value_star) = grid_evaluations[best];

    let mut refine_evaluations = Vec::new();
    if refine && grid.values().len() > 1 {
        let lo = grid.values()[best.saturating_sub(1)];
        let hi = grid.values()[(best + 1).min(grid.values().len() - 1)];
        if lo < hi {
            let (g, v) = golden_section_min(
                |g| {
                    let v = objective(g)?;
                    refine_evaluations.push((g, v));
                    Ok(v)
                },
                (lo, hi),
                REFINE_TOL,
                REFINE_MAX_EVALS,
            )?;
            if v < value_star {
                gamma_star = g;
                value_star = v;
            }
        }
    }
    Ok(SelectionReport {
        gamma_star_est: gamma_star,
        est_value: value_star,
        gamma_star_sq: None,
        gamma_star_breg: None,
        rel_diff_sq: None,
        rel_diff_breg: None,
        grid_evaluations,
        refine_evaluations,
    })
}

/// Fixed experimental setup for the simulated trials.
#[derive(Debug, Clone)]
pub struct TrialConfig {
    pub phantom: EllipsePhantom,
    pub fine_grid: GridSpec,
    pub coarse_grid: GridSpec,
    pub geometry: ScanGeometry,
    pub flux: f64,
    pub dark: f64,
    pub grid: GammaGrid,
    pub fista: FistaConfig,
    pub eps_fd: f64,
    pub refine: bool,
    /// Replace Poisson draws by exact means (noiseless data).
    pub noiseless: bool,
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fine_grid.n_side() <= self.coarse_grid.n_side() {
            return Err(Error::invalid(
                "the simulation grid must be finer than the reconstruction grid",
            ));
        }
        if !(self.flux > 0.0) {
            return Err(Error::invalid("flux must be positive"));
        }
        if !(self.dark >= 0.0) {
            return Err(Error::invalid("dark level must be nonnegative"));
        }
        if !(self.eps_fd > 0.0) {
            return Err(Error::invalid("eps_fd must be positive"));
        }
        Ok(())
    }
}

/// Per-γ quantities cached by the trial runner: everything the three
/// objectives need, with the Bregman function left unapplied so one solve
/// pass serves every `f`.
struct GammaEval {
    /// `A(B_γ(b))` on the coarse grid.
    predicted: Vec<f64>,
    /// `A(B_γ(b + εω))`.
    predicted_perturbed: Vec<f64>,
    /// `‖x^γ - x*‖²`.
    sq_err: f64,
}

/// One simulated dataset with a cache of reconstructions across γ.
///
/// Creating the runner simulates counts from the fine-grid phantom; the
/// reconstruction cache is shared by the estimator and both oracles, and by
/// every Bregman function evaluated on this dataset.
pub struct TrialRunner {
    cfg: TrialConfig,
    counts: Vec<f64>,
    probe: ProbeVector,
    x_star: Vec<f64>,
    a_star: Vec<f64>,
    model: ForwardModel,
    cache: BTreeMap<u64, GammaEval>,
}

impl TrialRunner {
    pub fn new(cfg: TrialConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let data_seed = derive_seed(seed, 0);
        let probe_seed = derive_seed(seed, 1);

        let x_fine = cfg.phantom.render(cfg.fine_grid);
        let model = ForwardModel::uniform(cfg.geometry.clone(), cfg.flux, cfg.dark)?;
        let mset = if cfg.noiseless {
            model.exact_counts(&x_fine)?
        } else {
            model.simulate_counts(&x_fine, data_seed)?
        };
        let counts = mset.counts;

        let x_star = cfg.phantom.render(cfg.coarse_grid);
        let a_star = model.forward(&x_star);
        let probe = ProbeVector::rademacher(counts.len(), probe_seed);
        let x_star = x_star.into_data();

        let mut runner = TrialRunner {
            cfg,
            counts,
            probe,
            x_star,
            a_star,
            model,
            cache: BTreeMap::new(),
        };
        runner.precompute_grid()?;
        Ok(runner)
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn probe(&self) -> &ProbeVector {
        &self.probe
    }

    fn pipeline(&self, gamma: f64) -> Result<TomoPipeline<'_>> {
        TomoPipeline::new(&self.model, self.cfg.coarse_grid, gamma, &self.cfg.fista)
    }

    fn compute_eval(&self, gamma: f64) -> Result<GammaEval> {
        let pipe = self.pipeline(gamma)?;
        let x_gamma = pipe.reconstruct_from(&self.counts)?;
        let predicted = self.model.forward(&x_gamma);
        let sq_err = x_gamma
            .data()
            .iter()
            .zip(&self.x_star)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let perturbed: Vec<f64> = self
            .counts
            .iter()
            .zip(self.probe.omega())
            .map(|(&b, &w)| b + self.cfg.eps_fd * w)
            .collect();
        let predicted_perturbed = pipe.predict(&perturbed)?;
        Ok(GammaEval {
            predicted,
            predicted_perturbed,
            sq_err,
        })
    }

    /// Solves the whole grid in parallel before any sequential search runs.
    fn precompute_grid(&mut self) -> Result<()> {
        let gammas: Vec<f64> = self.cfg.grid.values().to_vec();
        let evals: Result<Vec<GammaEval>> =
            gammas.par_iter().map(|&g| self.compute_eval(g)).collect();
        for (g, e) in gammas.into_iter().zip(evals?) {
            self.cache.insert(g.to_bits(), e);
        }
        Ok(())
    }

    fn ensure(&mut self, gamma: f64) -> Result<()> {
        let key = gamma.to_bits();
        if !self.cache.contains_key(&key) {
            let eval = self.compute_eval(gamma)?;
            self.cache.insert(key, eval);
        }
        Ok(())
    }

    /// P-UPBRE objective at γ for the given Bregman function.
    pub fn estimator_objective(&mut self, spec: &BregmanSpec, gamma: f64) -> Result<f64> {
        let eps = self.cfg.eps_fd;
        self.ensure(gamma)?;
        let eval = &self.cache[&gamma.to_bits()];
        let divergence = spec.divergence(&self.counts, &eval.predicted);
        let g0 = spec.gradient(&eval.predicted);
        let g1 = spec.gradient(&eval.predicted_perturbed);
        let trace: f64 = self
            .probe
            .omega()
            .iter()
            .zip(&self.counts)
            .zip(g1.iter().zip(&g0))
            .map(|((&w, &b), (&a, &c))| w * b * (a - c))
            .sum::<f64>()
            / eps;
        let total = divergence + trace;
        if !total.is_finite() {
            return Err(Error::numerical(format!(
                "estimator total is non-finite at gamma = {gamma}"
            )));
        }
        Ok(total)
    }

    /// `‖x^γ - x*‖²`.
    pub fn squared_error_objective(&mut self, gamma: f64) -> Result<f64> {
        self.ensure(gamma)?;
        Ok(self.cache[&gamma.to_bits()].sq_err)
    }

    /// `D_f(A(x*), A(x^γ))`.
    pub fn bregman_error_objective(&mut self, spec: &BregmanSpec, gamma: f64) -> Result<f64> {
        self.ensure(gamma)?;
        let eval = &self.cache[&gamma.to_bits()];
        Ok(spec.divergence(&self.a_star, &eval.predicted))
    }

    /// Runs all three minimizations with the same search protocol and fills
    /// the comparison fields.
    pub fn report_for(&mut self, spec: &BregmanSpec) -> Result<SelectionReport> {
        let grid = self.cfg.grid.clone();
        let refine = self.cfg.refine;
        let mut report = {
            let mut obj = |g: f64| self.estimator_objective(spec, g);
            select_gamma(&mut obj, &grid, refine)?
        };
        let sq = {
            let mut obj = |g: f64| self.squared_error_objective(g);
            select_gamma(&mut obj, &grid, refine)?
        };
        let breg = {
            let mut obj = |g: f64| self.bregman_error_objective(spec, g);
            select_gamma(&mut obj, &grid, refine)?
        };
        report.gamma_star_sq = Some(sq.gamma_star_est);
        report.gamma_star_breg = Some(breg.gamma_star_est);
        report.rel_diff_sq =
            Some((sq.gamma_star_est - report.gamma_star_est).abs() / sq.gamma_star_est);
        report.rel_diff_breg =
            Some((breg.gamma_star_est - report.gamma_star_est).abs() / breg.gamma_star_est);
        Ok(report)
    }
}

/// One full simulated experiment for one Bregman function.
pub fn run_trial(cfg: &TrialConfig, spec: &BregmanSpec, seed: u64) -> Result<SelectionReport> {
    TrialRunner::new(cfg.clone(), seed)?.report_for(spec)
}

/// A batch of independent trials with per-trial seeds derived from the
/// master seed. Trials run in parallel; the report order is by trial index.
pub fn run_trials(
    cfg: &TrialConfig,
    spec: &BregmanSpec,
    master_seed: u64,
    n_trials: usize,
) -> Result<Vec<SelectionReport>> {
    (0..n_trials)
        .into_par_iter()
        .map(|k| run_trial(cfg, spec, derive_seed(master_seed, k as u64)))
        .collect()
}

/// True when the values dip at most once: some nonincreasing prefix followed
/// by a nondecreasing suffix (plateaus allowed).
pub fn is_unimodal(values: &[f64]) -> bool {
    let mut rising = false;
    for w in values.windows(2) {
        if w[1] > w[0] {
            rising = true;
        } else if w[1] < w[0] && rising {
            return false;
        }
    }
    true
}
