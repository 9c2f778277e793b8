//! Subcommand implementations. Each one is a pure function of
//! (config, seeds) at the level of output file contents; manifests record
//! hashes so reruns can be audited.

use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::RunConfig;
use super::manifest::Manifest;
use crate::concentration::{empirical_coverage, probability_bound, sample_minimizers, ToyModel};
use crate::estimator::{
    poisson_identity_check, poisson_shift_vs_derivative, stein_identity_check, sweep_curve,
    truncation_for, DiagTestFn, TomoPipeline,
};
use crate::geometry::ScanGeometry;
use crate::io;
use crate::phantom::EllipsePhantom;
use crate::physics::{log_correct, ForwardModel, MeasurementSet};
use crate::recon::TvProblem;
use crate::select::{run_trials, GammaGrid};
use crate::{Error, Result};

fn ensure_out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn load_or_simulate_counts(
    cfg: &RunConfig,
    counts_path: Option<&Path>,
    manifest: &mut Manifest,
) -> Result<(MeasurementSet, ScanGeometry)> {
    let started = Instant::now();
    let (mut mset, geometry) = match counts_path {
        Some(path) => {
            manifest.record("counts_file", path.display());
            io::read_measurements(path)?
        }
        None => {
            let geometry = cfg.geometry()?;
            let model = ForwardModel::uniform(geometry.clone(), cfg.flux, cfg.dark)?;
            let phantom = EllipsePhantom::shepp_logan().render(cfg.fine_grid_spec()?);
            (model.simulate_counts(&phantom, cfg.data_seed)?, geometry)
        }
    };
    mset.scale_counts(cfg.photon_scale)?;
    manifest.record("photon_scale", cfg.photon_scale);
    manifest.stage("acquire_counts", started);
    Ok((mset, geometry))
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let dir = ensure_out_dir(cfg)?;
    let mut manifest = Manifest::new("simulate", cfg);

    let started = Instant::now();
    let geometry = cfg.geometry()?;
    let fine = cfg.fine_grid_spec()?;
    let phantom = EllipsePhantom::shepp_logan().render(fine);
    let model = ForwardModel::uniform(geometry.clone(), cfg.flux, cfg.dark)?;
    let mut mset = model.simulate_counts(&phantom, cfg.data_seed)?;
    mset.scale_counts(cfg.photon_scale)?;
    manifest.stage("simulate", started);

    let corrected = log_correct(&mset, &geometry)?;
    manifest.record("clamped_rays", corrected.clamped_rays);

    let counts_path = dir.join("counts.upbr");
    io::write_measurements(&counts_path, &mset, &geometry)?;
    let ytilde_path = dir.join("ytilde.upbr");
    io::write_sinogram(&ytilde_path, &corrected.sinogram)?;
    let ytilde_csv = dir.join("ytilde.csv");
    io::write_sinogram_csv(&ytilde_csv, &corrected.sinogram)?;
    let phantom_pgm = dir.join("phantom_fine.pgm");
    io::write_image_pgm(&phantom_pgm, &phantom)?;
    let phantom_raw = dir.join("phantom_fine.f64");
    io::write_image_f64(&phantom_raw, &phantom)?;

    for p in [&counts_path, &ytilde_path, &ytilde_csv, &phantom_pgm, &phantom_raw] {
        manifest.output(p)?;
    }
    manifest.write(&dir)?;
    println!(
        "simulated {} rays at flux {} (clamped rays: {})",
        geometry.n_rays(),
        cfg.flux,
        corrected.clamped_rays
    );
    Ok(())
}

pub fn reconstruct(cfg: &RunConfig, counts_path: Option<&Path>) -> Result<()> {
    let dir = ensure_out_dir(cfg)?;
    let mut manifest = Manifest::new("reconstruct", cfg);
    let (mset, geometry) = load_or_simulate_counts(cfg, counts_path, &mut manifest)?;

    let corrected = log_correct(&mset, &geometry)?;
    manifest.record("clamped_rays", corrected.clamped_rays);
    manifest.record("gamma", cfg.gamma);

    let started = Instant::now();
    let grid = cfg.coarse_grid_spec()?;
    let problem = TvProblem {
        sinogram: &corrected.sinogram,
        grid,
        gamma: cfg.gamma,
    };
    let image = crate::recon::reconstruct(&problem, &cfg.fista())?;
    manifest.stage("reconstruct", started);

    let pgm = dir.join("recon.pgm");
    io::write_image_pgm(&pgm, &image)?;
    let raw = dir.join("recon.f64");
    io::write_image_f64(&raw, &image)?;
    manifest.output(&pgm)?;
    manifest.output(&raw)?;
    manifest.write(&dir)?;
    println!(
        "reconstructed {}x{} image at gamma = {}",
        grid.n_side(),
        grid.n_side(),
        cfg.gamma
    );
    Ok(())
}

pub fn sweep(cfg: &RunConfig, counts_path: Option<&Path>) -> Result<()> {
    let dir = ensure_out_dir(cfg)?;
    let mut manifest = Manifest::new("sweep", cfg);
    let (mset, geometry) = load_or_simulate_counts(cfg, counts_path, &mut manifest)?;
    let corrected = log_correct(&mset, &geometry)?;
    manifest.record("clamped_rays", corrected.clamped_rays);

    let model = ForwardModel::new(geometry, mset.flat.clone(), mset.dark.clone())?;
    let grid = cfg.coarse_grid_spec()?;
    let gamma_grid = cfg.parse_gamma_grid()?;
    let spec = cfg.bregman_spec()?;

    let started = Instant::now();
    let curve = sweep_curve(
        &model,
        grid,
        &spec,
        &mset.counts,
        gamma_grid.values(),
        cfg.noise_model(),
        cfg.probe_seed,
        cfg.n_probes,
        cfg.eps_fd,
        &cfg.fista(),
    )?;
    manifest.stage("sweep", started);

    let best = curve.argmin().expect("nonempty grid");
    manifest.record("argmin_gamma", best.gamma);
    manifest.record("argmin_total", best.total);
    manifest.record("noise", curve.noise.label());
    manifest.record("eps_fd", curve.eps_fd);
    manifest.record("n_probes", cfg.n_probes);

    let csv = dir.join("sweep.csv");
    io::write_curve_csv(&csv, &curve)?;
    manifest.output(&csv)?;
    manifest.write(&dir)?;
    println!(
        "sweep over {} gammas ({} estimator): argmin at gamma = {}",
        gamma_grid.values().len(),
        curve.noise.label(),
        best.gamma
    );
    Ok(())
}

pub fn trial(cfg: &RunConfig) -> Result<()> {
    let dir = ensure_out_dir(cfg)?;
    let mut manifest = Manifest::new("trial", cfg);
    let trial_cfg = cfg.trial_config()?;
    let spec = cfg.bregman_spec()?;

    let started = Instant::now();
    let reports = run_trials(&trial_cfg, &spec, cfg.trial_seed, cfg.repeat)?;
    manifest.stage("trials", started);
    manifest.record("repeat", cfg.repeat);
    manifest.record("bregman", spec.kind);

    let trials_csv = dir.join("trials.csv");
    io::write_trials_csv(&trials_csv, &reports)?;
    let agg_csv = dir.join("trials_aggregate.csv");
    io::write_trial_aggregate_csv(&agg_csv, &reports)?;
    manifest.output(&trials_csv)?;
    manifest.output(&agg_csv)?;
    manifest.write(&dir)?;

    let mut rels: Vec<f64> = reports.iter().filter_map(|r| r.rel_diff_sq).collect();
    rels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = rels[rels.len() / 2];
    println!(
        "{} trials with f = {}: median |gamma* - gamma*_est|/gamma* = {median:.4}",
        cfg.repeat, spec.kind
    );
    Ok(())
}

pub fn concentration(cfg: &RunConfig) -> Result<()> {
    let dir = ensure_out_dir(cfg)?;
    let mut manifest = Manifest::new("concentration", cfg);
    let model = ToyModel::new(cfg.sigma)?;
    let bound = probability_bound(&model)?;

    let started = Instant::now();
    let sample = sample_minimizers(&model, cfg.samples, cfg.data_seed);
    // Wide linear grid so the argmin can fall outside the target
    // neighborhood; it brackets the expectation minimizer 0.5.
    let grid = GammaGrid::linspace(0.01, 10.0, 400)?;
    let coverage = empirical_coverage(&model, &grid, cfg.coverage_trials, cfg.trial_seed)?;
    manifest.stage("concentration", started);

    let minim_csv = dir.join("minimizers.csv");
    io::write_minimizers_csv(&minim_csv, &sample.values)?;

    let report_csv = dir.join("concentration_report.csv");
    {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(&report_csv)?);
        writeln!(
            w,
            "sigma,r,lambda,lipschitz,variance,d,bound,sample_mean,resampled,\
             expected_minimizer,coverage,coverage_se,coverage_trials"
        )?;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            model.sigma,
            model.r,
            model.lambda_sc,
            model.lipschitz(),
            model.variance_proxy(),
            model.radius(),
            bound,
            sample.mean(),
            sample.resampled,
            model.expected_minimizer(),
            coverage.coverage,
            coverage.se,
            coverage.n_trials
        )?;
        w.flush()?;
    }
    manifest.output(&minim_csv)?;
    manifest.output(&report_csv)?;
    manifest.record("bound", bound);
    manifest.record("coverage", coverage.coverage)
    ;
    manifest.write(&dir)?;
    println!(
        "sigma = {}: bound {bound:.6}, empirical coverage {:.6} over {} trials, \
         sample-mean minimizer {:.6}",
        cfg.sigma,
        coverage.coverage,
        coverage.n_trials,
        sample.mean()
    );
    if !coverage.consistent_with_bound() {
        return Err(Error::numerical(format!(
            "empirical coverage {} fell below the bound {bound} minus 3 standard errors",
            coverage.coverage
        )));
    }
    Ok(())
}

pub fn check(cfg: &RunConfig) -> Result<()> {
    let dir = ensure_out_dir(cfg)?;
    let mut manifest = Manifest::new("check", cfg);
    let mut rows: Vec<(String, f64, f64, f64, bool)> = Vec::new();
    let mut all_pass = true;

    let started = Instant::now();
    let beta = [1.0, -2.0, 0.5, 3.0];
    let sigma2 = 0.09;
    for (k, h) in DiagTestFn::standard_suite().iter().enumerate() {
        let rep = stein_identity_check(
            h,
            &beta,
            sigma2,
            cfg.check_samples,
            crate::derive_seed(cfg.data_seed, k as u64),
        );
        let pass = rep.passes();
        all_pass &= pass;
        println!(
            "stein {:<12} lhs = {:+.6e}  rhs = {:+.6e}  3se = {:.2e}  {}",
            rep.name,
            rep.lhs,
            rep.rhs,
            3.0 * rep.se,
            if pass { "PASS" } else { "FAIL" }
        );
        rows.push((format!("stein_{}", rep.name), rep.lhs, rep.rhs, 3.0 * rep.se, pass));
    }
    manifest.stage("stein", started);

    let started = Instant::now();
    let poisson_cases: Vec<(&str, Vec<f64>)> = vec![
        ("m1_beta2", vec![2.0]),
        ("m2_beta5", vec![5.0, 1.5]),
    ];
    for (label, beta) in &poisson_cases {
        for h in DiagTestFn::standard_suite() {
            let n = truncation_for(beta);
            let rep = poisson_identity_check(&h, beta, n)?;
            let pass = rep.abs_diff() <= 1e-10;
            all_pass &= pass;
            println!(
                "poisson {label} {:<12} lhs = {:+.6e}  rhs = {:+.6e}  |diff| = {:.2e}  {}",
                rep.name,
                rep.lhs,
                rep.rhs,
                rep.abs_diff(),
                if pass { "PASS" } else { "FAIL" }
            );
            rows.push((
                format!("poisson_{label}_{}", rep.name),
                rep.lhs,
                rep.rhs,
                1e-10,
                pass,
            ));
        }
    }
    manifest.stage("poisson", started);

    let started = Instant::now();
    let beta_large = [60.0];
    let h = DiagTestFn::componentwise_square();
    let (exact, first_order) =
        poisson_shift_vs_derivative(&h, &beta_large, truncation_for(&beta_large))?;
    let rel = ((exact - first_order) / exact).abs();
    let pass = rel <= 0.02;
    all_pass &= pass;
    println!(
        "taylor shift-vs-derivative at mean 60: exact = {exact:.6e}  first-order = \
         {first_order:.6e}  rel = {rel:.4e}  {}",
        if pass { "PASS" } else { "FAIL" }
    );
    rows.push(("taylor_square_mean60".into(), exact, first_order, 0.02, pass));
    manifest.stage("taylor", started);

    let csv = dir.join("check.csv");
    {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(&csv)?);
        writeln!(w, "check,lhs,rhs,tolerance,pass")?;
        for (name, lhs, rhs, tol, pass) in &rows {
            writeln!(w, "{name},{lhs},{rhs},{tol},{pass}")?;
        }
        w.flush()?;
    }
    manifest.output(&csv)?;
    manifest.record("all_pass", all_pass);
    manifest.write(&dir)?;

    if all_pass {
        Ok(())
    } else {
        Err(Error::numerical("one or more identity checks failed"))
    }
}

/// Helper used by the CLI and by integration tests: make the tomography
/// pipeline for one γ without going through a subcommand.
pub fn pipeline_for<'a>(
    cfg: &RunConfig,
    model: &'a ForwardModel,
) -> Result<TomoPipeline<'a>> {
    TomoPipeline::new(model, cfg.coarse_grid_spec()?, cfg.gamma, &cfg.fista())
}
