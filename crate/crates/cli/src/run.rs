//! Experiment drivers and artifact output.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use num_complex::Complex64;
use rnls::averaged::{
    solve_liouville_averaged, solve_scalar_averaged, AveragedConfig, AveragedDensityMatrix, AveragedField,
};
use rnls::diagnostics::{decay_fit, energy_derivative_identity, feynman_kac_residual, RESIDUAL_FLOOR};
use rnls::ensemble::{
    feynman_kac_lhs, run_ensemble, weighted_energy_average, EnsembleConfig, InitialData, PathSummary, Weighting,
};
use rnls::grid::sum_norm;
use rnls::io;
use rnls::markov::sample_path;
use rnls::propagator::{duhamel_residual, evolve_path};
use rnls::spectral::{assemble_h, assemble_kb, default_lambda_grid, eigen_analysis, kb_scan, min_singular_value};
use rnls::verify::run_all;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, LoadedConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Path,
    Average,
    Liouville,
    Ensemble,
    Spectrum,
    KbScan,
    VerifyAll,
    FitDecay,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Path => "path",
            Experiment::Average => "average",
            Experiment::Liouville => "liouville",
            Experiment::Ensemble => "ensemble",
            Experiment::Spectrum => "spectrum",
            Experiment::KbScan => "kb-scan",
            Experiment::VerifyAll => "verify-all",
            Experiment::FitDecay => "fit-decay",
        }
    }
}

/// Result of a run: where the artifacts went and whether every enabled check
/// passed.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub passed: bool,
    pub lines: Vec<String>,
}

/// Hex SHA-256 of the resolved config with the seed cleared.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let mut c = config.clone();
    c.seed = 0;
    let text = serde_json::to_string(&c).expect("config serializes");
    format!("{:x}", Sha256::digest(text.as_bytes()))
}

/// Collects artifacts in one directory, single writer per file.
struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    fn create(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir, files: Vec::new() })
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> rnls::Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        f(&mut w).with_context(|| format!("writing {}", path.display()))?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        self.write(name, |w| io::write_json(w, value))
    }

    fn digests(&self) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for f in &self.files {
            let bytes = fs::read(self.dir.join(f))?;
            out.insert(f.clone(), format!("{:x}", Sha256::digest(&bytes)));
        }
        Ok(out)
    }
}

/// Runs one experiment and writes its artifacts plus `manifest.json` under
/// `out_root/<experiment>-<hash>-seed<seed>/`.
pub fn run(kind: Experiment, loaded: &LoadedConfig, out_root: &Path, threads: usize) -> Result<RunOutcome> {
    if let Some(e) = &loaded.config.experiment {
        if e != kind.name() {
            bail!("config sets `experiment` = {e:?} but the `{}` subcommand was invoked", kind.name());
        }
    }
    let config = &loaded.config;
    let hash = config_hash(config);
    let dir = out_root.join(format!("{}-{}-seed{}", kind.name(), &hash[..16], config.seed));
    let mut art = Artifacts::create(dir.clone())?;
    let start = Instant::now();
    let (passed, lines) = match kind {
        Experiment::Path => run_path(loaded, &mut art)?,
        Experiment::Average => run_average(loaded, &mut art)?,
        Experiment::Liouville => run_liouville(loaded, &mut art)?,
        Experiment::Ensemble => run_ensemble_experiment(loaded, &mut art)?,
        Experiment::Spectrum => run_spectrum(loaded, &mut art)?,
        Experiment::KbScan => run_kb_scan(loaded, &mut art)?,
        Experiment::VerifyAll => run_verify(loaded, &mut art)?,
        Experiment::FitDecay => run_fit(loaded, &mut art)?,
    };
    let wall = start.elapsed().as_secs_f64();
    art.json("config.resolved.json", config)?;
    let manifest = json!({
        "tool": "rnls",
        "version": env!("CARGO_PKG_VERSION"),
        "experiment": kind.name(),
        "config": config,
        "config_hash": hash,
        "seed": config.seed,
        "threads": threads,
        "passed": passed,
        "artifacts": art.digests()?,
        "wall_time_seconds": wall,
    });
    io::write_json(File::create(dir.join("manifest.json"))?, &manifest)?;
    Ok(RunOutcome { dir, passed, lines })
}

type Lines = (bool, Vec<String>);

fn run_path(loaded: &LoadedConfig, art: &mut Artifacts) -> Result<Lines> {
    let s = loaded.setup()?;
    let horizon = s.solver.horizon();
    let path = sample_path(&s.model, horizon, loaded.config.seed)?;
    let out = evolve_path(&s.psi0, &s.family, &path, &s.kernel, &s.solver)?;
    art.write("scalars.csv", |w| io::write_scalars_csv(w, &out.scalars))?;
    for (k, (t, psi)) in out.times.iter().zip(&out.snapshots).enumerate() {
        art.write(&format!("snapshots/psi_{k:04}.bin"), |w| io::write_snapshot(w, psi, *t))?;
    }
    art.json("path.json", &path)?;
    let n0 = s.psi0.l2_norm();
    let drift = out.snapshots.iter().map(|p| (p.l2_norm() - n0).abs() / n0).fold(0.0, f64::max);
    let residual = duhamel_residual(&out, &s.family, &path, &s.kernel, &s.solver, horizon)?;
    art.json(
        "summary.json",
        &json!({
            "jumps": path.jump_times.len(),
            "substeps": out.substeps,
            "l2_relative_drift": drift,
            "duhamel_residual_final": residual,
            "final_energy": out.scalars.last().map(|e| e.energy),
        }),
    )?;
    Ok((true, vec![format!("jumps={} l2_drift={drift:.3e} duhamel_residual={residual:.3e}", path.jump_times.len())]))
}

fn run_average(loaded: &LoadedConfig, art: &mut Artifacts) -> Result<Lines> {
    let s = loaded.setup()?;
    let cfg = AveragedConfig::new(s.solver.dt, s.solver.sample_times.clone());
    let series =
        solve_scalar_averaged(&AveragedField::from_initial(&s.psi0, &s.model), &s.family, &s.model, &cfg, None)?;
    let times: Vec<f64> = series.iter().map(|g| g.t).collect();
    let density: Vec<Vec<Vec<f64>>> = series.iter().map(|g| g.states.iter().map(|u| u.density()).collect()).collect();
    art.write("averaged_density.csv", |w| io::write_density_csv(w, &times, &density))?;
    let m = s.model.states();
    let mut header = vec!["t".to_string()];
    header.extend((0..m).map(|y| format!("l2_{y}")));
    let rows = series.iter().map(|g| std::iter::once(g.t).chain(g.states.iter().map(|u| u.l2_norm())).collect());
    art.write("averaged_norms.csv", |w| io::write_table(w, &header, rows))?;
    let last = series.last().map(|g| g.states.iter().map(|u| u.l2_norm().powi(2)).sum::<f64>().sqrt()).unwrap_or(0.0);
    art.json("summary.json", &json!({ "samples": series.len(), "final_l2": last }))?;
    Ok((true, vec![format!("samples={} final_l2={last:.6e}", series.len())]))
}

fn liouville_series(loaded: &LoadedConfig) -> Result<(crate::config::Setup, Vec<AveragedDensityMatrix>)> {
    let s = loaded.setup()?;
    let cfg = AveragedConfig::new(s.solver.dt, s.solver.sample_times.clone());
    let f0 = AveragedDensityMatrix::from_initial(&s.psi0, &s.model)?;
    let series = solve_liouville_averaged(&f0, &s.family, &s.model, &cfg, None)?;
    Ok((s, series))
}

fn run_liouville(loaded: &LoadedConfig, art: &mut Artifacts) -> Result<Lines> {
    let (s, series) = liouville_series(loaded)?;
    let times: Vec<f64> = series.iter().map(|f| f.t).collect();
    let density: Vec<Vec<Vec<f64>>> = series.iter().map(|f| f.density()).collect();
    art.write("density.csv", |w| io::write_density_csv(w, &times, &density))?;
    art.write("trace.csv", |w| io::write_trace_csv(w, &series))?;
    let tr0 = series[0].trace().total;
    let drift = series.iter().map(|f| (f.trace().total - tr0).abs() / tr0).fold(0.0, f64::max);
    let herm = series.iter().map(|f| f.hermiticity_defect()).fold(0.0, f64::max);
    let min_eig = series.iter().flat_map(|f| f.psd_check()).fold(f64::INFINITY, f64::min);
    let identity = if series.len() >= 3 {
        let pts = energy_derivative_identity(&series, &s.family, &s.model)?;
        let header: Vec<String> = ["t", "lhs", "rhs", "residual"].iter().map(|c| c.to_string()).collect();
        let rows = pts.iter().map(|p| vec![p.t, p.lhs, p.rhs, p.residual]);
        art.write("energy_identity.csv", |w| io::write_table(w, &header, rows))?;
        Some(pts.iter().map(|p| p.residual).fold(0.0, f64::max))
    } else {
        None
    };
    art.json(
        "summary.json",
        &json!({
            "trace_relative_drift": drift,
            "hermiticity_defect": herm,
            "min_eigenvalue": min_eig,
            "energy_identity_max_residual": identity,
        }),
    )?;
    Ok((true, vec![format!("trace_drift={drift:.3e} hermiticity={herm:.3e} min_eig={min_eig:.3e}")]))
}

fn mean_and_error(summaries: &[PathSummary], ti: usize, f: impl Fn(&rnls::ensemble::PathRecord) -> f64) -> (f64, f64) {
    let k = summaries.len() as f64;
    let (mut s, mut q) = (0.0, 0.0);
    for p in summaries {
        let v = f(&p.records[ti]);
        s += v;
        q += v * v;
    }
    let mean = s / k;
    let var = if k > 1.0 { ((q / k - mean * mean) * k / (k - 1.0)).max(0.0) } else { 0.0 };
    (mean, (var / k).sqrt())
}

fn run_ensemble_experiment(loaded: &LoadedConfig, art: &mut Artifacts) -> Result<Lines> {
    let s = loaded.setup()?;
    let c = &loaded.config;
    let out = run_ensemble(
        &InitialData::Fixed(s.psi0.clone()),
        &s.family,
        &s.model,
        &s.kernel,
        &s.solver,
        &EnsembleConfig::new(c.paths, c.seed),
    )?;
    let counts = out.average.counts();
    let weighted = weighted_energy_average(&out.summaries, &s.model)?;
    let fk_lhs = feynman_kac_lhs(&out.summaries)?;
    // The deterministic side needs the Liouville solver, so only in one
    // dimension and for linear runs.
    let fk = if s.grid.dim() == 1 && !s.kernel.is_active() && s.grid.n() <= rnls::averaged::DEFAULT_LIOUVILLE_CAP {
        let p0 = rnls::ensemble::empirical_initial_law(&out.summaries, s.model.states());
        let f0 = AveragedDensityMatrix::from_weights(&s.psi0, &p0)?;
        let cfg = AveragedConfig::new(s.solver.dt, s.solver.sample_times.clone());
        let series = solve_liouville_averaged(&f0, &s.family, &s.model, &cfg, None)?;
        Some(feynman_kac_residual(&fk_lhs, &series, &s.family, RESIDUAL_FLOOR)?)
    } else {
        None
    };
    let mut per_time = Vec::new();
    let mut density = Vec::new();
    for (ti, &t) in out.average.times.iter().enumerate() {
        let (l2, l2_se) = mean_and_error(&out.summaries, ti, |r| r.l2);
        let (sn, sn_se) = mean_and_error(&out.summaries, ti, |r| r.sum_norm);
        let (en, en_se) = mean_and_error(&out.summaries, ti, |r| r.energy.total);
        let g = out.average.estimate_g(ti, Weighting::Joint)?;
        density.push(g.field.states.iter().map(|u| u.density()).collect::<Vec<_>>());
        per_time.push(json!({
            "t": t,
            "counts": counts[ti],
            "l2": { "mean": l2, "std_error": l2_se },
            "suml2linf": { "mean": sn, "std_error": sn_se },
            "energy": { "mean": en, "std_error": en_se },
            "weighted_energy": weighted[ti],
            "feynman_kac": fk.as_ref().map(|v| v[ti]),
            "joint_average_l2_std_error": g.l2_std_error(),
        }));
    }
    art.write("joint_density.csv", |w| io::write_density_csv(w, &out.average.times, &density))?;
    art.json("ensemble.json", &json!({ "N": c.paths, "seed": c.seed, "per_time": per_time }))?;
    let worst = fk.as_ref().map(|v| v.iter().map(|p| p.relative).fold(0.0, f64::max));
    Ok((true, vec![format!("paths={} feynman_kac_max_relative={:?}", c.paths, worst)]))
}

fn run_spectrum(loaded: &LoadedConfig, art: &mut Artifacts) -> Result<Lines> {
    let s = loaded.setup()?;
    let h = assemble_h(&s.family, &s.model)?;
    let r = loaded.config.window_radius;
    let a = eigen_analysis(&h, |x| x.iter().map(|v| v * v).sum::<f64>().sqrt() <= r)?;
    art.write("spectrum.csv", |w| io::write_spectrum_csv(w, &a))?;
    let localized: Vec<Complex64> = a.localized_eigenvalues();
    art.json(
        "summary.json",
        &json!({
            "dimension": h.dim(),
            "norm": a.norm,
            "min_imag": a.min_imag,
            "dissipative": a.dissipative,
            "localized": localized,
        }),
    )?;
    let lowest = localized.iter().map(|z| z.im).fold(f64::INFINITY, f64::min);
    Ok((
        a.dissipative,
        vec![format!("dissipative={} localized={} min_localized_im={lowest:.3e}", a.dissipative, localized.len())],
    ))
}

fn run_kb_scan(loaded: &LoadedConfig, art: &mut Artifacts) -> Result<Lines> {
    let s = loaded.setup()?;
    let scan = kb_scan(&s.family, &s.model, &default_lambda_grid())?;
    art.write("scan.csv", |w| io::write_scan_csv(w, &scan))?;
    let far = assemble_kb(&s.family, &s.model, Complex64::new(0.0, -1e4))?;
    art.json(
        "summary.json",
        &json!({
            "global_min": scan.global_min,
            "argmin": scan.argmin,
            "far_field_min_singular_value": min_singular_value(&far.matrix),
        }),
    )?;
    let passed = scan.global_min > 0.0;
    Ok((passed, vec![format!("min_singular_value={:.4e} at {}", scan.global_min, scan.argmin)]))
}

fn run_verify(loaded: &LoadedConfig, art: &mut Artifacts) -> Result<Lines> {
    let preset = loaded.preset();
    let reports = run_all(preset, loaded.config.seed)?;
    let passed = reports.iter().all(|r| r.passed);
    art.json(
        "report.json",
        &json!({ "preset": preset, "seed": loaded.config.seed, "passed": passed, "criteria": reports }),
    )?;
    let lines = reports
        .iter()
        .map(|r| {
            format!("criterion {:>2} {:<45} {}  {}", r.id, r.name, if r.passed { "PASS" } else { "FAIL" }, r.summary())
        })
        .collect();
    Ok((passed, lines))
}

fn run_fit(loaded: &LoadedConfig, art: &mut Artifacts) -> Result<Lines> {
    let c = &loaded.config;
    let series = match &c.fit_input {
        Some(p) => {
            let path = loaded.resolve(p);
            let f = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
            io::read_named_series_csv(f, "t", &c.fit_column)?
        }
        None => {
            let s = loaded.setup()?;
            let path = sample_path(&s.model, s.solver.horizon(), c.seed)?;
            let out = evolve_path(&s.psi0, &s.family, &path, &s.kernel, &s.solver.clone().without_scalars())?;
            out.times.iter().zip(&out.snapshots).map(|(&t, p)| (t, sum_norm(p))).collect()
        }
    };
    let fit = decay_fit(&series, (c.fit_window[0], c.fit_window[1]))?;
    art.json("fit.json", &fit)?;
    Ok((true, vec![format!("slope={:.4} ± {:.2e} residual={:.2e}", fit.slope, fit.confidence, fit.residual)]))
}
