//! Runs a validated configuration end to end and writes its artifacts: CSV,
//! JSON and gnuplot `.dat` files plus a `manifest.json` with content hashes.
//!
//! Every output file except the manifest is a function of the canonical
//! configuration alone, so two runs with the same config and seed produce
//! byte-identical files whatever the worker count.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::certify::{certify, trapping_exclusion, CertError, CertifyOptions, ConditionCertificate, Region};
use crate::cones::{ConeError, ConeSpec};
use crate::config::{ExperimentConfig, Kind};
use crate::hyperbolic_times::{
    birkhoff_limsup_estimate, default_c, detect_hyperbolic_times, record_orbit, summarize, write_summary_csv, HypError,
};
use crate::measure::{weak_star_distance, EmpiricalMeasure, MeasureError, MeasureGrid};
use crate::models::{MapModel, ModelError};
use crate::natural_extension::{extend_preorbit, random_word, sample_unstable_direction, verify_backward_contraction, NatError};
use crate::parallel::{streams, task_rng, uniform_points, with_workers};
use crate::spectrum::{entropy_from_formula, lyapunov_qr, EntropyOptions, SpectrumError, SrbRecipe};
use crate::srb::{cesaro_pushforward, nu_restricted_pushforward, DiskSample, SrbError};
use crate::stability::{stability_sweep, StabilityError, SweepSettings};
use crate::torus::TorusPoint;

/// Drift tolerance for unstable directions sampled from pre-orbits.
pub const UNSTABLE_TOL: f64 = 1e-10;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("no positive hyperbolicity rate: the median cone Birkhoff average is {0}; set constants.c")]
    NoRate(f64),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Cone(#[from] ConeError),
    #[error(transparent)]
    Hyp(#[from] HypError),
    #[error(transparent)]
    Nat(#[from] NatError),
    #[error(transparent)]
    Srb(#[from] SrbError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Cert(#[from] CertError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
}

#[derive(Clone, Debug, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub kind: Kind,
    /// SHA-256 of the canonical configuration JSON.
    pub config_hash: String,
    pub seed: u64,
    pub workers: usize,
    pub wall_time_s: f64,
    pub out_dir: String,
    pub files: Vec<FileEntry>,
    /// Headline numbers of the run.
    pub summary: Value,
    /// False when the run finished but its main check did not hold
    /// (an invalid certificate).
    pub passed: bool,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Artifacts built in memory, written once the computation has succeeded.
#[derive(Default)]
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
    summary: Value,
    passed: bool,
}

impl Outputs {
    fn new() -> Self {
        Self { passed: true, summary: json!({}), ..Default::default() }
    }

    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut s = serde_json::to_string_pretty(value).expect("outputs serialize");
        s.push('\n');
        self.add(name, s.into_bytes());
    }

    fn dat(&mut self, name: &str, header: &str, rows: impl IntoIterator<Item = String>) {
        let mut s = format!("# {header}\n");
        for r in rows {
            s.push_str(&r);
            s.push('\n');
        }
        self.add(name, s.into_bytes());
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), csv::Error>) -> Result<Vec<u8>, csv::Error> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn records(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>, csv::Error> {
    csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    })
}

fn axis_names(dim: usize) -> Vec<String> {
    ["x", "y", "z"][..dim].iter().map(|s| s.to_string()).collect()
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn measure_grid(cfg: &ExperimentConfig) -> MeasureGrid {
    let d = MeasureGrid::default_for(cfg.dim());
    MeasureGrid::new(cfg.dim(), cfg.constants.resolution.unwrap_or(d.resolution), cfg.constants.k_max)
}

fn region_for(model: &MapModel<f64>) -> Region {
    if model.is_perturbed() {
        Region::Support
    } else {
        Region::Empty
    }
}

/// The configured base point, else a seeded uniform one.
fn base_point(cfg: &ExperimentConfig) -> TorusPoint<f64> {
    match &cfg.point.x {
        Some(x) => TorusPoint::from_f64(x),
        None => uniform_points(cfg.run.seed, streams::DISK, cfg.dim(), 1)[0],
    }
}

fn certify_options(cfg: &ExperimentConfig, model: &MapModel<f64>) -> CertifyOptions {
    let k = &cfg.constants;
    let exclude = match k.exclude_radius {
        Some(r) if r > 0.0 => Some(Region::Core { radius: r }),
        Some(_) => None,
        None => trapping_exclusion(model),
    };
    CertifyOptions {
        exclude,
        grid: k.grid,
        support_grid: k.support_grid,
        stable_depth: k.stable_depth,
        gamma0: k.gamma0,
        seed: cfg.run.seed,
        ..CertifyOptions::default()
    }
}

fn entropy_options(cfg: &ExperimentConfig) -> EntropyOptions {
    EntropyOptions {
        stable_depth: cfg.constants.stable_depth,
        ensemble: cfg.run.starts,
        orbit: cfg.run.iters,
        seed: cfg.run.seed,
    }
}

fn recipe(cfg: &ExperimentConfig) -> SrbRecipe {
    SrbRecipe {
        disk_radius: cfg.run.disk_radius,
        disk_samples: cfg.run.samples,
        n: cfg.run.iters,
        cone_width: cfg.cones.width,
        grid: measure_grid(cfg),
    }
}

/// Cone Birkhoff averages over seeded uniform starts.
fn birkhoff_averages(model: &MapModel<f64>, cone: &ConeSpec<f64>, cfg: &ExperimentConfig) -> Result<Vec<f64>, ExperimentError> {
    let starts = uniform_points(cfg.run.seed, streams::STARTS, cfg.dim(), cfg.run.starts.max(1));
    starts
        .par_iter()
        .map(|x| {
            let rec = record_orbit(model, cone, x, cfg.run.iters, None)?;
            Ok(birkhoff_limsup_estimate(&rec)?)
        })
        .collect()
}

/// `constants.c` when set, else half the empirical rate of the ensemble.
fn resolve_c(model: &MapModel<f64>, cone: &ConeSpec<f64>, cfg: &ExperimentConfig) -> Result<f64, ExperimentError> {
    if let Some(c) = cfg.constants.c {
        return Ok(c);
    }
    let avgs = birkhoff_averages(model, cone, cfg)?;
    default_c(&avgs).ok_or_else(|| ExperimentError::NoRate(crate::hyperbolic_times::median(&avgs).unwrap_or(f64::NAN)))
}

fn measure_files(out: &mut Outputs, mu: &EmpiricalMeasure, stem: &str) -> Result<(), ExperimentError> {
    out.add(&format!("{stem}.csv"), csv_bytes(|b| mu.write_csv(b))?);
    out.json(&format!("{stem}_fourier.json"), &mu.fourier_json());
    let grid = mu.grid();
    let rows = mu.weights().iter().enumerate().filter(|(_, &w)| w > 0.0).map(|(i, &w)| {
        format!("{} {w:e}", join(&grid.bin_center(i).to_f64()))
    });
    out.dat(&format!("{stem}.dat"), &format!("{} weight", axis_names(grid.dim).join(" ")), rows);
    Ok(())
}

fn run_check(cfg: &ExperimentConfig, model: &MapModel<f64>) -> Result<Outputs, ExperimentError> {
    let unstable = ConeSpec::unstable(model, cfg.cones.width)?;
    let stable = ConeSpec::stable(model, cfg.cones.stable_width)?;
    let cert: ConditionCertificate = certify(model, &unstable, stable.as_ref(), &region_for(model), &certify_options(cfg, model))?;
    let mut out = Outputs::new();
    out.json("certificate.json", &cert);
    if let Some(g) = &cert.gamma_estimate {
        let header: Vec<String> = ["gamma", "n", "fraction_exceeding"].iter().map(|s| s.to_string()).collect();
        let rows: Vec<Vec<String>> =
            g.table.iter().map(|r| vec![r.gamma.to_string(), r.n.to_string(), r.fraction_exceeding.to_string()]).collect();
        out.add("visit_frequency.csv", records(&header, &rows)?);
        // one gnuplot block per gamma
        let mut s = String::from("# n fraction_exceeding (blocks by gamma)\n");
        let mut last = None;
        for r in &g.table {
            if last.is_some_and(|l: f64| l != r.gamma) {
                s.push_str("\n\n");
            }
            if last != Some(r.gamma) {
                let _ = writeln!(s, "# gamma = {}", r.gamma);
            }
            let _ = writeln!(s, "{} {}", r.n, r.fraction_exceeding);
            last = Some(r.gamma);
        }
        out.add("visit_frequency.dat", s.into_bytes());
    }
    out.passed = cert.valid;
    out.summary = json!({
        "valid": cert.valid, "robust": cert.robust, "c": cert.c, "lambda_u": cert.lambda_u,
        "L": cert.l_floor, "sigma": cert.sigma, "gamma0": cert.gamma0, "violations": cert.violations.len(),
    });
    Ok(out)
}

fn run_srb(cfg: &ExperimentConfig, model: &MapModel<f64>) -> Result<Outputs, ExperimentError> {
    let cone = ConeSpec::unstable(model, cfg.cones.width)?;
    let base = base_point(cfg);
    let grid = measure_grid(cfg);
    let disk = DiskSample::tangent_to(&cone, base, cfg.run.disk_radius, cfg.run.samples)?;
    let mu = cesaro_pushforward(model, &disk, cfg.run.iters, grid)?;
    let c = resolve_c(model, &cone, cfg)?;
    let nu = nu_restricted_pushforward(model, &cone, &disk, cfg.run.iters, c, grid)?;
    let lebesgue = EmpiricalMeasure::lebesgue(grid);
    let summary = json!({
        "distance_to_lebesgue": weak_star_distance(&mu, &lebesgue)?,
        "mass": mu.mass(),
        "alpha_hat": nu.alpha_hat,
        "c": c,
        "n": cfg.run.iters,
        "disk_samples": disk.len(),
        "base": base.to_f64(),
        "resolution": grid.resolution,
        "k_max": grid.k_max,
    });
    let mut out = Outputs::new();
    measure_files(&mut out, &mu, "measure")?;
    out.json("srb.json", &summary);
    out.summary = summary;
    Ok(out)
}

fn run_hyptimes(cfg: &ExperimentConfig, model: &MapModel<f64>) -> Result<Outputs, ExperimentError> {
    let cone = ConeSpec::unstable(model, cfg.cones.width)?;
    let starts = uniform_points(cfg.run.seed, streams::STARTS, cfg.dim(), cfg.run.starts.max(1));
    let records = starts
        .par_iter()
        .map(|x| record_orbit(model, &cone, x, cfg.run.iters, None))
        .collect::<Result<Vec<_>, _>>()?;
    let avgs = records.iter().map(birkhoff_limsup_estimate).collect::<Result<Vec<f64>, _>>()?;
    let c = match cfg.constants.c {
        Some(c) => c,
        None => default_c(&avgs).ok_or_else(|| ExperimentError::NoRate(crate::hyperbolic_times::median(&avgs).unwrap_or(f64::NAN)))?,
    };
    let reports = records.iter().map(|r| detect_hyperbolic_times(&r.cone_lognorms, c)).collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<_> = reports.iter().zip(&avgs).enumerate().map(|(i, (r, &a))| summarize(i, r, a)).collect();
    let mut out = Outputs::new();
    out.add("hyptimes.csv", csv_bytes(|b| write_summary_csv(b, &rows))?);
    let orbits: Vec<Value> = reports
        .iter()
        .zip(&starts)
        .enumerate()
        .map(|(i, (r, x))| json!({ "orbit_id": i, "start": x.to_f64(), "times": r.times }))
        .collect();
    out.json("hyptimes.json", &json!({ "c": c, "n": cfg.run.iters, "orbits": orbits }));
    out.dat(
        "hyptimes.dat",
        "orbit_id n_detected frequency_hat birkhoff_avg",
        rows.iter().map(|r| format!("{} {} {} {}", r.orbit_id, r.n_detected, r.frequency_hat, r.birkhoff_avg)),
    );
    let freqs: Vec<f64> = rows.iter().map(|r| r.frequency_hat).collect();
    out.summary = json!({
        "c": c,
        "orbits": rows.len(),
        "min_frequency": freqs.iter().copied().fold(f64::INFINITY, f64::min),
        "median_birkhoff": crate::hyperbolic_times::median(&avgs),
    });
    Ok(out)
}

fn run_lyapunov(cfg: &ExperimentConfig, model: &MapModel<f64>) -> Result<Outputs, ExperimentError> {
    let starts = uniform_points(cfg.run.seed, streams::STARTS, cfg.dim(), cfg.run.starts.max(1));
    let spectra = starts.par_iter().map(|x| lyapunov_qr(model, x, cfg.run.iters)).collect::<Result<Vec<_>, _>>()?;
    let d = cfg.dim();
    let mut header = vec!["orbit_id".to_string()];
    header.extend(axis_names(d).iter().map(|a| format!("start_{a}")));
    header.extend((1..=d).map(|i| format!("lambda_{i}")));
    header.extend(["drift", "mean_log_det"].map(String::from));
    let rows: Vec<Vec<String>> = spectra
        .iter()
        .zip(&starts)
        .enumerate()
        .map(|(i, (s, x))| {
            let mut r = vec![i.to_string()];
            r.extend(x.to_f64().iter().map(|v| v.to_string()));
            r.extend(s.exponents.iter().map(|v| v.to_string()));
            r.push(s.drift.to_string());
            r.push(s.mean_log_det.to_string());
            r
        })
        .collect();
    let m = spectra.len() as f64;
    let mean: Vec<f64> = (0..d).map(|k| spectra.iter().map(|s| s.exponents[k]).sum::<f64>() / m).collect();
    let max_drift = spectra.iter().map(|s| s.drift).fold(0.0, f64::max);
    let mut out = Outputs::new();
    out.add("lyapunov.csv", records(&header, &rows)?);
    out.json("lyapunov.json", &json!({ "n": cfg.run.iters, "mean_exponents": mean, "max_drift": max_drift, "orbits": spectra }));
    out.dat(
        "lyapunov.dat",
        &format!("orbit_id {}", (1..=d).map(|i| format!("lambda_{i}")).collect::<Vec<_>>().join(" ")),
        spectra.iter().enumerate().map(|(i, s)| format!("{i} {}", join(&s.exponents))),
    );
    out.summary = json!({ "mean_exponents": mean, "max_drift": max_drift });
    Ok(out)
}

fn run_entropy(cfg: &ExperimentConfig, model: &MapModel<f64>) -> Result<Outputs, ExperimentError> {
    let mu = recipe(cfg).build(model, &base_point(cfg))?;
    let report = entropy_from_formula(model, &mu, &entropy_options(cfg))?;
    let mut out = Outputs::new();
    measure_files(&mut out, &mu, "measure")?;
    out.json("entropy.json", &report);
    out.summary = json!({ "h_formula": report.h_formula, "h_pesin": report.h_pesin, "discrepancy": report.discrepancy });
    Ok(out)
}

fn run_sweep(cfg: &ExperimentConfig, model: &MapModel<f64>) -> Result<Outputs, ExperimentError> {
    let settings = SweepSettings {
        recipe: recipe(cfg),
        certify: cfg.sweep.certify.then(|| certify_options(cfg, model)),
        entropy: cfg.sweep.entropy.then(|| entropy_options(cfg)),
        clusters: None,
        seed: cfg.run.seed,
    };
    let report = stability_sweep(model, &cfg.sweep.grid(), &settings)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let header: Vec<String> = ["t", "certified", "c", "entropy", "entropy_second_seed", "seed_distance", "distance_to_next", "error"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                r.t.to_string(),
                r.certified.map_or(String::new(), |b| b.to_string()),
                opt(r.c),
                opt(r.entropy),
                opt(r.entropy_second_seed),
                opt(r.seed_distance),
                opt(report.distances.get(i).copied().flatten()),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    let mut out = Outputs::new();
    out.add("sweep.csv", records(&header, &rows)?);
    out.json("sweep.json", &report);
    let nan = |v: Option<f64>| v.unwrap_or(f64::NAN);
    out.dat(
        "sweep.dat",
        "t entropy distance_to_next",
        report.rows.iter().enumerate().map(|(i, r)| format!("{} {} {}", r.t, nan(r.entropy), nan(report.distances.get(i).copied().flatten()))),
    );
    out.summary = json!({
        "parameters": report.rows.len(),
        "failed": report.failed(),
        "uncertified": report.uncertified(),
        "modulus": report.modulus,
        "net_modulus": report.net_modulus,
        "entropy_modulus": report.entropy_modulus,
    });
    Ok(out)
}

fn run_unstable(cfg: &ExperimentConfig, model: &MapModel<f64>) -> Result<Outputs, ExperimentError> {
    let cone = ConeSpec::unstable(model, cfg.cones.width)?;
    let c = resolve_c(model, &cone, cfg)?;
    let x = base_point(cfg);
    let samples: Vec<_> = (0..cfg.run.starts.max(1))
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(cfg.run.seed, streams::PER_ITEM + i as u64);
            sample_unstable_direction(model, &x, &cone, cfg.point.depth, UNSTABLE_TOL, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let d = cfg.dim();
    let rank = cone.rank();
    let mut header: Vec<String> = ["sample", "depth", "drift", "contraction_defect"].iter().map(|s| s.to_string()).collect();
    for v in 0..rank {
        header.extend(axis_names(d).iter().map(|a| format!("e{}_{a}", v + 1)));
    }
    let mut entries = Vec::new();
    let rows: Vec<Vec<String>> = samples
        .iter()
        .enumerate()
        .map(|(i, (pre, est))| {
            let defect = verify_backward_contraction(est, c);
            let frame = est.frame.to_f64();
            entries.push(json!({ "sample": i, "depth": pre.depth(), "drift": est.drift, "contraction_defect": defect, "frame": frame }));
            let mut r = vec![i.to_string(), pre.depth().to_string(), est.drift.to_string(), defect.to_string()];
            r.extend(frame.iter().flatten().map(|v| v.to_string()));
            r
        })
        .collect();
    let worst = samples.iter().map(|(_, e)| verify_backward_contraction(e, c)).fold(0.0, f64::max);
    let mut out = Outputs::new();
    out.add("unstable.csv", records(&header, &rows)?);
    out.json("unstable.json", &json!({ "base": x.to_f64(), "c": c, "tolerance": UNSTABLE_TOL, "samples": entries }));
    out.summary = json!({ "samples": samples.len(), "c": c, "max_contraction_defect": worst });
    Ok(out)
}

fn run_preimages(cfg: &ExperimentConfig, model: &MapModel<f64>) -> Result<Outputs, ExperimentError> {
    let x = base_point(cfg);
    let pre = model.preimages(&x)?;
    let d = cfg.dim();
    let mut header = vec!["branch".to_string()];
    header.extend(axis_names(d));
    let rows: Vec<Vec<String>> = pre
        .iter()
        .enumerate()
        .map(|(b, p)| std::iter::once((b + 1).to_string()).chain(p.to_f64().iter().map(|v| v.to_string())).collect())
        .collect();
    let word = random_word(&mut task_rng(cfg.run.seed, streams::WORDS), model.degree(), cfg.point.depth);
    let orbit = extend_preorbit(model, &x, &word)?;
    let mut oh = vec!["j".to_string(), "symbol".to_string()];
    oh.extend(axis_names(d));
    let orows: Vec<Vec<String>> = (0..=orbit.depth())
        .map(|j| {
            let sym = if j == 0 { String::new() } else { word[j - 1].to_string() };
            let mut r = vec![j.to_string(), sym];
            r.extend(orbit.point(j).to_f64().iter().map(|v| v.to_string()));
            r
        })
        .collect();
    let mut out = Outputs::new();
    out.add("preimages.csv", records(&header, &rows)?);
    out.add("preorbit.csv", records(&oh, &orows)?);
    out.dat(
        "preorbit.dat",
        &format!("j {}", axis_names(d).join(" ")),
        (0..=orbit.depth()).map(|j| format!("{j} {}", join(&orbit.point(j).to_f64()))),
    );
    let pts: Vec<Vec<f64>> = pre.iter().map(|p| p.to_f64()).collect();
    out.json("preimages.json", &json!({ "point": x.to_f64(), "degree": model.degree(), "preimages": pts, "word": word }));
    out.summary = json!({ "degree": model.degree(), "depth": orbit.depth() });
    Ok(out)
}

fn compute(cfg: &ExperimentConfig) -> Result<Outputs, ExperimentError> {
    let model = cfg.build_model()?;
    match cfg.kind {
        Kind::Check => run_check(cfg, &model),
        Kind::Srb => run_srb(cfg, &model),
        Kind::Hyptimes => run_hyptimes(cfg, &model),
        Kind::Lyapunov => run_lyapunov(cfg, &model),
        Kind::Entropy => run_entropy(cfg, &model),
        Kind::Sweep => run_sweep(cfg, &model),
        Kind::Unstable => run_unstable(cfg, &model),
        Kind::Preimages => run_preimages(cfg, &model),
    }
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), ExperimentError> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|source| ExperimentError::Io { path, source })
}

/// Runs the experiment on `cfg.run.workers` threads and writes its files to
/// [`ExperimentConfig::out_dir`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunManifest, ExperimentError> {
    let started = Instant::now();
    let outputs = with_workers(cfg.run.workers, || compute(cfg)).map_err(|e| ExperimentError::Pool(e.to_string()))??;
    let out_dir = cfg.out_dir();
    let dir = PathBuf::from(&out_dir);
    std::fs::create_dir_all(&dir).map_err(|source| ExperimentError::Io { path: dir.clone(), source })?;
    let mut files = Vec::with_capacity(outputs.files.len());
    for (name, bytes) in &outputs.files {
        write_file(&dir, name, bytes)?;
        files.push(FileEntry { name: name.clone(), bytes: bytes.len(), sha256: sha256_hex(bytes) });
    }
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        kind: cfg.kind,
        config_hash: sha256_hex(cfg.canonical_json().as_bytes()),
        seed: cfg.run.seed,
        workers: cfg.run.workers,
        wall_time_s: started.elapsed().as_secs_f64(),
        out_dir,
        files,
        summary: outputs.summary,
        passed: outputs.passed,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_file(&dir, MANIFEST, text.as_bytes())?;
    log::info!("{} run wrote {} files to {}", cfg.kind.name(), manifest.files.len(), manifest.out_dir);
    Ok(manifest)
}
