//! Lyapunov spectra by the QR cocycle, and the entropy of an invariant measure
//! from the stable-Jacobian formula, cross-checked against the positive
//! exponents.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cones::{restricted_log_det, stable_frame_at, ConeSpec};
use crate::linalg::{Frame, Vector};
use crate::measure::{EmpiricalMeasure, MeasureGrid};
use crate::models::{MapModel, ModelError};
use crate::parallel::{streams, task_rng};
use crate::srb::{cesaro_pushforward, DiskSample, SrbError};
use crate::torus::{LatticePoint, TorusPoint};

pub const MIN_ORBIT: usize = 100;
/// Exponents closer than this share a multiplicity class.
pub const MULTIPLICITY_GAP: f64 = 1e-2;
pub const DEFAULT_STABLE_DEPTH: usize = 40;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectrumError {
    #[error("orbit length {0} is below the minimum of {MIN_ORBIT}")]
    ShortOrbit(usize),
    #[error("derivative cocycle lost rank at step {0}")]
    RankLoss(usize),
    #[error("measure has no mass")]
    EmptyMeasure,
    #[error("parameter list must be strictly increasing")]
    UnorderedParameters,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Srb(#[from] SrbError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSpectrum {
    /// Descending.
    pub exponents: Vec<f64>,
    /// Class sizes, in the order of the exponents.
    pub multiplicities: Vec<usize>,
    pub n_used: usize,
    /// Largest change of an exponent between the `n/2` and `n` estimates.
    pub drift: f64,
    /// Time average of `log |det Df|` along the same orbit.
    pub mean_log_det: f64,
}

impl LyapunovSpectrum {
    pub fn positive_sum(&self) -> f64 {
        self.exponents.iter().filter(|&&l| l > 0.0).sum()
    }

    pub fn negative_sum(&self) -> f64 {
        self.exponents.iter().filter(|&&l| l < 0.0).sum()
    }
}

/// Groups descending exponents whose consecutive gap is below `gap`.
pub fn multiplicities(exponents: &[f64], gap: f64) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for (i, l) in exponents.iter().enumerate() {
        match out.last_mut() {
            Some(m) if exponents[i - 1] - l < gap => *m += 1,
            _ => out.push(1),
        }
    }
    out
}

/// Discrete QR method: a full orthonormal frame is pushed by `Df` along the
/// orbit and re-factored each step; exponents are the averaged log R-diagonal.
/// The orbit runs on the exact lattice so that expanding integer directions do
/// not collapse in floating point.
pub fn lyapunov_qr(model: &MapModel<f64>, x: &TorusPoint<f64>, n: usize) -> Result<LyapunovSpectrum, SpectrumError> {
    if n < MIN_ORBIT {
        return Err(SpectrumError::ShortOrbit(n));
    }
    let d = model.dim();
    let basis: Vec<Vector<f64>> = (0..d).map(|a| Vector::basis(d, a)).collect();
    let mut frame = Frame::orthonormalize(d, &basis).expect("standard basis");
    let mut logs = [0.0; 3];
    let mut half = [0.0; 3];
    let mut log_det = 0.0;
    let mut p = LatticePoint::from_torus(x);
    for step in 0..n {
        let j = model.jacobian(&p.to_torus());
        log_det += j.det().abs().ln();
        let images: Vec<Vector<f64>> = frame.vectors().iter().map(|v| j.mul_vec(v)).collect();
        let (next, r) = Frame::qr(d, &images).ok_or(SpectrumError::RankLoss(step))?;
        for a in 0..d {
            logs[a] += r[a].ln();
        }
        frame = next;
        if step + 1 == n / 2 {
            half = logs;
        }
        p = model.lattice_step(&p);
    }
    let sorted = |acc: &[f64; 3], len: usize| {
        let mut e: Vec<f64> = acc[..d].iter().map(|s| s / len as f64).collect();
        e.sort_by(|a, b| b.total_cmp(a));
        e
    };
    let exponents = sorted(&logs, n);
    let early = sorted(&half, n / 2);
    let drift = exponents.iter().zip(&early).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(LyapunovSpectrum {
        multiplicities: multiplicities(&exponents, MULTIPLICITY_GAP),
        exponents,
        n_used: n,
        drift,
        mean_log_det: log_det / n as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyOptions {
    /// Pull-back depth for the stable bundle at bin centers.
    pub stable_depth: usize,
    /// Starts of the exponent ensemble.
    pub ensemble: usize,
    /// Orbit length per start.
    pub orbit: usize,
    pub seed: u64,
}

impl Default for EntropyOptions {
    fn default() -> Self {
        Self { stable_depth: DEFAULT_STABLE_DEPTH, ensemble: 64, orbit: 2000, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub h_formula: f64,
    pub h_pesin: f64,
    pub discrepancy: f64,
    /// Mass of bins where the stable bundle could not be estimated.
    pub excluded_mass: f64,
    /// The formula with bins merged pairwise along each axis.
    pub h_formula_half: f64,
    /// `∫ log |det Df| dμ` by the same quadrature.
    pub log_det_integral: f64,
    /// Ensemble mean of the summed negative exponents.
    pub negative_sum: f64,
    /// `|∫ log|det Df| - h_formula - negative_sum|`.
    pub identity_residual: f64,
}

/// Per-point integrands: `log |det Df|` and `log |det Df|_{E^s}|`.
fn integrands(model: &MapModel<f64>, x: &TorusPoint<f64>, depth: usize) -> Option<(f64, f64)> {
    let j = model.jacobian(x);
    let full = j.det().abs().ln();
    let stable = stable_frame_at(model, x, depth).ok()?;
    let s = restricted_log_det(&j, &stable);
    (full.is_finite() && s.is_finite()).then_some((full, s))
}

/// Quadrature over weighted representative points. Returns
/// `(∫ log|det|, ∫ (log|det| - log|det_s|), excluded mass)`.
fn quadrature(model: &MapModel<f64>, cells: &[(TorusPoint<f64>, f64)], depth: usize) -> (f64, f64, f64) {
    cells
        .par_iter()
        .map(|(x, w)| match integrands(model, x, depth) {
            Some((full, s)) => (w * full, w * (full - s), 0.0),
            None => (0.0, 0.0, *w),
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2))
}

fn fine_cells(mu: &EmpiricalMeasure) -> Vec<(TorusPoint<f64>, f64)> {
    let grid = mu.grid();
    mu.weights()
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(i, &w)| (grid.bin_center(i), w))
        .collect()
}

/// Bins `2j, 2j+1` along each axis merged into one cell represented at the
/// mean of their centers, `(2j + 1/2)/R`.
fn coarse_cells(mu: &EmpiricalMeasure) -> Vec<(TorusPoint<f64>, f64)> {
    let grid = mu.grid();
    let r = grid.resolution;
    let half = r.div_ceil(2);
    let dim = grid.dim;
    let mut weights = vec![0.0; half.pow(dim as u32)];
    for (i, &w) in mu.weights().iter().enumerate() {
        let mut idx = i;
        let mut c = 0;
        let mut stride = 1;
        for _ in 0..dim {
            c += (idx % r) / 2 * stride;
            idx /= r;
            stride *= half;
        }
        weights[c] += w;
    }
    weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(mut c, &w)| {
            let mut x = [0.0; 3];
            for a in (0..dim).rev() {
                x[a] = (2.0 * (c % half) as f64 + 0.5) / r as f64;
                c /= half;
            }
            (TorusPoint::from_f64(&x[..dim]), w)
        })
        .collect()
}

/// Starts distributed as `μ`: a bin drawn by weight, then a uniform point in it.
pub fn sample_from_measure(mu: &EmpiricalMeasure, count: usize, seed: u64) -> Result<Vec<TorusPoint<f64>>, SpectrumError> {
    let dist = WeightedIndex::new(mu.weights()).map_err(|_| SpectrumError::EmptyMeasure)?;
    let grid = mu.grid();
    let mut rng = task_rng(seed, streams::ENSEMBLE);
    Ok((0..count)
        .map(|_| {
            let c = grid.bin_center(dist.sample(&mut rng));
            let jitter: Vec<f64> = (0..grid.dim).map(|_| (rng.random::<f64>() - 0.5) / grid.resolution as f64).collect();
            c.shifted(&Vector::from_f64(&jitter))
        })
        .collect())
}

/// Entropy by the stable-Jacobian formula over the bins of `μ`, with the
/// positive-exponent sum over a `μ`-distributed ensemble as the cross-check.
pub fn entropy_from_formula(model: &MapModel<f64>, mu: &EmpiricalMeasure, opts: &EntropyOptions) -> Result<EntropyReport, SpectrumError> {
    let total: f64 = mu.weights().iter().sum();
    if !(total > 0.0) {
        return Err(SpectrumError::EmptyMeasure);
    }
    let normalize = |cells: Vec<(TorusPoint<f64>, f64)>| -> Vec<(TorusPoint<f64>, f64)> {
        cells.into_iter().map(|(x, w)| (x, w / total)).collect()
    };
    let (log_det, h_fine, excluded) = quadrature(model, &normalize(fine_cells(mu)), opts.stable_depth);
    let (_, h_half, excluded_half) = quadrature(model, &normalize(coarse_cells(mu)), opts.stable_depth);
    let kept = 1.0 - excluded;
    let h_formula = if kept > 0.0 { h_fine / kept } else { f64::NAN };
    let h_formula_half = if excluded_half < 1.0 { h_half / (1.0 - excluded_half) } else { f64::NAN };

    let starts = sample_from_measure(mu, opts.ensemble, opts.seed)?;
    let spectra: Vec<LyapunovSpectrum> =
        starts.par_iter().map(|x| lyapunov_qr(model, x, opts.orbit)).collect::<Result<_, _>>()?;
    let m = spectra.len().max(1) as f64;
    let h_pesin = spectra.iter().map(|s| s.positive_sum()).sum::<f64>() / m;
    let negative_sum = spectra.iter().map(|s| s.negative_sum()).sum::<f64>() / m;
    let log_det_integral = if kept > 0.0 { log_det / kept } else { f64::NAN };
    Ok(EntropyReport {
        h_formula,
        h_pesin,
        discrepancy: (h_formula - h_pesin).abs(),
        excluded_mass: excluded,
        h_formula_half,
        log_det_integral,
        negative_sum,
        identity_residual: (log_det_integral - h_formula - negative_sum).abs(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuityRow {
    pub t: f64,
    pub h: Option<f64>,
    pub h_pesin: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuityTable {
    pub rows: Vec<ContinuityRow>,
    pub max_step: f64,
    /// Largest `|h(t_{i+1}) - h(t_i)|` over consecutive rows that both succeeded.
    pub max_jump: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrbRecipe {
    pub disk_radius: f64,
    pub disk_samples: usize,
    pub n: usize,
    pub cone_width: f64,
    pub grid: MeasureGrid,
}

impl SrbRecipe {
    pub fn defaults(dim: usize) -> Self {
        Self { disk_radius: 0.05, disk_samples: 2000, n: 400, cone_width: 0.5, grid: MeasureGrid::default_for(dim) }
    }

    /// The Cesàro average of a disk tangent to the unstable cone.
    pub fn build(&self, model: &MapModel<f64>, base: &TorusPoint<f64>) -> Result<EmpiricalMeasure, SpectrumError> {
        let cone = ConeSpec::unstable(model, self.cone_width).map_err(SrbError::from)?;
        let disk = DiskSample::tangent_to(&cone, *base, self.disk_radius, self.disk_samples)?;
        Ok(cesaro_pushforward(model, &disk, self.n, self.grid)?)
    }
}

/// Entropy along the one-parameter family `model.with_t(t)`. Failures are
/// recorded per row and skipped in the modulus.
pub fn entropy_continuity_probe(
    model: &MapModel<f64>,
    ts: &[f64],
    recipe: &SrbRecipe,
    opts: &EntropyOptions,
) -> Result<ContinuityTable, SpectrumError> {
    if ts.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(SpectrumError::UnorderedParameters);
    }
    let base = TorusPoint::from_f64(&[0.3, 0.1, 0.2][..model.dim()]);
    let rows: Vec<ContinuityRow> = ts
        .iter()
        .map(|&t| {
            let run = || -> Result<EntropyReport, SpectrumError> {
                let m = model.with_t(t)?;
                let mu = recipe.build(&m, &base)?;
                entropy_from_formula(&m, &mu, opts)
            };
            match run() {
                Ok(r) => ContinuityRow { t, h: Some(r.h_formula), h_pesin: Some(r.h_pesin), error: None },
                Err(e) => ContinuityRow { t, h: None, h_pesin: None, error: Some(e.to_string()) },
            }
        })
        .collect();
    let max_step = ts.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let max_jump = rows
        .windows(2)
        .filter_map(|w| Some((w[1].h? - w[0].h?).abs()))
        .fold(0.0, f64::max);
    Ok(ContinuityTable { rows, max_step, max_jump })
}
