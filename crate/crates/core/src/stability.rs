//! Statistical-stability experiments over a one-parameter family: SRB
//! candidates per parameter, weak* distances between neighbours, entropy
//! along the family, basin coverage and the convex-combination check.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certify::{certify, CertifyOptions, Region};
use crate::cones::ConeSpec;
use crate::measure::{weak_star_distance, EmpiricalMeasure, MeasureError};
use crate::models::MapModel;
use crate::parallel::{streams, uniform_points};
use crate::spectrum::{entropy_from_formula, EntropyOptions, SrbRecipe};
use crate::srb::{birkhoff_vector, count_physical_measures, ClusterSettings, FourierDictionary, PhysicalMeasureReport};
use crate::torus::TorusPoint;

pub use crate::measure::weak_star_distance as weak_star;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error("parameter grid must be nonempty and strictly increasing")]
    BadGrid,
    #[error("no candidate measures to combine")]
    NoCandidates,
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterCheck {
    pub starts: usize,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub recipe: SrbRecipe,
    /// Certify each parameter; skipped when absent.
    pub certify: Option<CertifyOptions>,
    /// Entropy along the family; skipped when absent.
    pub entropy: Option<EntropyOptions>,
    /// Count physical measures per parameter; skipped when absent.
    pub clusters: Option<ClusterCheck>,
    pub seed: u64,
}

impl SweepSettings {
    pub fn defaults(dim: usize) -> Self {
        Self { recipe: SrbRecipe::defaults(dim), certify: None, entropy: None, clusters: None, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub t: f64,
    pub certified: Option<bool>,
    pub c: Option<f64>,
    pub clusters: Option<usize>,
    pub entropy: Option<f64>,
    pub entropy_second_seed: Option<f64>,
    /// Distance between the measures built from the two seeds.
    pub seed_distance: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilityReport {
    pub rows: Vec<SweepRow>,
    /// `d(μ_{t_i}, μ_{t_{i+1}})`; `None` when either side failed.
    pub distances: Vec<Option<f64>>,
    pub max_step: f64,
    /// Largest successive distance.
    pub modulus: f64,
    /// Largest two-seed distance over the grid.
    pub noise_floor: f64,
    pub net_modulus: f64,
    pub entropy_modulus: Option<f64>,
    pub entropy_noise_floor: Option<f64>,
    pub net_entropy_modulus: Option<f64>,
    #[serde(skip)]
    pub measures: Vec<Option<EmpiricalMeasure>>,
}

impl StabilityReport {
    pub fn failed(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn uncertified(&self) -> usize {
        self.rows.iter().filter(|r| r.certified == Some(false)).count()
    }
}

fn disk_bases(dim: usize, seed: u64) -> (TorusPoint<f64>, TorusPoint<f64>) {
    let a = uniform_points(seed, streams::DISK, dim, 1)[0];
    let b = uniform_points(seed, streams::SECOND_SEED, dim, 1)[0];
    (a, b)
}

struct PerParameter {
    row: SweepRow,
    measure: Option<EmpiricalMeasure>,
}

fn run_parameter(model: &MapModel<f64>, t: f64, settings: &SweepSettings) -> PerParameter {
    let mut row = SweepRow {
        t,
        certified: None,
        c: None,
        clusters: None,
        entropy: None,
        entropy_second_seed: None,
        seed_distance: None,
        error: None,
    };
    let m = match model.with_t(t) {
        Ok(m) => m,
        Err(e) => {
            row.error = Some(e.to_string());
            return PerParameter { row, measure: None };
        }
    };
    if let Some(opts) = &settings.certify {
        let cones = ConeSpec::unstable(&m, settings.recipe.cone_width)
            .and_then(|cu| ConeSpec::stable(&m, settings.recipe.cone_width).map(|cs| (cu, cs)));
        match cones {
            Ok((cu, cs)) => match certify(&m, &cu, cs.as_ref(), &Region::Support, opts) {
                Ok(cert) => {
                    row.certified = Some(cert.valid);
                    row.c = Some(cert.c);
                }
                Err(e) => {
                    log::warn!("t = {t}: certificate failed: {e}");
                    row.certified = Some(false);
                }
            },
            Err(e) => {
                log::warn!("t = {t}: no cones: {e}");
                row.certified = Some(false);
            }
        }
        if row.certified == Some(false) {
            log::warn!("t = {t} is outside the certified class; continuing");
        }
    }
    let (base, second) = disk_bases(m.dim(), settings.seed);
    let built = settings.recipe.build(&m, &base).and_then(|a| Ok((a, settings.recipe.build(&m, &second)?)));
    let (mu, nu) = match built {
        Ok(pair) => pair,
        Err(e) => {
            row.error = Some(e.to_string());
            return PerParameter { row, measure: None };
        }
    };
    row.seed_distance = weak_star_distance(&mu, &nu).ok();
    if let Some(opts) = &settings.entropy {
        let second_opts = EntropyOptions { seed: opts.seed.wrapping_add(1), ..opts.clone() };
        match (entropy_from_formula(&m, &mu, opts), entropy_from_formula(&m, &nu, &second_opts)) {
            (Ok(a), Ok(b)) => {
                row.entropy = Some(a.h_formula);
                row.entropy_second_seed = Some(b.h_formula);
            }
            (Err(e), _) | (_, Err(e)) => row.error = Some(e.to_string()),
        }
    }
    if let Some(check) = &settings.clusters {
        let starts = uniform_points(settings.seed, streams::STARTS, m.dim(), check.starts);
        match count_physical_measures(&m, &starts, check.n, &ClusterSettings::defaults(m.dim())) {
            Ok(r) => row.clusters = Some(r.count()),
            Err(e) => row.error = Some(e.to_string()),
        }
    }
    PerParameter { row, measure: Some(mu) }
}

/// SRB candidates along `t ↦ model.with_t(t)`. Parameters run concurrently and
/// are merged in grid order; a failing parameter is recorded and skipped.
pub fn stability_sweep(model: &MapModel<f64>, ts: &[f64], settings: &SweepSettings) -> Result<StabilityReport, StabilityError> {
    if ts.is_empty() || ts.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(StabilityError::BadGrid);
    }
    let runs: Vec<PerParameter> = ts.par_iter().map(|&t| run_parameter(model, t, settings)).collect();
    let distances: Vec<Option<f64>> = runs
        .windows(2)
        .map(|w| match (&w[0].measure, &w[1].measure) {
            (Some(a), Some(b)) => weak_star_distance(a, b).ok(),
            _ => None,
        })
        .collect();
    let modulus = distances.iter().flatten().fold(0.0, |m: f64, &d| m.max(d));
    let noise_floor = runs.iter().filter_map(|r| r.row.seed_distance).fold(0.0, f64::max);
    let (entropy_modulus, entropy_noise_floor) = if settings.entropy.is_some() {
        let jump = runs
            .windows(2)
            .filter_map(|w| Some((w[1].row.entropy? - w[0].row.entropy?).abs()))
            .fold(0.0, f64::max);
        let floor = runs
            .iter()
            .filter_map(|r| Some((r.row.entropy? - r.row.entropy_second_seed?).abs()))
            .fold(0.0, f64::max);
        (Some(jump), Some(floor))
    } else {
        (None, None)
    };
    let (rows, measures) = runs.into_iter().map(|r| (r.row, r.measure)).unzip();
    Ok(StabilityReport {
        rows,
        distances,
        max_step: ts.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max),
        modulus,
        noise_floor,
        net_modulus: (modulus - noise_floor).max(0.0),
        entropy_modulus,
        entropy_noise_floor,
        net_entropy_modulus: entropy_modulus.zip(entropy_noise_floor).map(|(m, f)| (m - f).max(0.0)),
        measures,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverageReport {
    pub starts: usize,
    /// Per cluster of the candidate report, in its order.
    pub fractions: Vec<f64>,
    pub unassigned: f64,
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Fraction of the given starts whose Birkhoff vector lies within twice the
/// cluster radius of a candidate centroid (the nearest one wins). Starts that
/// do not converge or match nothing count as unassigned.
pub fn basin_coverage_estimate(
    model: &MapModel<f64>,
    candidates: &PhysicalMeasureReport,
    starts: &[TorusPoint<f64>],
    n: usize,
    settings: &ClusterSettings,
) -> CoverageReport {
    let k = candidates.clusters.len();
    if starts.is_empty() {
        return CoverageReport { starts: 0, fractions: vec![0.0; k], unassigned: 0.0 };
    }
    let dict = FourierDictionary::new(model.dim(), settings.order);
    let labels: Vec<Option<usize>> = starts
        .par_iter()
        .map(|x| {
            let v = birkhoff_vector(model, &dict, x, n, settings.burn_in);
            if v.half_gap > settings.radius {
                return None;
            }
            candidates
                .clusters
                .iter()
                .enumerate()
                .map(|(i, c)| (i, sup_distance(&c.centroid, &v.mean)))
                .filter(|(_, d)| *d <= 2.0 * settings.radius)
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i)
        })
        .collect();
    let total = starts.len() as f64;
    let mut fractions = vec![0.0; k];
    let mut unassigned = 0.0;
    for l in labels {
        match l {
            Some(i) => fractions[i] += 1.0 / total,
            None => unassigned += 1.0 / total,
        }
    }
    CoverageReport { starts: starts.len(), fractions, unassigned }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvexFit {
    /// Nonnegative, summing to one.
    pub weights: Vec<f64>,
    /// Weak* distance from the target to the fitted mixture.
    pub distance: f64,
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &x) in u.iter().enumerate() {
        cum += x;
        let cand = (cum - 1.0) / (i + 1) as f64;
        if x - cand > 0.0 {
            theta = cand;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Mixture weights minimizing the mode-weighted squared distance between the
/// Fourier coefficients of `target` and of the mixture, by projected gradient
/// on the simplex.
pub fn convex_combination_fit(target: &EmpiricalMeasure, parts: &[&EmpiricalMeasure]) -> Result<ConvexFit, StabilityError> {
    if parts.is_empty() {
        return Err(StabilityError::NoCandidates);
    }
    let tf = target.fourier();
    let t = tf.truncation;
    for p in parts {
        if p.fourier().truncation != t {
            let q = p.fourier().truncation;
            return Err(MeasureError::TruncationMismatch(t.dim, t.k_max, q.dim, q.k_max).into());
        }
    }
    let m = parts.len();
    let zero = t.zero_index();
    let w: Vec<f64> = (0..t.len()).map(|i| if i == zero { 1.0 } else { t.weight(i) }).collect();
    let mut gram = vec![vec![0.0; m]; m];
    let mut rhs = vec![0.0; m];
    for a in 0..m {
        let pa = &parts[a].fourier().coefficients;
        for b in 0..m {
            let pb = &parts[b].fourier().coefficients;
            gram[a][b] = (0..t.len()).map(|k| w[k] * (pa[k] * pb[k].conj()).re).sum();
        }
        rhs[a] = (0..t.len()).map(|k| w[k] * (tf.coefficients[k] * pa[k].conj()).re).sum();
    }
    let trace: f64 = (0..m).map(|a| gram[a][a]).sum();
    let step = if trace > 0.0 { 1.0 / trace } else { 1.0 };
    let mut x = vec![1.0 / m as f64; m];
    for _ in 0..5000 {
        let grad: Vec<f64> = (0..m).map(|a| (0..m).map(|b| gram[a][b] * x[b]).sum::<f64>() - rhs[a]).collect();
        let next = project_to_simplex(&x.iter().zip(&grad).map(|(xi, g)| xi - step * g).collect::<Vec<_>>());
        let moved = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = next;
        if moved < 1e-14 {
            break;
        }
    }
    let mix = EmpiricalMeasure::mixture(&x, parts)?;
    Ok(ConvexFit { distance: weak_star_distance(target, &mix)?, weights: x })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::MeasureGrid;

    fn small(dim: usize) -> SweepSettings {
        let recipe = SrbRecipe { disk_samples: 300, n: 100, grid: MeasureGrid::new(dim, 32, 4), ..SrbRecipe::defaults(dim) };
        SweepSettings { recipe, ..SweepSettings::defaults(dim) }
    }

    #[test]
    fn constant_family_sits_at_the_noise_floor() {
        let m = MapModel::<f64>::cat_map();
        let r = stability_sweep(&m, &[0.0, 0.5, 1.0], &small(2)).unwrap();
        assert_eq!(r.rows.len(), 3);
        assert!(r.distances.iter().all(|d| d.unwrap() < 1e-12));
        assert!(r.noise_floor > 0.0);
        assert_eq!(r.net_modulus, 0.0);
    }

    #[test]
    fn bad_grids_rejected() {
        let m = MapModel::<f64>::cat_map();
        assert_eq!(stability_sweep(&m, &[], &small(2)).unwrap_err(), StabilityError::BadGrid);
        assert_eq!(stability_sweep(&m, &[1.0, 0.5], &small(2)).unwrap_err(), StabilityError::BadGrid);
    }

    #[test]
    fn leaving_the_class_is_flagged_not_fatal() {
        let m = MapModel::<f64>::pitchfork(2, 0.3, 0.1, 1.0).unwrap();
        let mut s = small(3);
        s.certify = Some(CertifyOptions { gamma0: Some(0.55), ..CertifyOptions::default() });
        let r = stability_sweep(&m, &[0.0, 1.0], &s).unwrap();
        assert_eq!(r.rows[0].certified, Some(true));
        assert_eq!(r.rows[1].certified, Some(false));
        assert_eq!(r.failed(), 0);
        assert!(r.measures.iter().all(|m| m.is_some()));
    }

    #[test]
    fn simplex_projection() {
        let p = project_to_simplex(&[0.5, 0.5]);
        assert_eq!(p, vec![0.5, 0.5]);
        let p = project_to_simplex(&[2.0, -1.0, 0.0]);
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
        let p = project_to_simplex(&[0.3, 0.3, 0.3]);
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn convex_fit_recovers_mixture_weights() {
        let grid = MeasureGrid::new(2, 16, 4);
        let a = EmpiricalMeasure::dirac(grid, &TorusPoint::from_f64(&[0.0, 0.0]));
        let b = EmpiricalMeasure::dirac(grid, &TorusPoint::from_f64(&[0.5, 0.25]));
        let c = EmpiricalMeasure::lebesgue(grid);
        let target = EmpiricalMeasure::mixture(&[0.2, 0.5, 0.3], &[&a, &b, &c]).unwrap();
        let fit = convex_combination_fit(&target, &[&a, &b, &c]).unwrap();
        for (w, want) in fit.weights.iter().zip([0.2, 0.5, 0.3]) {
            assert!((w - want).abs() < 1e-6, "{:?}", fit.weights);
        }
        assert!(fit.distance < 1e-5);
        // a point mass elsewhere is far from the hull
        let far = EmpiricalMeasure::dirac(grid, &TorusPoint::from_f64(&[0.25, 0.75]));
        assert!(convex_combination_fit(&far, &[&a, &b]).unwrap().distance > 0.1);
        assert!(convex_combination_fit(&far, &[]).is_err());
    }

    #[test]
    fn coverage_of_a_unique_measure() {
        let m = MapModel::<f64>::cat_map();
        let settings = ClusterSettings::defaults(2);
        let starts = uniform_points(3, streams::STARTS, 2, 40);
        let report = count_physical_measures(&m, &starts, 20000, &settings).unwrap();
        assert_eq!(report.count(), 1);
        let fresh = uniform_points(4, streams::STARTS, 2, 40);
        let cov = basin_coverage_estimate(&m, &report, &fresh, 20000, &settings);
        assert!((cov.fractions[0] + cov.unassigned - 1.0).abs() < 1e-12);
        assert!(cov.fractions[0] > 0.9, "{cov:?}");
        let empty = basin_coverage_estimate(&m, &report, &[], 100, &settings);
        assert_eq!(empty.starts, 0);
        assert_eq!(empty.fractions, vec![0.0]);
    }
}
