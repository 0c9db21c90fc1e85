//! Numerical certificate of the open-class conditions: grid minimization of the
//! cone floors, the visit-frequency estimate for the region where expansion
//! fails, and the derived hyperbolicity constant.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cones::{min_expansion, min_subspace_jacobian, restricted_norm, stable_frame_at, ConeError, ConeSpec};
use crate::linalg::{Frame, Vector};
use crate::models::{operator_norm, regular_grid, MapModel};
use crate::parallel::{streams, task_rng};
use crate::srb::{DiskSample, SrbError};
use crate::torus::{LatticePoint, TorusPoint};

pub const MIN_GRID: usize = 32;
/// Admissible `γ_0` values, ascending.
pub const GAMMA_GRID: [f64; 9] = [0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];
pub const DEFAULT_STABLE_DEPTH: usize = 40;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertError {
    #[error("certificate grid needs at least {MIN_GRID} points per axis, got {0}")]
    GridTooCoarse(usize),
    #[error("certificate is invalid: {0}")]
    InvalidCertificate(String),
    #[error("visit-frequency sweep needs n_max >= 8, got {0}")]
    ShortSweep(usize),
    #[error(transparent)]
    Cone(#[from] ConeError),
    #[error(transparent)]
    Srb(#[from] SrbError),
}

/// Where expansion along the cone may fail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Region {
    Empty,
    Ball { center: Vec<f64>, radius: f64 },
    /// The support of the model's perturbation.
    Support,
    /// Points of the support whose distance from the bump center along the
    /// expanding directions is below `radius`: a sink's local basin.
    Core { radius: f64 },
}

impl Region {
    pub fn contains(&self, model: &MapModel<f64>, x: &TorusPoint<f64>) -> bool {
        match self {
            Region::Empty => false,
            Region::Ball { center, radius } => x.distance(&TorusPoint::from_f64(center)) < *radius,
            Region::Support => model.in_support(x),
            Region::Core { radius } => {
                model.in_support(x) && model.bump_coordinates(x).is_some_and(|(plane, _)| plane < *radius)
            }
        }
    }

    pub fn is_empty_for(&self, model: &MapModel<f64>) -> bool {
        match self {
            Region::Empty => true,
            Region::Ball { radius, .. } => *radius <= 0.0,
            Region::Support => !model.is_perturbed(),
            Region::Core { radius } => !model.is_perturbed() || *radius <= 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    /// Regular grid points per axis (at least 32).
    pub grid: usize,
    /// Points per eigen-coordinate on the refined support grid.
    pub support_grid: usize,
    /// Rings used when sampling subspaces of a plane cone.
    pub subspace_samples: usize,
    pub stable_depth: usize,
    /// Fixed `γ_0`; estimated from visit frequencies when absent.
    pub gamma0: Option<f64>,
    pub gamma_samples: usize,
    pub gamma_n_max: usize,
    pub seed: u64,
    /// Cells per axis of the injectivity-domain partition probe (0 skips it).
    pub partition_cells: usize,
    /// Points left out of the check, so the conditions are certified on the
    /// complement (a trapping region that avoids a sink's basin).
    #[serde(default)]
    pub exclude: Option<Region>,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            grid: MIN_GRID,
            support_grid: 40,
            subspace_samples: 6,
            stable_depth: DEFAULT_STABLE_DEPTH,
            gamma0: None,
            gamma_samples: 400,
            gamma_n_max: 400,
            seed: 0,
            partition_cells: 0,
            exclude: None,
        }
    }
}

/// Lipschitz corrections: how much a floor can move between grid points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slack {
    /// Half-cell bound on `‖Dg(x) - Dg(y)‖` over the refined support grid.
    pub jacobian: f64,
    pub lambda_s: f64,
    pub l_floor: f64,
    pub sigma: f64,
}

/// Floor minus threshold, per condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub lambda_s: f64,
    pub lambda_u: f64,
    pub sigma: f64,
    /// `L - √λ`
    pub l_vs_sqrt_lambda: f64,
    pub c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub condition: String,
    pub point: Vec<f64>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitFrequencyEstimate {
    pub gamma: f64,
    pub n: usize,
    pub fraction_exceeding: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub gamma: f64,
    pub k_hat: f64,
    pub eps_hat: f64,
    pub decaying: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaEstimate {
    pub gamma0: f64,
    pub samples: usize,
    pub table: Vec<VisitFrequencyEstimate>,
    pub fits: Vec<DecayFit>,
}

impl GammaEstimate {
    pub fn fit(&self, gamma: f64) -> Option<&DecayFit> {
        self.fits.iter().find(|f| (f.gamma - gamma).abs() < 1e-12)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionProbe {
    pub cells_per_axis: usize,
    pub pieces_checked: usize,
    pub max_components: usize,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionCertificate {
    /// Minimal expansion of `Dg^{-1}` on the stable cone (infinite without one).
    pub lambda_s: f64,
    /// Minimal cone expansion off the region.
    pub lambda_u: f64,
    /// Minimal cone expansion everywhere.
    #[serde(rename = "L")]
    pub l_floor: f64,
    /// Minimal Jacobian along subspaces in the unstable cone.
    pub sigma: f64,
    /// Maximal `‖Dg|_{E^s}‖` (zero without a stable bundle).
    pub lambda: f64,
    pub gamma0: f64,
    pub c: f64,
    pub region: Region,
    pub region_empty: bool,
    pub grid_resolution: usize,
    pub support_resolution: usize,
    pub points_checked: usize,
    pub slack: Slack,
    pub margins: Margins,
    /// Observed floors clear their thresholds on the grid.
    pub valid: bool,
    /// The margins also exceed the Lipschitz slack, so the floors hold between
    /// grid points as well.
    pub robust: bool,
    pub violations: Vec<Violation>,
    pub gamma_estimate: Option<GammaEstimate>,
    pub partition: Option<PartitionProbe>,
    /// Domain left out of the check, if any.
    pub excluded: Option<Region>,
}

/// Share of the repelling-circle radius excluded around a sink.
pub const SINK_CORE_FRACTION: f64 = 0.9;

/// Default excluded domain: a core strictly inside the repelling circle of a
/// sink created by the perturbation, so that the check runs on a trapping
/// region around the rest of the attractor. `None` for models without one.
pub fn trapping_exclusion(model: &MapModel<f64>) -> Option<Region> {
    model.repelling_radius().map(|r| Region::Core { radius: SINK_CORE_FRACTION * r })
}

/// `log(L^{γ_0} λ_u^{1-γ_0})`, the rate bounding Birkhoff averages of the cone
/// conorm from above by `-c`.
pub fn birkhoff_bound(l_floor: f64, lambda_u: f64, gamma0: f64) -> f64 {
    gamma0 * l_floor.ln() + (1.0 - gamma0) * lambda_u.ln()
}

/// The bound of a valid certificate; an empty region leaves only `log λ_u`.
pub fn derive_birkhoff_bound(cert: &ConditionCertificate) -> Result<f64, CertError> {
    if !cert.valid {
        let names: Vec<&str> = cert.violations.iter().map(|v| v.condition.as_str()).collect();
        return Err(CertError::InvalidCertificate(names.join(", ")));
    }
    if cert.region_empty {
        return Ok(cert.lambda_u.ln());
    }
    Ok(birkhoff_bound(cert.l_floor, cert.lambda_u, cert.gamma0))
}

struct PointFloors {
    x: TorusPoint<f64>,
    l: f64,
    lambda_s: f64,
    sigma: f64,
    stable_norm: f64,
    inverse_norm: f64,
    norm: f64,
    in_region: bool,
}

fn evaluate_point(
    model: &MapModel<f64>,
    unstable: &ConeSpec<f64>,
    stable: Option<&ConeSpec<f64>>,
    region: &Region,
    opts: &CertifyOptions,
    x: &TorusPoint<f64>,
) -> Result<PointFloors, ConeError> {
    let j = model.jacobian(x);
    let inv = j.inverse().ok_or(ConeError::SingularMatrix)?;
    let lambda_s = match stable {
        Some(cone) => min_expansion(&inv, cone),
        None => f64::INFINITY,
    };
    let stable_norm = if model.stable_dim() == 0 {
        0.0
    } else {
        restricted_norm(&j, &stable_frame_at(model, x, opts.stable_depth)?)
    };
    Ok(PointFloors {
        x: *x,
        l: min_expansion(&j, unstable),
        lambda_s,
        sigma: min_subspace_jacobian(&j, unstable, opts.subspace_samples),
        stable_norm,
        inverse_norm: operator_norm(&inv),
        norm: operator_norm(&j),
        in_region: region.contains(model, x),
    })
}

/// Half-cell variation of `Dg` over the refined support grid, measured by
/// finite differences along each eigen-direction of the support. Zero for
/// linear models, whose derivative is constant.
fn jacobian_slack(model: &MapModel<f64>, per_axis: usize) -> f64 {
    let pts = model.support_points(per_axis, 1.0);
    if pts.is_empty() {
        return 0.0;
    }
    let n = per_axis.max(2) as f64 - 1.0;
    let steps: Vec<Vector<f64>> = match (model.bump_radius(), model.stable_radius()) {
        (Some(rc), Some(rs)) => {
            let center = Frame::orthonormalize(model.dim(), model.unstable_frame().vectors())
                .expect("unstable frame");
            let mut out = Vec::new();
            for v in center.vectors() {
                out.push(v.scale(2.0 * rc / n));
            }
            for v in model.stable_frame().vectors() {
                out.push(v.scale(2.0 * rs / n));
            }
            out
        }
        _ => return 0.0,
    };
    let mut sq = 0.0;
    for h in &steps {
        let worst = pts
            .par_iter()
            .map(|x| operator_norm(&model.jacobian(&x.shifted(h)).sub(&model.jacobian(x))))
            .reduce(|| 0.0, f64::max);
        sq += worst * worst;
    }
    0.5 * sq.sqrt()
}

/// Grid certificate of the cone conditions. Floors are observed minima over a
/// regular grid plus a refined grid on the perturbation support. Validity
/// compares the floors with their thresholds; the Lipschitz slack from the
/// variation of `Dg` between grid points only feeds the `robust` flag.
/// This is a numerical certificate, not a proof.
pub fn certify(
    model: &MapModel<f64>,
    unstable: &ConeSpec<f64>,
    stable: Option<&ConeSpec<f64>>,
    region: &Region,
    opts: &CertifyOptions,
) -> Result<ConditionCertificate, CertError> {
    if opts.grid < MIN_GRID {
        return Err(CertError::GridTooCoarse(opts.grid));
    }
    let mut pts = regular_grid(model.dim(), opts.grid);
    pts.extend(model.support_points(opts.support_grid, 1.0));
    if let Some(ex) = &opts.exclude {
        pts.retain(|x| !ex.contains(model, x));
    }
    let floors: Vec<PointFloors> = pts
        .par_iter()
        .map(|x| evaluate_point(model, unstable, stable, region, opts, x))
        .collect::<Result<_, _>>()?;

    let argmin = |f: &dyn Fn(&PointFloors) -> Option<f64>| -> (f64, Vec<f64>) {
        let mut best = (f64::INFINITY, Vec::new());
        for p in &floors {
            if let Some(v) = f(p) {
                if v < best.0 {
                    best = (v, p.x.to_f64());
                }
            }
        }
        best
    };
    let (l_floor, l_at) = argmin(&|p| Some(p.l));
    let (lambda_u, lu_at) = argmin(&|p| (!p.in_region).then_some(p.l));
    let (lambda_s, ls_at) = argmin(&|p| Some(p.lambda_s));
    let (sigma, sigma_at) = argmin(&|p| Some(p.sigma));
    let lambda = floors.iter().map(|p| p.stable_norm).fold(0.0, f64::max);
    let max_inv = floors.iter().map(|p| p.inverse_norm).fold(0.0, f64::max);
    let max_norm = floors.iter().map(|p| p.norm).fold(0.0, f64::max);

    let dj = jacobian_slack(model, opts.support_grid);
    let k = unstable.rank() as i32;
    let slack = Slack {
        jacobian: dj,
        lambda_s: if stable.is_some() { dj * max_inv * max_inv } else { 0.0 },
        l_floor: dj,
        sigma: k as f64 * max_norm.powi(k - 1) * dj,
    };

    let region_empty = region.is_empty_for(model);
    let gamma_estimate = match opts.gamma0 {
        Some(_) => None,
        None => {
            let base = TorusPoint::from_f64(&[0.3, 0.1, 0.2][..model.dim()]);
            let disk = DiskSample::tangent_to(unstable, base, 0.05, opts.gamma_samples)?;
            Some(estimate_gamma0(model, &disk, region, opts.gamma_n_max)?)
        }
    };
    let gamma0 = opts.gamma0.or(gamma_estimate.as_ref().map(|g| g.gamma0)).unwrap_or(GAMMA_GRID[0]);

    let c = if region_empty { lambda_u.ln() } else { birkhoff_bound(l_floor, lambda_u, gamma0) };
    let margins = Margins {
        lambda_s: lambda_s - 1.0,
        lambda_u: lambda_u - 1.0,
        sigma: sigma - 1.0,
        l_vs_sqrt_lambda: l_floor - lambda.sqrt(),
        c,
    };
    // with the slack subtracted the floors would hold between grid points too
    let c_robust = if region_empty {
        (lambda_u - slack.l_floor).ln()
    } else {
        birkhoff_bound(l_floor - slack.l_floor, lambda_u - slack.l_floor, gamma0)
    };
    let robust = (stable.is_none() || margins.lambda_s > slack.lambda_s)
        && margins.lambda_u > slack.l_floor
        && margins.sigma > slack.sigma
        && margins.l_vs_sqrt_lambda > slack.l_floor
        && c_robust > 0.0;
    let mut violations = Vec::new();
    let mut flag = |name: &str, margin: f64, at: &[f64], value: f64| {
        if !(margin > 0.0) {
            violations.push(Violation { condition: name.into(), point: at.to_vec(), value });
        }
    };
    if stable.is_some() {
        flag("lambda_s > 1", margins.lambda_s, &ls_at, lambda_s);
    }
    flag("lambda_u > 1", margins.lambda_u, &lu_at, lambda_u);
    flag("sigma > 1", margins.sigma, &sigma_at, sigma);
    flag("L >= sqrt(lambda)", margins.l_vs_sqrt_lambda, &l_at, l_floor);
    flag("c > 0", margins.c, &l_at, c);

    let partition = if opts.partition_cells > 0 {
        let p = partition_probe(model, unstable, opts.partition_cells, 48);
        if !p.holds {
            violations.push(Violation {
                condition: "injectivity-domain partition".into(),
                point: Vec::new(),
                value: p.max_components as f64,
            });
        }
        Some(p)
    } else {
        None
    };

    Ok(ConditionCertificate {
        lambda_s,
        lambda_u,
        l_floor,
        sigma,
        lambda,
        gamma0,
        c: c.max(0.0),
        region: region.clone(),
        region_empty,
        grid_resolution: opts.grid,
        support_resolution: opts.support_grid,
        points_checked: pts.len(),
        slack,
        margins,
        valid: violations.is_empty(),
        robust,
        violations,
        gamma_estimate,
        partition,
        excluded: opts.exclude.clone(),
    })
}

/// Fraction of samples whose first `n` iterates visit the region at least `γn` times.
pub fn visit_fraction_table(
    model: &MapModel<f64>,
    disk: &DiskSample,
    region: &Region,
    ns: &[usize],
    gammas: &[f64],
) -> Vec<VisitFrequencyEstimate> {
    let n_max = ns.iter().copied().max().unwrap_or(0);
    // counts[i][s]: visits of sample s during the first ns[i] iterates
    let counts: Vec<Vec<usize>> = (0..disk.len())
        .into_par_iter()
        .map(|s| {
            let mut p = LatticePoint::from_torus(&disk.point(s));
            let mut running = 0;
            let mut out = vec![0; ns.len()];
            for j in 0..n_max {
                if region.contains(model, &p.to_torus()) {
                    running += 1;
                }
                p = model.lattice_step(&p);
                for (slot, &n) in out.iter_mut().zip(ns) {
                    if n == j + 1 {
                        *slot = running;
                    }
                }
            }
            out
        })
        .collect();
    let mut table = Vec::new();
    for &gamma in gammas {
        for (i, &n) in ns.iter().enumerate() {
            let hits = counts.iter().filter(|c| c[i] as f64 >= gamma * n as f64).count();
            table.push(VisitFrequencyEstimate { gamma, n, fraction_exceeding: hits as f64 / disk.len().max(1) as f64 });
        }
    }
    table
}

/// Least-squares fit of `log f(n) = log K - ε n` over the leading nonzero
/// fractions; the first zero enters at the Monte Carlo floor `1/(2S)`.
fn fit_decay(gamma: f64, rows: &[&VisitFrequencyEstimate], samples: usize) -> DecayFit {
    let floor = 0.5 / samples.max(1) as f64;
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for r in rows {
        if r.fraction_exceeding > 0.0 {
            pts.push((r.n as f64, r.fraction_exceeding.ln()));
        } else {
            pts.push((r.n as f64, floor.ln()));
            break;
        }
    }
    let first = rows.first().map(|r| r.fraction_exceeding).unwrap_or(0.0);
    let last = rows.last().map(|r| r.fraction_exceeding).unwrap_or(0.0);
    if pts.len() == 1 {
        // already below resolution at the first n
        let (n, y) = pts[0];
        return DecayFit { gamma, k_hat: 1.0, eps_hat: -y / n, decaying: last == 0.0 };
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    DecayFit {
        gamma,
        k_hat: (my - slope * mx).exp(),
        eps_hat: -slope,
        decaying: slope < 0.0 && (last < first || last == 0.0),
    }
}

/// Monte Carlo over the disk: exceedance of visit fraction `γ` for
/// `n ∈ {n_max/8, n_max/4, n_max/2, n_max}` and every `γ` of [`GAMMA_GRID`];
/// `γ_0` is the smallest grid value whose exceedance decays.
pub fn estimate_gamma0(model: &MapModel<f64>, disk: &DiskSample, region: &Region, n_max: usize) -> Result<GammaEstimate, CertError> {
    if n_max < 8 {
        return Err(CertError::ShortSweep(n_max));
    }
    let ns = [n_max / 8, n_max / 4, n_max / 2, n_max];
    let table = visit_fraction_table(model, disk, region, &ns, &GAMMA_GRID);
    let fits: Vec<DecayFit> = GAMMA_GRID
        .iter()
        .map(|&g| {
            let rows: Vec<&VisitFrequencyEstimate> = table.iter().filter(|r| r.gamma == g).collect();
            fit_decay(g, &rows, disk.len())
        })
        .collect();
    let gamma0 = fits.iter().find(|f| f.decaying).map(|f| f.gamma).unwrap_or(*GAMMA_GRID.last().expect("nonempty"));
    Ok(GammaEstimate { gamma0, samples: disk.len(), table, fits })
}

/// Checks that `g(D ∩ V_i) ∩ V_j` is connected for a cube partition with
/// `cells` cubes per axis and one cone-tangent disk per cube. Components are
/// counted on the sampled disk lattice with diagonal adjacency.
pub fn partition_probe(model: &MapModel<f64>, cone: &ConeSpec<f64>, cells: usize, per_axis: usize) -> PartitionProbe {
    let dim = model.dim();
    let side = 1.0 / cells as f64;
    let k = cone.rank();
    let centers = regular_grid::<f64>(dim, cells);
    let results: Vec<usize> = centers
        .par_iter()
        .map(|corner| {
            let center = corner.shifted(&Vector::from_slice(&vec![0.5 * side; dim]));
            let cell_of = |x: &TorusPoint<f64>| -> Vec<usize> {
                (0..dim).map(|a| ((x.coord(a) * cells as f64).floor() as usize).min(cells - 1)).collect()
            };
            let home = cell_of(&center);
            let radius = side * (dim as f64).sqrt() / 2.0;
            let e = cone.center().vectors();
            // lattice coordinates on the disk, rank k
            let total = per_axis.pow(k as u32);
            let coord = |i: usize| -> Vec<usize> {
                let mut r = i;
                (0..k)
                    .map(|_| {
                        let v = r % per_axis;
                        r /= per_axis;
                        v
                    })
                    .collect()
            };
            let mut image_cell: Vec<Option<Vec<usize>>> = vec![None; total];
            for (i, slot) in image_cell.iter_mut().enumerate() {
                let u = coord(i);
                let mut off = Vector::zeros(dim);
                for (a, ua) in u.iter().enumerate() {
                    let s = -radius + 2.0 * radius * (*ua as f64 + 0.5) / per_axis as f64;
                    off = off.axpy(s, &e[a]);
                }
                let y = center.shifted(&off);
                if cell_of(&y) == home {
                    *slot = Some(cell_of(&model.map_point(&y)));
                }
            }
            let mut parent: Vec<usize> = (0..total).collect();
            fn find(p: &mut [usize], mut i: usize) -> usize {
                while p[i] != i {
                    p[i] = p[p[i]];
                    i = p[i];
                }
                i
            }
            for i in 0..total {
                let Some(ci) = &image_cell[i] else { continue };
                let u = coord(i);
                let neighbors: Vec<Vec<i64>> = if k == 1 {
                    vec![vec![1]]
                } else {
                    vec![vec![1, 0], vec![0, 1], vec![1, 1], vec![1, -1]]
                };
                for d in neighbors {
                    let v: Option<Vec<usize>> = u
                        .iter()
                        .zip(&d)
                        .map(|(&a, &b)| {
                            let w = a as i64 + b;
                            (w >= 0 && (w as usize) < per_axis).then_some(w as usize)
                        })
                        .collect();
                    let Some(v) = v else { continue };
                    let j = v.iter().rev().fold(0, |acc, &x| acc * per_axis + x);
                    if image_cell[j].as_ref() == Some(ci) {
                        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
            // components per target cell
            let mut roots: Vec<(Vec<usize>, usize)> = Vec::new();
            for i in 0..total {
                if let Some(c) = &image_cell[i] {
                    let r = find(&mut parent, i);
                    if !roots.iter().any(|(cc, rr)| cc == c && *rr == r) {
                        roots.push((c.clone(), r));
                    }
                }
            }
            let mut worst = 0;
            for (c, _) in &roots {
                worst = worst.max(roots.iter().filter(|(cc, _)| cc == c).count());
            }
            worst
        })
        .collect();
    let max_components = results.iter().copied().max().unwrap_or(0);
    PartitionProbe { cells_per_axis: cells, pieces_checked: results.len(), max_components, holds: max_components <= 1 }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpotCheck {
    pub points: usize,
    /// Largest shortfall `floor - observed` per quantity (negative: no shortfall).
    pub l_shortfall: f64,
    pub lambda_s_shortfall: f64,
    pub sigma_shortfall: f64,
}

/// Random off-grid points and random cone directions compared with the floors.
pub fn spot_check(
    model: &MapModel<f64>,
    unstable: &ConeSpec<f64>,
    stable: Option<&ConeSpec<f64>>,
    cert: &ConditionCertificate,
    count: usize,
    seed: u64,
) -> SpotCheck {
    use rand::Rng;
    let mut rng = task_rng(seed, streams::SPOT_CHECK);
    let support = model.support_points(3, 1.0);
    let mut out = SpotCheck {
        points: count,
        l_shortfall: f64::NEG_INFINITY,
        lambda_s_shortfall: f64::NEG_INFINITY,
        sigma_shortfall: f64::NEG_INFINITY,
    };
    for i in 0..count {
        // half the points near the perturbation when there is one
        let x = if !support.is_empty() && i % 2 == 0 {
            let c = model.bump_center().expect("perturbed");
            let r = model.bump_radius().expect("perturbed");
            let d: Vec<f64> = (0..model.dim()).map(|_| (rng.random::<f64>() - 0.5) * 2.0 * r).collect();
            c.shifted(&Vector::from_f64(&d))
        } else {
            let p: Vec<f64> = (0..model.dim()).map(|_| rng.random::<f64>()).collect();
            TorusPoint::from_f64(&p)
        };
        let j = model.jacobian(&x);
        let u = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
        let v = unstable.direction_from_unit(u);
        out.l_shortfall = out.l_shortfall.max(cert.l_floor - j.mul_vec(&v).norm());
        if let (Some(cone), Some(inv)) = (stable, j.inverse()) {
            let w = cone.direction_from_unit(u);
            out.lambda_s_shortfall = out.lambda_s_shortfall.max(cert.lambda_s - inv.mul_vec(&w).norm());
        }
        out.sigma_shortfall = out.sigma_shortfall.max(cert.sigma - min_subspace_jacobian(&j, unstable, 2));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> CertifyOptions {
        CertifyOptions { gamma_samples: 100, gamma_n_max: 200, ..CertifyOptions::default() }
    }

    #[test]
    fn birkhoff_bound_examples() {
        // 0.6 ln 0.95 + 0.4 ln 1.5, evaluated independently
        assert!((birkhoff_bound(0.95, 1.5, 0.6) - 0.131_410_066_610_735).abs() < 1e-12);
        let (lu, g, c) = (1.7f64, 0.7f64, 0.05f64);
        let l = lu.powf(-(1.0 - g) / g) * (c / g).exp();
        assert!((birkhoff_bound(l, lu, g) - c).abs() < 1e-12);
    }

    #[test]
    fn cat_map_certificate() {
        let m = MapModel::<f64>::cat_map();
        let cu = ConeSpec::unstable(&m, 0.5).unwrap();
        let cs = ConeSpec::stable(&m, 0.5).unwrap().unwrap();
        let cert = certify(&m, &cu, Some(&cs), &Region::Empty, &quick()).unwrap();
        assert!(cert.valid, "{:?}", cert.violations);
        let boundary = (1.25f64 / ((2.618034f64).powi(2) + 0.25 * 0.381966f64.powi(2))).sqrt().recip();
        assert!((cert.l_floor - boundary).abs() < 1e-5);
        assert_eq!(cert.l_floor, cert.lambda_u);
        assert!((cert.sigma - boundary).abs() < 1e-5);
        assert!((cert.lambda - 0.381966).abs() < 1e-5);
        assert_eq!(derive_birkhoff_bound(&cert).unwrap(), cert.lambda_u.ln());
        assert_eq!(cert.slack.jacobian, 0.0);
    }

    #[test]
    fn three_dimensional_sigma() {
        let m = MapModel::<f64>::linear(&crate::models::pitchfork_matrix(2)).unwrap();
        let cu = ConeSpec::unstable(&m, 0.05).unwrap();
        let cert = certify(&m, &cu, None, &Region::Empty, &quick()).unwrap();
        assert!(cert.sigma <= 5.236068 + 1e-9 && cert.sigma > 5.0, "{}", cert.sigma);
    }

    #[test]
    fn coarse_grid_rejected_and_invalid_bound_refused() {
        let m = MapModel::<f64>::cat_map();
        let cu = ConeSpec::unstable(&m, 0.5).unwrap();
        let opts = CertifyOptions { grid: 8, ..quick() };
        assert_eq!(certify(&m, &cu, None, &Region::Empty, &opts).unwrap_err(), CertError::GridTooCoarse(8));
        // a cone far from the expanding direction fails
        let bad = ConeSpec::from_vectors(2, &[Vector::from_f64(&[-0.618, 1.0])], 0.2).unwrap();
        let cert = certify(&m, &bad, None, &Region::Empty, &quick()).unwrap();
        assert!(!cert.valid);
        assert!(matches!(derive_birkhoff_bound(&cert), Err(CertError::InvalidCertificate(_))));
    }

    #[test]
    fn empty_region_has_no_exceedance() {
        let m = MapModel::<f64>::cat_map();
        let cu = ConeSpec::unstable(&m, 0.5).unwrap();
        let disk = DiskSample::tangent_to(&cu, TorusPoint::from_f64(&[0.3, 0.1]), 0.05, 50).unwrap();
        let est = estimate_gamma0(&m, &disk, &Region::Empty, 64).unwrap();
        assert!(est.table.iter().all(|r| r.fraction_exceeding == 0.0));
        assert_eq!(est.gamma0, GAMMA_GRID[0]);
    }

    #[test]
    fn ball_visits_under_linear_map() {
        let m = MapModel::<f64>::cat_map();
        let cu = ConeSpec::unstable(&m, 0.5).unwrap();
        let disk = DiskSample::tangent_to(&cu, TorusPoint::from_f64(&[0.3, 0.1]), 0.05, 400).unwrap();
        let ball = Region::Ball { center: vec![0.0, 0.0], radius: 0.1 };
        let est = estimate_gamma0(&m, &disk, &ball, 400).unwrap();
        assert_eq!(est.gamma0, 0.55);
        let fit = est.fit(0.6).unwrap();
        assert!(fit.decaying && fit.eps_hat > 0.0);
        // visit fraction close to the ball's area
        let low = visit_fraction_table(&m, &disk, &ball, &[50, 400], &[0.01]);
        assert!(low[1].fraction_exceeding > 0.95, "{low:?}");
        let near = visit_fraction_table(&m, &disk, &ball, &[2000], &[0.0314 * 0.7, 0.0314 * 1.3]);
        assert!(near[0].fraction_exceeding > 0.8 && near[1].fraction_exceeding < 0.2, "{near:?}");
    }

    #[test]
    fn partition_probe_on_linear_map() {
        let m = MapModel::<f64>::cat_map();
        let cu = ConeSpec::unstable(&m, 0.5).unwrap();
        let p = partition_probe(&m, &cu, 8, 64);
        assert!(p.holds, "{p:?}");
        assert_eq!(p.pieces_checked, 64);
    }
}
