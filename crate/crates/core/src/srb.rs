//! Empirical SRB candidates: Cesàro averages of pushed-forward disk measures,
//! their restriction to hyperbolic times, hyperbolic pre-disks with their
//! Jacobian distortion, and clustering of Birkhoff averages.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cones::{cone_conorm_inverse, ConeError, ConeSpec};
use crate::hyperbolic_times::{detect_hyperbolic_times, HypError};
use crate::linalg::{Frame, Matrix, Vector};
use crate::measure::{EmpiricalMeasure, Histogram, MeasureError, MeasureGrid};
use crate::models::MapModel;
use crate::torus::{LatticePoint, TorusPoint};

pub const DEFAULT_BURN_IN: f64 = 0.1;
pub const DEFAULT_CLUSTER_RADIUS: f64 = 0.05;
pub const DEFAULT_OBSERVABLE_ORDER: usize = 3;
/// Trajectories of a hyperbolic pre-disk stay within this multiple of δ.
pub const PRE_DISK_FACTOR: f64 = 8.0;
/// The tracked sub-disk is the linearized preimage of `OVERSHOOT · 8δ`, so
/// the trimming, not the initial grid, decides the boundary.
const OVERSHOOT: f64 = 1.5;
const RAY_POINTS: usize = 64;
const RAYS_2D: usize = 32;
const FRAME_CHECK_DIRECTIONS: usize = 64;
/// Smallest rayon work unit for per-orbit loops.
const MIN_CHUNK: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SrbError {
    #[error("a disk needs at least one sample")]
    NoSamples,
    #[error("disk radius must be positive and finite, got {0}")]
    BadRadius(f64),
    #[error("tangent frame has rank {rank}, the cone needs {expected}")]
    FrameRank { rank: usize, expected: usize },
    #[error("tangent frame leaves the cone (slack {slack:e})")]
    FrameOutsideCone { slack: f64 },
    #[error("orbit length must be at least 1")]
    EmptyOrbit,
    #[error("{n} is not a {c}-cone-hyperbolic time of the tracked point")]
    NotAHyperbolicTime { n: usize, c: f64 },
    #[error("tracked point is within {needed:e} of the disk boundary")]
    OutsideDisk { needed: f64 },
    #[error("tracked image covers radius {covered:e}, below the required {required:e}")]
    DiskTooSmall { covered: f64, required: f64 },
    #[error(transparent)]
    Hyp(#[from] HypError),
    #[error(transparent)]
    Cone(#[from] ConeError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Equal-area lattice on a flat disk `base + span(frame) ∩ B(0, radius)`.
/// Offsets are tangent vectors; every sample carries weight `1 / len`.
#[derive(Clone, Debug)]
pub struct DiskSample {
    pub base: TorusPoint<f64>,
    pub frame: Frame<f64>,
    pub radius: f64,
    pub offsets: Vec<Vector<f64>>,
}

impl DiskSample {
    /// Cell centers of a cubic grid in frame coordinates, kept inside the
    /// ball. About `count` samples; in rank one exactly `count`.
    pub fn lattice(base: TorusPoint<f64>, frame: Frame<f64>, radius: f64, count: usize) -> Result<Self, SrbError> {
        if count == 0 {
            return Err(SrbError::NoSamples);
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(SrbError::BadRadius(radius));
        }
        let k = frame.rank();
        let ball = match k {
            1 => 2.0,
            2 => std::f64::consts::PI,
            _ => 4.0 * std::f64::consts::PI / 3.0,
        };
        let cube = 2f64.powi(k as i32);
        let per_axis = ((count as f64 * cube / ball).powf(1.0 / k as f64).round() as usize).max(1);
        let per_axis = if k == 1 { count } else { per_axis };
        let h = 2.0 / per_axis as f64;
        let mut offsets = Vec::new();
        let mut idx = vec![0usize; k];
        'grid: loop {
            let u: Vec<f64> = idx.iter().map(|&i| -1.0 + (i as f64 + 0.5) * h).collect();
            if u.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
                let mut v = Vector::zeros(frame.dim());
                for (c, e) in u.iter().zip(frame.vectors()) {
                    v = v.axpy(c * radius, e);
                }
                offsets.push(v);
            }
            for a in 0..k {
                idx[a] += 1;
                if idx[a] < per_axis {
                    continue 'grid;
                }
                idx[a] = 0;
            }
            break;
        }
        if offsets.is_empty() {
            return Err(SrbError::NoSamples);
        }
        Ok(Self { base, frame, radius, offsets })
    }

    /// Disk through `base` spanned by the cone center; checked to be tangent.
    pub fn tangent_to(cone: &ConeSpec<f64>, base: TorusPoint<f64>, radius: f64, count: usize) -> Result<Self, SrbError> {
        let d = Self::lattice(base, *cone.center(), radius, count)?;
        d.check_tangent(cone)?;
        Ok(d)
    }

    /// The whole torus as a disk: cell centers of a `per_axis^dim` grid. Only
    /// meaningful when the unstable dimension equals the dimension.
    pub fn full_torus(dim: usize, per_axis: usize) -> Result<Self, SrbError> {
        if per_axis == 0 {
            return Err(SrbError::NoSamples);
        }
        let frame = Frame::orthonormalize(dim, &(0..dim).map(|a| Vector::basis(dim, a)).collect::<Vec<_>>())
            .expect("standard basis");
        let h = 1.0 / per_axis as f64;
        let total = per_axis.pow(dim as u32);
        let offsets = (0..total)
            .map(|mut i| {
                let mut v = Vector::zeros(dim);
                for a in 0..dim {
                    v[a] = -0.5 + ((i % per_axis) as f64 + 0.5) * h;
                    i /= per_axis;
                }
                v
            })
            .collect();
        let base = TorusPoint::from_f64(&vec![0.5; dim]);
        Ok(Self { base, frame, radius: (dim as f64).sqrt() / 2.0, offsets })
    }

    /// Every direction of the tangent plane must lie in the cone.
    pub fn check_tangent(&self, cone: &ConeSpec<f64>) -> Result<(), SrbError> {
        if self.frame.rank() != cone.rank() {
            return Err(SrbError::FrameRank { rank: self.frame.rank(), expected: cone.rank() });
        }
        let e = self.frame.vectors();
        let slack = match e.len() {
            _ if cone.is_full() => 0.0,
            1 => cone.slack(&e[0]),
            _ => (0..FRAME_CHECK_DIRECTIONS)
                .map(|i| {
                    let th = std::f64::consts::TAU * i as f64 / FRAME_CHECK_DIRECTIONS as f64;
                    cone.slack(&e[0].scale(th.cos()).axpy(th.sin(), &e[1]))
                })
                .fold(f64::INFINITY, f64::min),
        };
        if slack < -1e-12 {
            return Err(SrbError::FrameOutsideCone { slack });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn point(&self, i: usize) -> TorusPoint<f64> {
        self.base.shifted(&self.offsets[i])
    }

    pub fn points(&self) -> Vec<TorusPoint<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Normalized Lebesgue measure of the disk, binned.
    pub fn binned(&self, grid: MeasureGrid) -> EmpiricalMeasure {
        let mut h = Histogram::new(grid);
        for i in 0..self.len() {
            h.deposit(&self.point(i));
        }
        h.into_measure(self.len() as u64)
    }
}

/// Deposits `f^j(x)` for `j ∈ [from, to)` and every sample `x` of the disk
/// for which `keep(sample, j)` holds; orbits run on the fine lattice.
fn deposit_orbits<K>(model: &MapModel<f64>, disk: &DiskSample, grid: MeasureGrid, from: usize, to: usize, keep: K) -> Histogram
where
    K: Fn(usize, &[TorusPoint<f64>]) -> Vec<bool> + Sync,
{
    (0..disk.len())
        .into_par_iter()
        .with_min_len(MIN_CHUNK)
        .fold(
            || Histogram::new(grid),
            |mut h, i| {
                let mut p = LatticePoint::from_torus(&disk.point(i));
                let mut orbit = Vec::with_capacity(to);
                for _ in 0..to {
                    orbit.push(p.to_torus::<f64>());
                    p = model.lattice_step(&p);
                }
                let mask = keep(i, &orbit);
                for (j, x) in orbit.iter().enumerate().skip(from) {
                    if mask.is_empty() || mask[j] {
                        h.deposit(x);
                    }
                }
                h
            },
        )
        .reduce(|| Histogram::new(grid), |a, b| a.merge(&b))
}

/// `μ_n = (1/n) Σ_{j<n} f^j_* Leb_D`, binned. Mass is exactly one.
pub fn cesaro_pushforward(model: &MapModel<f64>, disk: &DiskSample, n: usize, grid: MeasureGrid) -> Result<EmpiricalMeasure, SrbError> {
    if n == 0 {
        return Err(SrbError::EmptyOrbit);
    }
    let h = deposit_orbits(model, disk, grid, 0, n, |_, _| Vec::new());
    Ok(h.into_measure((n * disk.len()) as u64))
}

/// `f_* μ_n = (1/n) Σ_{1≤j≤n} f^j_* Leb_D`.
pub fn cesaro_pushforward_image(model: &MapModel<f64>, disk: &DiskSample, n: usize, grid: MeasureGrid) -> Result<EmpiricalMeasure, SrbError> {
    if n == 0 {
        return Err(SrbError::EmptyOrbit);
    }
    let h = deposit_orbits(model, disk, grid, 1, n + 1, |_, _| Vec::new());
    Ok(h.into_measure((n * disk.len()) as u64))
}

#[derive(Clone, Debug)]
pub struct NuReport {
    pub measure: EmpiricalMeasure,
    /// Total mass of `ν_n`.
    pub alpha_hat: f64,
}

/// `ν_n`: like [`cesaro_pushforward`] but `f^j(x)` is deposited only when `j`
/// is a `c`-cone-hyperbolic time of `x`. The empty suffix condition makes
/// `j = 0` a time for every point, so the mass is at least `1/n`.
pub fn nu_restricted_pushforward(
    model: &MapModel<f64>,
    cone: &ConeSpec<f64>,
    disk: &DiskSample,
    n: usize,
    c: f64,
    grid: MeasureGrid,
) -> Result<NuReport, SrbError> {
    if n == 0 {
        return Err(SrbError::EmptyOrbit);
    }
    if !(c > 0.0) {
        return Err(HypError::NonpositiveC(c).into());
    }
    let failure = std::sync::Mutex::new(None);
    let h = deposit_orbits(model, disk, grid, 0, n, |_, orbit| {
        let logs: Result<Vec<f64>, ConeError> = orbit[..orbit.len() - 1]
            .iter()
            .map(|x| cone_conorm_inverse(&model.jacobian(x), cone).map(f64::ln))
            .collect();
        let mut mask = vec![false; orbit.len()];
        mask[0] = true;
        match logs.map_err(SrbError::from).and_then(|a| Ok(detect_hyperbolic_times(&a, c)?)) {
            Ok(rep) => rep.times.iter().for_each(|&t| mask[t] = true),
            Err(e) => {
                failure.lock().expect("poisoned").get_or_insert(e);
            }
        }
        mask
    });
    if let Some(e) = failure.into_inner().expect("poisoned") {
        return Err(e);
    }
    let measure = h.into_measure((n * disk.len()) as u64);
    let alpha_hat = measure.mass();
    Ok(NuReport { measure, alpha_hat })
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct ContractionStep {
    pub k: usize,
    /// `max_y |f^{n-k} y - f^{n-k} x| / |f^n y - f^n x|` over the pre-disk.
    pub cumulative: f64,
    /// `max_y |f^{n-k} y - f^{n-k} x| / |f^{n-k+1} y - f^{n-k+1} x|`.
    pub per_step: f64,
}

/// A hyperbolic pre-disk `D(x, n, 8δ)` and its image.
#[derive(Clone, Debug)]
pub struct TrackedDisk {
    /// Reference trajectory `x, f x, …, f^n x`.
    pub orbit: Vec<TorusPoint<f64>>,
    pub n: usize,
    pub delta: f64,
    /// Tangent frame of the source disk.
    pub frame: Frame<f64>,
    /// Offsets from `x` of the surviving sub-grid, in the source disk.
    pub pre_offsets: Vec<Vector<f64>>,
    /// `Δ(f^n x, δ′)`: surviving image offsets within the covered radius.
    pub image_disk: DiskSample,
    /// `δ′`, the largest radius every ray of the sub-grid reaches in the image.
    pub covered_radius: f64,
    pub contraction_log: Vec<ContractionStep>,
}

/// Checks that `n = orbit.len() - 1` is a `c`-cone-hyperbolic time of `orbit[0]`.
fn require_hyperbolic_time(model: &MapModel<f64>, cone: &ConeSpec<f64>, orbit: &[TorusPoint<f64>], c: f64) -> Result<(), SrbError> {
    let n = orbit.len() - 1;
    if n == 0 {
        return Ok(());
    }
    let a = orbit[..n]
        .iter()
        .map(|x| Ok(cone_conorm_inverse(&model.jacobian(x), cone)?.ln()))
        .collect::<Result<Vec<f64>, ConeError>>()?;
    let rep = detect_hyperbolic_times(&a, c)?;
    if rep.times.last() != Some(&n) {
        return Err(SrbError::NotAHyperbolicTime { n, c });
    }
    Ok(())
}

/// Forward-iterates a sub-grid of the disk around `x = base + offset`, keeping
/// the points whose trajectory stays within `8δ` of the trajectory of `x` up to
/// time `n`. See [`track_along_orbit`].
pub fn track_hyperbolic_disk(
    model: &MapModel<f64>,
    cone: &ConeSpec<f64>,
    disk: &DiskSample,
    offset: &Vector<f64>,
    n: usize,
    delta: f64,
    c: f64,
) -> Result<TrackedDisk, SrbError> {
    disk.check_tangent(cone)?;
    let mut orbit = Vec::with_capacity(n + 1);
    orbit.push(disk.base.shifted(offset));
    for j in 0..n {
        orbit.push(model.map_point(&orbit[j]));
    }
    track_along_orbit(model, cone, &orbit, disk.frame, disk.radius - offset.norm(), delta, c)
}

/// Pre-disk tracking along a given reference trajectory `orbit[0..=n]`, for
/// example a pre-orbit read forwards. `frame` spans the source disk at
/// `orbit[0]` and `room` is the distance from `orbit[0]` to its boundary.
///
/// Offsets are propagated with [`MapModel::eval_offset`], so pre-disks far
/// below the coordinate resolution keep relative accuracy. The sub-grid is the
/// linearized preimage of a round disk of radius `1.5 · 8δ` around the
/// endpoint, sampled along rays from the center (two rays in rank one, 32 in
/// rank two). `δ′` is the smallest image distance a ray reaches before its
/// first trimmed point.
pub fn track_along_orbit(
    model: &MapModel<f64>,
    cone: &ConeSpec<f64>,
    orbit: &[TorusPoint<f64>],
    frame: Frame<f64>,
    room: f64,
    delta: f64,
    c: f64,
) -> Result<TrackedDisk, SrbError> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(SrbError::BadRadius(delta));
    }
    if orbit.is_empty() {
        return Err(SrbError::EmptyOrbit);
    }
    let n = orbit.len() - 1;
    require_hyperbolic_time(model, cone, orbit, c)?;
    let source = frame;
    let k = frame.rank();
    let reach = PRE_DISK_FACTOR * delta;

    // inverse of the restricted derivative along the orbit
    let mut frame = frame;
    let mut inverse = Matrix::identity(k);
    for p in &orbit[..n] {
        let jac = model.jacobian(p);
        let images: Vec<Vector<f64>> = frame.vectors().iter().map(|v| jac.mul_vec(v)).collect();
        let next = Frame::orthonormalize(model.dim(), &images).ok_or(ConeError::SingularMatrix)?;
        let mut r = Matrix::zeros(k);
        for (a, q) in next.vectors().iter().enumerate() {
            for (b, w) in images.iter().enumerate() {
                r.set(a, b, q.dot(w));
            }
        }
        inverse = inverse.mul_mat(&r.inverse().ok_or(ConeError::SingularMatrix)?);
        frame = next;
    }

    let rays: Vec<Vec<f64>> = match k {
        1 => vec![vec![1.0], vec![-1.0]],
        _ => (0..RAYS_2D)
            .map(|r| {
                let th = std::f64::consts::TAU * r as f64 / RAYS_2D as f64;
                vec![th.cos(), th.sin()]
            })
            .collect(),
    };
    let mut pre_grid: Vec<Vec<Vector<f64>>> = Vec::with_capacity(rays.len());
    let mut max_pre = 0.0f64;
    for dir in &rays {
        let mut ray = Vec::with_capacity(RAY_POINTS);
        for i in 1..=RAY_POINTS {
            let s = OVERSHOOT * reach * i as f64 / RAY_POINTS as f64;
            let mut u = Vector::zeros(k);
            for a in 0..k {
                u[a] = s * dir[a];
            }
            let coeffs = inverse.mul_vec(&u);
            let mut v = Vector::zeros(model.dim());
            for (cf, e) in coeffs.components().iter().zip(source.vectors()) {
                v = v.axpy(*cf, e);
            }
            max_pre = max_pre.max(v.norm());
            ray.push(v);
        }
        pre_grid.push(ray);
    }
    if max_pre.min(reach) > room {
        return Err(SrbError::OutsideDisk { needed: max_pre.min(reach) });
    }

    // trajectories: offsets[k] along the reference orbit, trimmed at 8δ
    let track = |eps0: &Vector<f64>| -> Option<Vec<Vector<f64>>> {
        let mut traj = Vec::with_capacity(n + 1);
        let mut e = *eps0;
        for step in 0..=n {
            if e.norm() > reach {
                return None;
            }
            traj.push(e);
            if step < n {
                e = model.eval_offset(&orbit[step], &e);
            }
        }
        Some(traj)
    };

    let mut covered = f64::INFINITY;
    let mut survivors: Vec<Vec<Vector<f64>>> = Vec::new();
    for ray in &pre_grid {
        let mut ray_reach = 0.0f64;
        let mut broken = false;
        for v in ray {
            match track(v) {
                Some(traj) => {
                    if !broken {
                        ray_reach = traj[n].norm();
                    }
                    survivors.push(traj);
                }
                None => broken = true,
            }
        }
        covered = covered.min(ray_reach);
    }
    if covered < delta {
        return Err(SrbError::DiskTooSmall { covered, required: delta });
    }

    let mut contraction_log = Vec::with_capacity(n);
    for kk in 1..=n {
        let (mut cum, mut per) = (0.0f64, 0.0f64);
        for traj in &survivors {
            let end = traj[n].norm();
            if end == 0.0 {
                continue;
            }
            let here = traj[n - kk].norm();
            cum = cum.max(here / end);
            per = per.max(here / traj[n - kk + 1].norm());
        }
        contraction_log.push(ContractionStep { k: kk, cumulative: cum, per_step: per });
    }

    let mut pre_offsets = vec![Vector::zeros(model.dim())];
    let mut image_offsets = vec![Vector::zeros(model.dim())];
    for traj in &survivors {
        pre_offsets.push(traj[0]);
        if traj[n].norm() <= covered {
            image_offsets.push(traj[n]);
        }
    }
    let image_disk = DiskSample { base: orbit[n], frame, radius: covered, offsets: image_offsets };
    Ok(TrackedDisk {
        orbit: orbit.to_vec(),
        n,
        delta,
        frame: source,
        pre_offsets,
        image_disk,
        covered_radius: covered,
        contraction_log,
    })
}

/// `log |det Df^n(y)|_{T_y D}|` for every point of the pre-disk.
pub fn pre_disk_log_jacobians(model: &MapModel<f64>, tracked: &TrackedDisk) -> Result<Vec<f64>, SrbError> {
    let orbit = &tracked.orbit[..tracked.n];
    tracked
        .pre_offsets
        .iter()
        .map(|eps0| {
            let mut e = *eps0;
            let mut frame = tracked.frame;
            let mut total = 0.0;
            for x in orbit {
                let jac = model.jacobian(&x.shifted(&e));
                let (next, logdet) = frame.push(&jac).ok_or(ConeError::SingularMatrix)?;
                total += logdet;
                frame = next;
                e = model.eval_offset(x, &e);
            }
            Ok(total)
        })
        .collect()
}

/// Empirical distortion constant: `max_{y,z} J_n(y) / J_n(z)` over the pre-disk.
pub fn distortion_ratio(model: &MapModel<f64>, tracked: &TrackedDisk) -> Result<f64, SrbError> {
    let logs = pre_disk_log_jacobians(model, tracked)?;
    let hi = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = logs.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((hi - lo).exp())
}

/// Fourier observables `cos, sin (2π k·x)` for `0 < |k|_∞ ≤ order`, one `k`
/// from each `±k` pair (first nonzero component positive).
#[derive(Clone, Debug, PartialEq)]
pub struct FourierDictionary {
    pub dim: usize,
    pub order: usize,
    pub modes: Vec<[i64; 3]>,
}

impl FourierDictionary {
    pub fn new(dim: usize, order: usize) -> Self {
        let side = 2 * order + 1;
        let mut modes = Vec::new();
        for idx in 0..side.pow(dim as u32) {
            let mut k = [0i64; 3];
            let mut r = idx;
            for kk in k.iter_mut().take(dim) {
                *kk = (r % side) as i64 - order as i64;
                r /= side;
            }
            if k.iter().find(|&&v| v != 0).is_some_and(|&v| v > 0) {
                modes.push(k);
            }
        }
        Self { dim, order, modes }
    }

    /// Number of real observables.
    pub fn len(&self) -> usize {
        2 * self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Adds the observables at `x` to `acc` (layout: cos/sin interleaved).
    pub fn accumulate(&self, x: &TorusPoint<f64>, acc: &mut [f64]) {
        let o = self.order as i64;
        let mut powers = [[Complex64::new(1.0, 0.0); 13]; 3];
        for a in 0..self.dim {
            let e = Complex64::from_polar(1.0, std::f64::consts::TAU * x.coord(a));
            let row = &mut powers[a];
            let mid = self.order;
            for j in 1..=self.order {
                row[mid + j] = row[mid + j - 1] * e;
                row[mid - j] = row[mid - j + 1] * e.conj();
            }
        }
        for (m, k) in self.modes.iter().enumerate() {
            let mut z = Complex64::new(1.0, 0.0);
            for a in 0..self.dim {
                z *= powers[a][(k[a] + o) as usize];
            }
            acc[2 * m] += z.re;
            acc[2 * m + 1] += z.im;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterSettings {
    pub burn_in: f64,
    pub radius: f64,
    pub order: usize,
    pub grid: MeasureGrid,
}

impl ClusterSettings {
    pub fn defaults(dim: usize) -> Self {
        Self {
            burn_in: DEFAULT_BURN_IN,
            radius: DEFAULT_CLUSTER_RADIUS,
            order: DEFAULT_OBSERVABLE_ORDER,
            grid: MeasureGrid::default_for(dim),
        }
    }
}

/// Birkhoff averages of one start over the post-burn-in window and its halves.
#[derive(Clone, Debug, PartialEq)]
pub struct BirkhoffVector {
    pub mean: Vec<f64>,
    pub half_gap: f64,
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Averages of the dictionary along `f^j(x)`, `burn ≤ j < n`.
pub fn birkhoff_vector(model: &MapModel<f64>, dict: &FourierDictionary, x: &TorusPoint<f64>, n: usize, burn_in: f64) -> BirkhoffVector {
    let burn = ((n as f64) * burn_in).floor() as usize;
    let window = n.saturating_sub(burn).max(1);
    let mid = burn + window / 2;
    let mut first = vec![0.0; dict.len()];
    let mut second = vec![0.0; dict.len()];
    let mut p = LatticePoint::from_torus(x);
    for j in 0..n {
        if j >= burn {
            let acc = if j < mid { &mut first } else { &mut second };
            dict.accumulate(&p.to_torus(), acc);
        }
        p = model.lattice_step(&p);
    }
    let (n1, n2) = ((mid - burn).max(1) as f64, (n - mid).max(1) as f64);
    let mean: Vec<f64> = first.iter().zip(&second).map(|(a, b)| (a + b) / window as f64).collect();
    let h1: Vec<f64> = first.iter().map(|a| a / n1).collect();
    let h2: Vec<f64> = second.iter().map(|b| b / n2).collect();
    BirkhoffVector { mean, half_gap: sup_distance(&h1, &h2) }
}

#[derive(Clone, Debug)]
pub struct Cluster {
    /// Start indices, ascending.
    pub members: Vec<usize>,
    pub centroid: Vec<f64>,
    /// Time-average histogram of the members' post-burn-in orbits.
    pub measure: EmpiricalMeasure,
}

#[derive(Clone, Debug)]
pub struct PhysicalMeasureReport {
    pub starts: usize,
    pub clusters: Vec<Cluster>,
    /// Starts whose two half-window averages differ by more than the radius.
    pub nonconverged: Vec<usize>,
}

impl PhysicalMeasureReport {
    pub fn count(&self) -> usize {
        self.clusters.len()
    }

    pub fn basin_fractions(&self) -> Vec<f64> {
        let n = self.starts.max(1) as f64;
        self.clusters.iter().map(|c| c.members.len() as f64 / n).collect()
    }

    pub fn unassigned_fraction(&self) -> f64 {
        self.nonconverged.len() as f64 / self.starts.max(1) as f64
    }
}

/// Connected components of the graph `sup-dist ≤ radius` (single linkage),
/// which does not depend on the order of the vectors.
fn single_linkage(vectors: &[&[f64]], radius: f64) -> Vec<Vec<usize>> {
    let n = vectors.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if sup_distance(vectors[i], vectors[j]) <= radius {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    groups
}

/// Clusters the Birkhoff vectors of the given starts. Clusters are ordered by
/// size (descending), ties by centroid, so the report is invariant under a
/// permutation of the starts up to relabeling of member indices.
pub fn count_physical_measures(
    model: &MapModel<f64>,
    starts: &[TorusPoint<f64>],
    n: usize,
    settings: &ClusterSettings,
) -> Result<PhysicalMeasureReport, SrbError> {
    if n == 0 {
        return Err(SrbError::EmptyOrbit);
    }
    let dict = FourierDictionary::new(model.dim(), settings.order);
    let vectors: Vec<BirkhoffVector> = starts
        .par_iter()
        .with_min_len(MIN_CHUNK)
        .map(|x| birkhoff_vector(model, &dict, x, n, settings.burn_in))
        .collect();
    let (converged, nonconverged): (Vec<usize>, Vec<usize>) =
        (0..starts.len()).partition(|&i| vectors[i].half_gap <= settings.radius);
    let refs: Vec<&[f64]> = converged.iter().map(|&i| vectors[i].mean.as_slice()).collect();
    let groups = single_linkage(&refs, settings.radius);
    let burn = ((n as f64) * settings.burn_in).floor() as usize;
    let mut clusters: Vec<Cluster> = groups
        .into_iter()
        .map(|g| {
            let mut members: Vec<usize> = g.iter().map(|&i| converged[i]).collect();
            members.sort_unstable();
            let mut centroid = vec![0.0; dict.len()];
            for &m in &members {
                for (c, v) in centroid.iter_mut().zip(&vectors[m].mean) {
                    *c += v;
                }
            }
            centroid.iter_mut().for_each(|c| *c /= members.len() as f64);
            let hist = members
                .par_iter()
                .fold(
                    || Histogram::new(settings.grid),
                    |mut h, &m| {
                        let mut p = LatticePoint::from_torus(&starts[m]);
                        for j in 0..n {
                            if j >= burn {
                                h.deposit(&p.to_torus());
                            }
                            p = model.lattice_step(&p);
                        }
                        h
                    },
                )
                .reduce(|| Histogram::new(settings.grid), |a, b| a.merge(&b));
            let total = hist.total();
            Cluster { members, centroid, measure: hist.into_measure(total) }
        })
        .collect();
    clusters.sort_by(|a, b| {
        b.members
            .len()
            .cmp(&a.members.len())
            .then_with(|| a.centroid.partial_cmp(&b.centroid).unwrap_or(std::cmp::Ordering::Equal))
    });
    Ok(PhysicalMeasureReport { starts: starts.len(), clusters, nonconverged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::weak_star_distance;
    use crate::parallel::uniform_points;

    fn cat_disk(len: f64, count: usize) -> (MapModel<f64>, ConeSpec<f64>, DiskSample) {
        let m = MapModel::<f64>::cat_map();
        let cone = ConeSpec::unstable(&m, 0.5).unwrap();
        let d = DiskSample::tangent_to(&cone, TorusPoint::from_f64(&[0.3, 0.1]), len / 2.0, count).unwrap();
        (m, cone, d)
    }

    #[test]
    fn lattice_disk_shapes() {
        let (_, _, d) = cat_disk(0.2, 1000);
        assert_eq!(d.len(), 1000);
        for i in 0..d.len() {
            assert!(d.point(i).distance(&d.base) <= 2.0 * d.radius);
        }
        let m = MapModel::<f64>::pitchfork_default(1.0);
        let cone = ConeSpec::unstable(&m, 0.5).unwrap();
        let d2 = DiskSample::tangent_to(&cone, TorusPoint::from_f64(&[0.5, 0.5, 0.5]), 0.05, 2000).unwrap();
        assert!((d2.len() as f64 - 2000.0).abs() < 100.0);
        let full = DiskSample::full_torus(1, 10).unwrap();
        assert!((full.point(0).coord(0) - 0.05).abs() < 1e-15);
        let tilted = Frame::orthonormalize(2, &[Vector::from_f64(&[1.0, -1.0])]).unwrap();
        let bad = DiskSample::lattice(d.base, tilted, 0.1, 10).unwrap();
        assert!(matches!(bad.check_tangent(&ConeSpec::unstable(&MapModel::cat_map(), 0.5).unwrap()), Err(SrbError::FrameOutsideCone { .. })));
    }

    #[test]
    fn single_step_average_is_the_disk() {
        let (m, _, d) = cat_disk(0.2, 500);
        let grid = MeasureGrid::default_for(2);
        let mu = cesaro_pushforward(&m, &d, 1, grid).unwrap();
        assert_eq!(mu, d.binned(grid));
        assert_eq!(mu.mass(), 1.0);
    }

    #[test]
    fn doubling_circle_equidistributes() {
        let m = MapModel::<f64>::doubling();
        let d = DiskSample::full_torus(1, 20_000).unwrap();
        let grid = MeasureGrid::default_for(1);
        let mu = cesaro_pushforward(&m, &d, 200, grid).unwrap();
        let leb = EmpiricalMeasure::lebesgue(grid);
        assert!(weak_star_distance(&mu, &leb).unwrap() < 0.01);
    }

    #[test]
    fn cesaro_average_is_nearly_invariant() {
        let (m, _, d) = cat_disk(0.2, 200);
        let grid = MeasureGrid::default_for(2);
        let mut prev = f64::INFINITY;
        for n in [5usize, 20, 80] {
            let mu = cesaro_pushforward(&m, &d, n, grid).unwrap();
            let img = cesaro_pushforward_image(&m, &d, n, grid).unwrap();
            let dist = weak_star_distance(&mu, &img).unwrap();
            // |μ_n - f_*μ_n| = |Leb_D - f^n_* Leb_D| / n ≤ 2 W / n
            let bound = 2.0 * crate::measure::Truncation { dim: 2, k_max: grid.k_max }.weight_sum() / n as f64;
            assert!(dist <= bound + 1e-12, "n={n}: {dist} > {bound}");
            assert!(dist < prev);
            prev = dist;
        }
    }

    #[test]
    fn nu_mass_extremes_on_linear_map() {
        let (m, cone, d) = cat_disk(0.2, 100);
        let grid = MeasureGrid::default_for(2);
        let n = 50;
        let mu = cesaro_pushforward(&m, &d, n, grid).unwrap();
        let low = nu_restricted_pushforward(&m, &cone, &d, n, 0.5, grid).unwrap();
        assert_eq!(low.measure, mu);
        assert_eq!(low.alpha_hat, 1.0);
        let high = nu_restricted_pushforward(&m, &cone, &d, n, 2.0, grid).unwrap();
        assert!((high.alpha_hat - 1.0 / n as f64).abs() < 1e-15);
        for (a, b) in high.measure.weights().iter().zip(mu.weights()) {
            assert!(*a <= *b);
        }
    }

    #[test]
    fn linear_tracking_rates() {
        let (m, cone, d) = cat_disk(0.2, 10);
        let lu = (3.0 + 5f64.sqrt()) / 2.0;
        let t = track_hyperbolic_disk(&m, &cone, &d, &Vector::zeros(2), 12, 0.002, 0.5).unwrap();
        assert_eq!(t.contraction_log.len(), 12);
        for s in &t.contraction_log {
            assert!((s.per_step - 1.0 / lu).abs() < 1e-9, "{s:?}");
            assert!((s.cumulative - lu.powi(-(s.k as i32))).abs() < 1e-9 * lu.powi(-(s.k as i32)));
        }
        assert!(t.covered_radius >= 0.002 && t.covered_radius <= PRE_DISK_FACTOR * 0.002);
        let pre = t.pre_offsets.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!((pre * lu.powi(12) - PRE_DISK_FACTOR * 0.002).abs() < 0.03 * PRE_DISK_FACTOR * 0.002);
        assert_eq!(distortion_ratio(&m, &t).unwrap(), 1.0);
    }

    #[test]
    fn zero_time_returns_the_sub_disk() {
        let (m, cone, d) = cat_disk(0.2, 10);
        let t = track_hyperbolic_disk(&m, &cone, &d, &Vector::zeros(2), 0, 0.002, 0.5).unwrap();
        assert!(t.contraction_log.is_empty());
        assert_eq!(t.image_disk.base, t.orbit[0]);
        assert_eq!(t.pre_offsets.len(), t.image_disk.offsets.len());
        assert_eq!(distortion_ratio(&m, &t).unwrap(), 1.0);
    }

    #[test]
    fn tracking_rejects_non_times_and_tiny_disks() {
        let (m, cone, d) = cat_disk(0.2, 10);
        let e = track_hyperbolic_disk(&m, &cone, &d, &Vector::zeros(2), 5, 0.002, 2.0).unwrap_err();
        assert!(matches!(e, SrbError::NotAHyperbolicTime { n: 5, .. }));
        let e = track_hyperbolic_disk(&m, &cone, &d, &Vector::zeros(2), 0, 0.05, 0.5).unwrap_err();
        assert!(matches!(e, SrbError::OutsideDisk { .. }));
    }

    #[test]
    fn pitchfork_pre_disks_contract_backwards() {
        let m = MapModel::<f64>::pitchfork_default(1.0);
        let cone = ConeSpec::unstable(&m, 0.5).unwrap();
        let c = 0.2;
        let mut checked = 0;
        for (i, x) in uniform_points(11, 1, 3, 40).into_iter().enumerate() {
            let d = DiskSample::tangent_to(&cone, x, 0.05, 1).unwrap();
            for n in [3usize, 8, 20] {
                match track_hyperbolic_disk(&m, &cone, &d, &Vector::zeros(3), n, 0.001, c) {
                    Ok(t) => {
                        checked += 1;
                        for s in &t.contraction_log {
                            assert!(s.cumulative <= (-0.5 * c * s.k as f64).exp(), "start {i} n {n}: {s:?}");
                        }
                        assert!(distortion_ratio(&m, &t).unwrap() >= 1.0);
                    }
                    Err(SrbError::NotAHyperbolicTime { .. }) => {}
                    Err(e) => panic!("{e}"),
                }
            }
        }
        assert!(checked > 20, "{checked}");
    }

    #[test]
    fn dictionary_layout() {
        let d = FourierDictionary::new(2, 3);
        assert_eq!(d.modes.len(), 24);
        let d3 = FourierDictionary::new(3, 3);
        assert_eq!(d3.modes.len(), 171);
        let mut acc = vec![0.0; d.len()];
        d.accumulate(&TorusPoint::origin(2), &mut acc);
        for (i, v) in acc.iter().enumerate() {
            assert_eq!(*v, if i % 2 == 0 { 1.0 } else { 0.0 });
        }
        let x = TorusPoint::from_f64(&[0.2, 0.7]);
        let mut acc = vec![0.0; d.len()];
        d.accumulate(&x, &mut acc);
        for (m, k) in d.modes.iter().enumerate() {
            let ph = std::f64::consts::TAU * (k[0] as f64 * 0.2 + k[1] as f64 * 0.7);
            assert!((acc[2 * m] - ph.cos()).abs() < 1e-12 && (acc[2 * m + 1] - ph.sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn clustering_single_start_and_permutation() {
        let m = MapModel::<f64>::cat_map();
        let settings = ClusterSettings::defaults(2);
        let one = count_physical_measures(&m, &uniform_points(1, 1, 2, 1), 2000, &settings).unwrap();
        assert_eq!(one.count() + one.nonconverged.len(), 1);
        let starts = uniform_points(2, 1, 2, 12);
        let a = count_physical_measures(&m, &starts, 4000, &settings).unwrap();
        let mut rev = starts.clone();
        rev.reverse();
        let b = count_physical_measures(&m, &rev, 4000, &settings).unwrap();
        assert_eq!(a.count(), b.count());
        for (ca, cb) in a.clusters.iter().zip(&b.clusters) {
            let mapped: Vec<usize> = {
                let mut v: Vec<usize> = cb.members.iter().map(|&i| starts.len() - 1 - i).collect();
                v.sort_unstable();
                v
            };
            assert_eq!(ca.members, mapped);
            assert_eq!(ca.measure, cb.measure);
        }
    }

    #[test]
    fn single_linkage_chains() {
        let v = [vec![0.0], vec![0.04], vec![0.08], vec![1.0]];
        let refs: Vec<&[f64]> = v.iter().map(|x| x.as_slice()).collect();
        let g = single_linkage(&refs, 0.05);
        assert_eq!(g, vec![vec![0, 1, 2], vec![3]]);
    }
}
