//! Constant cone fields, cone operator norms and the invariance, domination and
//! stable-bundle checks built on them.

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{symmetric_eigen, volume, Frame, Matrix, Vector};
use crate::models::{regular_grid, MapModel, ModelError};
use crate::scalar::Real;
use crate::torus::TorusPoint;

/// Angular samples along a one-dimensional cone boundary before refinement.
pub const BOUNDARY_SAMPLES: usize = 64;
const GOLDEN_STEPS: usize = 90;
const NEWTON_STEPS: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConeError {
    #[error("matrix is singular")]
    SingularMatrix,
    #[error("cone width must be positive and finite")]
    InvalidWidth,
    #[error("cone center must be a nonzero subspace")]
    DegenerateCenter,
    #[error("frame drift {residual:e} exceeds tolerance {tol:e}; increase the depth")]
    DepthTooSmall { residual: f64, tol: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `{ v : ‖v_⊥‖ ≤ a ‖v_E‖ }` for an orthonormal center `E`.
#[derive(Clone, Copy, Debug)]
pub struct ConeSpec<T> {
    center: Frame<T>,
    normal: Frame<T>,
    width: T,
}

impl<T: Real> ConeSpec<T> {
    pub fn new(center: Frame<T>, width: T) -> Result<Self, ConeError> {
        if !(width > T::zero() && width.is_finite()) {
            return Err(ConeError::InvalidWidth);
        }
        if center.rank() == 0 {
            return Err(ConeError::DegenerateCenter);
        }
        Ok(Self { center, normal: center.complement(), width })
    }

    pub fn from_vectors(dim: usize, vectors: &[Vector<T>], width: T) -> Result<Self, ConeError> {
        let f = Frame::orthonormalize(dim, vectors).ok_or(ConeError::DegenerateCenter)?;
        Self::new(f, width)
    }

    /// Cone around the expanding eigenspace of the model's linear part.
    pub fn unstable(model: &MapModel<T>, width: T) -> Result<Self, ConeError> {
        Self::new(*model.unstable_frame(), width)
    }

    /// Cone around the contracting eigenspace; `None` when that space is trivial.
    pub fn stable(model: &MapModel<T>, width: T) -> Result<Option<Self>, ConeError> {
        if model.stable_dim() == 0 {
            return Ok(None);
        }
        Self::new(*model.stable_frame(), width).map(Some)
    }

    pub fn with_width(&self, width: T) -> Result<Self, ConeError> {
        Self::new(self.center, width)
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    /// Dimension of the center subspace.
    pub fn rank(&self) -> usize {
        self.center.rank()
    }

    pub fn width(&self) -> T {
        self.width
    }

    pub fn center(&self) -> &Frame<T> {
        &self.center
    }

    /// `(‖v_E‖, ‖v_⊥‖)`.
    #[inline]
    pub fn split(&self, v: &Vector<T>) -> (T, T) {
        let e = self.center.project(v);
        (e.norm(), v.sub(&e).norm())
    }

    /// `(a ‖v_E‖ - ‖v_⊥‖) / ‖v‖`; nonnegative exactly on the cone.
    #[inline]
    pub fn slack(&self, v: &Vector<T>) -> T {
        let (e, p) = self.split(v);
        let n = v.norm();
        if n == T::zero() {
            return T::zero();
        }
        (self.width * e - p) / n
    }

    #[inline]
    pub fn contains(&self, v: &Vector<T>) -> bool {
        self.slack(v) >= T::zero()
    }

    /// Whether the cone is the whole tangent space.
    pub fn is_full(&self) -> bool {
        self.rank() == self.dim()
    }

    /// Number of parameters of the boundary sphere (0 or 1 for dimension ≤ 3).
    fn boundary_is_discrete(&self) -> bool {
        self.dim() == 2
    }

    /// Boundary direction for angle `theta` (unnormalized, length `sqrt(1 + a²)`).
    #[inline]
    pub fn boundary_point(&self, theta: T) -> Vector<T> {
        let (c, s) = (theta.cos(), theta.sin());
        let e = self.center.vectors();
        let n = self.normal.vectors();
        match (self.dim(), self.rank()) {
            (2, 1) => e[0].axpy(self.width * c.signum(), &n[0]),
            (3, 1) => e[0].axpy(self.width * c, &n[0]).axpy(self.width * s, &n[1]),
            (3, 2) => e[0].scale(c).axpy(s, &e[1]).axpy(self.width, &n[0]),
            _ => e[0],
        }
    }

    /// Deterministic sample of boundary directions (unit length).
    pub fn boundary_directions(&self, count: usize) -> Vec<Vector<T>> {
        if self.is_full() {
            return Vec::new();
        }
        let angles: Vec<T> = if self.boundary_is_discrete() {
            vec![T::zero(), T::PI()]
        } else {
            let step = T::TAU() / T::lit(count.max(1) as f64);
            (0..count.max(1)).map(|k| T::lit(k as f64) * step).collect()
        };
        angles
            .into_iter()
            .map(|th| self.boundary_point(th).normalized().expect("nonzero"))
            .collect()
    }

    /// Unit vector of the cone from parameters in `[0,1)^3`, covering the whole
    /// cone (used for randomized spot checks).
    pub fn direction_from_unit(&self, u: [T; 3]) -> Vector<T> {
        let e = self.center.vectors();
        let n = self.normal.vectors();
        let two_pi = T::TAU();
        let mut center = e[0];
        if e.len() == 2 {
            let th = two_pi * u[0];
            center = e[0].scale(th.cos()).axpy(th.sin(), &e[1]);
        }
        let r = self.width * u[1].sqrt();
        let mut v = center;
        match n.len() {
            0 => {}
            1 => v = v.axpy(r * (two_pi * u[2]).cos().signum(), &n[0]),
            _ => {
                let ph = two_pi * u[2];
                v = v.axpy(r * ph.cos(), &n[0]).axpy(r * ph.sin(), &n[1]);
            }
        }
        v.normalized().expect("nonzero")
    }
}

/// Minimal expansion `min { ‖J v‖ / ‖v‖ : v ∈ cone, v ≠ 0 }`.
pub fn min_expansion<T: Real>(j: &Matrix<T>, cone: &ConeSpec<T>) -> T {
    let jtj = j.transpose().mul_mat(j);
    let (vals, vecs) = symmetric_eigen(&jtj);
    let mut best = T::infinity();
    // interior critical points of the Rayleigh quotient
    for k in 0..j.dim() {
        if cone.contains(&vecs[k]) {
            best = best.min(vals[k].max(T::zero()));
        }
    }
    if !cone.is_full() {
        if cone.boundary_is_discrete() {
            let q = |th: T| -> T {
                let v = cone.boundary_point(th);
                let w = j.mul_vec(&v);
                w.dot(&w) / v.dot(&v)
            };
            best = best.min(q(T::zero())).min(q(T::PI()));
        } else {
            best = best.min(boundary_minimum(j, cone));
        }
    }
    best.sqrt()
}

/// Boundary circle `v(θ) = p + cos θ q + sin θ r` with `p, q, r` orthogonal and
/// `|v|² = 1 + a²`, so `|J v|² / |v|²` is a degree-two trigonometric polynomial.
fn boundary_minimum<T: Real>(j: &Matrix<T>, cone: &ConeSpec<T>) -> T {
    let e = cone.center.vectors();
    let n = cone.normal.vectors();
    let a = cone.width;
    let (p, q, r) = if e.len() == 1 {
        (e[0], n[0].scale(a), n[1].scale(a))
    } else {
        (n[0].scale(a), e[0], e[1])
    };
    let (jp, jq, jr) = (j.mul_vec(&p), j.mul_vec(&q), j.mul_vec(&r));
    let norm2 = T::one() + a * a;
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let (qq, rr) = (jq.dot(&jq), jr.dot(&jr));
    let trig = TrigQuadratic {
        c0: (jp.dot(&jp) + half * (qq + rr)) / norm2,
        c2: half * (qq - rr) / norm2,
        s2: jq.dot(&jr) / norm2,
        c1: two * jp.dot(&jq) / norm2,
        s1: two * jp.dot(&jr) / norm2,
    };
    trig.minimum()
}

/// `c0 + c1 cos θ + s1 sin θ + c2 cos 2θ + s2 sin 2θ`.
struct TrigQuadratic<T> {
    c0: T,
    c1: T,
    s1: T,
    c2: T,
    s2: T,
}

impl<T: Real> TrigQuadratic<T> {
    fn eval(&self, th: T) -> (T, T, T) {
        let (s, c) = th.sin_cos();
        let (s2, c2) = (th + th).sin_cos();
        let two = T::lit(2.0);
        let four = T::lit(4.0);
        let f = self.c0 + self.c1 * c + self.s1 * s + self.c2 * c2 + self.s2 * s2;
        let df = -self.c1 * s + self.s1 * c - two * self.c2 * s2 + two * self.s2 * c2;
        let ddf = -self.c1 * c - self.s1 * s - four * self.c2 * c2 - four * self.s2 * s2;
        (f, df, ddf)
    }

    /// Global minimum: sampling brackets every local minimum (there are at
    /// most two), safeguarded Newton polishes each.
    fn minimum(&self) -> T {
        let h = T::TAU() / T::lit(BOUNDARY_SAMPLES as f64);
        let vals: Vec<T> = (0..BOUNDARY_SAMPLES).map(|k| self.eval(T::lit(k as f64) * h).0).collect();
        let mut best = vals.iter().fold(T::infinity(), |m, &v| m.min(v));
        for k in 0..BOUNDARY_SAMPLES {
            let prev = vals[(k + BOUNDARY_SAMPLES - 1) % BOUNDARY_SAMPLES];
            let next = vals[(k + 1) % BOUNDARY_SAMPLES];
            if vals[k] <= prev && vals[k] <= next {
                best = best.min(self.polish(T::lit(k as f64) * h, h));
            }
        }
        best
    }

    fn polish(&self, center: T, h: T) -> T {
        let (lo, hi) = (center - h, center + h);
        let mut th = center;
        let mut best = self.eval(th).0;
        for _ in 0..NEWTON_STEPS {
            let (f, df, ddf) = self.eval(th);
            best = best.min(f);
            if !(ddf > T::zero()) {
                return best.min(golden_section(&|x| self.eval(x).0, lo, hi));
            }
            let next = (th - df / ddf).max(lo).min(hi);
            if (next - th).abs() <= T::epsilon() * T::lit(4.0) {
                break;
            }
            th = next;
        }
        best.min(self.eval(th).0)
    }
}

/// `sup { ‖J^{-1} w‖ / ‖w‖ : w ∈ J(cone) }`, the reciprocal of [`min_expansion`].
pub fn cone_conorm_inverse<T: Real>(j: &Matrix<T>, cone: &ConeSpec<T>) -> Result<T, ConeError> {
    if j.det() == T::zero() {
        return Err(ConeError::SingularMatrix);
    }
    let m = min_expansion(j, cone);
    if !(m > T::zero()) {
        return Err(ConeError::SingularMatrix);
    }
    Ok(T::one() / m)
}

fn golden_section<T: Real, F: Fn(T) -> T>(f: &F, mut a: T, mut b: T) -> T {
    let g = T::lit(0.618_033_988_749_894_8);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..GOLDEN_STEPS {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    fc.min(fd)
}

/// Minimal `|det J|_E|` over `d_u`-dimensional subspaces `E` inside the cone,
/// sampled as graphs of linear maps from the center to its complement.
pub fn min_subspace_jacobian<T: Real>(j: &Matrix<T>, cone: &ConeSpec<T>, samples: usize) -> T {
    let e = cone.center.vectors();
    let n = cone.normal.vectors();
    match (e.len(), n.len()) {
        (_, 0) => j.det().abs(),
        (1, _) => min_expansion(j, cone),
        _ => {
            // dimension 3, plane center: graphs e ↦ e + (ℓ·e) n with |ℓ| ≤ a
            let mut best = T::infinity();
            let rings = samples.max(4);
            for ri in 0..=rings {
                let r = cone.width * T::lit(ri as f64 / rings as f64);
                let spokes = if ri == 0 { 1 } else { 4 * rings };
                for si in 0..spokes {
                    let ph = T::TAU() * T::lit(si as f64 / spokes as f64);
                    let (l1, l2) = (r * ph.cos(), r * ph.sin());
                    let b1 = e[0].axpy(l1, &n[0]);
                    let b2 = e[1].axpy(l2, &n[0]);
                    let before = volume(3, &[b1, b2]);
                    let after = volume(3, &[j.mul_vec(&b1), j.mul_vec(&b2)]);
                    best = best.min(after / before);
                }
            }
            best
        }
    }
}

/// Sample points for grid checks: a regular grid plus a refined grid over the
/// perturbation support.
pub fn check_points<T: Real>(model: &MapModel<T>, per_axis: usize) -> Vec<TorusPoint<T>> {
    let mut pts = regular_grid(model.dim(), per_axis);
    if model.is_perturbed() {
        pts.extend(model.support_points(25, T::one()));
    }
    pts
}

#[derive(Clone, Debug, Serialize)]
pub struct InvarianceReport {
    pub holds: bool,
    pub margin: f64,
    pub grid: usize,
    pub points_checked: usize,
    pub worst_point: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DominationReport {
    pub holds: bool,
    pub lambda_hat: f64,
    pub grid: usize,
    pub worst_point: Vec<f64>,
}

/// Forward invariance `Df(x) C(x) ⊂ int C(f(x))` for the constant field,
/// on boundary directions at every check point.
pub fn check_cone_invariance<T: Real>(model: &MapModel<T>, cone: &ConeSpec<T>, per_axis: usize) -> InvarianceReport {
    invariance(model, cone, per_axis, false)
}

/// Backward invariance `Df(x)^{-1} C(f(x)) ⊂ int C(x)`, the form stable cones satisfy.
pub fn check_stable_cone_invariance<T: Real>(
    model: &MapModel<T>,
    cone: &ConeSpec<T>,
    per_axis: usize,
) -> InvarianceReport {
    invariance(model, cone, per_axis, true)
}

fn invariance<T: Real>(model: &MapModel<T>, cone: &ConeSpec<T>, per_axis: usize, backward: bool) -> InvarianceReport {
    let pts = check_points(model, per_axis);
    let dirs = cone.boundary_directions(64);
    let mut margin = T::infinity();
    let mut worst = pts[0];
    for x in &pts {
        let mut j = model.jacobian(x);
        if backward {
            j = match j.inverse() {
                Some(m) => m,
                None => {
                    margin = T::neg_infinity();
                    worst = *x;
                    continue;
                }
            };
        }
        for v in &dirs {
            let s = cone.slack(&j.mul_vec(v));
            if s < margin {
                margin = s;
                worst = *x;
            }
        }
    }
    if dirs.is_empty() {
        // a full cone is trivially invariant
        margin = T::zero();
    }
    InvarianceReport {
        holds: dirs.is_empty() || margin > T::zero(),
        margin: margin.as_f64(),
        grid: per_axis,
        points_checked: pts.len(),
        worst_point: worst.to_f64(),
    }
}

/// Frames of the invariant splitting at a point.
#[derive(Clone, Debug)]
pub struct SplittingEstimate<T> {
    pub base: TorusPoint<T>,
    pub stable_frame: Frame<T>,
    pub unstable_frame: Frame<T>,
    pub residual: T,
}

/// Pulls `reference` back along the forward orbit `orbit[0..=n]` by the
/// inverse derivatives, re-orthonormalizing each step.
fn pull_back<T: Real>(model: &MapModel<T>, orbit: &[TorusPoint<T>], reference: &Frame<T>) -> Option<Frame<T>> {
    let mut frame = *reference;
    for x in orbit.iter().rev().skip(1) {
        let inv = model.jacobian(x).inverse()?;
        frame = frame.push(&inv)?.0;
    }
    Some(frame)
}

/// Stable bundle at `x` from the depth-`n` intersection of pulled-back stable
/// cones; the residual is the projector distance to the depth `n - 1` result.
/// The unstable frame is pushed forward along the pre-orbit through the first
/// inverse branch at every step.
pub fn estimate_stable_bundle<T: Real>(
    model: &MapModel<T>,
    x: &TorusPoint<T>,
    depth: usize,
    tol: f64,
) -> Result<SplittingEstimate<T>, ConeError> {
    let depth = depth.max(1);
    let unstable_frame = unstable_along_first_branch(model, x, depth)?;
    if model.stable_dim() == 0 {
        return Ok(SplittingEstimate {
            base: *x,
            stable_frame: Frame::empty(model.dim()),
            unstable_frame,
            residual: T::zero(),
        });
    }
    let mut orbit = Vec::with_capacity(depth + 1);
    orbit.push(*x);
    for k in 0..depth {
        orbit.push(model.map_point(&orbit[k]));
    }
    let reference = model.stable_frame();
    let deep = pull_back(model, &orbit, reference).ok_or(ConeError::SingularMatrix)?;
    let shallow = pull_back(model, &orbit[..depth], reference).ok_or(ConeError::SingularMatrix)?;
    let residual = deep.distance(&shallow);
    if residual.as_f64() > tol {
        return Err(ConeError::DepthTooSmall { residual: residual.as_f64(), tol });
    }
    Ok(SplittingEstimate { base: *x, stable_frame: deep, unstable_frame, residual })
}

fn unstable_along_first_branch<T: Real>(model: &MapModel<T>, x: &TorusPoint<T>, depth: usize) -> Result<Frame<T>, ConeError> {
    let mut pre = vec![*x];
    for k in 0..depth {
        pre.push(model.inverse_branch(&pre[k], 1)?);
    }
    let mut frame = *model.unstable_frame();
    // forward along x_{-n}, ..., x_{-1}
    for k in (1..=depth).rev() {
        frame = frame.push(&model.jacobian(&pre[k])).ok_or(ConeError::SingularMatrix)?.0;
    }
    Ok(frame)
}

/// `λ̂ = max_x max_{v ∈ E^s_x, w ∈ Df(x) C(x)} ‖Df(x) v‖ ‖Df(x)^{-1} w‖` over unit vectors.
pub fn check_domination<T: Real>(
    model: &MapModel<T>,
    cone: &ConeSpec<T>,
    per_axis: usize,
    depth: usize,
) -> Result<DominationReport, ConeError> {
    let pts = check_points(model, per_axis);
    if model.stable_dim() == 0 {
        return Ok(DominationReport { holds: true, lambda_hat: 0.0, grid: per_axis, worst_point: pts[0].to_f64() });
    }
    let mut best = T::zero();
    let mut worst = pts[0];
    for x in &pts {
        let es = stable_frame_at(model, x, depth)?;
        let j = model.jacobian(x);
        let stable_norm = restricted_norm(&j, &es);
        let value = stable_norm * cone_conorm_inverse(&j, cone)?;
        if value > best {
            best = value;
            worst = *x;
        }
    }
    Ok(DominationReport { holds: best < T::one(), lambda_hat: best.as_f64(), grid: per_axis, worst_point: worst.to_f64() })
}

/// Stable frame by pull-back only (no residual check, no unstable frame).
pub fn stable_frame_at<T: Real>(model: &MapModel<T>, x: &TorusPoint<T>, depth: usize) -> Result<Frame<T>, ConeError> {
    if model.stable_dim() == 0 {
        return Ok(Frame::empty(model.dim()));
    }
    let mut orbit = Vec::with_capacity(depth + 1);
    orbit.push(*x);
    for k in 0..depth {
        orbit.push(model.map_point(&orbit[k]));
    }
    pull_back(model, &orbit, model.stable_frame()).ok_or(ConeError::SingularMatrix)
}

/// Operator norm of `J` restricted to the span of an orthonormal frame.
pub fn restricted_norm<T: Real>(j: &Matrix<T>, frame: &Frame<T>) -> T {
    let v = frame.vectors();
    match v.len() {
        0 => T::zero(),
        1 => j.mul_vec(&v[0]).norm(),
        _ => {
            // largest singular value of J F via the Gram matrix of the images
            let images: Vec<Vector<T>> = v.iter().map(|c| j.mul_vec(c)).collect();
            let k = images.len();
            let mut g = Matrix::zeros(k);
            for a in 0..k {
                for b in 0..k {
                    g.set(a, b, images[a].dot(&images[b]));
                }
            }
            let (vals, _) = symmetric_eigen(&g);
            vals[..k].iter().fold(T::zero(), |m, &x| m.max(x)).sqrt()
        }
    }
}

/// `log |det Df|_E|` for an orthonormal frame spanning `E`.
pub fn restricted_log_det<T: Real>(j: &Matrix<T>, frame: &Frame<T>) -> T {
    if frame.rank() == 0 {
        return T::zero();
    }
    let images: Vec<Vector<T>> = frame.vectors().iter().map(|c| j.mul_vec(c)).collect();
    volume(j.dim(), &images).ln()
}
