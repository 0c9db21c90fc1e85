//! Torus endomorphisms: linear integer maps and their localized smooth perturbations.
//!
//! A perturbed model is `g_t(x) = A x + t β(|x - p| / δ) G (x - p)` with `G` chosen
//! so that at `t = 1` the targeted eigenvalues of `Dg(p)` have modulus `ρ`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{range_basis, spectral_projector, IntMatrix};
use crate::linalg::{Frame, Matrix, Vector};
use crate::scalar::Real;
use crate::torus::{LatticePoint, TorusPoint};

pub const NEWTON_MAX_ITERS: usize = 50;
pub const NEWTON_TOL: f64 = 1e-12;

/// Default target modulus for the pitchfork family (see README for why it is
/// larger than the bare admissibility bound).
pub const PITCHFORK_DEFAULT_RHO: f64 = 0.8;
pub const HOPF_DEFAULT_RHO: f64 = 0.8;
pub const DEFAULT_BUMP_RADIUS: f64 = 0.1;
/// Cutoff radius along the contracting directions. It is several times the
/// center radius so that the perturbation barely shears stable vectors.
pub const DEFAULT_STABLE_RADIUS: f64 = 0.4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("matrix must be square with dimension 1, 2 or 3")]
    BadShape,
    #[error("matrix singular")]
    Singular,
    #[error("invalid perturbation: {0}")]
    InvalidPerturbation(String),
    #[error("inverse branch {branch}: Newton did not converge in {iterations} steps (residual {residual:e})")]
    NewtonDivergence { branch: usize, iterations: usize, residual: f64 },
    #[error("inverse branches {first} and {second} converged to the same preimage")]
    BranchCollision { first: usize, second: usize },
    #[error("branch {branch} out of range 1..={degree}")]
    BranchOutOfRange { branch: usize, degree: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Linear,
    Pitchfork,
    Hopf,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::Pitchfork => "pitchfork",
            Family::Hopf => "hopf",
        }
    }
}

/// Bump perturbation parameters in plain `f64`. The support is
/// `{ |Π_c d| < radius, |Π_s d| < stable_radius }` where `d` is the displacement
/// from `center` and `Π_c`, `Π_s` are the spectral projectors onto the
/// expanding and contracting eigenspaces of the matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpSpec {
    pub center: Vec<f64>,
    pub radius: f64,
    #[serde(default = "default_stable_radius")]
    pub stable_radius: f64,
    pub rho: f64,
    pub t: f64,
}

fn default_stable_radius() -> f64 {
    DEFAULT_STABLE_RADIUS
}

impl BumpSpec {
    /// Bump at the origin with the default stable radius.
    pub fn at_origin(dim: usize, radius: f64, rho: f64, t: f64) -> Self {
        Self { center: vec![0.0; dim], radius, stable_radius: DEFAULT_STABLE_RADIUS, rho, t }
    }
}

/// Serializable description from which a model is rebuilt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub matrix: Vec<Vec<i64>>,
    pub bump: Option<BumpSpec>,
}

/// Value and derivative of the map at a point.
#[derive(Clone, Copy, Debug)]
pub struct Jet<T> {
    pub point: TorusPoint<T>,
    pub value: TorusPoint<T>,
    pub derivative: Matrix<T>,
}

/// C^∞ cutoff: 1 on `[0, 1/2]`, 0 on `[1, ∞)`.
#[inline]
pub fn bump<T: Real>(s: T) -> T {
    let half = T::lit(0.5);
    if s <= half {
        return T::one();
    }
    if s >= T::one() {
        return T::zero();
    }
    let u = T::lit(2.0) - s - s;
    let a = psi(u);
    let b = psi(T::one() - u);
    a / (a + b)
}

/// Derivative of [`bump`].
#[inline]
pub fn bump_derivative<T: Real>(s: T) -> T {
    let half = T::lit(0.5);
    if s <= half || s >= T::one() {
        return T::zero();
    }
    let u = T::lit(2.0) - s - s;
    let w = T::one() - u;
    let a = psi(u);
    let b = psi(w);
    let da = a / (u * u);
    let db = b / (w * w);
    // d/du [a / (a + b)] with db/du = -psi'(1-u); ds = -du/2
    let dh = (da * b + a * db) / ((a + b) * (a + b));
    -T::lit(2.0) * dh
}

/// C^∞ step from 1 at `s = 0` to 0 at `s = 1` with maximal slope 2.
#[inline]
pub fn gentle_step<T: Real>(s: T) -> T {
    if s <= T::zero() {
        return T::one();
    }
    if s >= T::one() {
        return T::zero();
    }
    let u = T::one() - s;
    let a = psi(u);
    let b = psi(s);
    a / (a + b)
}

#[inline]
pub fn gentle_step_derivative<T: Real>(s: T) -> T {
    if s <= T::zero() || s >= T::one() {
        return T::zero();
    }
    let u = T::one() - s;
    let a = psi(u);
    let b = psi(s);
    let da = a / (u * u);
    let db = b / (s * s);
    -(da * b + a * db) / ((a + b) * (a + b))
}

#[inline]
fn psi<T: Real>(u: T) -> T {
    if u <= T::zero() {
        T::zero()
    } else {
        (-T::one() / u).exp()
    }
}

#[derive(Clone, Debug)]
struct Bump<T> {
    spec: BumpSpec,
    center: TorusPoint<T>,
    radius: T,
    stable_radius: T,
    t: T,
    gain: Matrix<T>,
    proj_c: Matrix<T>,
    proj_s: Matrix<T>,
    frame_c: Frame<T>,
    frame_s: Frame<T>,
}

struct Profile<T> {
    beta: T,
    /// gradient of the cutoff with respect to the displacement
    grad: Vector<T>,
    disp: Vector<T>,
}

impl<T: Real> Bump<T> {
    #[inline]
    fn split(&self, d: &Vector<T>) -> (Vector<T>, Vector<T>) {
        let dc = self.proj_c.mul_vec(d);
        (dc, d.sub(&dc))
    }

    #[inline]
    fn inside(&self, d: &Vector<T>) -> bool {
        let (dc, ds) = self.split(d);
        dc.dot(&dc) < self.radius * self.radius && ds.dot(&ds) < self.stable_radius * self.stable_radius
    }

    #[inline]
    fn profile(&self, x: &TorusPoint<T>) -> Option<Profile<T>> {
        let disp = x.displacement(&self.center);
        let (dc, ds) = self.split(&disp);
        let rc2 = dc.dot(&dc);
        let rs2 = ds.dot(&ds);
        if rc2 >= self.radius * self.radius || rs2 >= self.stable_radius * self.stable_radius {
            return None;
        }
        let (rc, rs) = (rc2.sqrt(), rs2.sqrt());
        let sc = rc / self.radius;
        let ss = rs / self.stable_radius;
        let bc = bump(sc);
        let bs = gentle_step(ss);
        let mut grad = Vector::zeros(disp.dim());
        let dbc = bump_derivative(sc);
        if dbc != T::zero() {
            grad = grad.axpy(bs * dbc / (self.radius * rc), &self.proj_c.transpose().mul_vec(&dc));
        }
        let dbs = gentle_step_derivative(ss);
        if dbs != T::zero() {
            grad = grad.axpy(bc * dbs / (self.stable_radius * rs), &self.proj_s.transpose().mul_vec(&ds));
        }
        Some(Profile { beta: bc * bs, grad, disp })
    }
}

/// `f(s1) - f(s0)` for radii `r = |d|`, `r' = |d + ε|`, accurate when `ε` is tiny.
#[inline]
fn radial_difference<T: Real>(f: fn(T) -> T, df: fn(T) -> T, d0: &Vector<T>, eps: &Vector<T>, radius: T) -> T {
    let r0 = d0.norm();
    let r1 = d0.add(eps).norm();
    let s0 = r0 / radius;
    let denom = r0 + r1;
    if denom == T::zero() {
        return T::zero();
    }
    let ds = (T::lit(2.0) * d0.dot(eps) + eps.dot(eps)) / denom / radius;
    if ds.abs() < T::lit(1e-4) {
        df(s0 + ds * T::lit(0.5)) * ds
    } else {
        f(r1 / radius) - f(s0)
    }
}

/// Evaluable torus endomorphism. Immutable after construction.
#[derive(Clone, Debug)]
pub struct MapModel<T> {
    family: Family,
    matrix: IntMatrix,
    a: Matrix<T>,
    a_inv: Matrix<T>,
    offsets: Vec<Vector<T>>,
    eigenvalues: Vec<Complex64>,
    unstable: Frame<T>,
    stable: Frame<T>,
    bump: Option<Bump<T>>,
    separation: Option<T>,
}

pub fn pitchfork_matrix(n: i64) -> Vec<Vec<i64>> {
    vec![vec![n, 1, 0], vec![1, 1, 0], vec![0, 0, 2]]
}

/// Integer matrix with one stable real eigenvalue and an expanding complex pair.
pub fn hopf_matrix() -> Vec<Vec<i64>> {
    vec![vec![0, -1, 0], vec![0, 0, 2], vec![1, -2, 0]]
}

pub fn cat_matrix() -> Vec<Vec<i64>> {
    vec![vec![2, 1], vec![1, 1]]
}

/// Open interval of target moduli ρ for which the pitchfork construction keeps
/// the stable direction dominated (`|λ_s| < ρ`) and the center Jacobian at the
/// fixed point expanding (`|λ_strong| ρ > 1`).
pub fn pitchfork_rho_interval(matrix: &[Vec<i64>]) -> Option<(f64, f64)> {
    let m = IntMatrix::from_rows(matrix)?;
    let ev = m.eigenvalues();
    let strong = ev.first()?.norm();
    let weak_stable = ev.iter().map(|l| l.norm()).filter(|&r| r < 1.0).fold(0.0, f64::max);
    Some((weak_stable.max(1.0 / strong), 1.0))
}

impl<T: Real> MapModel<T> {
    pub fn new(family: Family, matrix: &[Vec<i64>], bump: Option<BumpSpec>) -> Result<Self, ModelError> {
        let im = IntMatrix::from_rows(matrix).ok_or(ModelError::BadShape)?;
        if im.det() == 0 {
            return Err(ModelError::Singular);
        }
        let dim = im.dim();
        let af = im.to_matrix::<f64>();
        let eigenvalues = im.eigenvalues();
        let unstable_idx: Vec<usize> = (0..dim).filter(|&i| eigenvalues[i].norm() > 1.0).collect();
        let stable_idx: Vec<usize> = (0..dim).filter(|&i| eigenvalues[i].norm() <= 1.0).collect();
        let frame_for = |group: &[usize]| -> Frame<f64> {
            spectral_projector(&af, &eigenvalues, group)
                .and_then(|p| range_basis(&p, group.len()))
                .unwrap_or_else(|| Frame::empty(dim))
        };
        let unstable64 = frame_for(&unstable_idx);
        let stable64 = frame_for(&stable_idx);
        let unstable = unstable64.cast();
        let stable = stable64.cast();
        let a = im.to_matrix::<T>();
        let a_inv = af.inverse().ok_or(ModelError::Singular)?.cast();
        let offsets: Vec<Vector<T>> = im.branch_offsets().iter().map(|o| o.to_vector(dim)).collect();

        let bump = match (family, bump) {
            (Family::Linear, None) => None,
            (Family::Linear, Some(_)) => {
                return Err(ModelError::InvalidPerturbation("linear family takes no bump".into()))
            }
            (_, None) => return Err(ModelError::InvalidPerturbation("perturbed family needs a bump".into())),
            (fam, Some(spec)) => {
                if unstable64.rank() != unstable_idx.len() || stable64.rank() != stable_idx.len() {
                    return Err(ModelError::InvalidPerturbation("matrix is not diagonalizable".into()));
                }
                Some(Self::build_bump(fam, &af, &eigenvalues, (&unstable64, &stable64), spec)?)
            }
        };

        let mut model = Self {
            family,
            matrix: im,
            a,
            a_inv,
            offsets,
            eigenvalues,
            unstable,
            stable,
            bump,
            separation: None,
        };
        model.separation = model.measure_separation();
        Ok(model)
    }

    fn build_bump(
        family: Family,
        af: &Matrix<f64>,
        eigenvalues: &[Complex64],
        frames: (&Frame<f64>, &Frame<f64>),
        spec: BumpSpec,
    ) -> Result<Bump<T>, ModelError> {
        let dim = af.dim();
        let bad = |m: &str| Err(ModelError::InvalidPerturbation(m.to_string()));
        if spec.center.len() != dim {
            return bad("bump center dimension differs from the matrix dimension");
        }
        if !(spec.radius > 0.0 && spec.stable_radius > 0.0) {
            return bad("bump radii must be positive");
        }
        if !(0.0..=1.0).contains(&spec.t) {
            return bad("parameter t must lie in [0, 1]");
        }
        if !(spec.rho.is_finite() && spec.rho > 0.0) {
            return bad("rho must be positive");
        }
        let unstable = |i: &usize| eigenvalues[*i].norm() > 1.0;
        let target: Vec<usize> = match family {
            Family::Pitchfork => (0..dim)
                .filter(unstable)
                .filter(|&i| eigenvalues[i].im.abs() < 1e-12)
                .min_by(|&i, &j| eigenvalues[i].norm().partial_cmp(&eigenvalues[j].norm()).unwrap())
                .into_iter()
                .collect(),
            Family::Hopf => (0..dim).filter(unstable).filter(|&i| eigenvalues[i].im.abs() >= 1e-12).collect(),
            Family::Linear => Vec::new(),
        };
        let expected = if family == Family::Hopf { 2 } else { 1 };
        if target.len() != expected {
            return bad(match family {
                Family::Hopf => "hopf family needs an expanding complex-conjugate pair",
                _ => "pitchfork family needs a real expanding eigenvalue",
            });
        }
        let modulus = eigenvalues[target[0]].norm();
        let proj = match spectral_projector(af, eigenvalues, &target) {
            Some(p) => p,
            None => return bad("target eigenvalue is not semisimple"),
        };
        let gain = af.mul_mat(&proj).scale(spec.rho / modulus - 1.0);
        let unstable_idx: Vec<usize> = (0..dim).filter(unstable).collect();
        let proj_c = spectral_projector(af, eigenvalues, &unstable_idx).expect("checked by the caller");
        let proj_s = Matrix::identity(dim).sub(&proj_c);
        let (frame_c, frame_s) = frames;
        // the support must sit inside the open fundamental box around its center
        for i in 0..dim {
            let reach = |f: &Frame<f64>, r: f64| r * f.vectors().iter().map(|v| v[i] * v[i]).sum::<f64>().sqrt();
            if reach(frame_c, spec.radius) + reach(frame_s, spec.stable_radius) >= 0.5 {
                return bad("bump support does not fit in a fundamental domain");
            }
        }
        Ok(Bump {
            center: TorusPoint::from_f64(&spec.center),
            radius: T::lit(spec.radius),
            stable_radius: T::lit(spec.stable_radius),
            t: T::lit(spec.t),
            gain: gain.cast(),
            proj_c: proj_c.cast(),
            proj_s: proj_s.cast(),
            frame_c: frame_c.cast(),
            frame_s: frame_s.cast(),
            spec,
        })
    }

    pub fn linear(matrix: &[Vec<i64>]) -> Result<Self, ModelError> {
        Self::new(Family::Linear, matrix, None)
    }

    pub fn cat_map() -> Self {
        Self::linear(&cat_matrix()).expect("unimodular")
    }

    pub fn doubling() -> Self {
        Self::linear(&[vec![2]]).expect("nonsingular")
    }

    pub fn pitchfork(n: i64, rho: f64, radius: f64, t: f64) -> Result<Self, ModelError> {
        Self::new(Family::Pitchfork, &pitchfork_matrix(n), Some(BumpSpec::at_origin(3, radius, rho, t)))
    }

    /// Pitchfork family with the default matrix, target modulus and radius.
    pub fn pitchfork_default(t: f64) -> Self {
        Self::pitchfork(2, PITCHFORK_DEFAULT_RHO, DEFAULT_BUMP_RADIUS, t).expect("valid defaults")
    }

    pub fn hopf(rho: f64, radius: f64, t: f64) -> Result<Self, ModelError> {
        Self::new(Family::Hopf, &hopf_matrix(), Some(BumpSpec::at_origin(3, radius, rho, t)))
    }

    pub fn from_spec(spec: &ModelSpec) -> Result<Self, ModelError> {
        Self::new(spec.family, &spec.matrix, spec.bump.clone())
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            family: self.family,
            matrix: self.matrix.rows(),
            bump: self.bump.as_ref().map(|b| b.spec.clone()),
        }
    }

    /// Same model with a different family parameter.
    pub fn with_t(&self, t: f64) -> Result<Self, ModelError> {
        let mut spec = self.spec();
        if let Some(b) = spec.bump.as_mut() {
            b.t = t;
        }
        Self::from_spec(&spec)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    #[inline]
    pub fn degree(&self) -> usize {
        self.offsets.len()
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn int_matrix(&self) -> &IntMatrix {
        &self.matrix
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.a
    }

    pub fn eigenvalues(&self) -> &[Complex64] {
        &self.eigenvalues
    }

    /// Orthonormal basis of the expanding eigenspace of `A`.
    pub fn unstable_frame(&self) -> &Frame<T> {
        &self.unstable
    }

    /// Orthonormal basis of the non-expanding eigenspace of `A`.
    pub fn stable_frame(&self) -> &Frame<T> {
        &self.stable
    }

    pub fn unstable_dim(&self) -> usize {
        self.unstable.rank()
    }

    pub fn stable_dim(&self) -> usize {
        self.stable.rank()
    }

    pub fn is_perturbed(&self) -> bool {
        self.bump.as_ref().is_some_and(|b| b.t != T::zero())
    }

    pub fn bump_spec(&self) -> Option<&BumpSpec> {
        self.bump.as_ref().map(|b| &b.spec)
    }

    pub fn bump_center(&self) -> Option<TorusPoint<T>> {
        self.bump.as_ref().map(|b| b.center)
    }

    /// Cutoff radius in the expanding directions.
    pub fn bump_radius(&self) -> Option<T> {
        self.bump.as_ref().map(|b| b.radius)
    }

    /// Radius of the invariant repelling circle around a fixed point that a
    /// Hopf perturbation turned into a sink: the first radius along the
    /// expanding plane where `|f(p + r e) - p| = r`. `None` when `p` is not
    /// attracting in the plane.
    pub fn repelling_radius(&self) -> Option<f64> {
        if self.family != Family::Hopf || !self.is_perturbed() {
            return None;
        }
        let b = self.bump.as_ref()?;
        let e = self.unstable.vectors()[0];
        let gain = |r: f64| -> f64 {
            let x = b.center.shifted(&e.scale(T::lit(r)));
            self.map_point(&x).distance(&b.center).as_f64() / r - 1.0
        };
        let radius = b.radius.as_f64();
        let steps = 400;
        let mut lo = radius / steps as f64;
        if gain(lo) >= 0.0 {
            return None;
        }
        for k in 2..=steps {
            let hi = radius * k as f64 / steps as f64;
            if gain(hi) >= 0.0 {
                let mut lo_hi = (lo, hi);
                for _ in 0..60 {
                    let mid = 0.5 * (lo_hi.0 + lo_hi.1);
                    if gain(mid) < 0.0 {
                        lo_hi.0 = mid;
                    } else {
                        lo_hi.1 = mid;
                    }
                }
                return Some(0.5 * (lo_hi.0 + lo_hi.1));
            }
            lo = hi;
        }
        None
    }

    /// Cutoff radius in the contracting directions.
    pub fn stable_radius(&self) -> Option<T> {
        self.bump.as_ref().map(|b| b.stable_radius)
    }

    /// Whether `x` lies in the open support of the perturbation (for any `t`).
    #[inline]
    pub fn in_support(&self, x: &TorusPoint<T>) -> bool {
        match &self.bump {
            Some(b) => b.inside(&x.displacement(&b.center)),
            None => false,
        }
    }

    /// Distances from the bump center along the expanding plane and along the
    /// contracting directions, in the splitting the bump itself uses.
    pub fn bump_coordinates(&self, x: &TorusPoint<T>) -> Option<(T, T)> {
        let b = self.bump.as_ref()?;
        let (dc, ds) = b.split(&x.displacement(&b.center));
        Some((dc.norm(), ds.norm()))
    }

    /// Grid over the support with `per_axis` points along each eigen-coordinate
    /// of the box `[-scale δ, scale δ]^{d_u} x [-scale δ_s, scale δ_s]^{d_s}`,
    /// keeping the points inside the scaled cylinder. Empty without a bump.
    pub fn support_points(&self, per_axis: usize, scale: T) -> Vec<TorusPoint<T>> {
        let b = match &self.bump {
            Some(b) => b,
            None => return Vec::new(),
        };
        let dim = self.dim();
        let n = per_axis.max(2);
        let (rc, rs) = (b.radius * scale, b.stable_radius * scale);
        let kc = b.frame_c.rank();
        // the profile only depends on these coordinates
        let used = kc + b.frame_s.rank();
        let mut out = Vec::new();
        for code in 0..n.pow(used as u32) {
            let mut c = code;
            let mut coef = [T::zero(); 3];
            for slot in coef.iter_mut().take(used) {
                *slot = T::lit(2.0 * (c % n) as f64 / (n - 1) as f64) - T::one();
                c /= n;
            }
            let mut dc = Vector::zeros(dim);
            for (k, v) in b.frame_c.vectors().iter().enumerate() {
                dc = dc.axpy(coef[k] * rc, v);
            }
            let mut ds = Vector::zeros(dim);
            for (k, v) in b.frame_s.vectors().iter().enumerate() {
                ds = ds.axpy(coef[kc + k] * rs, v);
            }
            if dc.norm() <= rc && ds.norm() <= rs {
                out.push(b.center.shifted(&dc.add(&ds)));
            }
        }
        out
    }

    /// Largest grid spacing of [`support_points`](Self::support_points).
    pub fn support_spacing(&self, per_axis: usize) -> T {
        match &self.bump {
            Some(b) => T::lit(2.0) * b.radius.max(b.stable_radius) / T::lit((per_axis.max(2) - 1) as f64),
            None => T::zero(),
        }
    }

    /// Minimal torus distance between distinct preimages of a common point.
    /// `None` for degree one.
    pub fn branch_separation(&self) -> Option<T> {
        self.separation
    }

    /// Radius within which each inverse branch moves continuously with its
    /// base point, away from the fundamental-domain seams of the labeling.
    pub fn inverse_branch_radius(&self) -> Option<T> {
        self.separation.map(|s| s / (T::lit(2.0) * self.max_derivative_norm()))
    }

    /// Upper bound for `‖Dg‖` over the torus, sampled on a grid and at the bump.
    pub fn max_derivative_norm(&self) -> T {
        let mut best = operator_norm(&self.a);
        for x in self.support_points(24, T::one()) {
            best = best.max(operator_norm(&self.jacobian(&x)));
        }
        best
    }

    #[inline]
    pub fn map_point(&self, x: &TorusPoint<T>) -> TorusPoint<T> {
        let mut v = self.a.mul_vec(x.coords());
        if let Some(b) = &self.bump {
            if let Some(pr) = b.profile(x) {
                v = v.axpy(b.t * pr.beta, &b.gain.mul_vec(&pr.disp));
            }
        }
        TorusPoint::from_vector(v)
    }

    /// `g(x) - A x`, or `None` outside the support.
    #[inline]
    pub fn perturbation(&self, x: &TorusPoint<T>) -> Option<Vector<T>> {
        let b = self.bump.as_ref()?;
        if b.t == T::zero() {
            return None;
        }
        let pr = b.profile(x)?;
        Some(b.gain.mul_vec(&pr.disp).scale(b.t * pr.beta))
    }

    /// One step on the fine lattice: the linear part exactly, the perturbation
    /// rounded to the lattice spacing.
    #[inline]
    pub fn lattice_step(&self, p: &LatticePoint) -> LatticePoint {
        match self.perturbation(&p.to_torus::<T>()) {
            Some(v) => {
                let s = v.to_f64();
                p.affine_step(self.matrix.raw_rows(), Some(&s))
            }
            None => p.affine_step(self.matrix.raw_rows(), None),
        }
    }

    #[inline]
    pub fn jacobian(&self, x: &TorusPoint<T>) -> Matrix<T> {
        let mut m = self.a;
        if let Some(b) = &self.bump {
            if let Some(pr) = b.profile(x) {
                m = m.add(&b.gain.scale(b.t * pr.beta));
                let gd = b.gain.mul_vec(&pr.disp);
                m = m.add(&Matrix::outer(&gd, &pr.grad).scale(b.t));
            }
        }
        m
    }

    pub fn eval(&self, x: &TorusPoint<T>) -> Jet<T> {
        Jet { point: *x, value: self.map_point(x), derivative: self.jacobian(x) }
    }

    /// `g(x + ε) - g(x)` as a tangent vector, accurate for arbitrarily small `ε`
    /// (relative rounding only). `ε` must be shorter than half the torus period.
    pub fn eval_offset(&self, x: &TorusPoint<T>, eps: &Vector<T>) -> Vector<T> {
        let mut out = self.a.mul_vec(eps);
        let b = match &self.bump {
            Some(b) if b.t != T::zero() => b,
            _ => return out,
        };
        let d0 = x.displacement(&b.center);
        let d1 = d0.add(eps);
        if !b.inside(&d0) && !b.inside(&d1) {
            return out;
        }
        let (c0, s0) = b.split(&d0);
        let (ce, se) = b.split(eps);
        let (c1, s1) = (c0.add(&ce), s0.add(&se));
        let bc1 = bump(c1.norm() / b.radius);
        let bs0 = gentle_step(s0.norm() / b.stable_radius);
        let bs1 = gentle_step(s1.norm() / b.stable_radius);
        let dbc = radial_difference(bump, bump_derivative, &c0, &ce, b.radius);
        let dbs = radial_difference(gentle_step, gentle_step_derivative, &s0, &se, b.stable_radius);
        // β1 β1' - β0 β0' split so that each difference keeps relative accuracy
        let dbeta = bc1 * dbs + bs0 * dbc;
        out = out.axpy(b.t * bc1 * bs1, &b.gain.mul_vec(eps));
        out.axpy(b.t * dbeta, &b.gain.mul_vec(&d0))
    }

    /// Linear part of the preimage for `branch` (1-based).
    fn linear_preimage(&self, y: &TorusPoint<T>, branch: usize) -> Result<TorusPoint<T>, ModelError> {
        if branch == 0 || branch > self.degree() {
            return Err(ModelError::BranchOutOfRange { branch, degree: self.degree() });
        }
        let v = self.a_inv.mul_vec(y.coords()).add(&self.offsets[branch - 1]);
        Ok(TorusPoint::from_vector(v))
    }

    /// Preimage of `y` under the branch with 1-based index `branch`, in the
    /// lexicographic order of the exact lattice representatives.
    pub fn inverse_branch(&self, y: &TorusPoint<T>, branch: usize) -> Result<TorusPoint<T>, ModelError> {
        let seed = self.linear_preimage(y, branch)?;
        match &self.bump {
            Some(b) if b.t != T::zero() => self.newton(&seed, b, branch),
            _ => Ok(seed),
        }
    }

    /// Solves `A u + P(seed + u) = 0`, so that `g(seed + u) = A seed = y`.
    fn newton(&self, seed: &TorusPoint<T>, b: &Bump<T>, branch: usize) -> Result<TorusPoint<T>, ModelError> {
        let residual = |u: &Vector<T>| -> (TorusPoint<T>, Vector<T>) {
            let x = seed.shifted(u);
            let mut f = self.a.mul_vec(u);
            if let Some(pr) = b.profile(&x) {
                f = f.axpy(b.t * pr.beta, &b.gain.mul_vec(&pr.disp));
            }
            (x, f)
        };
        let tol = T::tol(NEWTON_TOL);
        let mut u = Vector::zeros(self.dim());
        let (mut x, mut f) = residual(&u);
        let mut res = f.norm();
        for _ in 0..NEWTON_MAX_ITERS {
            if res <= tol {
                return Ok(x);
            }
            let jinv = match self.jacobian(&x).inverse() {
                Some(j) => j,
                None => break,
            };
            let step = jinv.mul_vec(&f);
            let mut lambda = T::one();
            let mut accepted = false;
            for _ in 0..30 {
                let trial = u.axpy(-lambda, &step);
                let (tx, tf) = residual(&trial);
                let tr = tf.norm();
                if tr < res {
                    u = trial;
                    x = tx;
                    f = tf;
                    res = tr;
                    accepted = true;
                    break;
                }
                lambda = lambda * T::lit(0.5);
            }
            if !accepted {
                break;
            }
        }
        if res <= tol {
            return Ok(x);
        }
        Err(ModelError::NewtonDivergence { branch, iterations: NEWTON_MAX_ITERS, residual: res.as_f64() })
    }

    /// All `degree` preimages, in branch order.
    pub fn preimages(&self, y: &TorusPoint<T>) -> Result<Vec<TorusPoint<T>>, ModelError> {
        let pts = (1..=self.degree())
            .map(|b| self.inverse_branch(y, b))
            .collect::<Result<Vec<_>, _>>()?;
        if self.is_perturbed() {
            let floor = T::tol(1e-9);
            for i in 0..pts.len() {
                for j in (i + 1)..pts.len() {
                    if pts[i].distance(&pts[j]) < floor {
                        return Err(ModelError::BranchCollision { first: i + 1, second: j + 1 });
                    }
                }
            }
        }
        Ok(pts)
    }

    fn measure_separation(&self) -> Option<T> {
        if self.degree() < 2 {
            return None;
        }
        let zero = TorusPoint::origin(self.dim());
        let mut best = T::infinity();
        for o in self.offsets.iter().skip(1) {
            best = best.min(TorusPoint::from_vector(*o).distance(&zero));
        }
        if let Some(b) = &self.bump {
            if b.t != T::zero() {
                // preimages of points near the image of the support
                for x in self.support_points(12, T::lit(1.05)) {
                    let y = self.map_point(&x);
                    if let Ok(pts) = (1..=self.degree()).map(|k| self.inverse_branch(&y, k)).collect::<Result<Vec<_>, _>>() {
                        for i in 0..pts.len() {
                            for j in (i + 1)..pts.len() {
                                best = best.min(pts[i].distance(&pts[j]));
                            }
                        }
                    }
                }
            }
        }
        Some(best)
    }

    /// Minimum of `|det Dg|` over a regular grid plus a dense sampling of the support.
    pub fn min_abs_det(&self, per_axis: usize) -> T {
        let mut best = T::infinity();
        for x in regular_grid::<T>(self.dim(), per_axis) {
            best = best.min(self.jacobian(&x).det().abs());
        }
        for x in self.support_points(24, T::one()) {
            best = best.min(self.jacobian(&x).det().abs());
        }
        best
    }

    /// Checks that no two points of the support ball share an image, by counting
    /// the preimages that fall inside the ball for images of sampled ball points.
    pub fn injective_on_support(&self, per_axis: usize) -> Result<bool, ModelError> {
        for x in self.support_points(per_axis, T::one()) {
            let y = self.map_point(&x);
            let inside = self.preimages(&y)?.iter().filter(|q| self.in_support(q)).count();
            if inside > 1 {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn cast<U: Real>(&self) -> MapModel<U> {
        MapModel::<U>::from_spec(&self.spec()).expect("spec already validated")
    }
}

/// Largest singular value.
pub fn operator_norm<T: Real>(m: &Matrix<T>) -> T {
    let (vals, _) = crate::linalg::symmetric_eigen(&m.transpose().mul_mat(m));
    vals[..m.dim()].iter().fold(T::zero(), |a, &v| a.max(v)).max(T::zero()).sqrt()
}

/// Cell-centered grid with `per_axis` points along each axis.
pub fn regular_grid<T: Real>(dim: usize, per_axis: usize) -> Vec<TorusPoint<T>> {
    let total = per_axis.pow(dim as u32);
    let h = 1.0 / per_axis as f64;
    (0..total)
        .map(|code| {
            let mut c = code;
            let mut v = [0.0; 3];
            for slot in v.iter_mut().take(dim) {
                *slot = ((c % per_axis) as f64 + 0.5) * h;
                c /= per_axis;
            }
            TorusPoint::from_f64(&v[..dim])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &TorusPoint<f64>, b: &[f64], tol: f64) -> bool {
        a.distance(&TorusPoint::from_f64(b)) < tol
    }

    #[test]
    fn linear_eval_examples() {
        let cat = MapModel::<f64>::cat_map();
        let j = cat.eval(&TorusPoint::origin(2));
        assert!(close(&j.value, &[0.0, 0.0], 1e-15));
        assert_eq!(j.derivative.to_rows_f64(), vec![vec![2.0, 1.0], vec![1.0, 1.0]]);
        let m3 = MapModel::<f64>::linear(&pitchfork_matrix(2)).unwrap();
        let v = m3.map_point(&TorusPoint::from_f64(&[0.25, 0.5, 0.5]));
        assert!(close(&v, &[0.0, 0.75, 0.0], 1e-15));
    }

    #[test]
    fn pitchfork_derivative_at_center_has_target_modulus() {
        let m = MapModel::<f64>::pitchfork(2, 0.6, 0.1, 1.0).unwrap();
        let d = m.jacobian(&TorusPoint::origin(3));
        let want = Matrix::from_f64_rows(&[vec![2.0, 1.0, 0.0], vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 0.6]]);
        assert!(d.sub(&want).frobenius() < 1e-12);
        let ev = m.eigenvalues();
        assert!((ev[2].norm() / 0.6 - 0.636_610).abs() < 1e-5);
        assert!((ev[0].norm() * 0.6 - 1.570_820).abs() < 1e-5);
    }

    #[test]
    fn hopf_center_becomes_a_sink() {
        let m = MapModel::<f64>::hopf(0.8, 0.1, 1.0).unwrap();
        let d = m.jacobian(&TorusPoint::origin(3));
        let rows = d.to_rows_f64();
        // eigenvalues of the 3x3 real matrix through its characteristic polynomial
        let tr = rows[0][0] + rows[1][1] + rows[2][2];
        let det = d.det();
        assert!(det.abs() < 1.0);
        assert!(tr.abs() < 3.0);
        let prod_pair = det / m.eigenvalues()[2].re;
        assert!((prod_pair - 0.64).abs() < 1e-9);
    }

    #[test]
    fn repelling_circle_sits_inside_the_bump() {
        let m = MapModel::<f64>::hopf(0.8, 0.1, 1.0).unwrap();
        let r = m.repelling_radius().unwrap();
        assert!(r > 0.05 && r < 0.1, "{r}");
        let x = TorusPoint::origin(3).shifted(&m.unstable_frame().vectors()[0].scale(r));
        assert!((m.map_point(&x).distance(&TorusPoint::origin(3)) - r).abs() < 1e-9);
        assert!(MapModel::<f64>::hopf(0.8, 0.1, 0.0).unwrap().repelling_radius().is_none());
        assert!(MapModel::<f64>::pitchfork_default(1.0).repelling_radius().is_none());
    }

    #[test]
    fn preimage_examples() {
        let m = MapModel::<f64>::linear(&[vec![3, 1], vec![1, 1]]).unwrap();
        let pts = m.preimages(&TorusPoint::origin(2)).unwrap();
        assert!(close(&pts[0], &[0.0, 0.0], 1e-15));
        assert!(close(&pts[1], &[0.5, 0.5], 1e-15));
        let cat = MapModel::<f64>::cat_map();
        let pts = cat.preimages(&TorusPoint::from_f64(&[0.3, 0.7])).unwrap();
        assert_eq!(pts.len(), 1);
        assert!(close(&pts[0], &[0.6, 0.1], 1e-12));
        let dbl = MapModel::<f64>::doubling();
        let y = TorusPoint::from_f64(&[0.5]);
        assert!(close(&dbl.inverse_branch(&y, 1).unwrap(), &[0.25], 1e-15));
        assert!(close(&dbl.inverse_branch(&y, 2).unwrap(), &[0.75], 1e-15));
        assert_eq!(
            dbl.inverse_branch(&y, 3),
            Err(ModelError::BranchOutOfRange { branch: 3, degree: 2 })
        );
    }

    #[test]
    fn perturbed_branch_off_support_matches_linear() {
        let pf = MapModel::<f64>::pitchfork_default(1.0);
        let lin = MapModel::<f64>::linear(&pitchfork_matrix(2)).unwrap();
        let y = TorusPoint::from_f64(&[0.31, 0.62, 0.27]);
        for b in 1..=2 {
            let p = pf.inverse_branch(&y, b).unwrap();
            let q = lin.inverse_branch(&y, b).unwrap();
            assert!(p.distance(&q) < 1e-12);
        }
    }

    #[test]
    fn perturbed_preimages_round_trip_near_support() {
        for m in [MapModel::<f64>::pitchfork_default(1.0), MapModel::<f64>::hopf(0.8, 0.1, 1.0).unwrap()] {
            for x in m.support_points(7, 1.2) {
                let y = m.map_point(&x);
                let pts = m.preimages(&y).unwrap();
                assert_eq!(pts.len(), 2);
                assert!(pts.iter().any(|p| p.distance(&x) < 1e-9), "{:?}", x);
                for p in &pts {
                    assert!(m.map_point(p).distance(&y) < 1e-10);
                }
            }
        }
    }

    #[test]
    fn local_diffeomorphism_and_injectivity() {
        for m in [MapModel::<f64>::pitchfork_default(1.0), MapModel::<f64>::hopf(0.8, 0.1, 1.0).unwrap()] {
            assert!(m.min_abs_det(8) > 0.0);
            assert!(m.injective_on_support(9).unwrap());
            assert!(m.branch_separation().unwrap() > 0.1);
        }
    }

    #[test]
    fn bump_derivative_matches_finite_difference() {
        for k in 1..100 {
            let s = 0.5 + k as f64 * 0.005;
            let h = 1e-6;
            let fd = (bump(s + h) - bump(s - h)) / (2.0 * h);
            assert!((fd - bump_derivative(s)).abs() < 1e-6, "s={s}");
        }
        assert_eq!(bump(0.3f64), 1.0);
        assert_eq!(bump(1.2f64), 0.0);
    }

    #[test]
    fn jacobian_matches_finite_difference_in_support() {
        let m = MapModel::<f64>::hopf(0.8, 0.1, 1.0).unwrap();
        let x = TorusPoint::from_f64(&[0.04, -0.05, 0.03]);
        let j = m.jacobian(&x);
        for col in 0..3 {
            let e = Vector::<f64>::basis(3, col).scale(1e-7);
            let fd = m.eval_offset(&x, &e).scale(1e7);
            let exact = j.column(col);
            assert!(fd.sub(&exact).norm() < 1e-5);
        }
    }

    #[test]
    fn eval_offset_agrees_with_difference_of_values() {
        let m = MapModel::<f64>::pitchfork_default(1.0);
        let x = TorusPoint::from_f64(&[0.02, -0.03, 0.06]);
        let eps = Vector::from_f64(&[1e-3, -2e-3, 1.5e-3]);
        let direct = m.map_point(&x.shifted(&eps)).displacement(&m.map_point(&x));
        assert!(direct.sub(&m.eval_offset(&x, &eps)).norm() < 1e-14);
        // tiny offsets scale linearly with the Jacobian
        let tiny = eps.scale(1e-40);
        let lin = m.jacobian(&x).mul_vec(&tiny);
        assert!(m.eval_offset(&x, &tiny).sub(&lin).norm() < 1e-12 * tiny.norm());
    }

    #[test]
    fn lattice_step_tracks_map_point() {
        let m = MapModel::<f64>::pitchfork_default(1.0);
        for x in m.support_points(5, 1.0).into_iter().chain(regular_grid(3, 4)) {
            let p = LatticePoint::from_torus(&x);
            let y = m.lattice_step(&p).to_torus::<f64>();
            assert!(y.distance(&m.map_point(&p.to_torus())) < 1e-14);
        }
    }

    #[test]
    fn single_precision_models_work() {
        let m = MapModel::<f32>::cat_map();
        let y = TorusPoint::<f32>::new(&[0.3, 0.7]);
        let x = m.inverse_branch(&y, 1).unwrap();
        assert!(m.map_point(&x).distance(&y) < 1e-5);
        let pf = MapModel::<f32>::pitchfork_default(1.0);
        let y = pf.map_point(&TorusPoint::new(&[0.02, 0.01, 0.03]));
        assert_eq!(pf.preimages(&y).unwrap().len(), 2);
    }

    #[test]
    fn rho_interval_for_default_matrix() {
        let (lo, hi) = pitchfork_rho_interval(&pitchfork_matrix(2)).unwrap();
        assert!((lo - 0.381_966).abs() < 1e-6);
        assert_eq!(hi, 1.0);
    }

    #[test]
    fn rejects_singular_and_bad_bumps() {
        assert_eq!(MapModel::<f64>::linear(&[vec![1, 2], vec![2, 4]]).unwrap_err(), ModelError::Singular);
        assert!(MapModel::<f64>::pitchfork(2, 0.8, 0.7, 1.0).is_err());
        assert!(MapModel::<f64>::new(Family::Hopf, &cat_matrix(), Some(BumpSpec::at_origin(2, 0.1, 0.5, 1.0))).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn round_trip_every_branch(y in prop::collection::vec(0.0f64..1.0, 3), which in 0usize..3) {
            let m = match which {
                0 => MapModel::<f64>::linear(&pitchfork_matrix(2)).unwrap(),
                1 => MapModel::<f64>::pitchfork_default(1.0),
                _ => MapModel::<f64>::hopf(0.8, 0.1, 1.0).unwrap(),
            };
            let y = TorusPoint::from_f64(&y);
            let pts = m.preimages(&y).unwrap();
            prop_assert_eq!(pts.len(), m.degree());
            let sep = m.branch_separation().unwrap();
            prop_assert!(pts[0].distance(&pts[1]) >= sep - 1e-12);
            for p in &pts {
                prop_assert!(m.map_point(p).distance(&y) < 1e-10);
            }
        }

        #[test]
        fn zero_parameter_is_linear(x in prop::collection::vec(-0.2f64..0.2, 3)) {
            let m = MapModel::<f64>::pitchfork_default(0.0);
            let lin = MapModel::<f64>::linear(&pitchfork_matrix(2)).unwrap();
            let x = TorusPoint::from_f64(&x);
            prop_assert_eq!(m.map_point(&x), lin.map_point(&x));
            prop_assert_eq!(m.jacobian(&x), lin.jacobian(&x));
        }
    }

    #[test]
    fn degree_conservation_on_grid() {
        let m = MapModel::<f64>::linear(&[vec![3, 1], vec![1, 1]]).unwrap();
        for y in regular_grid::<f64>(2, 100) {
            assert_eq!(m.preimages(&y).unwrap().len(), 2);
        }
    }
}
