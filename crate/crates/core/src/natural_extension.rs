//! Finite-depth pre-orbits coded by inverse-branch words, unstable directions
//! along them, and the backward-contraction certificate.

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::cones::{cone_conorm_inverse, ConeError, ConeSpec};
use crate::hyperbolic_times::{detect_hyperbolic_times, HypError};
use crate::linalg::{min_singular_value, Frame, Matrix, Vector};
use crate::models::{MapModel, ModelError};
use crate::scalar::Real;
use crate::torus::TorusPoint;

pub const DEFAULT_DEPTH: usize = 40;
pub const MAX_DEPTH: usize = 640;
pub const DRIFT_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NatError {
    #[error("symbol {symbol} is not a branch of a degree-{degree} map")]
    BadSymbol { symbol: usize, degree: usize },
    #[error("frame drift {drift:e} exceeds tolerance {tol:e}; increase the depth")]
    DepthTooSmall { drift: f64, tol: f64 },
    #[error("point is not a preimage of the base")]
    NotAPreimage,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Cone(#[from] ConeError),
    #[error(transparent)]
    Hyp(#[from] HypError),
}

/// `x_0, x_{-1}, …, x_{-n}` with `x_{-j} = inverse_branch(x_{-j+1}, word[j-1])`.
#[derive(Clone, Debug, PartialEq)]
pub struct PreOrbit<T> {
    pub word: Vec<usize>,
    pub points: Vec<TorusPoint<T>>,
}

impl<T: Real> PreOrbit<T> {
    pub fn depth(&self) -> usize {
        self.word.len()
    }

    pub fn base(&self) -> &TorusPoint<T> {
        &self.points[0]
    }

    /// `x_{-j}`.
    pub fn point(&self, j: usize) -> &TorusPoint<T> {
        &self.points[j]
    }

    /// The pre-orbit of `x_{-1}` coded by the shifted word.
    pub fn tail(&self) -> Option<Self> {
        if self.word.is_empty() {
            return None;
        }
        Some(Self { word: self.word[1..].to_vec(), points: self.points[1..].to_vec() })
    }

    /// First `depth` symbols.
    pub fn truncate(&self, depth: usize) -> Self {
        let d = depth.min(self.depth());
        Self { word: self.word[..d].to_vec(), points: self.points[..=d].to_vec() }
    }

    /// Image under the shift: base `f(x_0)`, word prefixed by the branch that
    /// returns `x_0`.
    pub fn shift_forward(&self, model: &MapModel<T>) -> Result<Self, NatError> {
        let y = model.map_point(self.base());
        let branch = branch_of(model, &y, self.base())?;
        let mut word = Vec::with_capacity(self.depth() + 1);
        word.push(branch);
        word.extend_from_slice(&self.word);
        let mut points = Vec::with_capacity(self.points.len() + 1);
        points.push(y);
        points.extend_from_slice(&self.points);
        Ok(Self { word, points })
    }

    /// `Σ_j 2^{-j} dist(x_{-j}, y_{-j})` over the common depth.
    pub fn distance(&self, other: &Self) -> f64 {
        self.points
            .iter()
            .zip(&other.points)
            .enumerate()
            .map(|(j, (a, b))| 0.5f64.powi(j as i32) * a.distance(b).as_f64())
            .sum()
    }
}

/// Branch index `b` with `inverse_branch(y, b) = x`.
pub fn branch_of<T: Real>(model: &MapModel<T>, y: &TorusPoint<T>, x: &TorusPoint<T>) -> Result<usize, NatError> {
    let tol = T::tol(1e-8);
    let pts = model.preimages(y)?;
    pts.iter().position(|p| p.distance(x) < tol).map(|k| k + 1).ok_or(NatError::NotAPreimage)
}

pub fn extend_preorbit<T: Real>(model: &MapModel<T>, x: &TorusPoint<T>, word: &[usize]) -> Result<PreOrbit<T>, NatError> {
    let degree = model.degree();
    let mut points = Vec::with_capacity(word.len() + 1);
    points.push(*x);
    for &s in word {
        if s == 0 || s > degree {
            return Err(NatError::BadSymbol { symbol: s, degree });
        }
        let prev = points[points.len() - 1];
        points.push(model.inverse_branch(&prev, s)?);
    }
    Ok(PreOrbit { word: word.to_vec(), points })
}

/// I.i.d. uniform symbols.
pub fn random_word<R: Rng + ?Sized>(rng: &mut R, degree: usize, depth: usize) -> Vec<usize> {
    (0..depth).map(|_| rng.random_range(1..=degree)).collect()
}

/// Unstable subspace at the base of a pre-orbit with its backward-contraction
/// certificate: entry `(m, r)` is `r = ‖(Df^m(x_{-m}))^{-1}|_{E^u}‖`.
#[derive(Clone, Debug)]
pub struct UnstableDirectionEstimate<T> {
    pub base: TorusPoint<T>,
    pub frame: Frame<T>,
    pub contraction_certificate: Vec<(usize, f64)>,
    pub drift: f64,
}

/// Pushes the cone center from `x_{-n}` to `x_0`. The restricted inverse norms
/// come from the accumulated triangular factors of the forward QR steps, so
/// nothing is ever iterated backwards (which would amplify the stable error).
pub fn unstable_direction<T: Real>(
    model: &MapModel<T>,
    pre: &PreOrbit<T>,
    cone: &ConeSpec<T>,
    tol: f64,
) -> Result<UnstableDirectionEstimate<T>, NatError> {
    let n = pre.depth();
    let k = cone.rank();
    // r_factors[m-1]: factor of the step x_{-m} -> x_{-m+1}
    let mut r_factors = vec![Matrix::identity(k); n];
    let mut frame = *cone.center();
    for m in (1..=n).rev() {
        let j = model.jacobian(pre.point(m));
        let images: Vec<Vector<T>> = frame.vectors().iter().map(|v| j.mul_vec(v)).collect();
        let next = Frame::orthonormalize(model.dim(), &images).ok_or(ConeError::SingularMatrix)?;
        let mut r = Matrix::zeros(k);
        for (a, q) in next.vectors().iter().enumerate() {
            for (b, w) in images.iter().enumerate() {
                r.set(a, b, q.dot(w));
            }
        }
        r_factors[m - 1] = r;
        frame = next;
    }
    let drift = if n == 0 {
        f64::INFINITY
    } else {
        let mut shallow = *cone.center();
        for m in (1..n).rev() {
            shallow = shallow.push(&model.jacobian(pre.point(m))).ok_or(ConeError::SingularMatrix)?.0;
        }
        frame.distance(&shallow).as_f64()
    };
    if !(drift <= tol) {
        return Err(NatError::DepthTooSmall { drift, tol });
    }
    let mut product = Matrix::identity(k);
    let mut certificate = Vec::with_capacity(n);
    for (m, r) in r_factors.iter().enumerate() {
        product = product.mul_mat(r);
        let s = min_singular_value(&product).as_f64();
        certificate.push((m + 1, 1.0 / s));
    }
    Ok(UnstableDirectionEstimate { base: *pre.base(), frame, contraction_certificate: certificate, drift })
}

/// Largest relative defect `max(0, r_m e^{(c/2) m} - 1)`; `0` certifies
/// `‖(Df^m(x_{-m}))^{-1} v‖ ≤ e^{-(c/2) m} ‖v‖` on the whole unstable frame.
pub fn verify_backward_contraction<T: Real>(est: &UnstableDirectionEstimate<T>, c: f64) -> f64 {
    est.contraction_certificate
        .iter()
        .map(|&(m, r)| (r.ln() + 0.5 * c * m as f64).exp_m1().max(0.0))
        .fold(0.0, f64::max)
}

/// Cone logs `a(x_{-n}), …, a(x_{-1})` in forward order.
pub fn backward_cone_logs<T: Real>(model: &MapModel<T>, pre: &PreOrbit<T>, cone: &ConeSpec<T>) -> Result<Vec<T>, NatError> {
    (1..=pre.depth())
        .rev()
        .map(|m| Ok(cone_conorm_inverse(&model.jacobian(pre.point(m)), cone)?.ln()))
        .collect()
}

/// Whether the depth is a `c`-cone-hyperbolic time for `x_{-n}`, i.e. `x_0`
/// is the endpoint of a hyperbolic pre-disk.
pub fn passes_hyperbolicity_filter<T: Real>(
    model: &MapModel<T>,
    pre: &PreOrbit<T>,
    cone: &ConeSpec<T>,
    c: f64,
) -> Result<bool, NatError> {
    let logs = backward_cone_logs(model, pre, cone)?;
    let report = detect_hyperbolic_times(&logs, T::lit(c))?;
    Ok(report.times.last() == Some(&pre.depth()))
}

/// Random pre-orbit of `x` with the unstable direction, doubling the depth from
/// `depth` until the drift is below `tol`.
pub fn sample_unstable_direction<T: Real, R: Rng + ?Sized>(
    model: &MapModel<T>,
    x: &TorusPoint<T>,
    cone: &ConeSpec<T>,
    depth: usize,
    tol: f64,
    rng: &mut R,
) -> Result<(PreOrbit<T>, UnstableDirectionEstimate<T>), NatError> {
    let mut word = random_word(rng, model.degree(), depth.max(1));
    loop {
        let pre = extend_preorbit(model, x, &word)?;
        match unstable_direction(model, &pre, cone, tol) {
            Ok(est) => return Ok((pre, est)),
            Err(NatError::DepthTooSmall { .. }) if word.len() < MAX_DEPTH => {
                let extra = random_word(rng, model.degree(), word.len());
                word.extend(extra);
            }
            Err(e) => return Err(e),
        }
    }
}

/// Outcome of comparing two disk point clouds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DiskRelation {
    Coincide,
    Disjoint,
    Violation,
}

/// `Coincide` if the Hausdorff distance is below `tol`, `Disjoint` if every
/// pair of points is farther than `tol`, `Violation` otherwise.
pub fn disk_disjointness_probe<T: Real>(a: &[TorusPoint<T>], b: &[TorusPoint<T>], tol: f64) -> DiskRelation {
    let one_sided = |p: &[TorusPoint<T>], q: &[TorusPoint<T>]| -> f64 {
        p.iter()
            .map(|x| q.iter().map(|y| x.distance(y).as_f64()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    let hausdorff = one_sided(a, b).max(one_sided(b, a));
    if hausdorff < tol {
        return DiskRelation::Coincide;
    }
    let gap = a
        .iter()
        .flat_map(|x| b.iter().map(move |y| x.distance(y).as_f64()))
        .fold(f64::INFINITY, f64::min);
    if gap > tol {
        DiskRelation::Disjoint
    } else {
        DiskRelation::Violation
    }
}

/// Pulls a cloud of points near `x_0` back along a word.
pub fn pull_back_cloud<T: Real>(model: &MapModel<T>, cloud: &[TorusPoint<T>], word: &[usize]) -> Result<Vec<TorusPoint<T>>, NatError> {
    cloud
        .iter()
        .map(|p| extend_preorbit(model, p, word).map(|pre| pre.points[word.len()]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::pitchfork_matrix;
    use crate::cones::stable_frame_at;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pt(c: &[f64]) -> TorusPoint<f64> {
        TorusPoint::from_f64(c)
    }

    #[test]
    fn doubling_words() {
        let m = MapModel::<f64>::doubling();
        let p = extend_preorbit(&m, &pt(&[0.0]), &[1, 1, 1]).unwrap();
        assert!(p.points.iter().all(|q| q.coord(0) == 0.0));
        let p = extend_preorbit(&m, &pt(&[0.0]), &[2, 1, 1]).unwrap();
        let xs: Vec<f64> = p.points.iter().map(|q| q.coord(0)).collect();
        assert_eq!(xs, vec![0.0, 0.5, 0.25, 0.125]);
        assert_eq!(extend_preorbit(&m, &pt(&[0.0]), &[3]).unwrap_err(), NatError::BadSymbol { symbol: 3, degree: 2 });
        let m = MapModel::<f64>::linear(&[vec![3, 1], vec![1, 1]]).unwrap();
        let p = extend_preorbit(&m, &pt(&[0.0, 0.0]), &[2]).unwrap();
        assert!(p.points[1].distance(&pt(&[0.5, 0.5])) < 1e-15);
    }

    #[test]
    fn shift_and_tail_are_inverse() {
        let m = MapModel::<f64>::pitchfork_default(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let word = random_word(&mut rng, 2, 12);
        let p = extend_preorbit(&m, &pt(&[0.02, 0.01, 0.97]), &word).unwrap();
        let tail = p.tail().unwrap();
        let direct = extend_preorbit(&m, p.point(1), &word[1..]).unwrap();
        assert_eq!(tail.word, direct.word);
        assert!(tail.distance(&direct) < 1e-12);
        let back = tail.shift_forward(&m).unwrap();
        assert_eq!(back.word, p.word);
        assert!(back.distance(&p) < 1e-10);
        assert!(p.distance(&p) == 0.0);
    }

    #[test]
    fn linear_unstable_directions() {
        let m = MapModel::<f64>::cat_map();
        let cone = ConeSpec::unstable(&m, 0.5).unwrap();
        let pre = extend_preorbit(&m, &pt(&[0.2, 0.7]), &[1; 40]).unwrap();
        let est = unstable_direction(&m, &pre, &cone, DRIFT_TOL).unwrap();
        let v = est.frame.vectors()[0];
        assert!((v[1] / v[0] - 0.618_034).abs() < 1e-6);
        let lu: f64 = (3.0 + 5f64.sqrt()) / 2.0;
        for &(k, r) in &est.contraction_certificate {
            assert!((r * lu.powi(k as i32) - 1.0).abs() < 1e-9);
        }
        assert_eq!(verify_backward_contraction(&est, 1.92), 0.0);
        assert!(verify_backward_contraction(&est, 2.0 * lu.ln() + 0.05) > 0.0);

        let m3 = MapModel::<f64>::linear(&pitchfork_matrix(2)).unwrap();
        let cone = ConeSpec::unstable(&m3, 0.5).unwrap();
        let pre = extend_preorbit(&m3, &pt(&[0.2, 0.7, 0.4]), &[2; 40]).unwrap();
        let est = unstable_direction(&m3, &pre, &cone, DRIFT_TOL).unwrap();
        let span = est.frame.projector();
        for v in [Vector::from_f64(&[1.0, 0.618_034, 0.0]), Vector::from_f64(&[0.0, 0.0, 1.0])] {
            assert!(span.mul_vec(&v).sub(&v).norm() < 1e-6);
        }
        assert_eq!(verify_backward_contraction(&est, 1.3), 0.0);
        assert!(verify_backward_contraction(&est, 1.45) > 0.0);
    }

    #[test]
    fn off_support_preorbit_matches_linear() {
        let pf = MapModel::<f64>::pitchfork_default(1.0);
        let lin = MapModel::<f64>::linear(&pitchfork_matrix(2)).unwrap();
        let cone = ConeSpec::unstable(&pf, 0.5).unwrap();
        // branches picked one at a time to keep the pre-orbit off the support
        let x = pt(&[0.5, 0.5, 0.0]);
        let mut word = Vec::new();
        let mut y = x;
        for _ in 0..30 {
            let prev = lin.preimages(&y).unwrap();
            let (k, p) = prev.iter().enumerate().find(|(_, p)| !pf.in_support(p)).unwrap();
            word.push(k + 1);
            y = *p;
        }
        let a = extend_preorbit(&pf, &x, &word).unwrap();
        let b = extend_preorbit(&lin, &x, &word).unwrap();
        assert!(a.points.iter().all(|p| !pf.in_support(p)));
        let ea = unstable_direction(&pf, &a, &cone, DRIFT_TOL).unwrap();
        let eb = unstable_direction(&lin, &b, &cone, DRIFT_TOL).unwrap();
        assert!(ea.frame.distance(&eb.frame) < 1e-12);
    }

    #[test]
    fn shallow_depth_and_splitting_angle() {
        let m = MapModel::<f64>::pitchfork_default(1.0);
        let cone = ConeSpec::unstable(&m, 0.5).unwrap();
        // the expanding eigenspace is invariant under Dg everywhere, so a
        // shallow pre-orbit only drifts for a tilted cone center
        let cat = MapModel::<f64>::cat_map();
        let tilted = ConeSpec::from_vectors(2, &[Vector::from_f64(&[1.0, 0.0])], 0.9).unwrap();
        let pre = extend_preorbit(&cat, &pt(&[0.3, 0.3]), &[1, 1]).unwrap();
        assert!(matches!(unstable_direction(&cat, &pre, &tilted, DRIFT_TOL), Err(NatError::DepthTooSmall { .. })));
        assert!(unstable_direction(&cat, &extend_preorbit(&cat, &pt(&[0.3, 0.3]), &[1; 30]).unwrap(), &tilted, DRIFT_TOL).is_ok());
        let x = pt(&[0.01, 0.02, 0.99]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (pre, est) = sample_unstable_direction(&m, &x, &cone, DEFAULT_DEPTH, DRIFT_TOL, &mut rng).unwrap();
        assert!(est.drift <= DRIFT_TOL && pre.depth() >= DEFAULT_DEPTH);
        let es = stable_frame_at(&m, &x, 40).unwrap();
        assert!(es.min_angle(&est.frame) > 0.1);
        // Df(x_0) carries the frame to the frame at the shifted pre-orbit
        let shifted = pre.shift_forward(&m).unwrap();
        let next = unstable_direction(&m, &shifted, &cone, DRIFT_TOL).unwrap();
        let pushed = est.frame.push(&m.jacobian(&x)).unwrap().0;
        assert!(pushed.distance(&next.frame) < 1e-6);
    }

    #[test]
    fn disk_probe() {
        let m = MapModel::<f64>::doubling();
        let cloud: Vec<_> = (0..21).map(|k| pt(&[0.3 + 0.001 * (k as f64 - 10.0)])).collect();
        assert_eq!(disk_disjointness_probe(&cloud, &cloud, 1e-9), DiskRelation::Coincide);
        let a = pull_back_cloud(&m, &cloud, &[1, 1, 2]).unwrap();
        let b = pull_back_cloud(&m, &cloud, &[2, 1, 2]).unwrap();
        assert_eq!(disk_disjointness_probe(&a, &b, 1e-3), DiskRelation::Disjoint);
        let shifted: Vec<_> = cloud.iter().map(|p| p.shifted(&Vector::from_f64(&[0.005]))).collect();
        assert_eq!(disk_disjointness_probe(&cloud, &shifted, 1e-3), DiskRelation::Violation);
    }

    #[test]
    fn hyperbolicity_filter_on_linear_map() {
        let m = MapModel::<f64>::cat_map();
        let cone = ConeSpec::unstable(&m, 0.5).unwrap();
        let pre = extend_preorbit(&m, &pt(&[0.1, 0.1]), &[1; 10]).unwrap();
        assert!(passes_hyperbolicity_filter(&m, &pre, &cone, 0.8).unwrap());
        assert!(!passes_hyperbolicity_filter(&m, &pre, &cone, 0.9).unwrap());
    }
}
