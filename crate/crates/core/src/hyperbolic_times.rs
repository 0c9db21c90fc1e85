//! Cone-hyperbolic times along orbits: logging of cone conorms, the linear
//! Pliss scan, and the uniform-expansion check at detected times.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::cones::{cone_conorm_inverse, restricted_norm, ConeError, ConeSpec};
use crate::linalg::{Frame, Vector};
use crate::models::MapModel;
use crate::scalar::Real;
use crate::torus::{LatticePoint, TorusPoint};

/// Shortest orbit for which a Birkhoff average is reported.
pub const MIN_BIRKHOFF_LEN: usize = 100;
/// Number of `(j, n)` pairs checked per orbit by [`verify_expansion_at_times`].
pub const MAX_VERIFY_PAIRS: usize = 64;
/// Cone directions tried at every checked pair.
pub const VERIFY_DIRECTIONS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HypError {
    #[error("hyperbolicity constant c must be positive, got {0}")]
    NonpositiveC(f64),
    #[error("orbit of length {len} is shorter than the minimum {min}")]
    OrbitTooShort { len: usize, min: usize },
    #[error(transparent)]
    Cone(#[from] ConeError),
}

/// Forward orbit with the per-step logs used by the hyperbolic-time machinery.
/// All sequences are indexed by `j = 0..n` and refer to the point `f^j(x)`.
#[derive(Clone, Debug)]
pub struct OrbitRecord<T> {
    pub start: TorusPoint<T>,
    pub points: Vec<TorusPoint<T>>,
    /// `log ‖(Df|_C)^{-1}‖`
    pub cone_lognorms: Vec<T>,
    /// `log |det Df|`
    pub jac_logs: Vec<T>,
    /// `log ‖Df|_{E^s}‖`; empty unless requested
    pub stable_lognorms: Vec<T>,
}

impl<T: Real> OrbitRecord<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Iterates `x` for `n` steps logging cone conorms and Jacobians. With
/// `stable_depth = Some(k)` the stable bundle along the orbit is obtained by
/// pulling the reference stable frame back from `f^{n-1+k}(x)` in one pass.
pub fn record_orbit<T: Real>(
    model: &MapModel<T>,
    cone: &ConeSpec<T>,
    x: &TorusPoint<T>,
    n: usize,
    stable_depth: Option<usize>,
) -> Result<OrbitRecord<T>, HypError> {
    let extra = stable_depth.unwrap_or(0);
    let mut points = Vec::with_capacity(n + extra);
    let mut cone_lognorms = Vec::with_capacity(n);
    let mut jac_logs = Vec::with_capacity(n);
    // the exact lattice keeps integer-expanding directions from collapsing
    let mut lp = LatticePoint::from_torus(x);
    for j in 0..n + extra {
        let p = if j == 0 { *x } else { lp.to_torus() };
        points.push(p);
        if j < n {
            let jac = model.jacobian(&p);
            cone_lognorms.push(cone_conorm_inverse(&jac, cone)?.ln());
            jac_logs.push(jac.det().abs().ln());
        }
        lp = model.lattice_step(&lp);
    }
    let mut stable_lognorms = Vec::new();
    if let Some(depth) = stable_depth {
        if model.stable_dim() == 0 {
            stable_lognorms = vec![T::neg_infinity(); n];
        } else if n > 0 {
            stable_lognorms = vec![T::zero(); n];
            let mut frame = *model.stable_frame();
            for j in (0..n + depth).rev() {
                let jac = model.jacobian(&points[j]);
                let inv = jac.inverse().ok_or(ConeError::SingularMatrix)?;
                frame = frame.push(&inv).ok_or(ConeError::SingularMatrix)?.0;
                if j < n {
                    stable_lognorms[j] = restricted_norm(&jac, &frame).ln();
                }
            }
        }
    }
    points.truncate(n);
    Ok(OrbitRecord { start: *x, points, cone_lognorms, jac_logs, stable_lognorms })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HyperbolicTimeReport {
    pub c: f64,
    /// Orbit length the times were detected on.
    pub n: usize,
    /// Sorted, 1-based: `n` is a time when the `n` logs `a_0..a_{n-1}` qualify.
    pub times: Vec<usize>,
    pub frequency_hat: f64,
}

/// Pliss scan: `n` is a `c`-hyperbolic time iff every suffix of `a_0..a_{n-1}`
/// satisfies `Σ_{j=n-k}^{n-1} a_j ≤ -c k`. With `S_m = Σ_{j<m} (a_j + c)` this is
/// `S_n ≤ min_{i<n} S_i`, so one pass with a running minimum suffices.
pub fn detect_hyperbolic_times<T: Real>(a: &[T], c: T) -> Result<HyperbolicTimeReport, HypError> {
    if !(c > T::zero()) {
        return Err(HypError::NonpositiveC(c.as_f64()));
    }
    let mut times = Vec::new();
    let mut partial = T::zero();
    let mut running_min = T::zero();
    for (j, &aj) in a.iter().enumerate() {
        partial += aj + c;
        if partial <= running_min {
            times.push(j + 1);
        }
        running_min = running_min.min(partial);
    }
    let frequency_hat = if a.is_empty() { 0.0 } else { times.len() as f64 / a.len() as f64 };
    Ok(HyperbolicTimeReport { c: c.as_f64(), n: a.len(), times, frequency_hat })
}

/// Empirical Birkhoff average of the cone logs.
pub fn birkhoff_limsup_estimate<T: Real>(rec: &OrbitRecord<T>) -> Result<T, HypError> {
    let n = rec.cone_lognorms.len();
    if n < MIN_BIRKHOFF_LEN {
        return Err(HypError::OrbitTooShort { len: n, min: MIN_BIRKHOFF_LEN });
    }
    Ok(rec.cone_lognorms.iter().copied().sum::<T>() / T::lit(n as f64))
}

/// Half the empirical rate: `c = -median / 4` (so `-2c` is half the median).
pub fn default_c(averages: &[f64]) -> Option<f64> {
    let m = median(averages)?;
    (m < 0.0).then_some(-m / 4.0)
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[k] } else { 0.5 * (v[k - 1] + v[k]) })
}

/// Deterministic sample of unit cone directions: boundary directions then a
/// Kronecker sequence through the interior.
pub fn sample_cone_directions<T: Real>(cone: &ConeSpec<T>, count: usize) -> Vec<Vector<T>> {
    let mut dirs = if cone.is_full() { Vec::new() } else { cone.boundary_directions(count / 2) };
    let alpha = [0.754_877_666_246_692_8, 0.569_840_290_998_053_2, 0.438_737_166_065_354_2];
    let mut k = 1usize;
    while dirs.len() < count {
        let u = alpha.map(|a| T::lit((a * k as f64).fract()));
        dirs.push(cone.direction_from_unit(u));
        k += 1;
    }
    dirs.truncate(count);
    dirs
}

/// `(j, n)` pairs checked for a report: all of them when few, otherwise an
/// evenly strided subset of at most `max_pairs`.
pub fn verification_pairs(times: &[usize], max_pairs: usize) -> Vec<(usize, usize)> {
    let total: usize = times.iter().sum();
    let stride = if total <= max_pairs { 1 } else { total.div_ceil(max_pairs) };
    let mut out = Vec::new();
    let mut idx = 0usize;
    for &n in times {
        for j in 0..n {
            if idx % stride == 0 {
                out.push((j, n));
            }
            idx += 1;
        }
    }
    out
}

/// Largest relative shortfall `max(0, 1 - ‖Df^{n-j}(f^j x) v‖ / (e^{c(n-j)} ‖v‖))`
/// over checked pairs and sampled cone directions; `0` means the expansion
/// promised at every hyperbolic time is observed. Logs avoid overflow.
pub fn verify_expansion_at_times<T: Real>(
    model: &MapModel<T>,
    rec: &OrbitRecord<T>,
    report: &HyperbolicTimeReport,
    cone: &ConeSpec<T>,
) -> f64 {
    verify_pairs(model, rec, report.c, cone, &verification_pairs(&report.times, MAX_VERIFY_PAIRS))
}

/// As [`verify_expansion_at_times`] over every pair (test-suite mode).
pub fn verify_expansion_exhaustive<T: Real>(
    model: &MapModel<T>,
    rec: &OrbitRecord<T>,
    report: &HyperbolicTimeReport,
    cone: &ConeSpec<T>,
) -> f64 {
    verify_pairs(model, rec, report.c, cone, &verification_pairs(&report.times, usize::MAX))
}

fn verify_pairs<T: Real>(
    model: &MapModel<T>,
    rec: &OrbitRecord<T>,
    c: f64,
    cone: &ConeSpec<T>,
    pairs: &[(usize, usize)],
) -> f64 {
    let dirs = sample_cone_directions(cone, VERIFY_DIRECTIONS);
    let mut worst = 0.0f64;
    for &(j, n) in pairs {
        // points beyond the record are regenerated so injected times are allowed
        let mut orbit = Vec::with_capacity(n - j);
        let mut p = if j < rec.points.len() { rec.points[j] } else { iterate(model, &rec.start, j) };
        for _ in j..n {
            orbit.push(p);
            p = model.map_point(&p);
        }
        for v in &dirs {
            let mut w = *v;
            let mut log_growth = 0.0f64;
            for x in &orbit {
                w = model.jacobian(x).mul_vec(&w);
                let r = w.norm();
                log_growth += r.as_f64().ln();
                w = w.scale(T::one() / r);
            }
            let shortfall = 1.0 - (log_growth - c * (n - j) as f64).exp();
            worst = worst.max(shortfall);
        }
    }
    worst
}

fn iterate<T: Real>(model: &MapModel<T>, x: &TorusPoint<T>, n: usize) -> TorusPoint<T> {
    (0..n).fold(*x, |p, _| model.map_point(&p))
}

/// One row of an ensemble summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrbitSummary {
    pub orbit_id: usize,
    pub n_detected: usize,
    pub frequency_hat: f64,
    pub birkhoff_avg: f64,
}

pub fn summarize(orbit_id: usize, report: &HyperbolicTimeReport, birkhoff_avg: f64) -> OrbitSummary {
    OrbitSummary { orbit_id, n_detected: report.times.len(), frequency_hat: report.frequency_hat, birkhoff_avg }
}

/// CSV with columns `orbit_id,n_detected,frequency_hat,birkhoff_avg`.
pub fn write_summary_csv<W: Write>(out: W, rows: &[OrbitSummary]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Frame at each orbit point spanned by images of the cone center, used by
/// callers that need the unstable direction along a forward orbit.
pub fn pushed_center_frames<T: Real>(model: &MapModel<T>, rec: &OrbitRecord<T>, cone: &ConeSpec<T>) -> Vec<Frame<T>> {
    let mut frames = Vec::with_capacity(rec.len());
    let mut f = *cone.center();
    for x in &rec.points {
        frames.push(f);
        if let Some((g, _)) = f.push(&model.jacobian(x)) {
            f = g;
        }
    }
    frames
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::cat_matrix;
    use proptest::prelude::*;

    fn brute(a: &[f64], c: f64) -> Vec<usize> {
        (1..=a.len())
            .filter(|&n| (1..=n).all(|k| a[n - k..n].iter().sum::<f64>() <= -c * k as f64))
            .collect()
    }

    #[test]
    fn worked_sequences() {
        let r = detect_hyperbolic_times(&[-1.0, -1.0, -1.0], 0.5).unwrap();
        assert_eq!(r.times, vec![1, 2, 3]);
        assert_eq!(r.frequency_hat, 1.0);
        let r = detect_hyperbolic_times(&[-1.0, 0.5, -1.0, -1.0], 0.5).unwrap();
        assert_eq!(r.times, vec![1, 4]);
        assert_eq!(detect_hyperbolic_times(&[-1.0], 0.0).unwrap_err(), HypError::NonpositiveC(0.0));
        assert!(detect_hyperbolic_times(&[-1.0f32, 0.5, -1.0, -1.0], 0.5).unwrap().times == vec![1, 4]);
    }

    #[test]
    fn cat_map_times_depend_on_cone_rate() {
        let m = MapModel::<f64>::linear(&cat_matrix()).unwrap();
        let cone = ConeSpec::unstable(&m, 0.5).unwrap();
        let rec = record_orbit(&m, &cone, &TorusPoint::from_f64(&[0.1, 0.2]), 100, Some(30)).unwrap();
        let avg = birkhoff_limsup_estimate(&rec).unwrap();
        assert!((avg - 0.425_92f64.ln()).abs() < 1e-5);
        // a_j = log 0.4259 = -0.8535 for every j
        assert_eq!(detect_hyperbolic_times(&rec.cone_lognorms, 0.85).unwrap().times, (1..=100).collect::<Vec<_>>());
        assert!(detect_hyperbolic_times(&rec.cone_lognorms, 0.9).unwrap().times.is_empty());
        for s in &rec.stable_lognorms {
            assert!((s - 0.381_966f64.ln()).abs() < 1e-6);
        }
        assert!(matches!(
            birkhoff_limsup_estimate(&record_orbit(&m, &cone, &rec.start, 50, None).unwrap()),
            Err(HypError::OrbitTooShort { .. })
        ));
    }

    #[test]
    fn expansion_holds_at_detected_and_fails_at_injected_times() {
        let m = MapModel::<f64>::cat_map();
        let cone = ConeSpec::unstable(&m, 0.5).unwrap();
        let rec = record_orbit(&m, &cone, &TorusPoint::from_f64(&[0.3, 0.6]), 40, None).unwrap();
        let r = detect_hyperbolic_times(&rec.cone_lognorms, 0.85).unwrap();
        assert_eq!(verify_expansion_exhaustive(&m, &rec, &r, &cone), 0.0);
        assert_eq!(verify_expansion_at_times(&m, &rec, &r, &cone), 0.0);
        let fake = HyperbolicTimeReport { c: 1.2, n: 40, times: vec![10], frequency_hat: 0.025 };
        assert!(verify_expansion_at_times(&m, &rec, &fake, &cone) > 0.0);
    }

    #[test]
    fn pitchfork_orbit_off_support_matches_linear() {
        let pf = MapModel::<f64>::pitchfork_default(1.0);
        let lin = MapModel::<f64>::linear(&crate::models::pitchfork_matrix(2)).unwrap();
        let cone = ConeSpec::unstable(&pf, 0.5).unwrap();
        // the period-three orbit (1/2,1/2,0), (1/2,0,0), (0,1/2,0) avoids the support
        let x = TorusPoint::from_f64(&[0.5, 0.5, 0.0]);
        let a = record_orbit(&pf, &cone, &x, 20, None).unwrap();
        let b = record_orbit(&lin, &cone, &x, 20, None).unwrap();
        assert!(a.points.iter().all(|p| !pf.in_support(p)));
        assert_eq!(a.cone_lognorms, b.cone_lognorms);
        let r = detect_hyperbolic_times(&a.cone_lognorms, 0.3).unwrap();
        assert!(!r.times.is_empty());
        assert_eq!(verify_expansion_exhaustive(&pf, &a, &r, &cone), 0.0);
    }

    #[test]
    fn default_c_is_quarter_of_median_rate() {
        assert_eq!(default_c(&[-1.0, -2.0, -3.0]), Some(0.5));
        assert_eq!(default_c(&[0.5]), None);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
    }

    #[test]
    fn pairs_are_subsampled_deterministically() {
        let p = verification_pairs(&[3, 4], 100);
        assert_eq!(p.len(), 7);
        let p = verification_pairs(&(1..=200).collect::<Vec<_>>(), 64);
        assert!(p.len() <= 64 && p.len() > 32);
        assert_eq!(p, verification_pairs(&(1..=200).collect::<Vec<_>>(), 64));
    }

    #[test]
    fn csv_columns() {
        let rows = vec![OrbitSummary { orbit_id: 0, n_detected: 3, frequency_hat: 0.5, birkhoff_avg: -0.25 }];
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "orbit_id,n_detected,frequency_hat,birkhoff_avg\n0,3,0.5,-0.25\n");
    }

    fn dyadic() -> impl Strategy<Value = f64> {
        (-2048i32..1024).prop_map(|k| k as f64 / 1024.0)
    }

    proptest! {
        #[test]
        fn scan_matches_brute_force(a in prop::collection::vec(dyadic(), 0..120), ck in 1i32..600) {
            let c = ck as f64 / 1024.0;
            prop_assert_eq!(detect_hyperbolic_times(&a, c).unwrap().times, brute(&a, c));
        }

        #[test]
        fn times_concatenate(a in prop::collection::vec(dyadic(), 1..120), ck in 1i32..600) {
            let c = ck as f64 / 1024.0;
            let times = detect_hyperbolic_times(&a, c).unwrap().times;
            for (i, &n) in times.iter().enumerate() {
                let shifted = detect_hyperbolic_times(&a[n..], c).unwrap().times;
                for &m in &times[i + 1..] {
                    prop_assert!(shifted.contains(&(m - n)));
                }
            }
        }
    }
}
