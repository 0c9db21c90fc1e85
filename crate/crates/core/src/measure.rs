//! Histograms on the torus, their truncated Fourier coefficients, and the
//! weighted Fourier distance that metrizes weak* convergence.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::torus::TorusPoint;

pub const DEFAULT_K: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("Fourier truncations differ: dim {0} K {1} vs dim {2} K {3}")]
    TruncationMismatch(usize, usize, usize, usize),
    #[error("grids differ")]
    GridMismatch,
    #[error("mixture weights and measures have different lengths")]
    MixtureShape,
}

/// Bin layout and Fourier truncation. Bins are centered on the lattice
/// `(i_0, …, i_{d-1}) / resolution`, so the origin is a bin center.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasureGrid {
    pub dim: usize,
    pub resolution: usize,
    pub k_max: usize,
}

impl MeasureGrid {
    pub fn new(dim: usize, resolution: usize, k_max: usize) -> Self {
        Self { dim, resolution: resolution.max(1), k_max }
    }

    /// 1024 bins on the circle, 128² on T², 48³ on T³, `K = 8`.
    pub fn default_for(dim: usize) -> Self {
        let resolution = match dim {
            1 => 1024,
            2 => 128,
            _ => 48,
        };
        Self::new(dim, resolution, DEFAULT_K)
    }

    pub fn bins(&self) -> usize {
        self.resolution.pow(self.dim as u32)
    }

    #[inline]
    pub fn bin_index(&self, x: &TorusPoint<f64>) -> usize {
        let r = self.resolution;
        let mut idx = 0usize;
        for a in 0..self.dim {
            let i = (x.coord(a) * r as f64).round() as usize % r;
            idx = idx * r + i;
        }
        idx
    }

    pub fn bin_center(&self, mut idx: usize) -> TorusPoint<f64> {
        let r = self.resolution;
        let mut c = [0.0; 3];
        for a in (0..self.dim).rev() {
            c[a] = (idx % r) as f64 / r as f64;
            idx /= r;
        }
        TorusPoint::from_f64(&c[..self.dim])
    }

    fn truncation(&self) -> Truncation {
        Truncation { dim: self.dim, k_max: self.k_max }
    }
}

/// Index set `{k ∈ ℤ^d : |k|_∞ ≤ K}` in lexicographic order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    pub dim: usize,
    pub k_max: usize,
}

impl Truncation {
    pub fn side(&self) -> usize {
        2 * self.k_max + 1
    }

    pub fn len(&self) -> usize {
        self.side().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn mode(&self, mut idx: usize) -> [i64; 3] {
        let s = self.side();
        let mut k = [0i64; 3];
        for a in (0..self.dim).rev() {
            k[a] = (idx % s) as i64 - self.k_max as i64;
            idx /= s;
        }
        k
    }

    pub fn zero_index(&self) -> usize {
        (self.len() - 1) / 2
    }

    /// `(1 + |k|_2)^{-(d+1)}`.
    pub fn weight(&self, idx: usize) -> f64 {
        let k = self.mode(idx);
        let n2: i64 = k.iter().map(|v| v * v).sum();
        (1.0 + (n2 as f64).sqrt()).powi(-(self.dim as i32 + 1))
    }

    /// `Σ_{k≠0} w_k`: the distance between two measures whose coefficients all
    /// differ by at most one, with equal mass.
    pub fn weight_sum(&self) -> f64 {
        let z = self.zero_index();
        (0..self.len()).filter(|&i| i != z).map(|i| self.weight(i)).sum()
    }
}

/// `μ̂(k) = ∫ e^{-2πi k·x} dμ(x)` for the modes of a truncation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierCoefficients {
    pub truncation: Truncation,
    pub coefficients: Vec<Complex64>,
}

impl FourierCoefficients {
    /// Haar measure: `1` at `k = 0`, zero elsewhere.
    pub fn lebesgue(dim: usize, k_max: usize) -> Self {
        let truncation = Truncation { dim, k_max };
        let mut coefficients = vec![Complex64::new(0.0, 0.0); truncation.len()];
        coefficients[truncation.zero_index()] = Complex64::new(1.0, 0.0);
        Self { truncation, coefficients }
    }

    /// Exact transform of a weighted point set.
    pub fn from_points(dim: usize, k_max: usize, points: &[(TorusPoint<f64>, f64)]) -> Self {
        let truncation = Truncation { dim, k_max };
        let mut coefficients = vec![Complex64::new(0.0, 0.0); truncation.len()];
        for (idx, c) in coefficients.iter_mut().enumerate() {
            let k = truncation.mode(idx);
            for (p, w) in points {
                let phase: f64 = (0..dim).map(|a| k[a] as f64 * p.coord(a)).sum();
                *c += Complex64::from_polar(*w, -std::f64::consts::TAU * phase);
            }
        }
        Self { truncation, coefficients }
    }

    pub fn mass(&self) -> f64 {
        self.coefficients[self.truncation.zero_index()].re
    }

    pub fn get(&self, k: &[i64]) -> Option<Complex64> {
        let s = self.truncation.side() as i64;
        let mut idx = 0i64;
        for &v in k {
            if v.unsigned_abs() as usize > self.truncation.k_max {
                return None;
            }
            idx = idx * s + v + self.truncation.k_max as i64;
        }
        self.coefficients.get(idx as usize).copied()
    }

    /// `Σ_i w_i μ̂_i`.
    pub fn combine(weights: &[f64], parts: &[&FourierCoefficients]) -> Result<Self, MeasureError> {
        if weights.len() != parts.len() || parts.is_empty() {
            return Err(MeasureError::MixtureShape);
        }
        let t = parts[0].truncation;
        let mut coefficients = vec![Complex64::new(0.0, 0.0); t.len()];
        for (w, p) in weights.iter().zip(parts) {
            check_truncation(&t, &p.truncation)?;
            for (c, q) in coefficients.iter_mut().zip(&p.coefficients) {
                *c += q * w;
            }
        }
        Ok(Self { truncation: t, coefficients })
    }
}

fn check_truncation(a: &Truncation, b: &Truncation) -> Result<(), MeasureError> {
    if a != b {
        return Err(MeasureError::TruncationMismatch(a.dim, a.k_max, b.dim, b.k_max));
    }
    Ok(())
}

/// `Σ_{0<|k|_∞≤K} (1+|k|_2)^{-(d+1)} |μ̂(k) - ν̂(k)| + |μ̂(0) - ν̂(0)|`.
pub fn fourier_distance(a: &FourierCoefficients, b: &FourierCoefficients) -> Result<f64, MeasureError> {
    check_truncation(&a.truncation, &b.truncation)?;
    let t = a.truncation;
    let zero = t.zero_index();
    let mut sum = 0.0;
    for (idx, (x, y)) in a.coefficients.iter().zip(&b.coefficients).enumerate() {
        let w = if idx == zero { 1.0 } else { t.weight(idx) };
        sum += w * (x - y).norm();
    }
    Ok(sum)
}

/// Integer bin counts; merging is exact, so results do not depend on how the
/// work was split.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub grid: MeasureGrid,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(grid: MeasureGrid) -> Self {
        Self { grid, counts: vec![0; grid.bins()] }
    }

    #[inline]
    pub fn deposit(&mut self, x: &TorusPoint<f64>) {
        let i = self.grid.bin_index(x);
        self.counts[i] += 1;
    }

    pub fn merge(mut self, other: &Self) -> Self {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += *b;
        }
        self
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Measure with bin weights `count / normalizer`.
    pub fn into_measure(self, normalizer: u64) -> EmpiricalMeasure {
        let n = normalizer.max(1) as f64;
        let mass = self.total() as f64 / n;
        let weights = self.counts.iter().map(|&c| c as f64 / n).collect();
        EmpiricalMeasure::from_weights(self.grid, weights, mass)
    }
}

/// Weighted histogram plus its truncated Fourier coefficients, taken with bin
/// masses at the bin centers so the two views agree exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    grid: MeasureGrid,
    weights: Vec<f64>,
    mass: f64,
    fourier: FourierCoefficients,
}

impl EmpiricalMeasure {
    /// `mass` is passed separately so that integer-count constructions report
    /// the exact value rather than a rounded float sum.
    pub fn from_weights(grid: MeasureGrid, weights: Vec<f64>, mass: f64) -> Self {
        let fourier = binned_fourier(&grid, &weights);
        Self { grid, weights, mass, fourier }
    }

    /// Uniform bins; coefficients set to the exact Haar values.
    pub fn lebesgue(grid: MeasureGrid) -> Self {
        let n = grid.bins();
        let weights = vec![1.0 / n as f64; n];
        Self { grid, weights, mass: 1.0, fourier: FourierCoefficients::lebesgue(grid.dim, grid.k_max) }
    }

    pub fn dirac(grid: MeasureGrid, x: &TorusPoint<f64>) -> Self {
        let mut h = Histogram::new(grid);
        h.deposit(x);
        h.into_measure(1)
    }

    pub fn grid(&self) -> &MeasureGrid {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn fourier(&self) -> &FourierCoefficients {
        &self.fourier
    }

    /// Cyclic shift of the bins by `shift[a]` cells along each axis.
    pub fn translate_bins(&self, shift: &[usize]) -> Self {
        let r = self.grid.resolution;
        let mut out = vec![0.0; self.weights.len()];
        for (idx, &w) in self.weights.iter().enumerate() {
            let mut rem = idx;
            let mut coords = [0usize; 3];
            for a in (0..self.grid.dim).rev() {
                coords[a] = rem % r;
                rem /= r;
            }
            let mut j = 0;
            for a in 0..self.grid.dim {
                j = j * r + (coords[a] + shift.get(a).copied().unwrap_or(0)) % r;
            }
            out[j] = w;
        }
        Self::from_weights(self.grid, out, self.mass)
    }

    /// `Σ_i w_i μ_i` binwise.
    pub fn mixture(weights: &[f64], parts: &[&EmpiricalMeasure]) -> Result<Self, MeasureError> {
        if weights.len() != parts.len() || parts.is_empty() {
            return Err(MeasureError::MixtureShape);
        }
        let grid = parts[0].grid;
        let mut out = vec![0.0; grid.bins()];
        let mut mass = 0.0;
        for (w, p) in weights.iter().zip(parts) {
            if p.grid != grid {
                return Err(MeasureError::GridMismatch);
            }
            for (o, q) in out.iter_mut().zip(&p.weights) {
                *o += w * q;
            }
            mass += w * p.mass;
        }
        Ok(Self::from_weights(grid, out, mass))
    }

    /// `Σ_bins weight · f(center)`.
    pub fn integrate<F: FnMut(&TorusPoint<f64>) -> f64>(&self, mut f: F) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, &w)| w * f(&self.grid.bin_center(i)))
            .sum()
    }

    /// CSV of nonzero bins: one column per coordinate of the bin center, then `weight`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let names = ["x", "y", "z"];
        let mut header: Vec<&str> = names[..self.grid.dim].to_vec();
        header.push("weight");
        w.write_record(&header)?;
        for (i, &wt) in self.weights.iter().enumerate() {
            if wt > 0.0 {
                let c = self.grid.bin_center(i);
                let mut row: Vec<String> = (0..self.grid.dim).map(|a| format!("{}", c.coord(a))).collect();
                row.push(format!("{wt:e}"));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// JSON object `{dim, k_max, mass, modes: [[k..., re, im], ...]}`.
    pub fn fourier_json(&self) -> serde_json::Value {
        let t = self.fourier.truncation;
        let modes: Vec<serde_json::Value> = self
            .fourier
            .coefficients
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let k = t.mode(i);
                let mut row: Vec<serde_json::Value> = k[..t.dim].iter().map(|&v| v.into()).collect();
                row.push(c.re.into());
                row.push(c.im.into());
                serde_json::Value::Array(row)
            })
            .collect();
        serde_json::json!({ "dim": t.dim, "k_max": t.k_max, "mass": self.mass, "modes": modes })
    }
}

/// `weak_star_distance` on measures: the Fourier distance of their coefficients.
pub fn weak_star_distance(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64, MeasureError> {
    fourier_distance(&a.fourier, &b.fourier)
}

/// Separable DFT of the bin weights restricted to `|k|_∞ ≤ K`.
fn binned_fourier(grid: &MeasureGrid, weights: &[f64]) -> FourierCoefficients {
    let r = grid.resolution;
    let t = grid.truncation();
    let side = t.side();
    // roots[j] = e^{-2πi j / r}; the phase k·i is reduced mod r exactly
    let roots: Vec<Complex64> = (0..r).map(|j| Complex64::from_polar(1.0, -std::f64::consts::TAU * j as f64 / r as f64)).collect();
    let table: Vec<Complex64> = (0..side)
        .flat_map(|kk| {
            let k = kk as i64 - t.k_max as i64;
            let roots = &roots;
            (0..r).map(move |i| roots[(k * i as i64).rem_euclid(r as i64) as usize])
        })
        .collect();
    let mut dims = vec![r; grid.dim];
    let mut cur: Vec<Complex64> = weights.iter().map(|&w| Complex64::new(w, 0.0)).collect();
    for axis in (0..grid.dim).rev() {
        let outer: usize = dims[..axis].iter().product();
        let inner: usize = dims[axis + 1..].iter().product();
        let mut next = vec![Complex64::new(0.0, 0.0); outer * side * inner];
        for o in 0..outer {
            for i in 0..r {
                let src = &cur[(o * r + i) * inner..(o * r + i + 1) * inner];
                for k in 0..side {
                    let e = table[k * r + i];
                    let dst = &mut next[(o * side + k) * inner..(o * side + k + 1) * inner];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += e * s;
                    }
                }
            }
        }
        dims[axis] = side;
        cur = next;
    }
    FourierCoefficients { truncation: t, coefficients: cur }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DIRAC_VS_LEBESGUE_2D: f64 = 2.097_531_047_384_912_5;

    #[test]
    fn dirac_against_lebesgue_regression() {
        let g = MeasureGrid::default_for(2);
        let d = weak_star_distance(&EmpiricalMeasure::dirac(g, &TorusPoint::origin(2)), &EmpiricalMeasure::lebesgue(g)).unwrap();
        assert!((d - DIRAC_VS_LEBESGUE_2D).abs() < 1e-12);
        let uniform = Histogram { grid: g, counts: vec![3; g.bins()] }.into_measure(3 * g.bins() as u64);
        assert_eq!(uniform.mass(), 1.0);
        assert!(weak_star_distance(&uniform, &EmpiricalMeasure::lebesgue(g)).unwrap() < 1e-12);
    }

    #[test]
    fn binned_transform_matches_point_transform() {
        let g = MeasureGrid::new(3, 12, 3);
        let pts: Vec<TorusPoint<f64>> = (0..40).map(|k| g.bin_center((k * 97) % g.bins())).collect();
        let mut h = Histogram::new(g);
        for p in &pts {
            h.deposit(p);
        }
        let m = h.into_measure(40);
        let exact = FourierCoefficients::from_points(3, 3, &pts.iter().map(|p| (*p, 1.0 / 40.0)).collect::<Vec<_>>());
        assert!(fourier_distance(m.fourier(), &exact).unwrap() < 1e-12);
        assert_eq!(m.fourier().get(&[0, 0, 0]).unwrap().re, m.mass());
    }

    #[test]
    fn half_translation_flips_odd_modes() {
        let g = MeasureGrid::new(2, 16, 4);
        let pts = [TorusPoint::from_f64(&[0.125, 0.25]), TorusPoint::from_f64(&[0.5, 0.0625])];
        let mut h = Histogram::new(g);
        pts.iter().for_each(|p| h.deposit(p));
        let m = h.into_measure(2);
        let s = m.translate_bins(&[8, 0]);
        let t = m.fourier().truncation;
        let want: f64 = (0..t.len())
            .filter(|&i| t.mode(i)[0] % 2 != 0)
            .map(|i| 2.0 * t.weight(i) * m.fourier().coefficients[i].norm())
            .sum();
        assert!((weak_star_distance(&m, &s).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn mismatch_and_csv() {
        let a = EmpiricalMeasure::lebesgue(MeasureGrid::new(2, 8, 2));
        let b = EmpiricalMeasure::lebesgue(MeasureGrid::new(2, 8, 3));
        assert!(matches!(weak_star_distance(&a, &b), Err(MeasureError::TruncationMismatch(..))));
        let d = EmpiricalMeasure::dirac(MeasureGrid::new(1, 4, 1), &TorusPoint::from_f64(&[0.26]));
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x,weight\n0.25,1e0\n");
        assert_eq!(d.fourier_json()["modes"].as_array().unwrap().len(), 3);
    }

    fn random_measure() -> impl Strategy<Value = EmpiricalMeasure> {
        prop::collection::vec(0u64..5, 64).prop_map(|counts| {
            let grid = MeasureGrid::new(2, 8, 3);
            let total = counts.iter().sum::<u64>().max(1);
            Histogram { grid, counts }.into_measure(total)
        })
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(a in random_measure(), b in random_measure(), c in random_measure()) {
            let ab = weak_star_distance(&a, &b).unwrap();
            prop_assert_eq!(ab, weak_star_distance(&b, &a).unwrap());
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(weak_star_distance(&a, &a).unwrap(), 0.0);
            let ac = weak_star_distance(&a, &c).unwrap();
            let bc = weak_star_distance(&b, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }
    }
}
