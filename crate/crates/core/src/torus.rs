use std::fmt;

use crate::linalg::Vector;
use crate::scalar::Real;

/// Reduces a real number into `[0, 1)`.
#[inline]
pub fn wrap<T: Real>(x: T) -> T {
    let r = x - x.floor();
    if r >= T::one() {
        T::zero()
    } else {
        r
    }
}

/// Signed representative of `x` modulo 1 in `[-1/2, 1/2)`.
#[inline]
pub fn centered<T: Real>(x: T) -> T {
    let half = T::lit(0.5);
    wrap(x + half) - half
}

/// A point of the flat torus `T^d = R^d / Z^d`, stored in fractional coordinates.
#[derive(Clone, Copy, PartialEq)]
pub struct TorusPoint<T> {
    coords: Vector<T>,
}

impl<T: Real> TorusPoint<T> {
    /// Wraps arbitrary real coordinates onto the torus.
    pub fn new(coords: &[T]) -> Self {
        Self::from_vector(Vector::from_slice(coords))
    }

    pub fn from_f64(coords: &[f64]) -> Self {
        Self::from_vector(Vector::from_f64(coords))
    }

    pub fn from_vector(mut v: Vector<T>) -> Self {
        for i in 0..v.dim() {
            v[i] = wrap(v[i]);
        }
        Self { coords: v }
    }

    pub fn origin(dim: usize) -> Self {
        Self { coords: Vector::zeros(dim) }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.coords.dim()
    }

    #[inline]
    pub fn coords(&self) -> &Vector<T> {
        &self.coords
    }

    #[inline]
    pub fn coord(&self, i: usize) -> T {
        self.coords[i]
    }

    /// Translate by a tangent vector.
    #[inline]
    pub fn shifted(&self, v: &Vector<T>) -> Self {
        Self::from_vector(self.coords.add(v))
    }

    /// Minimal-image displacement `self - other`, each component in `[-1/2, 1/2)`.
    #[inline]
    pub fn displacement(&self, other: &Self) -> Vector<T> {
        let mut d = self.coords.sub(&other.coords);
        for i in 0..d.dim() {
            d[i] = centered(d[i]);
        }
        d
    }

    /// Geodesic distance: minimum over integer translates of the Euclidean distance.
    #[inline]
    pub fn distance(&self, other: &Self) -> T {
        self.displacement(other).norm()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.coords.to_f64()
    }

    pub fn cast<U: Real>(&self) -> TorusPoint<U> {
        TorusPoint::from_vector(self.coords.cast())
    }
}

impl<T: fmt::Debug> fmt::Debug for TorusPoint<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("TorusPoint").field(&self.coords.components()).finish()
    }
}

/// Prime modulus of the fine lattice `(Z/Q)^d`. Two is a primitive root, so
/// the doubling map has period `Q-1` on it instead of collapsing.
pub const LATTICE_MODULUS: u64 = 4_611_686_018_427_387_787;

/// Torus point on the lattice `Q^{-1} Z^d / Z^d`.
///
/// Multiplication by an integer matrix is exact here, while in binary floating
/// point `x -> 2x mod 1` drops one mantissa bit per step and sends every orbit
/// to 0 after about 53 iterates. Long orbits for measures run on this lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LatticePoint {
    dim: usize,
    k: [u64; 3],
}

impl LatticePoint {
    pub fn from_torus<T: Real>(x: &TorusPoint<T>) -> Self {
        let mut k = [0u64; 3];
        let q = LATTICE_MODULUS as f64;
        for (i, ki) in k.iter_mut().enumerate().take(x.dim()) {
            let v = (x.coord(i).as_f64() * q).round();
            *ki = (v as u64) % LATTICE_MODULUS;
        }
        Self { dim: x.dim(), k }
    }

    pub fn from_residues(residues: &[u64]) -> Self {
        let mut k = [0u64; 3];
        for (ki, r) in k.iter_mut().zip(residues) {
            *ki = r % LATTICE_MODULUS;
        }
        Self { dim: residues.len(), k }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn residues(&self) -> &[u64] {
        &self.k[..self.dim]
    }

    #[inline]
    pub fn to_torus<T: Real>(&self) -> TorusPoint<T> {
        let q = LATTICE_MODULUS as f64;
        let mut v = Vector::zeros(self.dim);
        for i in 0..self.dim {
            v[i] = T::lit(self.k[i] as f64 / q);
        }
        TorusPoint::from_vector(v)
    }

    /// `M k + round(Q s) mod Q` for an integer matrix `M` and a real shift `s`.
    #[inline]
    pub fn affine_step(&self, m: &[[i64; 3]; 3], shift: Option<&[f64]>) -> Self {
        let q = LATTICE_MODULUS as i128;
        let mut k = [0u64; 3];
        for (i, row) in m.iter().enumerate().take(self.dim) {
            let mut acc: i128 = 0;
            for (j, &a) in row.iter().enumerate().take(self.dim) {
                acc += a as i128 * self.k[j] as i128;
            }
            if let Some(s) = shift {
                acc += (s[i] * LATTICE_MODULUS as f64).round() as i128;
            }
            k[i] = acc.rem_euclid(q) as u64;
        }
        Self { dim: self.dim, k }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wraps_into_unit_interval() {
        assert_eq!(wrap(1.0f64), 0.0);
        assert_eq!(wrap(-0.25f64), 0.75);
        assert_eq!(wrap(-1e-20f64), 0.0);
        let p = TorusPoint::<f64>::new(&[1.0, -0.4, 2.75]);
        assert_eq!(p.to_f64(), vec![0.0, 0.6, 0.75]);
    }

    #[test]
    fn distance_uses_nearest_translate() {
        let a = TorusPoint::<f64>::new(&[0.05, 0.95]);
        let b = TorusPoint::<f64>::new(&[0.95, 0.05]);
        assert!((a.distance(&b) - (0.02f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn lattice_doubling_does_not_collapse() {
        let m = [[2, 0, 0], [0, 0, 0], [0, 0, 0]];
        let mut p = LatticePoint::from_torus(&TorusPoint::<f64>::new(&[0.3]));
        let mut x = 0.3f64;
        for _ in 0..200 {
            p = p.affine_step(&m, None);
            x = wrap(2.0 * x);
        }
        assert_eq!(x, 0.0);
        assert!(p.residues()[0] != 0);
        let back = LatticePoint::from_torus(&p.to_torus::<f64>());
        assert!(back.residues()[0].abs_diff(p.residues()[0]) < 2048);
    }

    #[test]
    fn lattice_shift_matches_float_step() {
        let m = [[2, 1, 0], [1, 1, 0], [0, 0, 0]];
        let x = TorusPoint::<f64>::new(&[0.123, 0.456]);
        let p = LatticePoint::from_torus(&x).affine_step(&m, Some(&[0.01, -0.02]));
        let y = TorusPoint::<f64>::new(&[2.0 * 0.123 + 0.456 + 0.01, 0.123 + 0.456 - 0.02]);
        assert!(p.to_torus::<f64>().distance(&y) < 1e-15);
    }

    proptest! {
        #[test]
        fn distance_bounded_and_symmetric(x in prop::collection::vec(-3.0f64..3.0, 3),
                                          y in prop::collection::vec(-3.0f64..3.0, 3)) {
            let a = TorusPoint::new(&x);
            let b = TorusPoint::new(&y);
            for i in 0..3 {
                prop_assert!((0.0..1.0).contains(&a.coord(i)));
            }
            let d = a.distance(&b);
            prop_assert!(d <= 3f64.sqrt() / 2.0 + 1e-12);
            prop_assert!((d - b.distance(&a)).abs() < 1e-12);
            let t = b.shifted(&a.displacement(&b));
            prop_assert!(t.distance(&a) < 1e-12);
        }
    }
}
