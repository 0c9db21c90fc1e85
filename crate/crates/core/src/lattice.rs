//! Exact integer-matrix arithmetic behind the linear part of a torus endomorphism.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::linalg::{Frame, Matrix, Vector, MAX_DIM};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntMatrix {
    dim: usize,
    rows: [[i64; MAX_DIM]; MAX_DIM],
}

/// Exact rational offset `num / den` in `[0,1)^d` distinguishing one inverse
/// branch of the linear map from another.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BranchOffset {
    pub num: [i64; MAX_DIM],
    pub den: i64,
}

impl BranchOffset {
    pub fn to_vector<T: Real>(&self, dim: usize) -> Vector<T> {
        let mut v = Vector::zeros(dim);
        for i in 0..dim {
            v[i] = T::lit(self.num[i] as f64 / self.den as f64);
        }
        v
    }
}

impl IntMatrix {
    pub fn from_rows(rows: &[Vec<i64>]) -> Option<Self> {
        let dim = rows.len();
        if !(1..=MAX_DIM).contains(&dim) || rows.iter().any(|r| r.len() != dim) {
            return None;
        }
        let mut m = Self { dim, rows: [[0; MAX_DIM]; MAX_DIM] };
        for (i, r) in rows.iter().enumerate() {
            m.rows[i][..dim].copy_from_slice(r);
        }
        Some(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> i64 {
        self.rows[i][j]
    }

    pub fn raw_rows(&self) -> &[[i64; MAX_DIM]; MAX_DIM] {
        &self.rows
    }

    pub fn rows(&self) -> Vec<Vec<i64>> {
        (0..self.dim).map(|i| self.rows[i][..self.dim].to_vec()).collect()
    }

    pub fn det(&self) -> i64 {
        let a = &self.rows;
        match self.dim {
            1 => a[0][0],
            2 => a[0][0] * a[1][1] - a[0][1] * a[1][0],
            _ => {
                a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
                    - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                    + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
            }
        }
    }

    pub fn trace(&self) -> i64 {
        (0..self.dim).map(|i| self.rows[i][i]).sum()
    }

    /// Adjugate, so that `A * adj(A) = det(A) I`.
    pub fn adjugate(&self) -> Self {
        let a = &self.rows;
        let mut out = Self { dim: self.dim, rows: [[0; MAX_DIM]; MAX_DIM] };
        match self.dim {
            1 => out.rows[0][0] = 1,
            2 => {
                out.rows[0][0] = a[1][1];
                out.rows[0][1] = -a[0][1];
                out.rows[1][0] = -a[1][0];
                out.rows[1][1] = a[0][0];
            }
            _ => {
                for i in 0..3 {
                    for j in 0..3 {
                        let r: Vec<usize> = (0..3).filter(|&k| k != j).collect();
                        let c: Vec<usize> = (0..3).filter(|&k| k != i).collect();
                        let m = a[r[0]][c[0]] * a[r[1]][c[1]] - a[r[0]][c[1]] * a[r[1]][c[0]];
                        out.rows[i][j] = if (i + j) % 2 == 0 { m } else { -m };
                    }
                }
            }
        }
        out
    }

    pub fn to_matrix<T: Real>(&self) -> Matrix<T> {
        let mut m = Matrix::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                m.set(i, j, T::lit(self.rows[i][j] as f64));
            }
        }
        m
    }

    /// Representatives of `A^{-1} Z^d / Z^d`, one per inverse branch, sorted
    /// lexicographically. Exactly `|det A|` entries for a nonsingular matrix.
    pub fn branch_offsets(&self) -> Vec<BranchOffset> {
        let det = self.det();
        let den = det.abs();
        if den == 0 {
            return Vec::new();
        }
        let adj = self.adjugate();
        let sign = det.signum();
        let mut found = std::collections::BTreeSet::new();
        let mut m = [0i64; MAX_DIM];
        let total = (den as usize).pow(self.dim as u32);
        for code in 0..total {
            let mut c = code;
            for slot in m.iter_mut().take(self.dim) {
                *slot = (c % den as usize) as i64;
                c /= den as usize;
            }
            let mut num = [0i64; MAX_DIM];
            for i in 0..self.dim {
                let s: i64 = (0..self.dim).map(|j| adj.rows[i][j] * m[j]).sum();
                num[i] = (sign * s).rem_euclid(den);
            }
            found.insert(BranchOffset { num, den });
            if found.len() == den as usize {
                break;
            }
        }
        found.into_iter().collect()
    }

    /// Coefficients `[c_0, .., c_{d-1}]` of the monic characteristic polynomial
    /// `x^d + c_{d-1} x^{d-1} + ... + c_0`.
    pub fn char_poly(&self) -> Vec<i64> {
        match self.dim {
            1 => vec![-self.rows[0][0]],
            2 => vec![self.det(), -self.trace()],
            _ => {
                let a = &self.rows;
                let minors = a[0][0] * a[1][1] - a[0][1] * a[1][0] + a[0][0] * a[2][2]
                    - a[0][2] * a[2][0]
                    + a[1][1] * a[2][2]
                    - a[1][2] * a[2][1];
                vec![-self.det(), minors, -self.trace()]
            }
        }
    }

    /// Eigenvalues (with multiplicity), sorted by decreasing modulus.
    pub fn eigenvalues(&self) -> Vec<Complex64> {
        let c: Vec<f64> = self.char_poly().iter().map(|&x| x as f64).collect();
        let mut roots = match self.dim {
            1 => vec![Complex64::new(-c[0], 0.0)],
            2 => quadratic_roots(c[1], c[0]).to_vec(),
            _ => {
                let r = cubic_real_root(c[2], c[1], c[0]);
                // x^3 + a x^2 + b x + c = (x - r)(x^2 + (a + r) x + (b + r (a + r)))
                let p = c[2] + r;
                let q = c[1] + r * p;
                let mut v = vec![Complex64::new(r, 0.0)];
                v.extend_from_slice(&quadratic_roots(p, q));
                v
            }
        };
        roots.sort_by(|a, b| b.norm().partial_cmp(&a.norm()).unwrap());
        roots
    }
}

fn quadratic_roots(b: f64, c: f64) -> [Complex64; 2] {
    let disc = b * b - 4.0 * c;
    if disc >= 0.0 {
        let s = disc.sqrt();
        // stable form avoids cancellation
        let q = -0.5 * (b + b.signum() * s);
        if q == 0.0 {
            return [Complex64::new(0.0, 0.0); 2];
        }
        [Complex64::new(q, 0.0), Complex64::new(c / q, 0.0)]
    } else {
        let s = (-disc).sqrt();
        [Complex64::new(-b / 2.0, s / 2.0), Complex64::new(-b / 2.0, -s / 2.0)]
    }
}

fn cubic_real_root(a: f64, b: f64, c: f64) -> f64 {
    let p = |x: f64| ((x + a) * x + b) * x + c;
    let bound = 1.0 + a.abs().max(b.abs()).max(c.abs());
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if p(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..3 {
        let d = (3.0 * x + 2.0 * a) * x + b;
        if d != 0.0 {
            x -= p(x) / d;
        }
    }
    x
}

/// Spectral projector of a diagonalizable `a` onto the eigenvalues whose
/// indices are in `group`. Repeated eigenvalues are allowed inside a group
/// but not across the boundary. Conjugate pairs must be grouped together for
/// the result to be real.
pub fn spectral_projector(a: &Matrix<f64>, eigenvalues: &[Complex64], group: &[usize]) -> Option<Matrix<f64>> {
    let n = a.dim();
    const SAME: f64 = 1e-9;
    // distinct values, each tagged with group membership
    let mut distinct: Vec<(Complex64, bool)> = Vec::new();
    for (i, &l) in eigenvalues.iter().enumerate() {
        let inside = group.contains(&i);
        match distinct.iter().find(|(m, _)| (*m - l).norm() < SAME) {
            Some(&(_, flag)) if flag != inside => return None,
            Some(_) => {}
            None => distinct.push((l, inside)),
        }
    }
    if distinct.iter().all(|d| d.1) {
        return Some(Matrix::identity(n));
    }
    let zero = Complex64::new(0.0, 0.0);
    let mut re = vec![vec![0.0; n]; n];
    for &(li, inside) in &distinct {
        if !inside {
            continue;
        }
        // Lagrange basis polynomial evaluated at A
        let mut acc = vec![vec![zero; n]; n];
        for (r, row) in acc.iter_mut().enumerate() {
            row[r] = Complex64::new(1.0, 0.0);
        }
        for &(lk, _) in &distinct {
            if (lk - li).norm() < SAME {
                continue;
            }
            let denom = li - lk;
            let mut next = vec![vec![zero; n]; n];
            for r in 0..n {
                for c in 0..n {
                    let mut s = zero;
                    for m in 0..n {
                        let f = Complex64::new(a.get(m, c), 0.0) - if m == c { lk } else { zero };
                        s += acc[r][m] * f;
                    }
                    next[r][c] = s / denom;
                }
            }
            acc = next;
        }
        for r in 0..n {
            for c in 0..n {
                re[r][c] += acc[r][c].re;
            }
        }
    }
    Some(Matrix::from_f64_rows(&re))
}

/// Orthonormal basis for the range of a rank-`rank` projector.
pub fn range_basis(p: &Matrix<f64>, rank: usize) -> Option<Frame<f64>> {
    let n = p.dim();
    let mut cols: Vec<Vector<f64>> = (0..n).map(|j| p.column(j)).collect();
    cols.sort_by(|a, b| b.norm().partial_cmp(&a.norm()).unwrap());
    let mut chosen: Vec<Vector<f64>> = Vec::new();
    for c in cols {
        if chosen.len() == rank {
            break;
        }
        let mut trial = chosen.clone();
        trial.push(c);
        if Frame::orthonormalize(n, &trial).is_some() {
            chosen = trial;
        }
    }
    if chosen.len() != rank {
        return None;
    }
    Frame::orthonormalize(n, &chosen)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[i64]]) -> IntMatrix {
        IntMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn branch_offsets_count_equals_degree() {
        let a = m(&[&[3, 1], &[1, 1]]);
        let offs = a.branch_offsets();
        assert_eq!(offs.len(), 2);
        assert_eq!(offs[0].num[..2], [0, 0]);
        assert_eq!(offs[1].num[..2], [1, 1]);
        assert_eq!(offs[1].den, 2);
        assert_eq!(m(&[&[2]]).branch_offsets().len(), 2);
        assert_eq!(m(&[&[2, 1], &[1, 1]]).branch_offsets().len(), 1);
        assert_eq!(m(&[&[2, 1, 0], &[1, 1, 0], &[0, 0, 2]]).branch_offsets().len(), 2);
        assert_eq!(m(&[&[0, -1, 0], &[0, 0, 2], &[1, -2, 0]]).branch_offsets().len(), 2);
        assert_eq!(m(&[&[2, 0], &[0, 2]]).branch_offsets().len(), 4);
    }

    #[test]
    fn adjugate_identity() {
        let a = m(&[&[0, -1, 0], &[0, 0, 2], &[1, -2, 0]]);
        let p = a.to_matrix::<f64>().mul_mat(&a.adjugate().to_matrix());
        assert!(p.sub(&Matrix::identity(3).scale(a.det() as f64)).frobenius() < 1e-12);
    }

    #[test]
    fn eigenvalues_of_examples() {
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        let ev = m(&[&[2, 1, 0], &[1, 1, 0], &[0, 0, 2]]).eigenvalues();
        assert!((ev[0].re - golden * golden).abs() < 1e-12);
        assert!((ev[1].re - 2.0).abs() < 1e-12);
        assert!((ev[2].re - 1.0 / (golden * golden)).abs() < 1e-12);
        let hopf = m(&[&[0, -1, 0], &[0, 0, 2], &[1, -2, 0]]).eigenvalues();
        assert!(hopf[0].im.abs() > 1.0);
        assert!((hopf[0].norm() - hopf[1].norm()).abs() < 1e-12);
        assert!(hopf[2].norm() < 1.0);
        let prod = hopf.iter().fold(Complex64::new(1.0, 0.0), |a, b| a * b);
        assert!((prod.re.abs() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn projectors_are_idempotent_and_complementary() {
        let a = m(&[&[0, -1, 0], &[0, 0, 2], &[1, -2, 0]]);
        let ev = a.eigenvalues();
        let af = a.to_matrix::<f64>();
        let pu = spectral_projector(&af, &ev, &[0, 1]).unwrap();
        let ps = spectral_projector(&af, &ev, &[2]).unwrap();
        assert!(pu.mul_mat(&pu).sub(&pu).frobenius() < 1e-10);
        assert!(pu.add(&ps).sub(&Matrix::identity(3)).frobenius() < 1e-10);
        assert!(af.mul_mat(&pu).sub(&pu.mul_mat(&af)).frobenius() < 1e-10);
        assert_eq!(range_basis(&pu, 2).unwrap().rank(), 2);
    }
}
