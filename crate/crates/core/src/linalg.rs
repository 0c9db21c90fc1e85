//! Fixed-capacity dense linear algebra for dimensions 1..=3.
//!
//! Everything here is `Copy` and allocation-free so that orbit loops can
//! evaluate Jacobians hundreds of millions of times without touching the heap.

use std::ops::{Index, IndexMut};

use crate::scalar::Real;

pub const MAX_DIM: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vector<T> {
    dim: usize,
    data: [T; MAX_DIM],
}

impl<T> Vector<T> {
    /// Active components regardless of scalar type.
    pub fn components(&self) -> &[T] {
        &self.data[..self.dim]
    }
}

impl<T: Real> Vector<T> {
    pub fn zeros(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} unsupported");
        Self { dim, data: [T::zero(); MAX_DIM] }
    }

    pub fn from_slice(values: &[T]) -> Self {
        let mut v = Self::zeros(values.len());
        v.data[..values.len()].copy_from_slice(values);
        v
    }

    pub fn from_f64(values: &[f64]) -> Self {
        let mut v = Self::zeros(values.len());
        for (dst, &src) in v.data.iter_mut().zip(values) {
            *dst = T::lit(src);
        }
        v
    }

    pub fn basis(dim: usize, axis: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.data[axis] = T::one();
        v
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn dot(&self, other: &Self) -> T {
        let mut s = T::zero();
        for i in 0..self.dim {
            s += self.data[i] * other.data[i];
        }
        s
    }

    #[inline]
    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    #[inline]
    pub fn scale(mut self, s: T) -> Self {
        for x in &mut self.data[..self.dim] {
            *x *= s;
        }
        self
    }

    #[inline]
    pub fn add(mut self, other: &Self) -> Self {
        for i in 0..self.dim {
            self.data[i] += other.data[i];
        }
        self
    }

    #[inline]
    pub fn sub(mut self, other: &Self) -> Self {
        for i in 0..self.dim {
            self.data[i] -= other.data[i];
        }
        self
    }

    /// `self + s * other`
    #[inline]
    pub fn axpy(mut self, s: T, other: &Self) -> Self {
        for i in 0..self.dim {
            self.data[i] += s * other.data[i];
        }
        self
    }

    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n > T::zero() && n.is_finite() {
            Some(self.scale(T::one() / n))
        } else {
            None
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.components().iter().map(|x| x.as_f64()).collect()
    }

    pub fn cast<U: Real>(&self) -> Vector<U> {
        let mut v = Vector::<U>::zeros(self.dim);
        for i in 0..self.dim {
            v.data[i] = U::lit(self.data[i].as_f64());
        }
        v
    }
}

impl<T> Index<usize> for Vector<T> {
    type Output = T;
    #[inline]
    fn index(&self, i: usize) -> &T {
        &self.data[i]
    }
}

impl<T> IndexMut<usize> for Vector<T> {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.data[i]
    }
}

/// Square `dim x dim` matrix, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Matrix<T> {
    dim: usize,
    data: [[T; MAX_DIM]; MAX_DIM],
}

impl<T: Real> Matrix<T> {
    pub fn zeros(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} unsupported");
        Self { dim, data: [[T::zero(); MAX_DIM]; MAX_DIM] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i][i] = T::one();
        }
        m
    }

    pub fn diag(values: &[T]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m.data[i][i] = v;
        }
        m
    }

    pub fn from_rows(rows: &[&[T]]) -> Self {
        let mut m = Self::zeros(rows.len());
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), rows.len(), "matrix must be square");
            m.data[i][..row.len()].copy_from_slice(row);
        }
        m
    }

    pub fn from_f64_rows(rows: &[Vec<f64>]) -> Self {
        let mut m = Self::zeros(rows.len());
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), rows.len(), "matrix must be square");
            for (j, &x) in row.iter().enumerate() {
                m.data[i][j] = T::lit(x);
            }
        }
        m
    }

    /// Matrix whose columns are the given vectors (fewer than `dim` columns
    /// leave the remaining ones zero).
    pub fn from_columns(dim: usize, cols: &[Vector<T>]) -> Self {
        let mut m = Self::zeros(dim);
        for (j, c) in cols.iter().enumerate() {
            for i in 0..dim {
                m.data[i][j] = c[i];
            }
        }
        m
    }

    pub fn outer(u: &Vector<T>, v: &Vector<T>) -> Self {
        let mut m = Self::zeros(u.dim());
        for i in 0..u.dim() {
            for j in 0..v.dim() {
                m.data[i][j] = u[i] * v[j];
            }
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i][j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i][j] = v;
    }

    pub fn column(&self, j: usize) -> Vector<T> {
        let mut v = Vector::zeros(self.dim);
        for i in 0..self.dim {
            v[i] = self.data[i][j];
        }
        v
    }

    #[inline]
    pub fn mul_vec(&self, v: &Vector<T>) -> Vector<T> {
        let mut out = Vector::zeros(self.dim);
        for i in 0..self.dim {
            let mut s = T::zero();
            for j in 0..self.dim {
                s += self.data[i][j] * v[j];
            }
            out[i] = s;
        }
        out
    }

    pub fn mul_mat(&self, other: &Self) -> Self {
        let mut out = Self::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                let mut s = T::zero();
                for k in 0..self.dim {
                    s += self.data[i][k] * other.data[k][j];
                }
                out.data[i][j] = s;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.data[j][i] = self.data[i][j];
            }
        }
        out
    }

    pub fn scale(mut self, s: T) -> Self {
        for row in &mut self.data[..self.dim] {
            for x in &mut row[..self.dim] {
                *x *= s;
            }
        }
        self
    }

    pub fn add(mut self, other: &Self) -> Self {
        for i in 0..self.dim {
            for j in 0..self.dim {
                self.data[i][j] += other.data[i][j];
            }
        }
        self
    }

    pub fn sub(mut self, other: &Self) -> Self {
        for i in 0..self.dim {
            for j in 0..self.dim {
                self.data[i][j] -= other.data[i][j];
            }
        }
        self
    }

    pub fn det(&self) -> T {
        let a = &self.data;
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

    /// Inverse via the adjugate; `None` when the determinant is zero or not finite.
    pub fn inverse(&self) -> Option<Self> {
        let det = self.det();
        if det == T::zero() || !det.is_finite() {
            return None;
        }
        let a = &self.data;
        let mut inv = Self::zeros(self.dim);
        match self.dim {
            1 => inv.data[0][0] = T::one() / det,
            2 => {
                inv.data[0][0] = a[1][1] / det;
                inv.data[0][1] = -a[0][1] / det;
                inv.data[1][0] = -a[1][0] / det;
                inv.data[1][1] = a[0][0] / det;
            }
            _ => {
                for i in 0..3 {
                    for j in 0..3 {
                        let (r0, r1) = minor_index(j);
                        let (c0, c1) = minor_index(i);
                        let m = a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0];
                        let sign = if (i + j) % 2 == 0 { T::one() } else { -T::one() };
                        inv.data[i][j] = sign * m / det;
                    }
                }
            }
        }
        Some(inv)
    }

    pub fn frobenius(&self) -> T {
        let mut s = T::zero();
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += self.data[i][j] * self.data[i][j];
            }
        }
        s.sqrt()
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        let mut m = Matrix::<U>::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                m.data[i][j] = U::lit(self.data[i][j].as_f64());
            }
        }
        m
    }

    pub fn to_rows_f64(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.data[i][j].as_f64()).collect())
            .collect()
    }
}

fn minor_index(skip: usize) -> (usize, usize) {
    match skip {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

/// Orthonormal family of `rank` vectors in `R^dim` (rank may be zero).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame<T> {
    dim: usize,
    rank: usize,
    cols: [Vector<T>; MAX_DIM],
}

impl<T: Real> Frame<T> {
    pub fn empty(dim: usize) -> Self {
        Self { dim, rank: 0, cols: [Vector::zeros(dim); MAX_DIM] }
    }

    /// Modified Gram-Schmidt; `None` if the vectors are numerically dependent.
    pub fn orthonormalize(dim: usize, vectors: &[Vector<T>]) -> Option<Self> {
        Self::qr(dim, vectors).map(|(f, _)| f)
    }

    /// Thin QR: returns the orthonormal frame and the diagonal of R (positive).
    pub fn qr(dim: usize, vectors: &[Vector<T>]) -> Option<(Self, [T; MAX_DIM])> {
        let mut frame = Self::empty(dim);
        let mut r = [T::zero(); MAX_DIM];
        for (k, v) in vectors.iter().enumerate() {
            let mut w = *v;
            // two passes keep orthogonality at machine precision
            for _ in 0..2 {
                for j in 0..k {
                    let c = frame.cols[j];
                    w = w.axpy(-w.dot(&c), &c);
                }
            }
            let n = w.norm();
            let scale = v.norm().max(T::min_positive_value());
            if !(n > scale * T::epsilon() * T::lit(16.0)) {
                return None;
            }
            frame.cols[k] = w.scale(T::one() / n);
            r[k] = n;
            frame.rank = k + 1;
        }
        Some((frame, r))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn vectors(&self) -> &[Vector<T>] {
        &self.cols[..self.rank]
    }

    /// Pushes the frame through `m` and re-orthonormalizes. The second value is
    /// `log |det(m restricted to span)|`, i.e. the sum of the log R-diagonal.
    pub fn push(&self, m: &Matrix<T>) -> Option<(Self, T)> {
        if self.rank == 0 {
            return Some((*self, T::zero()));
        }
        let mut images = [Vector::zeros(self.dim); MAX_DIM];
        for k in 0..self.rank {
            images[k] = m.mul_vec(&self.cols[k]);
        }
        let (f, r) = Self::qr(self.dim, &images[..self.rank])?;
        let logdet = r[..self.rank].iter().map(|x| x.ln()).sum();
        Some((f, logdet))
    }

    /// Orthogonal projection onto the span.
    pub fn project(&self, v: &Vector<T>) -> Vector<T> {
        let mut out = Vector::zeros(self.dim);
        for c in self.vectors() {
            out = out.axpy(v.dot(c), c);
        }
        out
    }

    pub fn projector(&self) -> Matrix<T> {
        let mut p = Matrix::zeros(self.dim);
        for c in self.vectors() {
            p = p.add(&Matrix::outer(c, c));
        }
        p
    }

    /// Completes to an orthonormal basis of `R^dim`; returns only the added vectors.
    pub fn complement(&self) -> Self {
        let mut all: Vec<Vector<T>> = self.vectors().to_vec();
        let mut out = Self::empty(self.dim);
        for axis in 0..self.dim {
            if all.len() == self.dim {
                break;
            }
            let mut w = Vector::basis(self.dim, axis);
            for _ in 0..2 {
                for c in &all {
                    w = w.axpy(-w.dot(c), c);
                }
            }
            if let Some(u) = w.normalized().filter(|_| w.norm() > T::lit(1e-3)) {
                all.push(u);
                out.cols[out.rank] = u;
                out.rank += 1;
            }
        }
        out
    }

    /// Frobenius distance between the orthogonal projectors; zero iff equal spans.
    pub fn distance(&self, other: &Self) -> T {
        if self.rank != other.rank {
            return T::infinity();
        }
        self.projector().sub(&other.projector()).frobenius()
    }

    /// Smallest principal angle between the two spans.
    pub fn min_angle(&self, other: &Self) -> T {
        let mut cos_max = T::zero();
        // sigma_max(A^T B) by maximizing |<a, B B^T a>| over unit a in span(A)
        let m = self.rank.max(1);
        let mut gram = Matrix::zeros(m);
        for i in 0..self.rank {
            for j in 0..self.rank {
                let mut s = T::zero();
                for b in other.vectors() {
                    s += self.cols[i].dot(b) * self.cols[j].dot(b);
                }
                gram.set(i, j, s);
            }
        }
        if self.rank > 0 {
            let (vals, _) = symmetric_eigen(&gram);
            for v in vals.iter().take(self.rank) {
                cos_max = cos_max.max(v.max(T::zero()).sqrt());
            }
        }
        cos_max.min(T::one()).acos()
    }

    pub fn to_f64(&self) -> Vec<Vec<f64>> {
        self.vectors().iter().map(|v| v.to_f64()).collect()
    }

    /// Precision change without re-orthonormalization.
    pub fn cast<U: Real>(&self) -> Frame<U> {
        let mut out = Frame::empty(self.dim);
        for k in 0..self.rank {
            out.cols[k] = self.cols[k].cast();
        }
        out.rank = self.rank;
        out
    }
}

/// Volume of the parallelepiped spanned by `vectors` (sqrt of the Gram determinant).
pub fn volume<T: Real>(dim: usize, vectors: &[Vector<T>]) -> T {
    match Frame::qr(dim, vectors) {
        Some((_, r)) => r[..vectors.len()].iter().fold(T::one(), |acc, &x| acc * x),
        None => T::zero(),
    }
}

/// Cyclic Jacobi eigensolver for symmetric matrices. Eigenvalues are returned
/// in ascending order with matching eigenvector columns.
pub fn symmetric_eigen<T: Real>(m: &Matrix<T>) -> ([T; MAX_DIM], [Vector<T>; MAX_DIM]) {
    let n = m.dim();
    let mut a = *m;
    let mut v = Matrix::identity(n);
    for _sweep in 0..64 {
        let mut off = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off += a.get(i, j) * a.get(i, j);
            }
        }
        if off <= T::epsilon() * T::epsilon() * (a.frobenius() * a.frobenius() + T::min_positive_value()) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == T::zero() {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut idx = [0usize, 1, 2];
    let idx = &mut idx[..n];
    idx.sort_by(|&i, &j| a.get(i, i).partial_cmp(&a.get(j, j)).unwrap_or(std::cmp::Ordering::Equal));
    let mut vals = [T::zero(); MAX_DIM];
    let mut vecs = [Vector::zeros(n); MAX_DIM];
    for (k, &i) in idx.iter().enumerate() {
        vals[k] = a.get(i, i);
        vecs[k] = v.column(i);
    }
    (vals, vecs)
}

/// Smallest singular value of a square matrix.
pub fn min_singular_value<T: Real>(m: &Matrix<T>) -> T {
    let (vals, _) = symmetric_eigen(&m.transpose().mul_mat(m));
    vals[0].max(T::zero()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_cat_map() {
        let a = Matrix::<f64>::from_rows(&[&[2.0, 1.0], &[1.0, 1.0]]);
        let inv = a.inverse().unwrap();
        assert_eq!(inv, Matrix::from_rows(&[&[1.0, -1.0], &[-1.0, 2.0]]));
        let b = Matrix::<f64>::from_rows(&[&[0.0, -1.0, 0.0], &[0.0, 0.0, 2.0], &[1.0, -2.0, 0.0]]);
        let p = b.mul_mat(&b.inverse().unwrap());
        assert!(p.sub(&Matrix::identity(3)).frobenius() < 1e-14);
        assert!(Matrix::<f64>::zeros(2).inverse().is_none());
    }

    #[test]
    fn jacobi_matches_known_spectrum() {
        let a = Matrix::<f64>::from_rows(&[&[2.0, 1.0, 0.0], &[1.0, 1.0, 0.0], &[0.0, 0.0, 2.0]]);
        let (vals, vecs) = symmetric_eigen(&a);
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((vals[0] - 1.0 / (golden * golden)).abs() < 1e-14);
        assert!((vals[1] - 2.0).abs() < 1e-14);
        assert!((vals[2] - golden * golden).abs() < 1e-14);
        for k in 0..3 {
            let r = a.mul_vec(&vecs[k]).sub(&vecs[k].scale(vals[k]));
            assert!(r.norm() < 1e-13);
        }
    }

    #[test]
    fn qr_push_tracks_log_volume() {
        let m = Matrix::<f64>::diag(&[3.0, 0.5, 2.0]);
        let f = Frame::orthonormalize(3, &[Vector::basis(3, 0), Vector::basis(3, 2)]).unwrap();
        let (g, logdet) = f.push(&m).unwrap();
        assert!((logdet - 6f64.ln()).abs() < 1e-14);
        assert!(g.distance(&f) < 1e-14);
        let comp = f.complement();
        assert_eq!(comp.rank(), 1);
        assert!((comp.vectors()[0][1].abs() - 1.0).abs() < 1e-14);
        assert!((f.min_angle(&comp) - std::f64::consts::FRAC_PI_2).abs() < 1e-7);
    }

    #[test]
    fn dependent_vectors_rejected() {
        let v = Vector::<f64>::from_slice(&[1.0, 2.0]);
        assert!(Frame::orthonormalize(2, &[v, v.scale(2.0)]).is_none());
        assert!((volume(2, &[v, Vector::from_slice(&[0.0, 1.0])]) - 1.0).abs() < 1e-14);
    }
}
