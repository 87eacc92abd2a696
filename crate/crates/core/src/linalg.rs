//! Small dense linear algebra: the N×N coefficient matrices and the
//! discretized operators are both handled by [`Mat`].

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Square matrix from an `f64` row-major slice.
    pub fn square_f64(n: usize, data: &[f64]) -> Result<Self> {
        Self::from_row_major(n, n, data.iter().map(|&x| T::lit(x)).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, col: &[T]) {
        for (i, &v) in col.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        }
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, s: T, other: &Self) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == T::zero() {
                    continue;
                }
                let other_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(other_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `out = self * x`
    #[inline]
    pub fn matvec_into(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o = row.iter().zip(x).map(|(&a, &b)| a * b).sum();
        }
    }

    /// `out += s * self * x`
    #[inline]
    pub fn matvec_acc(&self, s: T, x: &[T], out: &mut [T]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let dot: T = row.iter().zip(x).map(|(&a, &b)| a * b).sum();
            *o += s * dot;
        }
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.rows];
        self.matvec_into(x, &mut out);
        out
    }

    /// Row vector times matrix: `x^T * self`.
    pub fn vecmat(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += xi * a;
            }
        }
        out
    }

    pub fn norm_1(&self) -> T {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<T>())
            .fold(T::zero(), T::max)
    }

    pub fn norm_inf(&self) -> T {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|x| x.abs()).sum::<T>())
            .fold(T::zero(), T::max)
    }

    pub fn norm_max(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    /// Operator norm induced by the Euclidean vector norm (largest singular value).
    pub fn norm2(&self) -> T {
        if self.rows == 0 || self.cols == 0 {
            return T::zero();
        }
        let gram = self.transpose().matmul(self);
        let lmax = symmetric_eigenvalues(&gram)
            .into_iter()
            .fold(T::zero(), T::max);
        lmax.max(T::zero()).sqrt()
    }

    /// Matrix exponential by scaling and squaring of a truncated Taylor series.
    pub fn expm(&self) -> Self {
        assert!(self.is_square(), "expm of non-square matrix");
        let n = self.rows;
        let norm = self.norm_1();
        if norm == T::zero() {
            return Self::identity(n);
        }
        let half = T::lit(0.5);
        let mut squarings = 0i32;
        let mut scaled_norm = norm;
        while scaled_norm > half {
            scaled_norm = scaled_norm * half;
            squarings += 1;
        }
        let scaled = self.scale(T::lit(2.0).powi(-squarings));
        let mut sum = Self::identity(n);
        let mut term = Self::identity(n);
        for k in 1..=30 {
            term = term.matmul(&scaled).scale(T::one() / T::from_count(k));
            sum = sum.add(&term);
            if term.norm_1() <= T::epsilon() * sum.norm_1() {
                break;
            }
        }
        for _ in 0..squarings {
            sum = sum.matmul(&sum);
        }
        sum
    }
}

impl<T> Index<(usize, usize)> for Mat<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Mat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues<T: Real>(a: &Mat<T>) -> Vec<T> {
    let n = a.rows();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let mut off = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        let scale = m.norm_max();
        if off.sqrt() <= T::epsilon() * scale || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..n).map(|i| m[(i, i)]).collect()
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn euclid<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// `y += s * x`
#[inline]
pub fn axpy<T: Real>(s: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

/// Least-squares line fit; returns `(slope, intercept, r_squared)`.
pub fn linear_fit<T: Real>(xs: &[T], ys: &[T]) -> Option<(T, T, T)> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let nf = T::from_count(n);
    let mx = xs.iter().copied().sum::<T>() / nf;
    let my = ys.iter().copied().sum::<T>() / nf;
    let mut sxx = T::zero();
    let mut sxy = T::zero();
    let mut syy = T::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == T::zero() {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == T::zero() {
        T::one()
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    Some((slope, intercept, r2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_of_diagonal() {
        let a = Mat::<f64>::from_diag(&[-1.0, 2.0]);
        let e = a.expm();
        assert!((e[(0, 0)] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((e[(1, 1)] - 2.0f64.exp()).abs() < 1e-13);
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn expm_of_rotation_generator() {
        // exp([[0, -t], [t, 0]]) is a rotation by t.
        let t: f64 = 2.5;
        let a = Mat::<f64>::square_f64(2, &[0.0, -t, t, 0.0]).unwrap();
        let e = a.expm();
        assert!((e[(0, 0)] - t.cos()).abs() < 1e-14);
        assert!((e[(1, 0)] - t.sin()).abs() < 1e-14);
    }

    #[test]
    fn expm_of_large_norm_matches_squared_halves() {
        let a = Mat::<f64>::square_f64(2, &[-3.0, 1.0, 2.0, -4.0]).unwrap();
        let full = a.scale(4.0).expm();
        let half = a.scale(2.0).expm();
        let sq = half.matmul(&half);
        for (x, y) in full.as_slice().iter().zip(sq.as_slice()) {
            assert!((x - y).abs() <= 1e-13 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn norm2_of_known_matrices() {
        let a = Mat::<f64>::square_f64(2, &[3.0, 0.0, 0.0, -4.0]).unwrap();
        assert!((a.norm2() - 4.0).abs() < 1e-14);
        // [[1,1],[0,1]] has largest singular value golden ratio.
        let b = Mat::<f64>::square_f64(2, &[1.0, 1.0, 0.0, 1.0]).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((b.norm2() - phi).abs() < 1e-14);
    }

    #[test]
    fn symmetric_eigenvalues_three_by_three() {
        let a = Mat::<f64>::square_f64(3, &[2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0])
            .unwrap();
        let mut ev = symmetric_eigenvalues(&a);
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let s = 2f64.sqrt();
        for (got, want) in ev.iter().zip([2.0 - s, 2.0, 2.0 + s]) {
            assert!((got - want).abs() < 1e-13);
        }
    }

    #[test]
    fn fit_recovers_exact_line() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.1 * x - 3.0).collect();
        let (s, c, r2) = linear_fit(&xs, &ys).unwrap();
        assert!((s - 0.1).abs() < 1e-14 && (c + 3.0).abs() < 1e-13 && (r2 - 1.0).abs() < 1e-12);
    }
}
