//! Small dense containers: a row-major complex matrix with the few
//! Hermitian operations the covariance baseline needs, plus K×N link
//! tables indexed by (access point, user).

use std::ops::{Index, IndexMut};

use num_traits::Zero;

use crate::error::{Error, Result};
use crate::scalar::{Cx, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<Cx<T>>,
}

impl<T: Real> CMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Cx::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Cx::new(T::one(), T::zero());
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Cx<T>) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Cx<T>>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[Cx<T>] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Cx<T>] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[Cx<T>] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn frob_norm_sqr(&self) -> T {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scale(&mut self, s: T) {
        for z in &mut self.data {
            *z *= s;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a - *b).collect(),
        }
    }

    /// `self += coeff · u vᵀ` (plain transpose, no conjugation).
    pub fn add_outer(&mut self, coeff: T, u: &[Cx<T>], v: &[Cx<T>]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (r, &ur) in u.iter().enumerate() {
            let a = ur * coeff;
            for (z, &vc) in self.data[r * self.cols..(r + 1) * self.cols].iter_mut().zip(v) {
                *z += a * vc;
            }
        }
    }

    /// Row vector `uᴴ · self`.
    pub fn conj_left_mul(&self, u: &[Cx<T>]) -> Vec<Cx<T>> {
        debug_assert_eq!(u.len(), self.rows);
        let mut out = vec![Cx::zero(); self.cols];
        for (r, ur) in u.iter().enumerate() {
            let a = ur.conj();
            for (o, &z) in out.iter_mut().zip(self.row(r)) {
                *o += a * z;
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[Cx<T>]) -> Vec<Cx<T>> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    pub fn matmul(&self, other: &Self) -> Self {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a.is_zero() {
                    continue;
                }
                for c in 0..other.cols {
                    out.data[r * other.cols + c] += a * other[(k, c)];
                }
            }
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    /// Real part of the trace of `self · other`.
    pub fn trace_of_product(&self, other: &Self) -> T {
        debug_assert_eq!(self.cols, other.rows);
        debug_assert_eq!(self.rows, other.cols);
        let mut acc = T::zero();
        for r in 0..self.rows {
            for k in 0..self.cols {
                acc += (self[(r, k)] * other[(k, r)]).re;
            }
        }
        acc
    }

    /// Lower Cholesky factor of a Hermitian positive-definite matrix.
    pub fn cholesky(&self) -> Result<Self> {
        let n = self.rows;
        if n != self.cols {
            return Err(Error::Dimension("cholesky of a non-square matrix".into()));
        }
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if !(d > T::zero()) {
                return Err(Error::NotPositiveDefinite);
            }
            let ljj = d.sqrt();
            l[(j, j)] = Cx::new(ljj, T::zero());
            for i in j + 1..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(l)
    }

    /// `ln det` and inverse of a Hermitian positive-definite matrix.
    pub fn hpd_logdet_inverse(&self) -> Result<(T, Self)> {
        let l = self.cholesky()?;
        let n = self.rows;
        let two = T::lit(2.0);
        let logdet = (0..n).map(|i| l[(i, i)].re.ln()).sum::<T>() * two;
        let mut inv = Self::zeros(n, n);
        let mut y = vec![Cx::zero(); n];
        for col in 0..n {
            // L y = e_col
            for i in 0..n {
                let mut s = if i == col {
                    Cx::new(T::one(), T::zero())
                } else {
                    Cx::zero()
                };
                for k in 0..i {
                    s -= l[(i, k)] * y[k];
                }
                y[i] = s / l[(i, i)].re;
            }
            // Lᴴ x = y
            for i in (0..n).rev() {
                let mut s = y[i];
                for k in i + 1..n {
                    s -= l[(k, i)].conj() * inv[(k, col)];
                }
                inv[(i, col)] = s / l[(i, i)].re;
            }
        }
        Ok((logdet, inv))
    }
}

impl<T> Index<(usize, usize)> for CMatrix<T> {
    type Output = Cx<T>;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &Cx<T> {
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for CMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Cx<T> {
        &mut self.data[r * self.cols + c]
    }
}

/// Real table over (access point k, user n), stored AP-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkMatrix<T> {
    aps: usize,
    users: usize,
    data: Vec<T>,
}

impl<T: Copy> LinkMatrix<T> {
    pub fn filled(aps: usize, users: usize, value: T) -> Self {
        Self {
            aps,
            users,
            data: vec![value; aps * users],
        }
    }

    pub fn from_fn(aps: usize, users: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(aps * users);
        for k in 0..aps {
            for n in 0..users {
                data.push(f(k, n));
            }
        }
        Self { aps, users, data }
    }

    #[inline]
    pub fn aps(&self) -> usize {
        self.aps
    }

    #[inline]
    pub fn users(&self) -> usize {
        self.users
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Values of user `n` across all access points.
    pub fn user_column(&self, n: usize) -> impl Iterator<Item = T> + '_ {
        (0..self.aps).map(move |k| self.data[k * self.users + n])
    }
}

impl<T> Index<(usize, usize)> for LinkMatrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (k, n): (usize, usize)) -> &T {
        &self.data[k * self.users + n]
    }
}

impl<T> IndexMut<(usize, usize)> for LinkMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (k, n): (usize, usize)) -> &mut T {
        &mut self.data[k * self.users + n]
    }
}

/// Complex M-vector per (access point, user) link.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkVectors<T> {
    aps: usize,
    users: usize,
    dim: usize,
    data: Vec<Cx<T>>,
}

impl<T: Real> LinkVectors<T> {
    pub fn zeros(aps: usize, users: usize, dim: usize) -> Self {
        Self {
            aps,
            users,
            dim,
            data: vec![Cx::zero(); aps * users * dim],
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn aps(&self) -> usize {
        self.aps
    }

    #[inline]
    pub fn users(&self) -> usize {
        self.users
    }

    #[inline]
    pub fn get(&self, k: usize, n: usize) -> &[Cx<T>] {
        let start = (k * self.users + n) * self.dim;
        &self.data[start..start + self.dim]
    }

    #[inline]
    pub fn get_mut(&mut self, k: usize, n: usize) -> &mut [Cx<T>] {
        let start = (k * self.users + n) * self.dim;
        &mut self.data[start..start + self.dim]
    }

    pub fn norm_sqr(&self, k: usize, n: usize) -> T {
        self.get(k, n).iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn as_slice(&self) -> &[Cx<T>] {
        &self.data
    }
}

/// `Σ conj(a_i) b_i`
#[inline]
pub fn cdot<T: Real>(a: &[Cx<T>], b: &[Cx<T>]) -> Cx<T> {
    a.iter().zip(b).map(|(x, y)| x.conj() * *y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Cx<f64> {
        Cx::new(re, im)
    }

    #[test]
    fn cholesky_inverse_roundtrip() {
        let a = CMatrix::from_vec(
            3,
            3,
            vec![
                c(4.0, 0.0),
                c(1.0, 1.0),
                c(0.0, -0.5),
                c(1.0, -1.0),
                c(3.0, 0.0),
                c(0.2, 0.0),
                c(0.0, 0.5),
                c(0.2, 0.0),
                c(2.0, 0.0),
            ],
        )
        .unwrap();
        let (logdet, inv) = a.hpd_logdet_inverse().unwrap();
        let prod = a.matmul(&inv);
        for r in 0..3 {
            for col in 0..3 {
                let expect = if r == col { 1.0 } else { 0.0 };
                assert!((prod[(r, col)] - c(expect, 0.0)).norm() < 1e-12);
            }
        }
        // det by cofactor expansion
        let det = a[(0, 0)] * (a[(1, 1)] * a[(2, 2)] - a[(1, 2)] * a[(2, 1)])
            - a[(0, 1)] * (a[(1, 0)] * a[(2, 2)] - a[(1, 2)] * a[(2, 0)])
            + a[(0, 2)] * (a[(1, 0)] * a[(2, 1)] - a[(1, 1)] * a[(2, 0)]);
        assert!((logdet - det.re.ln()).abs() < 1e-12);
        assert!(det.im.abs() < 1e-12);
    }

    #[test]
    fn indefinite_is_rejected() {
        let mut a = CMatrix::<f64>::identity(2);
        a[(1, 1)] = c(-1.0, 0.0);
        assert_eq!(a.cholesky().unwrap_err(), Error::NotPositiveDefinite);
    }

    #[test]
    fn outer_and_left_mul() {
        let mut m = CMatrix::<f64>::zeros(2, 3);
        let u = [c(1.0, 1.0), c(0.0, 2.0)];
        let v = [c(1.0, 0.0), c(0.0, -1.0), c(2.0, 0.5)];
        m.add_outer(0.5, &u, &v);
        assert!((m[(1, 2)] - u[1] * v[2] * 0.5).norm() < 1e-15);
        let w = m.conj_left_mul(&u);
        let expect: Cx<f64> = u.iter().enumerate().map(|(r, ur)| ur.conj() * m[(r, 1)]).sum();
        assert!((w[1] - expect).norm() < 1e-15);
    }
}
