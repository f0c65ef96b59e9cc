//! Dense square complex matrices for small Hilbert spaces.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;

use crate::{Error, Result};

/// Shorthand constructor for a complex scalar.
#[inline]
pub const fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Modulus of `z`. Uses the inherent `f64` functions so results do not depend
/// on which `num-traits` backend feature unification selects.
#[inline]
pub fn modulus(z: Complex64) -> f64 {
    z.re.hypot(z.im)
}

/// `r e^{i theta}`, with the same backend independence as [`modulus`].
#[inline]
pub fn polar(r: f64, theta: f64) -> Complex64 {
    let (sin, cos) = theta.sin_cos();
    Complex64::new(r * cos, r * sin)
}

/// Row-major `N x N` complex matrix.
///
/// Binary operators panic on a dimension mismatch; the public operations
/// elsewhere in the crate check dimensions first and return
/// [`Error::DimensionMismatch`].
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl core::fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        writeln!(f, "ComplexMatrix({}x{}) [", self.dim, self.dim)?;
        for r in 0..self.dim {
            write!(f, "  ")?;
            for c in 0..self.dim {
                let z = self[(r, c)];
                write!(f, "{:+.6}{:+.6}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![Complex64::new(0.0, 0.0); dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for r in 0..dim {
            for c in 0..dim {
                data.push(f(r, c));
            }
        }
        Self { dim, data }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(d, 0.0);
        }
        m
    }

    /// Builds a matrix from row-major entries. The entry count must be a
    /// perfect square and every entry finite.
    pub fn from_row_major(data: Vec<Complex64>) -> Result<Self> {
        let dim = square_dim(data.len())?;
        let m = Self { dim, data };
        if !m.is_finite() {
            return Err(Error::NonFiniteInput);
        }
        Ok(m)
    }

    /// Builds a matrix from separate row-major real and imaginary arrays.
    pub fn from_real_imag(re: &[f64], im: &[f64]) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::DimensionMismatch { expected: re.len(), actual: im.len() });
        }
        Self::from_row_major(re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect())
    }

    /// Builds a matrix from nested rows; every row must have `rows.len()` entries.
    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::NotSquare { rows: dim, cols: row.len() });
            }
            data.extend_from_slice(row);
        }
        Self::from_row_major(data)
    }

    /// `|v><w|`.
    pub fn outer(v: &[Complex64], w: &[Complex64]) -> Self {
        assert_eq!(v.len(), w.len(), "outer product of unequal vectors");
        Self::from_fn(v.len(), |r, c| v[r] * w[c].conj())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.re).collect()
    }

    pub fn imag_parts(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.im).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.dim, |r, c| self[(c, r)].conj())
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    /// `tr(A B)` without forming the product.
    pub fn trace_of_product(&self, other: &Self) -> Complex64 {
        self.check_same(other);
        let n = self.dim;
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..n {
            for k in 0..n {
                acc += self.data[i * n + k] * other.data[k * n + i];
            }
        }
        acc
    }

    /// Frobenius norm `(tr A A^dagger)^{1/2}`.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|&z| modulus(z)).fold(0.0, f64::max)
    }

    /// Largest entrywise modulus of `A - B`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.check_same(other);
        self.data.iter().zip(&other.data).map(|(a, b)| modulus(a - b)).fold(0.0, f64::max)
    }

    /// Largest entrywise modulus of `A - A^dagger`.
    pub fn hermitian_deviation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.dim {
            for c in r..self.dim {
                worst = worst.max(modulus(self[(r, c)] - self[(c, r)].conj()));
            }
        }
        worst
    }

    /// `(A + A^dagger) / 2`.
    pub fn hermitized(&self) -> Self {
        Self::from_fn(self.dim, |r, c| (self[(r, c)] + self[(c, r)].conj()) * 0.5)
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|&z| z * s).collect() }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|&z| z * s).collect() }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: Complex64, other: &Self) {
        self.check_same(other);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    /// `self += alpha * other` for a real scalar.
    pub fn axpy_real(&mut self, alpha: f64, other: &Self) {
        self.check_same(other);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b * alpha;
        }
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.dim, "matrix-vector dimension mismatch");
        let n = self.dim;
        (0..n).map(|r| (0..n).map(|c| self.data[r * n + c] * v[c]).sum()).collect()
    }

    /// `[A, B] = AB - BA`.
    pub fn commutator(&self, other: &Self) -> Self {
        self * other - other * self
    }

    /// `{A, B} = AB + BA`.
    pub fn anticommutator(&self, other: &Self) -> Self {
        self * other + other * self
    }

    /// `out = self * rhs`, reusing the storage of `out`.
    pub fn mul_into(&self, rhs: &Self, out: &mut Self) {
        self.check_same(rhs);
        self.check_same(out);
        let n = self.dim;
        out.data.fill(Complex64::new(0.0, 0.0));
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                let row = &rhs.data[k * n..(k + 1) * n];
                let dst = &mut out.data[i * n..(i + 1) * n];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
    }

    /// Overwrites `self` with the entries of `other`.
    pub fn copy_from(&mut self, other: &Self) {
        self.check_same(other);
        self.data.copy_from_slice(&other.data);
    }

    pub fn fill_zero(&mut self) {
        self.data.fill(Complex64::new(0.0, 0.0));
    }

    /// In-place `(A + A^dagger) / 2`.
    pub fn hermitize_in_place(&mut self) {
        let n = self.dim;
        for r in 0..n {
            let d = &mut self.data[r * n + r];
            d.im = 0.0;
            for c in r + 1..n {
                let avg = (self.data[r * n + c] + self.data[c * n + r].conj()) * 0.5;
                self.data[r * n + c] = avg;
                self.data[c * n + r] = avg.conj();
            }
        }
    }

    pub fn scale_real_in_place(&mut self, s: f64) {
        for z in &mut self.data {
            *z *= s;
        }
    }

    #[inline]
    fn check_same(&self, other: &Self) {
        assert_eq!(self.dim, other.dim, "matrix dimension mismatch");
    }

    pub(crate) fn require_dim(&self, expected: usize) -> Result<()> {
        if self.dim != expected {
            return Err(Error::DimensionMismatch { expected, actual: self.dim });
        }
        Ok(())
    }
}

fn square_dim(len: usize) -> Result<usize> {
    let n = (len as f64).sqrt().round() as usize;
    if n * n != len || n == 0 {
        return Err(Error::NotSquare { rows: n, cols: if n == 0 { 0 } else { len / n.max(1) } });
    }
    Ok(n)
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[r * self.dim + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.data[r * self.dim + c]
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.dim);
        self.mul_into(rhs, &mut out);
        out
    }
}

impl Add for ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(mut self, rhs: ComplexMatrix) -> ComplexMatrix {
        self += &rhs;
        self
    }
}

impl Sub for ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(mut self, rhs: ComplexMatrix) -> ComplexMatrix {
        self -= &rhs;
        self
    }
}

impl Add<&ComplexMatrix> for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub<&ComplexMatrix> for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl AddAssign<&ComplexMatrix> for ComplexMatrix {
    fn add_assign(&mut self, rhs: &ComplexMatrix) {
        self.check_same(rhs);
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl SubAssign<&ComplexMatrix> for ComplexMatrix {
    fn sub_assign(&mut self, rhs: &ComplexMatrix) {
        self.check_same(rhs);
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a -= b;
        }
    }
}

impl Neg for ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(mut self) -> ComplexMatrix {
        for z in &mut self.data {
            *z = -*z;
        }
        self
    }
}
