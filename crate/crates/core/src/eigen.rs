//! Cyclic Jacobi eigensolver for small dense Hermitian matrices.
//!
//! Each rotation first removes the phase of the pivot `a_pq` with a diagonal
//! unitary, then applies the classical real Jacobi rotation. Jacobi is slow
//! for large `N` but unconditionally stable and accurate to a few ulps of
//! `||A||` on the `N <= 64` matrices used here, including degenerate ones.

use alloc::vec::Vec;

use num_complex::Complex64;

use crate::matrix::modulus;
use crate::{ComplexMatrix, Error, Result};

const MAX_SWEEPS: usize = 64;

/// Eigenvalues in ascending order with the matching orthonormal eigenvectors
/// stored as the columns of `vectors`.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: ComplexMatrix,
}

impl HermitianEigen {
    /// Column `k` as an owned vector.
    pub fn vector(&self, k: usize) -> Vec<Complex64> {
        (0..self.vectors.dim()).map(|r| self.vectors[(r, k)]).collect()
    }

    /// `V diag(f(lambda)) V^dagger`.
    pub fn map_values(&self, mut f: impl FnMut(f64) -> f64) -> ComplexMatrix {
        let n = self.values.len();
        let fv: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        ComplexMatrix::from_fn(n, |r, c| {
            (0..n).map(|k| self.vectors[(r, k)] * self.vectors[(c, k)].conj() * fv[k]).sum()
        })
    }
}

fn off_diagonal_norm(a: &ComplexMatrix) -> f64 {
    let n = a.dim();
    let mut s = 0.0;
    for r in 0..n {
        for c in 0..n {
            if r != c {
                s += a[(r, c)].norm_sqr();
            }
        }
    }
    s.sqrt()
}

/// Diagonalizes a Hermitian matrix. The input is hermitized first, so only
/// its Hermitian part is used.
pub fn hermitian_eigen(matrix: &ComplexMatrix) -> Result<HermitianEigen> {
    if !matrix.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    let n = matrix.dim();
    let mut a = matrix.hermitized();
    let mut v = ComplexMatrix::identity(n);
    let scale = a.frobenius_norm();

    let mut converged = n <= 1 || scale == 0.0;
    let mut sweeps = 0;
    while !converged {
        if sweeps == MAX_SWEEPS {
            return Err(Error::EigenSolverFailure { sweeps, residual: off_diagonal_norm(&a) });
        }
        sweeps += 1;
        for p in 0..n - 1 {
            for q in p + 1..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
        converged = off_diagonal_norm(&a) <= 1e-15 * scale;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let vectors = ComplexMatrix::from_fn(n, |r, c| v[(r, order[c])]);
    Ok(HermitianEigen { values, vectors })
}

fn rotate(a: &mut ComplexMatrix, v: &mut ComplexMatrix, p: usize, q: usize) {
    let b = a[(p, q)];
    let abs_b = modulus(b);
    if abs_b == 0.0 {
        return;
    }
    let app = a[(p, p)].re;
    let aqq = a[(q, q)].re;
    // Pivot is negligible relative to both diagonal entries: drop it.
    if abs_b < 1e-300 || (app.abs() + abs_b * 1e18 == app.abs() && aqq.abs() + abs_b * 1e18 == aqq.abs()) {
        a[(p, q)] = Complex64::new(0.0, 0.0);
        a[(q, p)] = Complex64::new(0.0, 0.0);
        return;
    }
    let phase = b / abs_b;
    let zeta = (aqq - app) / (2.0 * abs_b);
    let t = if zeta >= 0.0 {
        1.0 / (zeta + (zeta * zeta + 1.0).sqrt())
    } else {
        -1.0 / (-zeta + (zeta * zeta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    // U restricted to (p, q): [[c, s], [-s e^{-i phi}, c e^{-i phi}]].
    let phase_conj = phase.conj();
    let u_pp = Complex64::new(c, 0.0);
    let u_pq = Complex64::new(s, 0.0);
    let u_qp = phase_conj * (-s);
    let u_qq = phase_conj * c;

    let n = a.dim();
    // A <- A U (columns p, q)
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = akp * u_pp + akq * u_qp;
        a[(k, q)] = akp * u_pq + akq * u_qq;
    }
    // A <- U^dagger A (rows p, q)
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = u_pp.conj() * apk + u_qp.conj() * aqk;
        a[(q, k)] = u_pq.conj() * apk + u_qq.conj() * aqk;
    }
    a[(p, q)] = Complex64::new(0.0, 0.0);
    a[(q, p)] = Complex64::new(0.0, 0.0);
    a[(p, p)] = Complex64::new(a[(p, p)].re, 0.0);
    a[(q, q)] = Complex64::new(a[(q, q)].re, 0.0);
    // V <- V U
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = vkp * u_pp + vkq * u_qp;
        v[(k, q)] = vkp * u_pq + vkq * u_qq;
    }
}

/// Cheap sufficient test for `A + shift I >= 0` via an attempted Cholesky
/// factorization. `false` does not prove indefiniteness.
pub fn cholesky_succeeds(matrix: &ComplexMatrix, shift: f64) -> bool {
    cholesky_succeeds_in(matrix, shift, &mut ComplexMatrix::zeros(matrix.dim()))
}

/// [`cholesky_succeeds`] with caller-provided factor storage.
pub(crate) fn cholesky_succeeds_in(matrix: &ComplexMatrix, shift: f64, l: &mut ComplexMatrix) -> bool {
    let n = matrix.dim();
    for j in 0..n {
        let mut d = matrix[(j, j)].re + shift;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        l[(j, j)] = Complex64::new(d, 0.0);
        for i in j + 1..n {
            let mut s = matrix[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / d;
        }
    }
    true
}
