//! Density matrices, their validation, and energy moments.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::eigen::{cholesky_succeeds, hermitian_eigen};
use crate::spectral::{HermitianOperator, SpectralDecomposition};
use crate::{ComplexMatrix, Error, Result, ToleranceSet};

/// A trace-one, positive semidefinite Hermitian matrix.
///
/// Only [`validate_density`] and crate-internal code that has just enforced
/// the invariants can build one.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
}

/// Validates `m` as a state.
///
/// Inputs within tolerance are hermitized and renormalized to trace exactly 1.
pub fn validate_density(m: ComplexMatrix, tols: &ToleranceSet) -> Result<DensityMatrix> {
    if !m.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    let deviation = m.hermitian_deviation();
    if deviation > tols.hermiticity {
        return Err(Error::NotHermitian { deviation, tolerance: tols.hermiticity });
    }
    let h = m.hermitized();
    let trace = h.trace().re;
    let trace_dev = (trace - 1.0).abs();
    if !(trace_dev <= tols.trace) {
        return Err(Error::NotTraceOne { trace, deviation: trace_dev, tolerance: tols.trace });
    }
    let normalized = h.scale_real(1.0 / trace);
    if !cholesky_succeeds(&normalized, tols.psd) {
        let min_eigenvalue = hermitian_eigen(&normalized)?.values[0];
        if min_eigenvalue < -tols.psd {
            return Err(Error::NotPositive { min_eigenvalue, tolerance: tols.psd });
        }
    }
    Ok(DensityMatrix { matrix: normalized })
}

impl DensityMatrix {
    /// Caller guarantees the invariants.
    pub(crate) fn from_trusted(matrix: ComplexMatrix) -> Self {
        Self { matrix }
    }

    /// Caller restores the invariants before the state is observed again.
    pub(crate) fn matrix_mut(&mut self) -> &mut ComplexMatrix {
        &mut self.matrix
    }

    /// `I / N`.
    pub fn maximally_mixed(dim: usize) -> Self {
        Self { matrix: ComplexMatrix::identity(dim).scale_real(1.0 / dim as f64) }
    }

    pub fn from_diagonal(populations: &[f64], tols: &ToleranceSet) -> Result<Self> {
        validate_density(ComplexMatrix::from_diagonal(populations), tols)
    }

    /// `|psi><psi| / <psi|psi>`.
    pub fn pure(psi: &[Complex64], tols: &ToleranceSet) -> Result<Self> {
        let norm_sq: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if !(norm_sq > 0.0) || !norm_sq.is_finite() {
            return Err(Error::NonFiniteInput);
        }
        validate_density(ComplexMatrix::outer(psi, psi).scale_real(1.0 / norm_sq), tols)
    }

    #[inline]
    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// `tr(rho^2)`.
    pub fn purity(&self) -> f64 {
        self.matrix.trace_of_product(&self.matrix).re
    }

    /// Trace distance `1/2 tr |rho - other|`.
    pub fn trace_distance(&self, other: &DensityMatrix) -> Result<f64> {
        other.matrix.require_dim(self.dim())?;
        let diff = &self.matrix - &other.matrix;
        let eig = hermitian_eigen(&diff)?;
        Ok(0.5 * eig.values.iter().map(|v| v.abs()).sum::<f64>())
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(hermitian_eigen(&self.matrix)?.values)
    }
}

/// Energy expectation `h`, variance `v` and third central moment `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateMoments {
    pub h: f64,
    pub v: f64,
    pub beta: f64,
}

/// `H = tr(rho H)`, `V = tr(rho (H - H)^2)`, `beta = tr(rho (H - H)^3)`.
///
/// The central moments are formed from the shifted operator `H - h I`, which
/// equals `tr(rho H^2) - h^2` without its cancellation error.
pub fn moments(rho: &DensityMatrix, h: &HermitianOperator) -> Result<StateMoments> {
    h.matrix().require_dim(rho.dim())?;
    Ok(moments_of(rho.matrix(), h.matrix()))
}

pub(crate) fn moments_of(rho: &ComplexMatrix, h: &ComplexMatrix) -> StateMoments {
    MomentScratch::new(h.dim()).moments(rho, h)
}

/// Reusable buffers for [`moments_of`].
#[derive(Debug, Clone)]
pub(crate) struct MomentScratch {
    centered: ComplexMatrix,
    c2: ComplexMatrix,
    c3: ComplexMatrix,
}

impl MomentScratch {
    pub(crate) fn new(dim: usize) -> Self {
        Self { centered: ComplexMatrix::zeros(dim), c2: ComplexMatrix::zeros(dim), c3: ComplexMatrix::zeros(dim) }
    }

    pub(crate) fn moments(&mut self, rho: &ComplexMatrix, h: &ComplexMatrix) -> StateMoments {
        let mean = rho.trace_of_product(h).re;
        self.centered.copy_from(h);
        for i in 0..h.dim() {
            self.centered[(i, i)] -= Complex64::new(mean, 0.0);
        }
        self.centered.mul_into(&self.centered, &mut self.c2);
        self.c2.mul_into(&self.centered, &mut self.c3);
        let v = rho.trace_of_product(&self.c2).re;
        let beta = rho.trace_of_product(&self.c3).re;
        StateMoments { h: mean, v, beta }
    }
}

/// `|P_n rho P_m|` (Frobenius) for every ordered pair `n != m`.
pub fn offdiag_norms(rho: &DensityMatrix, spec: &SpectralDecomposition) -> Result<BTreeMap<(usize, usize), f64>> {
    rho.matrix().require_dim(spec.dim())?;
    let d = spec.n_levels();
    let mut out = BTreeMap::new();
    for n in 0..d {
        for m in 0..d {
            if n != m {
                out.insert((n, m), spec.block(rho.matrix(), n, m).frobenius_norm());
            }
        }
    }
    Ok(out)
}

/// Ordered pairs `(n, m)` with `n < m`, the column order used in outputs.
pub fn level_pairs(levels: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for n in 0..levels {
        for m in n + 1..levels {
            pairs.push((n, m));
        }
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::c64;
    use alloc::vec;

    fn tols() -> ToleranceSet {
        ToleranceSet::default()
    }

    #[test]
    fn maximally_mixed_is_valid() {
        let rho = validate_density(ComplexMatrix::identity(2).scale_real(0.5), &tols()).unwrap();
        let ev = rho.eigenvalues().unwrap();
        assert!((ev[0] - 0.5).abs() < 1e-15 && (ev[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn trace_within_tolerance_is_renormalized() {
        let rho = validate_density(ComplexMatrix::from_diagonal(&[0.6, 0.4 + 1e-12]), &tols()).unwrap();
        assert!((rho.matrix().trace().re - 1.0).abs() <= f64::EPSILON);
    }

    #[test]
    fn negative_eigenvalue_is_rejected() {
        match validate_density(ComplexMatrix::from_diagonal(&[1.2, -0.2]), &tols()) {
            Err(Error::NotPositive { min_eigenvalue, .. }) => assert!((min_eigenvalue + 0.2).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn other_violations_are_named() {
        assert!(matches!(
            validate_density(ComplexMatrix::from_diagonal(&[0.6, 0.5]), &tols()),
            Err(Error::NotTraceOne { .. })
        ));
        let skew = ComplexMatrix::from_real_imag(&[0.5, 0.1, 0.0, 0.5], &[0.0; 4]).unwrap();
        assert!(matches!(validate_density(skew, &tols()), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn moment_examples() {
        let t = tols();
        // eigenprojector
        let h = HermitianOperator::diagonal(&[0.0, 1.0, 2.0]);
        let rho = DensityMatrix::from_diagonal(&[0.0, 1.0, 0.0], &t).unwrap();
        assert_eq!(moments(&rho, &h).unwrap(), StateMoments { h: 1.0, v: 0.0, beta: 0.0 });

        // symmetric two-level
        let h2 = HermitianOperator::diagonal(&[0.0, 1.0]);
        let m = moments(&DensityMatrix::maximally_mixed(2), &h2).unwrap();
        assert_eq!((m.h, m.v, m.beta), (0.5, 0.25, 0.0));

        // three outcomes 0,1,2 with weights 1/4,1/4,1/2: brute-force scalar sums
        let rho = DensityMatrix::from_diagonal(&[0.25, 0.25, 0.5], &t).unwrap();
        let (p, e) = ([0.25, 0.25, 0.5], [0.0, 1.0, 2.0]);
        let mean: f64 = p.iter().zip(&e).map(|(p, e)| p * e).sum();
        let var: f64 = p.iter().zip(&e).map(|(p, e)| p * (e - mean) * (e - mean)).sum();
        let skew: f64 = p.iter().zip(&e).map(|(p, e)| p * (e - mean).powi(3)).sum();
        assert_eq!((mean, var), (1.25, 0.6875));
        let m = moments(&rho, &h).unwrap();
        assert!((m.h - mean).abs() < 1e-15);
        assert!((m.v - var).abs() < 1e-15);
        assert!((m.beta - skew).abs() < 1e-15);
        assert!(moments(&rho, &h2).is_err());
    }

    #[test]
    fn offdiag_examples() {
        let t = tols();
        let s = SpectralDecomposition::new(&HermitianOperator::diagonal(&[0.0, 1.0]), &t).unwrap();
        let diag = DensityMatrix::from_diagonal(&[0.3, 0.7], &t).unwrap();
        assert!(offdiag_norms(&diag, &s).unwrap().values().all(|&x| x == 0.0));

        // |+><+| = 1/2 [[1,1],[1,1]]; P_1 rho P_2 has the single entry 1/2.
        let plus = DensityMatrix::pure(&[c64(1.0, 0.0), c64(1.0, 0.0)], &t).unwrap();
        let norms = offdiag_norms(&plus, &s).unwrap();
        assert!((norms[&(0, 1)] - 0.5).abs() < 1e-15);
        assert_eq!(norms[&(0, 1)], norms[&(1, 0)]);
    }

    #[test]
    fn trace_distance_and_purity() {
        let t = tols();
        let a = DensityMatrix::from_diagonal(&[1.0, 0.0], &t).unwrap();
        let b = DensityMatrix::from_diagonal(&[0.0, 1.0], &t).unwrap();
        assert!((a.trace_distance(&b).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(a.purity(), 1.0);
        assert_eq!(DensityMatrix::maximally_mixed(2).purity(), 0.5);
        assert_eq!(level_pairs(3), vec![(0, 1), (0, 2), (1, 2)]);
    }
}
