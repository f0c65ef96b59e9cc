//! Hermitian operators and their spectral decomposition into distinct energy
//! levels with orthogonal projectors.

use alloc::vec::Vec;

use num_complex::Complex64;

use crate::eigen::{hermitian_eigen, HermitianEigen};
use crate::state::DensityMatrix;
use crate::{ComplexMatrix, Error, Result, ToleranceSet};

/// A Hermitian matrix, symmetrized on construction so downstream code sees
/// exactly Hermitian data.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    matrix: ComplexMatrix,
}

impl HermitianOperator {
    /// Accepts `matrix` if `max |A - A^dagger| <= tols.hermiticity`, then
    /// replaces it by `(A + A^dagger) / 2`.
    pub fn new(matrix: ComplexMatrix, tols: &ToleranceSet) -> Result<Self> {
        if !matrix.is_finite() {
            return Err(Error::NonFiniteInput);
        }
        let deviation = matrix.hermitian_deviation();
        if deviation > tols.hermiticity {
            return Err(Error::NotHermitian { deviation, tolerance: tols.hermiticity });
        }
        Ok(Self { matrix: matrix.hermitized() })
    }

    /// Real diagonal operator.
    pub fn diagonal(values: &[f64]) -> Self {
        Self { matrix: ComplexMatrix::from_diagonal(values) }
    }

    /// `U diag(values) U^dagger` for a (near-)unitary `basis`.
    pub fn from_eigenbasis(values: &[f64], basis: &ComplexMatrix, tols: &ToleranceSet) -> Result<Self> {
        basis.require_dim(values.len())?;
        let uu = &basis.adjoint() * basis;
        let deviation = uu.max_abs_diff(&ComplexMatrix::identity(values.len()));
        if deviation > tols.matrix {
            return Err(Error::InvalidParameter {
                name: "basis",
                reason: "change-of-basis matrix is not unitary",
            });
        }
        let d = ComplexMatrix::from_diagonal(values);
        Self::new(&(basis * &d) * &basis.adjoint(), tols)
    }

    #[inline]
    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }
}

/// One distinct energy level `E_r` with its eigenspace projector.
#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub energy: f64,
    pub projector: ComplexMatrix,
    pub multiplicity: usize,
}

/// `H = sum_r E_r P_r` with strictly increasing `E_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    operator: HermitianOperator,
    levels: Vec<Level>,
}

/// Default grouping tolerance `rel * max(1, max |E|)` for raw eigenvalues.
pub fn default_degeneracy_tol(eigenvalues: &[f64], tols: &ToleranceSet) -> f64 {
    let scale = eigenvalues.iter().fold(1.0f64, |m, e| m.max(e.abs()));
    tols.degeneracy * scale
}

/// Diagonalizes `h` and merges eigenvalues closer than `degeneracy_tol`.
///
/// Grouping is single-linkage on the sorted eigenvalues: a run of
/// consecutive gaps `<= degeneracy_tol` forms one level whose energy is the
/// mean of its members.
pub fn spectral_decompose(h: &HermitianOperator, degeneracy_tol: f64) -> Result<SpectralDecomposition> {
    let eig = hermitian_eigen(h.matrix())?;
    Ok(group_levels(h, &eig, degeneracy_tol))
}

fn group_levels(h: &HermitianOperator, eig: &HermitianEigen, degeneracy_tol: f64) -> SpectralDecomposition {
    let n = h.dim();
    let mut levels: Vec<Level> = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && eig.values[end] - eig.values[end - 1] <= degeneracy_tol {
            end += 1;
        }
        let members = start..end;
        let energy = members.clone().map(|k| eig.values[k]).sum::<f64>() / (end - start) as f64;
        let mut projector = ComplexMatrix::zeros(n);
        for k in members {
            let v = eig.vector(k);
            projector += &ComplexMatrix::outer(&v, &v);
        }
        levels.push(Level { energy, projector: projector.hermitized(), multiplicity: end - start });
        start = end;
    }
    SpectralDecomposition { operator: h.clone(), levels }
}

impl SpectralDecomposition {
    /// Decomposes with the default relative degeneracy rule.
    pub fn new(h: &HermitianOperator, tols: &ToleranceSet) -> Result<Self> {
        let eig = hermitian_eigen(h.matrix())?;
        let tol = default_degeneracy_tol(&eig.values, tols);
        Ok(group_levels(h, &eig, tol))
    }

    pub fn operator(&self) -> &HermitianOperator {
        &self.operator
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn level(&self, r: usize) -> Result<&Level> {
        self.levels.get(r).ok_or(Error::LevelOutOfRange { level: r, levels: self.levels.len() })
    }

    /// Number of distinct levels `D`.
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn dim(&self) -> usize {
        self.operator.dim()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.energy).collect()
    }

    /// `E_D - E_1`.
    pub fn energy_span(&self) -> f64 {
        match (self.levels.first(), self.levels.last()) {
            (Some(a), Some(b)) => b.energy - a.energy,
            _ => 0.0,
        }
    }

    /// Smallest gap between adjacent levels, `None` with a single level.
    pub fn min_gap(&self) -> Option<f64> {
        self.levels.windows(2).map(|w| w[1].energy - w[0].energy).reduce(f64::min)
    }

    /// `p_r = tr(rho P_r)`.
    pub fn probabilities(&self, rho: &ComplexMatrix) -> Vec<f64> {
        self.levels.iter().map(|l| rho.trace_of_product(&l.projector).re).collect()
    }

    /// `P_n rho P_m`.
    pub fn block(&self, rho: &ComplexMatrix, n: usize, m: usize) -> ComplexMatrix {
        &(&self.levels[n].projector * rho) * &self.levels[m].projector
    }

    /// `sum_r E_r P_r`.
    pub fn reconstruct(&self) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.dim());
        for l in &self.levels {
            out.axpy_real(l.energy, &l.projector);
        }
        out
    }

    /// Worst violation of idempotence, Hermiticity, orthogonality,
    /// completeness and (relative) reconstruction.
    pub fn invariant_residuals(&self) -> SpectralResiduals {
        let n = self.dim();
        let mut projector: f64 = 0.0;
        let mut orthogonality: f64 = 0.0;
        let mut sum = ComplexMatrix::zeros(n);
        for (r, a) in self.levels.iter().enumerate() {
            let p = &a.projector;
            projector = projector.max((p * p).max_abs_diff(p)).max(p.hermitian_deviation());
            for b in &self.levels[r + 1..] {
                orthogonality = orthogonality.max((p * &b.projector).max_abs());
            }
            sum += p;
        }
        let completeness = sum.max_abs_diff(&ComplexMatrix::identity(n));
        let scale = self.levels.iter().fold(1.0f64, |m, l| m.max(l.energy.abs()));
        let reconstruction = self.reconstruct().max_abs_diff(self.operator.matrix()) / scale;
        SpectralResiduals { projector, orthogonality, completeness, reconstruction }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralResiduals {
    pub projector: f64,
    pub orthogonality: f64,
    pub completeness: f64,
    pub reconstruction: f64,
}

impl SpectralResiduals {
    pub fn within(&self, tols: &ToleranceSet) -> bool {
        self.projector <= tols.matrix
            && self.orthogonality <= tols.matrix
            && self.completeness <= tols.matrix
            && self.reconstruction <= tols.reconstruction
    }
}

/// Lüders state `P_r rho0 P_r / tr(rho0 P_r)`.
pub fn luders_state(
    rho0: &DensityMatrix,
    spec: &SpectralDecomposition,
    r: usize,
    tols: &ToleranceSet,
) -> Result<DensityMatrix> {
    rho0.matrix().require_dim(spec.dim())?;
    let level = spec.level(r)?;
    let probability = rho0.matrix().trace_of_product(&level.projector).re;
    if !(probability > tols.luders_floor) {
        return Err(Error::ZeroProbabilitySubspace { level: r, probability, floor: tols.luders_floor });
    }
    let block = spec.block(rho0.matrix(), r, r);
    let scaled = block.scale(Complex64::new(1.0 / probability, 0.0));
    crate::state::validate_density(scaled, tols)
}
