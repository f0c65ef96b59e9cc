#![allow(dead_code)]

use proptest::prelude::*;
use reduction_core::eigen::hermitian_eigen;
use reduction_core::*;

pub fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

pub fn tols() -> ToleranceSet {
    ToleranceSet::default()
}

pub fn mat(rows: &[&[(f64, f64)]]) -> ComplexMatrix {
    let rows: Vec<Vec<_>> = rows.iter().map(|r| r.iter().map(|&(a, b)| c64(a, b)).collect()).collect();
    ComplexMatrix::from_rows(&rows).unwrap()
}

/// `G + G^dagger` from `2 n^2` reals.
pub fn hermitian_from(n: usize, raw: &[f64]) -> ComplexMatrix {
    let g = ComplexMatrix::from_real_imag(&raw[..n * n], &raw[n * n..2 * n * n]).unwrap();
    &g + &g.adjoint()
}

/// `G G^dagger / tr` from `2 n^2` reals.
pub fn density_from(n: usize, raw: &[f64]) -> DensityMatrix {
    let g = ComplexMatrix::from_real_imag(&raw[..n * n], &raw[n * n..2 * n * n]).unwrap();
    let m = &g * &g.adjoint();
    let tr = m.trace().re;
    validate_density(m.scale_real(1.0 / tr), &tols()).unwrap()
}

/// Unitary eigenbasis of a random Hermitian matrix.
pub fn unitary_from(n: usize, raw: &[f64]) -> ComplexMatrix {
    hermitian_eigen(&hermitian_from(n, raw)).unwrap().vectors
}

/// Dimension with `2 n^2` entries in `[-1, 1]`.
pub fn sized_raw() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1usize..=6).prop_flat_map(|n| (Just(n), prop::collection::vec(-1.0f64..1.0, 2 * n * n)))
}

/// Dimension, a state and a Hamiltonian with integer energies in `[-2, 2]`
/// (so degeneracies are common) in a random eigenbasis.
pub fn instance() -> impl Strategy<Value = (DensityMatrix, HermitianOperator)> {
    (1usize..=6)
        .prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec(0.05f64..1.0, 2 * n * n),
                prop::collection::vec(-1.0f64..1.0, 2 * n * n),
                prop::collection::vec(-2i32..=2, n),
            )
        })
        .prop_filter_map("degenerate state", |(n, state_raw, basis_raw, energies)| {
            let rho = density_from(n, &state_raw);
            let e: Vec<f64> = energies.iter().map(|&x| x as f64).collect();
            let h = HermitianOperator::from_eigenbasis(&e, &unitary_from(n, &basis_raw), &tols()).ok()?;
            Some((rho, h))
        })
}

pub fn inst_a() -> (DensityMatrix, HermitianOperator) {
    let rho = validate_density(mat(&[&[(0.5, 0.0), (0.25, 0.0)], &[(0.25, 0.0), (0.5, 0.0)]]), &tols()).unwrap();
    (rho, HermitianOperator::diagonal(&[0.0, 1.0]))
}

pub fn inst_b() -> (DensityMatrix, HermitianOperator) {
    let rho = validate_density(
        mat(&[
            &[(0.25, 0.0), (0.1, 0.0), (0.0, 0.15)],
            &[(0.1, 0.0), (0.25, 0.0), (0.1, -0.1)],
            &[(0.0, -0.15), (0.1, 0.1), (0.5, 0.0)],
        ]),
        &tols(),
    )
    .unwrap();
    (rho, HermitianOperator::diagonal(&[0.0, 1.0, 2.0]))
}

pub fn spec_of(h: &HermitianOperator) -> SpectralDecomposition {
    SpectralDecomposition::new(h, &tols()).unwrap()
}
