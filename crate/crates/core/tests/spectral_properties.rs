mod common;

use common::*;
use proptest::prelude::*;
use reduction_core::*;

proptest! {
    #![proptest_config(config(200))]

    #[test]
    fn decomposition_invariants_on_random_hermitian((n, raw) in sized_raw()) {
        let h = HermitianOperator::new(hermitian_from(n, &raw), &tols()).unwrap();
        let spec = spec_of(&h);
        let res = spec.invariant_residuals();
        prop_assert!(res.within(&tols()), "{res:?}");
        prop_assert_eq!(spec.levels().iter().map(|l| l.multiplicity).sum::<usize>(), n);
        for pair in spec.energies().windows(2) {
            prop_assert!(pair[0] < pair[1]);
        }
    }

    #[test]
    fn degenerate_spectra_group_into_levels((rho, h) in instance()) {
        let spec = spec_of(&h);
        prop_assert!(spec.invariant_residuals().within(&tols()));
        for level in spec.levels() {
            let rank = level.projector.trace().re;
            prop_assert!((rank - level.multiplicity as f64).abs() < 1e-9);
            prop_assert!((level.energy - level.energy.round()).abs() < 1e-9);
        }
        let p = spec.probabilities(rho.matrix());
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn variance_matches_level_sums((rho, h) in instance()) {
        let spec = spec_of(&h);
        let m = moments(&rho, &h).unwrap();
        let p = spec.probabilities(rho.matrix());
        let e = spec.energies();
        let mean: f64 = p.iter().zip(&e).map(|(p, e)| p * e).sum();
        let second: f64 = p.iter().zip(&e).map(|(p, e)| p * e * e).sum();
        prop_assert!((m.h - mean).abs() < 1e-12);
        prop_assert!((m.v - (second - mean * mean)).abs() < 1e-10);
        prop_assert!(m.v >= -1e-12);
    }

    #[test]
    fn luders_states_are_eigenstates((rho, h) in instance()) {
        let spec = spec_of(&h);
        for (r, level) in spec.levels().iter().enumerate() {
            let Ok(l) = luders_state(&rho, &spec, r, &tols()) else { continue };
            let hl = h.matrix() * l.matrix();
            prop_assert!(hl.max_abs_diff(&l.matrix().scale_real(level.energy)) < 1e-9);
            prop_assert!((l.matrix().trace().re - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn coherence_norms_are_symmetric((rho, h) in instance()) {
        let spec = spec_of(&h);
        let norms = offdiag_norms(&rho, &spec).unwrap();
        for (&(n, m), &v) in &norms {
            prop_assert!((v - norms[&(m, n)]).abs() <= 1e-15 * v.max(1.0));
        }
    }

    #[test]
    fn random_states_validate((n, raw) in sized_raw()) {
        let rho = density_from(n, &raw);
        let again = validate_density(rho.matrix().clone(), &tols()).unwrap();
        prop_assert!(again.matrix().max_abs_diff(rho.matrix()) < 1e-15);
        prop_assert!(rho.eigenvalues().unwrap()[0] > -1e-12);
    }
}

#[test]
fn non_hermitian_hamiltonian_reports_deviation() {
    let m = ComplexMatrix::from_real_imag(&[0.0, 1.0, 0.5, 0.0], &[0.0; 4]).unwrap();
    match HermitianOperator::new(m, &tols()) {
        Err(Error::NotHermitian { deviation, .. }) => assert!((deviation - 0.5).abs() < 1e-15),
        other => panic!("unexpected {other:?}"),
    }
}
