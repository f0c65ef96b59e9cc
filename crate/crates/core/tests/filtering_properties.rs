mod common;

use common::*;
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use reduction_core::*;

fn information_value(spec: &SpectralDecomposition, level: usize, sigma: f64, t: f64, z: f64) -> f64 {
    let e = spec.levels()[level % spec.n_levels()].energy;
    sigma * t * e + t.sqrt() * z
}

proptest! {
    #![proptest_config(config(150))]

    #[test]
    fn closed_form_matches_decomposition(
        (rho, h) in instance(),
        sigma in 0.1f64..2.0,
        hbar in 0.5f64..2.0,
        t in 0.0f64..5.0,
        z in -3.0f64..3.0,
        level in 0usize..6,
    ) {
        let spec = spec_of(&h);
        let xi = information_value(&spec, level, sigma, t, z);
        let a = closed_form_state(&rho, &spec, sigma, hbar, t, xi, &tols()).unwrap();
        let b = state_decomposition(&rho, &spec, sigma, hbar, t, xi, &tols()).unwrap();
        prop_assert!(a.matrix().max_abs_diff(b.matrix()) < 1e-10);
    }

    #[test]
    fn weights_form_a_distribution(
        (rho, h) in instance(),
        sigma in 0.0f64..3.0,
        t in 0.0f64..200.0,
        z in -5.0f64..5.0,
        level in 0usize..6,
    ) {
        let spec = spec_of(&h);
        let xi = information_value(&spec, level, sigma, t, z);
        let w = filter_weights(&rho, &spec, sigma, t, xi).unwrap();
        prop_assert!((w.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.probabilities.iter().all(|&p| (0.0..=1.0).contains(&p)));
        let state = closed_form_state(&rho, &spec, sigma, 1.0, t, xi, &tols()).unwrap();
        let from_state = spec.probabilities(state.matrix());
        for (a, b) in w.probabilities.iter().zip(&from_state) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn pure_states_stay_pure(
        n in 1usize..=6,
        amps in prop::collection::vec(-1.0f64..1.0, 12),
        energies in prop::collection::vec(-2i32..=2, 6),
        sigma in 0.1f64..2.0,
        t in 0.0f64..20.0,
        z in -3.0f64..3.0,
    ) {
        let psi: Vec<_> = (0..n).map(|i| c64(amps[2 * i], amps[2 * i + 1] + 1e-3)).collect();
        let rho = DensityMatrix::pure(&psi, &tols()).unwrap();
        let e: Vec<f64> = energies[..n].iter().map(|&x| x as f64).collect();
        let spec = spec_of(&HermitianOperator::diagonal(&e));
        let xi = information_value(&spec, 0, sigma, t, z);
        let state = closed_form_state(&rho, &spec, sigma, 1.0, t, xi, &tols()).unwrap();
        prop_assert!((state.purity() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn information_path_identity(seed in any::<u64>(), level in 0usize..3, sigma in 0.0f64..2.0) {
        let (_, h) = inst_b();
        let spec = spec_of(&h);
        let grid = TimeGrid::new(0.5, 0.01).unwrap();
        let mut rng = ensemble::path_rng(seed, 0);
        let p = make_information_path(level, &spec, sigma, &grid, &mut rng).unwrap();
        prop_assert_eq!(p.xi[0], 0.0);
        for k in 0..p.len() {
            prop_assert_eq!(p.xi[k], sigma * grid.time(k) * p.energy + p.b[k]);
        }
    }
}

#[test]
fn hundred_random_instances_agree() {
    let mut runner = proptest::test_runner::TestRunner::new_with_rng(
        config(100),
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    let mut worst: f64 = 0.0;
    let strategy = (instance(), 0.1f64..2.0, 0.0f64..10.0, -3.0f64..3.0);
    for _ in 0..100 {
        let ((rho, h), sigma, t, z) = strategy.new_tree(&mut runner).unwrap().current();
        let spec = spec_of(&h);
        let xi = information_value(&spec, 0, sigma, t, z);
        let a = closed_form_state(&rho, &spec, sigma, 1.0, t, xi, &tols()).unwrap();
        let b = state_decomposition(&rho, &spec, sigma, 1.0, t, xi, &tols()).unwrap();
        worst = worst.max(a.matrix().max_abs_diff(b.matrix()));
    }
    assert!(worst < 1e-10, "worst {worst:e}");
}

#[test]
fn recovered_brownian_increments_match_the_innovation() {
    // With B = 0 and a single level the filter is certain from t = 0, so the
    // recovered motion is identically zero.
    let spec = spec_of(&HermitianOperator::diagonal(&[1.5]));
    let rho = DensityMatrix::maximally_mixed(1);
    let grid = TimeGrid::new(1.0, 0.1).unwrap();
    let p = InformationPath::from_brownian(0, &spec, 0.7, &grid, vec![0.0; 11]).unwrap();
    let w = recovered_brownian(&p, &rho, &spec, 0.7).unwrap();
    assert!(w.iter().all(|x| x.abs() < 1e-12), "{w:?}");
}

#[test]
fn late_time_state_is_the_luders_state_of_the_signal_level() {
    let (rho, h) = inst_b();
    let spec = spec_of(&h);
    for level in 0..3 {
        let xi = 400.0 * spec.levels()[level].energy;
        let state = closed_form_state(&rho, &spec, 1.0, 1.0, 400.0, xi, &tols()).unwrap();
        let target = luders_state(&rho, &spec, level, &tols()).unwrap();
        assert!(state.trace_distance(&target).unwrap() < 1e-12, "level {level}");
    }
}
