mod common;

use common::*;
use num_complex::Complex64;
use proptest::prelude::*;
use reduction_core::dynamics::{sme_increment, NoisePath};
use reduction_core::*;

fn three_level_pure() -> (StateVector, HermitianOperator) {
    let psi = StateVector::new(vec![c64(0.5, 0.0), c64(0.5, 0.3), c64(0.4, -0.2)]).unwrap();
    (psi, HermitianOperator::diagonal(&[0.0, 1.0, 2.0]))
}

fn sse_sme_gap(dt: f64, dws: &[f64]) -> f64 {
    let (psi, h) = three_level_pure();
    let rho = psi.projector(&tols()).unwrap();
    let params = ReductionParams::default();
    let mut sse = ComplexMatrix::zeros(3);
    let mut sme = ComplexMatrix::zeros(3);
    let weight = 1.0 / dws.len() as f64;
    for &dw in dws {
        let next = sse_step(&psi, &h, &params, dt, dw).unwrap();
        sse.axpy_real(weight, next.projector(&tols()).unwrap().matrix());
        sme.axpy_real(weight, sme_step(&rho, &h, &params, dt, dw, &tols()).unwrap().matrix());
    }
    sse.max_abs_diff(&sme)
}

#[test]
fn pure_state_step_agrees_with_master_equation_step() {
    let dts = [1e-2, 5e-3, 2.5e-3, 1.25e-3];
    // Realization with dW^2 = dt: gap O(dt^{3/2}).
    let single: Vec<f64> = dts.iter().map(|&dt: &f64| sse_sme_gap(dt, &[dt.sqrt()])).collect();
    // Average over dW = +-sqrt(dt): odd terms cancel, gap O(dt^2).
    let paired: Vec<f64> = dts.iter().map(|&dt: &f64| sse_sme_gap(dt, &[dt.sqrt(), -dt.sqrt()])).collect();
    for k in 1..dts.len() {
        let r = single[k - 1] / single[k];
        assert!((2.4..3.3).contains(&r), "single ratio {r} in {single:?}");
        let r = paired[k - 1] / paired[k];
        assert!((3.4..4.6).contains(&r), "paired ratio {r} in {paired:?}");
    }
    assert!(paired[3] < 1e-6);
}

#[test]
fn lindblad_coherence_follows_the_scalar_solution() {
    let (rho0, h) = inst_a();
    let params = ReductionParams::new(1.3, 0.8).unwrap();
    let grid = TimeGrid::new(2.0, 1e-2).unwrap();
    let path = integrate_lindblad(&rho0, &h, &params, &grid, &tols()).unwrap();
    let de = 0.0 - 1.0;
    for (k, state) in path.iter().enumerate() {
        let t = grid.time(k);
        let rate = Complex64::new(-params.sigma * params.sigma * de * de / 8.0, -de / params.hbar);
        let expected = rho0.matrix()[(0, 1)] * (rate * t).exp();
        assert!((state.matrix()[(0, 1)] - expected).norm() < 1e-10, "t={t}");
        assert!((state.matrix()[(0, 0)].re - 0.5).abs() < 1e-12);
    }
}

#[test]
fn lindblad_without_reduction_is_unitary_to_rk4_order() {
    let (rho0, h) = inst_b();
    let params = ReductionParams::new(0.0, 1.0).unwrap();
    let spec = spec_of(&h);
    let exact = |t: f64| {
        let u = spec.levels().iter().fold(ComplexMatrix::zeros(3), |mut acc, l| {
            acc.axpy(Complex64::from_polar(1.0, -l.energy * t), &l.projector);
            acc
        });
        &(&u * rho0.matrix()) * &u.adjoint()
    };
    let mut errors = Vec::new();
    for dt in [0.1, 0.05] {
        let grid = TimeGrid::new(2.0, dt).unwrap();
        let path = integrate_lindblad(&rho0, &h, &params, &grid, &tols()).unwrap();
        errors.push(path.last().unwrap().matrix().max_abs_diff(&exact(2.0)));
    }
    assert!(errors[1] < 1e-6, "{errors:?}");
    assert!(errors[0] / errors[1] > 12.0, "{errors:?}");
}

#[test]
fn lindblad_dephases_and_keeps_populations() {
    let (rho0, h) = inst_b();
    let grid = TimeGrid::new(60.0, 0.05).unwrap();
    let path = integrate_lindblad(&rho0, &h, &ReductionParams::default(), &grid, &tols()).unwrap();
    let last = path.last().unwrap().matrix();
    for r in 0..3 {
        assert!((last[(r, r)].re - rho0.matrix()[(r, r)].re).abs() < 1e-12);
        for c in 0..3 {
            if r != c {
                assert!(last[(r, c)].norm() < 1e-3);
            }
        }
    }
}

#[test]
fn unitary_euler_path_drifts_at_first_order() {
    let (rho0, h) = inst_b();
    let spec = spec_of(&h);
    let params = ReductionParams::new(0.0, 1.0).unwrap();
    let m0 = moments(&rho0, &h).unwrap();
    let mut drift = Vec::new();
    for dt in [2e-3, 1e-3] {
        let grid = TimeGrid::new(1.0, dt).unwrap();
        let traj = simulate_sme(&rho0, &spec, &params, &grid, &NoisePath::zero(&grid), &tols()).unwrap();
        let purity = traj.purity.iter().map(|p| (p - rho0.purity()).abs()).fold(0.0, f64::max);
        let energy = traj.moments.iter().map(|m| (m.h - m0.h).abs()).fold(0.0, f64::max);
        let variance = traj.moments.iter().map(|m| (m.v - m0.v).abs()).fold(0.0, f64::max);
        assert!(energy < 1e-12 && variance < 1e-12, "energy {energy:e} variance {variance:e}");
        drift.push(purity);
    }
    assert!(drift[1] < 2e-3);
    let r = drift[0] / drift[1];
    assert!((1.8..2.2).contains(&r), "{drift:?}");
}

#[test]
fn collapsed_paths_stay_on_an_eigenprojector() {
    let (rho0, h) = inst_b();
    let spec = spec_of(&h);
    let grid = TimeGrid::new(120.0, 1e-3).unwrap();
    let noise = NoisePath::from_seed(&grid, 17);
    let traj = simulate_sme(&rho0, &spec, &ReductionParams::default(), &grid, &noise, &tols()).unwrap();
    // Coherences are bounded by sqrt(V), so V < 1e-18 puts the state within
    // 1e-9 of a projector.
    let k = traj.moments.iter().position(|m| m.v < 1e-18).expect("path collapses");
    let level = traj.populations[k].iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    let projector = &spec.levels()[level].projector;
    for state in &traj.states[k..] {
        assert!(state.matrix().max_abs_diff(projector) < 1e-9);
    }
}

#[test]
fn trajectories_are_reproducible() {
    let (rho0, h) = inst_b();
    let spec = spec_of(&h);
    let grid = TimeGrid::new(1.0, 1e-3).unwrap();
    let run = || {
        let noise = NoisePath::from_seed(&grid, 99);
        simulate_sme(&rho0, &spec, &ReductionParams::default(), &grid, &noise, &tols()).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.states, b.states);
    assert_eq!(a.xi, b.xi);
    assert_eq!(a.w, b.w);
}

#[test]
fn mismatched_noise_is_rejected() {
    let (rho0, h) = inst_a();
    let grid = TimeGrid::new(1.0, 0.1).unwrap();
    let short = NoisePath::zero(&TimeGrid::new(0.5, 0.1).unwrap());
    let err = simulate_sme(&rho0, &spec_of(&h), &ReductionParams::default(), &grid, &short, &tols());
    assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
}

proptest! {
    #![proptest_config(config(40))]

    #[test]
    fn stored_states_are_valid((rho0, h) in instance(), seed in any::<u64>(), sigma in 0.0f64..1.5) {
        let spec = spec_of(&h);
        let grid = TimeGrid::new(0.5, 1e-3).unwrap();
        let params = ReductionParams::new(sigma, 1.0).unwrap();
        let noise = NoisePath::from_seed(&grid, seed);
        let traj = simulate_sme(&rho0, &spec, &params, &grid, &noise, &tols()).unwrap();
        prop_assert_eq!(traj.len(), grid.n_steps() + 1);
        prop_assert_eq!(traj.w[0], 0.0);
        prop_assert_eq!(traj.xi[0], 0.0);
        let (lo, hi) = (spec.energies()[0], *spec.energies().last().unwrap());
        for (state, m) in traj.states.iter().zip(&traj.moments) {
            prop_assert!((state.matrix().trace().re - 1.0).abs() <= 4.0 * f64::EPSILON);
            prop_assert_eq!(state.matrix().hermitian_deviation(), 0.0);
            prop_assert!(validate_density(state.matrix().clone(), &tols()).is_ok());
            prop_assert!(m.h >= lo - 1e-12 && m.h <= hi + 1e-12);
        }
    }

    #[test]
    fn raw_increment_is_traceless_up_to_rounding((rho0, h) in instance(), dw in -0.1f64..0.1) {
        let (next, _) = sme_increment(rho0.matrix(), h.matrix(), &ReductionParams::default(), 1e-3, dw);
        prop_assert!((next.trace().re - 1.0).abs() < 1e-14);
        prop_assert!(next.trace().im.abs() < 1e-14);
    }
}
