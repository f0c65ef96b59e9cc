//! Numerics for energy-driven stochastic reduction of density matrices.
//!
//! The crate is `no_std` (it needs `alloc`). It covers four layers:
//!
//! - [`spectral`] and [`state`]: small dense complex Hermitian linear algebra,
//!   spectral decomposition with degeneracy grouping, Lüders states and
//!   state moments.
//! - [`dynamics`]: Euler–Maruyama integration of the nonlinear stochastic
//!   master equation and of the pure-state equation, plus an RK4 integrator
//!   for the linear mean-state (Lindblad) equation.
//! - [`filtering`]: the closed-form solution driven by an information process
//!   `xi_t = sigma * t * H + B_t`, posterior level weights, the recovered
//!   innovation Brownian motion and the decoherence potentials.
//! - [`ensemble`]: seeded Monte Carlo ensembles, streaming accumulators and
//!   the statistical checks that turn them into pass/fail verdicts.
//!
//! Nothing here touches IO or threads; `reduction-lab` layers those on top.

#![no_std]
#![forbid(unsafe_code)]
// `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod dynamics;
pub mod eigen;
pub mod ensemble;
mod error;
pub mod filtering;
pub mod matrix;
pub mod numeric;
pub mod spectral;
pub mod state;
mod tolerance;

pub use error::{Error, Result};
pub use matrix::{c64, ComplexMatrix};
pub use tolerance::ToleranceSet;

pub use dynamics::{
    integrate_lindblad, lindblad_rhs, simulate_sme, sme_step, sse_step, variance_bound,
    NoisePath, ReductionParams, StateVector, TimeGrid, Trajectory,
};
pub use filtering::{
    closed_form_state, energy_estimate, filter_weights, make_information_path, phi_process,
    recovered_brownian, sample_terminal_energy, state_decomposition, type_d_decomposition,
    ClosedForm, FilterWeights, InformationPath, PhiValue, TypeDDecomposition,
};
pub use spectral::{luders_state, spectral_decompose, HermitianOperator, Level, SpectralDecomposition};
pub use state::{moments, offdiag_norms, validate_density, DensityMatrix, StateMoments};
