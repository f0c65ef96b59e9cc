//! Time stepping for the energy-driven stochastic master equation
//!
//! ```text
//! d rho = -(i/hbar)[H, rho] dt + sigma^2/8 (2 H rho H - H^2 rho - rho H^2) dt
//!         + sigma/2 ((H - H_t) rho + rho (H - H_t)) dW
//! ```
//!
//! its pure-state counterpart, and the linear equation obeyed by the mean
//! state. Stochastic steps are Euler–Maruyama followed by a repair that
//! restores exact Hermiticity, unit trace and positivity.

use alloc::vec::Vec;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::eigen::{cholesky_succeeds_in, hermitian_eigen};
use crate::error::StepFailure;
use crate::spectral::{HermitianOperator, SpectralDecomposition};
use crate::state::{level_pairs, moments_of, DensityMatrix, MomentScratch, StateMoments};
use crate::{ComplexMatrix, Error, Result, ToleranceSet};

/// Reduction strength `sigma` (energy^-1 time^-1/2) and `hbar`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReductionParams {
    pub sigma: f64,
    pub hbar: f64,
}

impl Default for ReductionParams {
    fn default() -> Self {
        Self { sigma: 1.0, hbar: 1.0 }
    }
}

impl ReductionParams {
    pub fn new(sigma: f64, hbar: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter { name: "sigma", reason: "must be finite and >= 0" });
        }
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(Error::InvalidParameter { name: "hbar", reason: "must be finite and > 0" });
        }
        Ok(Self { sigma, hbar })
    }
}

/// Uniform grid `t_k = k * dt`, `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_max: f64,
    dt: f64,
    n_steps: usize,
}

impl TimeGrid {
    /// `t_max` must be (to rounding) an integer multiple of `dt`.
    pub fn new(t_max: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidGrid("dt must be finite and > 0"));
        }
        if !(t_max >= 0.0 && t_max.is_finite()) {
            return Err(Error::InvalidGrid("t_max must be finite and >= 0"));
        }
        let n = (t_max / dt).round();
        if (n * dt - t_max).abs() > 1e-9 * t_max.max(dt) {
            return Err(Error::InvalidGrid("t_max is not an integer multiple of dt"));
        }
        Ok(Self { t_max, dt, n_steps: n as usize })
    }

    /// Grid with `n_steps` steps of size `dt`.
    pub fn with_steps(n_steps: usize, dt: f64) -> Result<Self> {
        Self::new(n_steps as f64 * dt, dt)
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.dt
    }
    #[inline]
    pub fn t_max(&self) -> f64 {
        self.t_max
    }
    #[inline]
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }
    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }

    /// Index of the grid point nearest to `t`, clamped to the grid.
    pub fn index_of(&self, t: f64) -> usize {
        ((t / self.dt).round().max(0.0) as usize).min(self.n_steps)
    }
}

/// Brownian increments `dW_k ~ N(0, dt)` for one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    increments: Vec<f64>,
    seed: Option<u64>,
}

impl NoisePath {
    pub fn sample<R: Rng + ?Sized>(grid: &TimeGrid, rng: &mut R) -> Self {
        let sd = grid.dt().sqrt();
        let increments = (0..grid.n_steps())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * sd
            })
            .collect();
        Self { increments, seed: None }
    }

    /// Deterministic path from a ChaCha8 stream seeded with `seed`.
    pub fn from_seed(grid: &TimeGrid, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self { seed: Some(seed), ..Self::sample(grid, &mut rng) }
    }

    pub fn zero(grid: &TimeGrid) -> Self {
        Self { increments: alloc::vec![0.0; grid.n_steps()], seed: None }
    }

    pub fn from_increments(grid: &TimeGrid, increments: Vec<f64>) -> Result<Self> {
        if increments.len() != grid.n_steps() {
            return Err(Error::DimensionMismatch { expected: grid.n_steps(), actual: increments.len() });
        }
        if increments.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self { increments, seed: None })
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Running sum `W_k` with `W_0 = 0`.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.increments.len() + 1);
        let mut acc = 0.0;
        w.push(acc);
        for &dw in &self.increments {
            acc += dw;
            w.push(acc);
        }
        w
    }
}

/// One sample path of the state and its derived series.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub states: Vec<DensityMatrix>,
    /// Information process `xi_t`.
    pub xi: Vec<f64>,
    /// Driving Brownian motion `W_t`.
    pub w: Vec<f64>,
    pub moments: Vec<StateMoments>,
    pub purity: Vec<f64>,
    /// `pi_r(t) = tr(rho_t P_r)`, one inner vector per grid point.
    pub populations: Vec<Vec<f64>>,
    /// Level pairs `(n, m)`, `n < m`, matching the columns of `offdiag`.
    pub pairs: Vec<(usize, usize)>,
    /// `|P_n rho_t P_m|` per grid point and pair.
    pub offdiag: Vec<Vec<f64>>,
}

impl Trajectory {
    pub(crate) fn with_capacity(grid: TimeGrid, levels: usize) -> Self {
        let n = grid.n_steps() + 1;
        Self {
            grid,
            states: Vec::with_capacity(n),
            xi: Vec::with_capacity(n),
            w: Vec::with_capacity(n),
            moments: Vec::with_capacity(n),
            purity: Vec::with_capacity(n),
            populations: Vec::with_capacity(n),
            pairs: level_pairs(levels),
            offdiag: Vec::with_capacity(n),
        }
    }

    /// Records every derived series for `state`.
    pub(crate) fn push(&mut self, spec: &SpectralDecomposition, state: DensityMatrix, m: StateMoments, xi: f64, w: f64) {
        self.populations.push(spec.probabilities(state.matrix()));
        self.offdiag.push(
            self.pairs.iter().map(|&(n, k)| spec.block(state.matrix(), n, k).frobenius_norm()).collect(),
        );
        self.purity.push(state.purity());
        self.moments.push(m);
        self.xi.push(xi);
        self.w.push(w);
        self.states.push(state);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Clamp tolerance for one stochastic step.
///
/// An Euler step of a (near) pure state `psi` moves the eigenvalue of an
/// orthogonal direction `v` to about
/// `-|<v|H|psi>|^2 (dt^2 / hbar^2 + sigma^2 (dW^2 - dt) / 4)`, which is
/// negative whenever `dW^2 > dt` or `sigma = 0`. With `|<v|H|psi>|^2 <= V` the
/// tolerance is the configured floor plus four times that bound.
pub fn clamp_tolerance(floor: f64, params: &ReductionParams, variance: f64, dt: f64, dw: f64) -> f64 {
    let unitary = dt * dt / (params.hbar * params.hbar);
    floor + variance.max(0.0) * (4.0 * unitary + params.sigma * params.sigma * (dw * dw + dt))
}

/// The raw Euler–Maruyama update `rho + drift dt + diffusion dW`, before
/// repair. Also returns the moments of `rho`.
pub fn sme_increment(
    rho: &ComplexMatrix,
    h: &ComplexMatrix,
    params: &ReductionParams,
    dt: f64,
    dw: f64,
) -> (ComplexMatrix, StateMoments) {
    let hr = h * rho;
    let rh = rho * h;
    let m = moments_of(rho, h);
    let hrh = &hr * h;
    let hhr = h * &hr;
    let rhh = &rh * h;

    let mut next = rho.clone();
    // -(i/hbar)[H, rho] dt
    let unitary = Complex64::new(0.0, -dt / params.hbar);
    next.axpy(unitary, &hr);
    next.axpy(-unitary, &rh);
    // sigma^2/8 (2 H rho H - H^2 rho - rho H^2) dt
    let diss = params.sigma * params.sigma * dt / 8.0;
    next.axpy_real(2.0 * diss, &hrh);
    next.axpy_real(-diss, &hhr);
    next.axpy_real(-diss, &rhh);
    // sigma/2 ((H - H_t) rho + rho (H - H_t)) dW
    let noise = 0.5 * params.sigma * dw;
    next.axpy_real(noise, &hr);
    next.axpy_real(noise, &rh);
    next.axpy_real(-2.0 * noise * m.h, rho);
    (next, m)
}

/// Restores Hermiticity and unit trace, then clamps negative eigenvalues if
/// the most negative one is within `clamp_tol`.
pub fn repair_state(mut m: ComplexMatrix, tols: &ToleranceSet, clamp_tol: f64) -> Result<DensityMatrix> {
    let mut factor = ComplexMatrix::zeros(m.dim());
    repair_in_place(&mut m, &mut factor, tols, clamp_tol)?;
    Ok(DensityMatrix::from_trusted(m))
}

fn repair_in_place(m: &mut ComplexMatrix, factor: &mut ComplexMatrix, tols: &ToleranceSet, clamp_tol: f64) -> Result<()> {
    if !m.is_finite() {
        return Err(Error::StepDivergence { step: 0, reason: StepFailure::NonFinite });
    }
    m.hermitize_in_place();
    let trace = m.trace().re;
    if !(trace > 1e-300) {
        return Err(Error::StepDivergence { step: 0, reason: StepFailure::TraceCollapse(trace) });
    }
    m.scale_real_in_place(1.0 / trace);
    if cholesky_succeeds_in(m, tols.psd, factor) {
        return Ok(());
    }
    let eig = hermitian_eigen(m)?;
    let min_eigenvalue = eig.values[0];
    if min_eigenvalue >= -tols.psd {
        return Ok(());
    }
    if min_eigenvalue < -clamp_tol {
        return Err(Error::StepDivergence {
            step: 0,
            reason: StepFailure::NegativeEigenvalue { min_eigenvalue, clamp_tol },
        });
    }
    *m = eig.map_values(|v| v.max(0.0)).hermitized();
    let trace = m.trace().re;
    m.scale_real_in_place(1.0 / trace);
    Ok(())
}

/// Buffers for allocation-free SME steps of one dimension.
#[derive(Debug, Clone)]
pub(crate) struct SmeWorkspace {
    hr: ComplexMatrix,
    hrh: ComplexMatrix,
    hhr: ComplexMatrix,
    next: ComplexMatrix,
    factor: ComplexMatrix,
    moments: MomentScratch,
}

impl SmeWorkspace {
    pub(crate) fn new(dim: usize) -> Self {
        Self {
            hr: ComplexMatrix::zeros(dim),
            hrh: ComplexMatrix::zeros(dim),
            hhr: ComplexMatrix::zeros(dim),
            next: ComplexMatrix::zeros(dim),
            factor: ComplexMatrix::zeros(dim),
            moments: MomentScratch::new(dim),
        }
    }

    pub(crate) fn moments(&mut self, rho: &DensityMatrix, h: &ComplexMatrix) -> StateMoments {
        self.moments.moments(rho.matrix(), h)
    }

    /// Replaces `rho` by its repaired Euler–Maruyama update. `m` holds the
    /// moments of `rho`. Same arithmetic as [`sme_increment`] entry by entry.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn step(
        &mut self,
        rho: &mut DensityMatrix,
        h: &ComplexMatrix,
        params: &ReductionParams,
        m: &StateMoments,
        dt: f64,
        dw: f64,
        tols: &ToleranceSet,
    ) -> Result<()> {
        let n = h.dim();
        h.mul_into(rho.matrix(), &mut self.hr);
        self.hr.mul_into(h, &mut self.hrh);
        h.mul_into(&self.hr, &mut self.hhr);
        let unitary = Complex64::new(0.0, -dt / params.hbar);
        let diss = params.sigma * params.sigma * dt / 8.0;
        let noise = 0.5 * params.sigma * dw;
        let r = rho.matrix();
        for i in 0..n {
            for j in 0..n {
                let hr = self.hr[(i, j)];
                let rh = self.hr[(j, i)].conj();
                let rhh = self.hhr[(j, i)].conj();
                let mut z = r[(i, j)];
                z += unitary * hr;
                z += -unitary * rh;
                z += self.hrh[(i, j)] * (2.0 * diss);
                z += self.hhr[(i, j)] * -diss;
                z += rhh * -diss;
                z += hr * noise;
                z += rh * noise;
                z += r[(i, j)] * (-2.0 * noise * m.h);
                self.next[(i, j)] = z;
            }
        }
        let clamp = clamp_tolerance(tols.clamp, params, m.v, dt, dw);
        repair_in_place(&mut self.next, &mut self.factor, tols, clamp)?;
        core::mem::swap(rho.matrix_mut(), &mut self.next);
        Ok(())
    }
}

/// One Euler–Maruyama step of the stochastic master equation, followed by
/// hermitization, trace renormalization and PSD clamping.
pub fn sme_step(
    rho: &DensityMatrix,
    h: &HermitianOperator,
    params: &ReductionParams,
    dt: f64,
    dw: f64,
    tols: &ToleranceSet,
) -> Result<DensityMatrix> {
    h.matrix().require_dim(rho.dim())?;
    let (next, m) = sme_increment(rho.matrix(), h.matrix(), params, dt, dw);
    repair_state(next, tols, clamp_tolerance(tols.clamp, params, m.v, dt, dw))
}

/// Drives the SME over `grid`, calling `observe(k, state, moments, xi, w)`
/// at every grid point including `k = 0`. `increment(k, moments)` supplies
/// the noise for step `k` given the moments at its left end.
///
/// `xi` accumulates `sigma H_t dt + dW` (left point), the information
/// process implied by the path.
pub(crate) fn drive_sme(
    rho0: &DensityMatrix,
    h: &HermitianOperator,
    params: &ReductionParams,
    grid: &TimeGrid,
    tols: &ToleranceSet,
    mut increment: impl FnMut(usize, &StateMoments) -> f64,
    mut observe: impl FnMut(usize, &DensityMatrix, &StateMoments, f64, f64),
) -> Result<DensityMatrix> {
    h.matrix().require_dim(rho0.dim())?;
    let dt = grid.dt();
    let hm = h.matrix();
    let mut ws = SmeWorkspace::new(rho0.dim());
    let mut rho = rho0.clone();
    let mut m = ws.moments(&rho, hm);
    let (mut xi, mut w) = (0.0, 0.0);
    for k in 0..grid.n_steps() {
        observe(k, &rho, &m, xi, w);
        let dw = increment(k, &m);
        xi += params.sigma * m.h * dt + dw;
        w += dw;
        ws.step(&mut rho, hm, params, &m, dt, dw, tols).map_err(|e| e.at_step(k))?;
        m = ws.moments(&rho, hm);
    }
    observe(grid.n_steps(), &rho, &m, xi, w);
    Ok(rho)
}

/// Integrates the SME along `noise` and records the full trajectory.
pub fn simulate_sme(
    rho0: &DensityMatrix,
    spec: &SpectralDecomposition,
    params: &ReductionParams,
    grid: &TimeGrid,
    noise: &NoisePath,
    tols: &ToleranceSet,
) -> Result<Trajectory> {
    if noise.increments().len() != grid.n_steps() {
        return Err(Error::DimensionMismatch { expected: grid.n_steps(), actual: noise.increments().len() });
    }
    let mut traj = Trajectory::with_capacity(*grid, spec.n_levels());
    drive_sme(rho0, spec.operator(), params, grid, tols, |k, _| noise.increments()[k], |_, rho, m, xi, w| {
        traj.push(spec, rho.clone(), *m, xi, w)
    })?;
    Ok(traj)
}

/// A (normalized) pure state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(pub Vec<Complex64>);

impl StateVector {
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        let n = norm(&amplitudes);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::StepDivergence { step: 0, reason: StepFailure::ZeroNorm(n) });
        }
        Ok(Self(amplitudes.into_iter().map(|z| z / n).collect()))
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn projector(&self, tols: &ToleranceSet) -> Result<DensityMatrix> {
        DensityMatrix::pure(&self.0, tols)
    }
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Raw Euler–Maruyama update of the pure-state equation, not renormalized.
pub fn sse_increment(
    psi: &[Complex64],
    h: &ComplexMatrix,
    params: &ReductionParams,
    dt: f64,
    dw: f64,
) -> Vec<Complex64> {
    let h_psi = h.mul_vec(psi);
    let norm_sq: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
    let ht = psi.iter().zip(&h_psi).map(|(a, b)| (a.conj() * b).re).sum::<f64>() / norm_sq;
    let a_psi: Vec<Complex64> = h_psi.iter().zip(psi).map(|(hp, p)| hp - p * ht).collect();
    let h_a_psi = h.mul_vec(&a_psi);
    let s2 = params.sigma * params.sigma / 8.0;
    psi.iter()
        .enumerate()
        .map(|(i, &p)| {
            let a2 = h_a_psi[i] - a_psi[i] * ht;
            p + (Complex64::new(0.0, -1.0 / params.hbar) * h_psi[i] - a2 * s2) * dt
                + a_psi[i] * (0.5 * params.sigma * dw)
        })
        .collect()
}

/// One Euler–Maruyama step of the pure-state equation, renormalized.
pub fn sse_step(
    psi: &StateVector,
    h: &HermitianOperator,
    params: &ReductionParams,
    dt: f64,
    dw: f64,
) -> Result<StateVector> {
    h.matrix().require_dim(psi.0.len())?;
    let next = sse_increment(&psi.0, h.matrix(), params, dt, dw);
    if next.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::StepDivergence { step: 0, reason: StepFailure::NonFinite });
    }
    StateVector::new(next)
}

/// `-(i/hbar)[H, rho] + sigma^2/8 (2 H rho H - H^2 rho - rho H^2)`.
pub fn lindblad_rhs(rho_bar: &ComplexMatrix, h: &HermitianOperator, params: &ReductionParams) -> Result<ComplexMatrix> {
    h.matrix().require_dim(rho_bar.dim())?;
    Ok(lindblad_rhs_unchecked(rho_bar, h.matrix(), params))
}

fn lindblad_rhs_unchecked(rho: &ComplexMatrix, h: &ComplexMatrix, params: &ReductionParams) -> ComplexMatrix {
    let hr = h * rho;
    let rh = rho * h;
    let mut out = ComplexMatrix::zeros(rho.dim());
    let unitary = Complex64::new(0.0, -1.0 / params.hbar);
    out.axpy(unitary, &hr);
    out.axpy(-unitary, &rh);
    let diss = params.sigma * params.sigma / 8.0;
    out.axpy_real(2.0 * diss, &(&hr * h));
    out.axpy_real(-diss, &(h * &hr));
    out.axpy_real(-diss, &(&rh * h));
    out
}

/// Classical RK4 for the mean-state equation; returns the state at every
/// grid point. The trace is renormalized after each step.
pub fn integrate_lindblad(
    rho0: &DensityMatrix,
    h: &HermitianOperator,
    params: &ReductionParams,
    grid: &TimeGrid,
    tols: &ToleranceSet,
) -> Result<Vec<DensityMatrix>> {
    h.matrix().require_dim(rho0.dim())?;
    let hm = h.matrix();
    let dt = grid.dt();
    let mut path = Vec::with_capacity(grid.n_steps() + 1);
    let mut rho = rho0.matrix().clone();
    path.push(rho0.clone());
    for k in 0..grid.n_steps() {
        let k1 = lindblad_rhs_unchecked(&rho, hm, params);
        let k2 = lindblad_rhs_unchecked(&(&rho + &k1.scale_real(0.5 * dt)), hm, params);
        let k3 = lindblad_rhs_unchecked(&(&rho + &k2.scale_real(0.5 * dt)), hm, params);
        let k4 = lindblad_rhs_unchecked(&(&rho + &k3.scale_real(dt)), hm, params);
        rho.axpy_real(dt / 6.0, &k1);
        rho.axpy_real(dt / 3.0, &k2);
        rho.axpy_real(dt / 3.0, &k3);
        rho.axpy_real(dt / 6.0, &k4);
        let state = repair_state(rho.clone(), tols, tols.clamp).map_err(|e| e.at_step(k))?;
        rho = state.matrix().clone();
        path.push(state);
    }
    Ok(path)
}

/// Upper bound `V_0 / (1 + V_0 sigma^2 t)` on the mean energy variance.
pub fn variance_bound(v0: f64, sigma: f64, t: f64) -> f64 {
    v0 / (1.0 + v0 * sigma * sigma * t)
}
