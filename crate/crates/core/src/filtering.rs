//! The exact solution in terms of the information process
//! `xi_t = sigma * t * H + B_t`, where `H` is drawn from the initial level
//! distribution `p_r = tr(rho_0 P_r)` and `B` is an independent Brownian
//! motion.
//!
//! With `k_r = exp(-i E_r t / hbar + sigma E_r xi / 2 - sigma^2 E_r^2 t / 4)`
//! the conditional state is
//!
//! ```text
//! rho_t = sum_{n,m} k_n conj(k_m) P_n rho_0 P_m / sum_r |k_r|^2 p_r
//! ```
//!
//! Everything is evaluated in the log domain: for `sigma E xi` of a few
//! hundred the raw exponentials overflow.

use alloc::vec::Vec;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dynamics::TimeGrid;
use crate::numeric::{log_sum_exp, softmax_into};
use crate::spectral::SpectralDecomposition;
use crate::state::{validate_density, DensityMatrix};
use crate::matrix::polar;
use crate::{ComplexMatrix, Error, Result, ToleranceSet};

/// One sample of the information process on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationPath {
    pub grid: TimeGrid,
    /// Index of the sampled level.
    pub level: usize,
    /// Its energy, the value of the signal `H`.
    pub energy: f64,
    pub sigma: f64,
    /// Independent Brownian motion `B_t`, `b[0] = 0`.
    pub b: Vec<f64>,
    /// `xi[k] = sigma * t_k * energy + b[k]`.
    pub xi: Vec<f64>,
    pub seed: Option<u64>,
}

impl InformationPath {
    /// Builds the path from a given Brownian motion `b` (`b[0]` must be 0).
    pub fn from_brownian(
        level: usize,
        spec: &SpectralDecomposition,
        sigma: f64,
        grid: &TimeGrid,
        b: Vec<f64>,
    ) -> Result<Self> {
        let energy = spec.level(level)?.energy;
        if b.len() != grid.n_steps() + 1 {
            return Err(Error::DimensionMismatch { expected: grid.n_steps() + 1, actual: b.len() });
        }
        if b.iter().any(|x| !x.is_finite()) || b[0] != 0.0 {
            return Err(Error::InvalidParameter { name: "b", reason: "must be finite and start at 0" });
        }
        let xi = b.iter().enumerate().map(|(k, &bk)| sigma * grid.time(k) * energy + bk).collect();
        Ok(Self { grid: *grid, level, energy, sigma, b, xi, seed: None })
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }
}

/// Draws a level index with probability `p_r = tr(rho_0 P_r)`.
pub fn sample_terminal_energy<R: Rng + ?Sized>(
    rho0: &DensityMatrix,
    spec: &SpectralDecomposition,
    rng: &mut R,
    tols: &ToleranceSet,
) -> Result<usize> {
    rho0.matrix().require_dim(spec.dim())?;
    let p = spec.probabilities(rho0.matrix());
    sample_categorical(&p, rng, tols.luders_floor)
}

/// Categorical draw with weights `weights` (renormalized). Weights below
/// `floor` are never selected unless all are, which is an error.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R, floor: f64) -> Result<usize> {
    let clean: Vec<f64> = weights.iter().map(|&w| if w >= floor { w } else { 0.0 }).collect();
    let total: f64 = clean.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateDistribution { floor });
    }
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (r, &w) in clean.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        acc += w;
        last = r;
        if u < acc {
            return Ok(r);
        }
    }
    Ok(last)
}

/// Draws `B` with independent `N(0, dt)` increments and forms `xi` for the
/// given level.
pub fn make_information_path<R: Rng + ?Sized>(
    level: usize,
    spec: &SpectralDecomposition,
    sigma: f64,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<InformationPath> {
    let sd = grid.dt().sqrt();
    let mut b = Vec::with_capacity(grid.n_steps() + 1);
    let mut acc = 0.0;
    b.push(acc);
    for _ in 0..grid.n_steps() {
        let z: f64 = StandardNormal.sample(rng);
        acc += z * sd;
        b.push(acc);
    }
    InformationPath::from_brownian(level, spec, sigma, grid, b)
}

impl InformationPath {
    /// Samples the level from `rho0` and the noise from a ChaCha8 stream.
    pub fn from_seed(
        rho0: &DensityMatrix,
        spec: &SpectralDecomposition,
        sigma: f64,
        grid: &TimeGrid,
        seed: u64,
        tols: &ToleranceSet,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let level = sample_terminal_energy(rho0, spec, &mut rng, tols)?;
        let mut path = make_information_path(level, spec, sigma, grid, &mut rng)?;
        path.seed = Some(seed);
        Ok(path)
    }
}

/// Posterior level weights given `xi_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterWeights {
    /// `log p_r + sigma E_r xi - sigma^2 E_r^2 t / 2`.
    pub log_weights: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// `log sum_r exp(log_weights[r])`.
    pub log_normalizer: f64,
}

/// Decoherence potential of one level pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiValue {
    /// `Phi_nm,t > 0`.
    pub phi: f64,
    /// `Phi_nm,t * exp(sigma^2 (E_n - E_m)^2 t / 8)`, a martingale.
    pub pi: f64,
    /// `exp(-i (E_n - E_m) t / hbar)`.
    pub phase: Complex64,
}

/// Precomputed level data for repeated closed-form evaluations with one
/// initial state.
#[derive(Debug, Clone)]
pub struct ClosedForm {
    energies: Vec<f64>,
    probabilities: Vec<f64>,
    log_probabilities: Vec<f64>,
    /// `P_n rho_0 P_m`, row-major over `(n, m)`.
    blocks: Vec<ComplexMatrix>,
    rho0: DensityMatrix,
    sigma: f64,
    hbar: f64,
}

impl ClosedForm {
    pub fn new(rho0: &DensityMatrix, spec: &SpectralDecomposition, sigma: f64, hbar: f64) -> Result<Self> {
        rho0.matrix().require_dim(spec.dim())?;
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidParameter { name: "sigma", reason: "must be finite and >= 0" });
        }
        if !(hbar.is_finite() && hbar > 0.0) {
            return Err(Error::InvalidParameter { name: "hbar", reason: "must be finite and > 0" });
        }
        let d = spec.n_levels();
        let probabilities: Vec<f64> = spec.probabilities(rho0.matrix()).into_iter().map(|p| p.max(0.0)).collect();
        let log_probabilities = probabilities.iter().map(|&p| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY }).collect();
        let mut blocks = Vec::with_capacity(d * d);
        for n in 0..d {
            for m in 0..d {
                blocks.push(spec.block(rho0.matrix(), n, m));
            }
        }
        Ok(Self {
            energies: spec.energies(),
            probabilities,
            log_probabilities,
            blocks,
            rho0: rho0.clone(),
            sigma,
            hbar,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// `p_r = tr(rho_0 P_r)`.
    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    fn block(&self, n: usize, m: usize) -> &ComplexMatrix {
        &self.blocks[n * self.n_levels() + m]
    }

    fn check_time(t: f64, xi: f64) -> Result<()> {
        if !(t.is_finite() && xi.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        if t < 0.0 {
            return Err(Error::InvalidParameter { name: "t", reason: "must be >= 0" });
        }
        Ok(())
    }

    /// `sigma E_r xi - sigma^2 E_r^2 t / 2` for every level, into `out`.
    pub fn log_likelihoods_into(&self, t: f64, xi: f64, out: &mut [f64]) {
        let s = self.sigma;
        for (o, &e) in out.iter_mut().zip(&self.energies) {
            *o = s * e * xi - 0.5 * s * s * e * e * t;
        }
    }

    pub fn weights(&self, t: f64, xi: f64) -> Result<FilterWeights> {
        Self::check_time(t, xi)?;
        let mut log_weights = alloc::vec![0.0; self.n_levels()];
        self.log_likelihoods_into(t, xi, &mut log_weights);
        for (l, lp) in log_weights.iter_mut().zip(&self.log_probabilities) {
            *l += lp;
        }
        let mut probabilities = alloc::vec![0.0; self.n_levels()];
        let log_normalizer = softmax_into(&log_weights, &mut probabilities);
        if !log_normalizer.is_finite() {
            return Err(Error::NonFiniteInput);
        }
        Ok(FilterWeights { log_weights, probabilities, log_normalizer })
    }

    /// `sum_r pi_r(t) E_r`.
    pub fn energy(&self, t: f64, xi: f64) -> Result<f64> {
        let w = self.weights(t, xi)?;
        Ok(w.probabilities.iter().zip(&self.energies).map(|(p, e)| p * e).sum())
    }

    /// `K_t rho_0 K_t^dagger / tr(...)` with `K_t = sum_r k_r P_r`, scaled so
    /// that the largest weighted `|k_r|^2 p_r` is 1.
    pub fn state_matrix(&self, t: f64, xi: f64) -> Result<ComplexMatrix> {
        let mut out = ComplexMatrix::zeros(self.rho0.dim());
        self.state_into(t, xi, &mut out, &mut Vec::new())?;
        Ok(out)
    }

    /// [`Self::state_matrix`] written into `out`, summed blockwise as
    /// `sum_nm k_n conj(k_m) P_n rho_0 P_m`. `coeffs` is scratch.
    pub(crate) fn state_into(&self, t: f64, xi: f64, out: &mut ComplexMatrix, coeffs: &mut Vec<Complex64>) -> Result<()> {
        Self::check_time(t, xi)?;
        let s = self.sigma;
        let half_log_mag = |e: f64| 0.5 * s * e * xi - 0.25 * s * s * e * e * t;
        let shift = self
            .energies
            .iter()
            .zip(&self.log_probabilities)
            .filter(|(_, lp)| lp.is_finite())
            .map(|(&e, lp)| half_log_mag(e) + 0.5 * lp)
            .fold(f64::NEG_INFINITY, f64::max);
        if !shift.is_finite() {
            return Err(Error::NonFiniteInput);
        }
        coeffs.clear();
        for (r, &e) in self.energies.iter().enumerate() {
            if self.probabilities[r] == 0.0 {
                coeffs.push(Complex64::new(0.0, 0.0));
            } else {
                coeffs.push(polar((half_log_mag(e) - shift).exp(), -e * t / self.hbar));
            }
        }
        let d = self.n_levels();
        out.fill_zero();
        for n in 0..d {
            for m in 0..d {
                let c = coeffs[n] * coeffs[m].conj();
                if c.re != 0.0 || c.im != 0.0 {
                    out.axpy(c, &self.blocks[n * d + m]);
                }
            }
        }
        let trace = out.trace().re;
        if !(trace > 0.0 && trace.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        out.scale_real_in_place(1.0 / trace);
        out.hermitize_in_place();
        Ok(())
    }

    pub fn state(&self, t: f64, xi: f64, tols: &ToleranceSet) -> Result<DensityMatrix> {
        validate_density(self.state_matrix(t, xi)?, tols)
    }

    /// `Phi_nm,t` and its companions for `n != m`.
    pub fn phi(&self, n: usize, m: usize, t: f64, xi: f64) -> Result<PhiValue> {
        let d = self.n_levels();
        for r in [n, m] {
            if r >= d {
                return Err(Error::LevelOutOfRange { level: r, levels: d });
            }
        }
        if n == m {
            return Err(Error::SameLevel { level: n });
        }
        let w = self.weights(t, xi)?;
        Ok(self.phi_from_normalizer(n, m, t, xi, w.log_normalizer))
    }

    pub(crate) fn phi_from_normalizer(&self, n: usize, m: usize, t: f64, xi: f64, log_normalizer: f64) -> PhiValue {
        let s = self.sigma;
        let (en, em) = (self.energies[n], self.energies[m]);
        let log_phi = 0.5 * s * (en + em) * xi - 0.25 * s * s * (en * en + em * em) * t - log_normalizer;
        let de = en - em;
        PhiValue {
            phi: log_phi.exp(),
            pi: (log_phi + 0.125 * s * s * de * de * t).exp(),
            phase: polar(1.0, -de * t / self.hbar),
        }
    }

    /// Sum of posterior-weighted Lüders states plus the coherence blocks
    /// damped by `Phi_nm`.
    pub fn decomposition_matrix(&self, t: f64, xi: f64) -> Result<ComplexMatrix> {
        let w = self.weights(t, xi)?;
        let d = self.n_levels();
        let mut out = ComplexMatrix::zeros(self.rho0.dim());
        for n in 0..d {
            if self.probabilities[n] > 0.0 {
                out.axpy_real(w.probabilities[n] / self.probabilities[n], self.block(n, n));
            }
            for m in 0..d {
                if m == n || self.probabilities[n] == 0.0 || self.probabilities[m] == 0.0 {
                    continue;
                }
                let phi = self.phi_from_normalizer(n, m, t, xi, w.log_normalizer);
                out.axpy(phi.phase * phi.phi, self.block(n, m));
            }
        }
        Ok(out)
    }
}

pub fn filter_weights(
    rho0: &DensityMatrix,
    spec: &SpectralDecomposition,
    sigma: f64,
    t: f64,
    xi: f64,
) -> Result<FilterWeights> {
    ClosedForm::new(rho0, spec, sigma, 1.0)?.weights(t, xi)
}

pub fn closed_form_state(
    rho0: &DensityMatrix,
    spec: &SpectralDecomposition,
    sigma: f64,
    hbar: f64,
    t: f64,
    xi: f64,
    tols: &ToleranceSet,
) -> Result<DensityMatrix> {
    ClosedForm::new(rho0, spec, sigma, hbar)?.state(t, xi, tols)
}

/// Conditional mean energy `H_t = sum_r pi_r(t) E_r`.
pub fn energy_estimate(rho0: &DensityMatrix, spec: &SpectralDecomposition, sigma: f64, t: f64, xi: f64) -> Result<f64> {
    ClosedForm::new(rho0, spec, sigma, 1.0)?.energy(t, xi)
}

/// `W_k = xi_k - sigma * sum_{j<k} H_{t_j} dt`.
pub fn recovered_brownian(
    path: &InformationPath,
    rho0: &DensityMatrix,
    spec: &SpectralDecomposition,
    sigma: f64,
) -> Result<Vec<f64>> {
    let cf = ClosedForm::new(rho0, spec, sigma, 1.0)?;
    let dt = path.grid.dt();
    let mut w = Vec::with_capacity(path.xi.len());
    let mut integral = 0.0;
    for (k, &xi) in path.xi.iter().enumerate() {
        w.push(xi - sigma * integral);
        integral += cf.energy(path.grid.time(k), xi)? * dt;
    }
    Ok(w)
}

#[allow(clippy::too_many_arguments)]
pub fn phi_process(
    n: usize,
    m: usize,
    rho0: &DensityMatrix,
    spec: &SpectralDecomposition,
    sigma: f64,
    hbar: f64,
    t: f64,
    xi: f64,
) -> Result<PhiValue> {
    ClosedForm::new(rho0, spec, sigma, hbar)?.phi(n, m, t, xi)
}

/// Increasing process `A_t = rate * int_0^t Phi_s ds` for one level pair,
/// with `rate = sigma^2 (E_n - E_m)^2 / 8`.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeDDecomposition {
    pub rate: f64,
    pub a: Vec<f64>,
    /// `Phi_t + A_t`, the running estimate of `E_t[A_inf]`.
    pub conditional_limit: Vec<f64>,
}

/// Trapezoidal `A` for a `Phi` path sampled on `grid`.
pub fn type_d_decomposition(
    n: usize,
    m: usize,
    spec: &SpectralDecomposition,
    sigma: f64,
    grid: &TimeGrid,
    phi: &[f64],
) -> Result<TypeDDecomposition> {
    if n == m {
        return Err(Error::SameLevel { level: n });
    }
    let de = spec.level(n)?.energy - spec.level(m)?.energy;
    if phi.len() != grid.n_steps() + 1 {
        return Err(Error::DimensionMismatch { expected: grid.n_steps() + 1, actual: phi.len() });
    }
    let rate = 0.125 * sigma * sigma * de * de;
    let mut a = Vec::with_capacity(phi.len());
    let mut acc = 0.0;
    a.push(acc);
    for pair in phi.windows(2) {
        acc += rate * 0.5 * (pair[0] + pair[1]) * grid.dt();
        a.push(acc);
    }
    let conditional_limit = a.iter().zip(phi).map(|(a, p)| a + p).collect();
    Ok(TypeDDecomposition { rate, a, conditional_limit })
}

/// The state assembled from posterior weights, Lüders states and the
/// decoherence potentials. Equal to [`closed_form_state`] up to rounding.
pub fn state_decomposition(
    rho0: &DensityMatrix,
    spec: &SpectralDecomposition,
    sigma: f64,
    hbar: f64,
    t: f64,
    xi: f64,
    tols: &ToleranceSet,
) -> Result<DensityMatrix> {
    let m = ClosedForm::new(rho0, spec, sigma, hbar)?.decomposition_matrix(t, xi)?;
    validate_density(m.hermitized(), tols)
}

/// Log-normalizer of the weights, exposed for streaming callers that keep
/// their own per-level buffers.
pub(crate) fn log_normalizer(log_probabilities: &[f64], log_likelihoods: &[f64], scratch: &mut [f64]) -> f64 {
    for ((s, lp), ll) in scratch.iter_mut().zip(log_probabilities).zip(log_likelihoods) {
        *s = lp + ll;
    }
    log_sum_exp(scratch)
}

impl ClosedForm {
    pub(crate) fn log_probabilities(&self) -> &[f64] {
        &self.log_probabilities
    }
}
