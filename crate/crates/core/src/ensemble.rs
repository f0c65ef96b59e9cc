//! Seeded Monte Carlo ensembles and statistical verdicts.
//!
//! Paths are grouped into fixed chunks of [`CHUNK_SIZE`] consecutive indices.
//! Each chunk reduces into an [`EnsembleAccumulator`] and chunks are merged
//! in index order, so a summary depends only on the configuration and the
//! base seed, never on how chunks were scheduled.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dynamics::{drive_sme, integrate_lindblad, variance_bound, ReductionParams, TimeGrid};
use crate::filtering::{log_normalizer, sample_categorical, ClosedForm};
use crate::spectral::{luders_state, HermitianOperator, SpectralDecomposition};
use crate::state::{level_pairs, moments_of, DensityMatrix};
use crate::{ComplexMatrix, Error, Result, ToleranceSet};

/// Paths per reduction chunk.
pub const CHUNK_SIZE: usize = 64;

/// Independent ChaCha8 stream for path `path` under `base_seed`.
pub fn path_rng(base_seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(path);
    rng
}

/// Hamiltonian, initial state and coupling of one experiment.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: SpectralDecomposition,
    pub rho0: DensityMatrix,
    pub params: ReductionParams,
    pub tols: ToleranceSet,
}

impl Model {
    pub fn new(h: &HermitianOperator, rho0: DensityMatrix, params: ReductionParams, tols: ToleranceSet) -> Result<Self> {
        h.matrix().require_dim(rho0.dim())?;
        let spec = SpectralDecomposition::new(h, &tols)?;
        Ok(Self { spec, rho0, params, tols })
    }

    pub fn hamiltonian(&self) -> &HermitianOperator {
        self.spec.operator()
    }
}

/// Which solution the paths are generated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    Sde,
    ClosedForm,
    /// Closed form, plus the SDE driven by the recovered Brownian increments
    /// of the same path.
    Both,
}

impl Mode {
    pub fn kinds(self) -> &'static [PathKind] {
        match self {
            Mode::Sde => &[PathKind::Sde],
            Mode::ClosedForm => &[PathKind::ClosedForm],
            Mode::Both => &[PathKind::ClosedForm, PathKind::Sde],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Sde => "sde",
            Mode::ClosedForm => "closed-form",
            Mode::Both => "both",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sde" => Ok(Mode::Sde),
            "closed-form" => Ok(Mode::ClosedForm),
            "both" => Ok(Mode::Both),
            _ => Err(Error::InvalidParameter { name: "mode", reason: "expected sde, closed-form or both" }),
        }
    }
}

/// Origin of one family of sample paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PathKind {
    Sde,
    ClosedForm,
}

impl PathKind {
    pub fn name(self) -> &'static str {
        match self {
            PathKind::Sde => "sde",
            PathKind::ClosedForm => "closed-form",
        }
    }
}

/// Named statistical checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Check {
    Born,
    Martingales,
    Variance,
    Decoherence,
    Luders,
    Lindblad,
    Brownian,
    Potential,
}

impl Check {
    pub const ALL: [Check; 8] = [
        Check::Born,
        Check::Martingales,
        Check::Variance,
        Check::Decoherence,
        Check::Luders,
        Check::Lindblad,
        Check::Brownian,
        Check::Potential,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::Born => "born",
            Check::Martingales => "martingales",
            Check::Variance => "variance",
            Check::Decoherence => "decoherence",
            Check::Luders => "luders",
            Check::Lindblad => "lindblad",
            Check::Brownian => "brownian",
            Check::Potential => "potential",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Check {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Check::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or(Error::InvalidParameter { name: "checks", reason: "unknown check name" })
    }
}

/// Deliberate corruptions used as negative controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Fault {
    /// Doubles the signal drift of the information process: closed-form
    /// paths use `xi = 2 sigma t H + B`, SDE paths are driven by
    /// `dW + sigma H_t dt`.
    DoubledDrift,
    /// Samples the signal level with weights `p_r^2` instead of `p_r`.
    BiasedSampler,
}

/// Fixed thresholds that are not confidence bands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// Mean trace distance of the terminal state to its Lüders state.
    pub luders_distance: f64,
    pub luders_purity: f64,
    /// Terminal mean variance, relative to `(E_max - E_min)^2`.
    pub terminal_variance: f64,
    /// Relative error of a fitted decoherence rate.
    pub decoherence_relative: f64,
    /// Minimum `mean / stderr` of a point used in the decoherence fit.
    pub decoherence_snr: f64,
    /// Lower bound on every standard error used as a denominator.
    pub stderr_floor: f64,
    /// Absolute slack for deterministic reference curves.
    pub reference_slack: f64,
    /// `max_r pi_r > 1 - concentration` counts a path as collapsed.
    pub concentration: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            luders_distance: 1e-4,
            luders_purity: 1e-3,
            terminal_variance: 1e-6,
            decoherence_relative: 0.1,
            decoherence_snr: 10.0,
            stderr_floor: 1e-12,
            reference_slack: 1e-9,
            concentration: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub model: Model,
    pub n_paths: usize,
    pub base_seed: u64,
    pub grid: TimeGrid,
    /// Record every `record_stride`-th grid point. Must divide the step count.
    pub record_stride: usize,
    pub mode: Mode,
    pub checks: Vec<Check>,
    pub ci_multiplier: f64,
    pub fault: Option<Fault>,
    pub thresholds: Thresholds,
    /// Times for the mean-state comparison; empty means `t_max / 4`,
    /// `t_max / 2` and `t_max`.
    pub lindblad_times: Vec<f64>,
    /// Number of interior checkpoints used by the martingale check.
    pub martingale_checkpoints: usize,
}

impl EnsembleConfig {
    pub fn new(model: Model, n_paths: usize, base_seed: u64, grid: TimeGrid) -> Self {
        Self {
            model,
            n_paths,
            base_seed,
            grid,
            record_stride: 1,
            mode: Mode::ClosedForm,
            checks: Vec::new(),
            ci_multiplier: 3.0,
            fault: None,
            thresholds: Thresholds::default(),
            lindblad_times: Vec::new(),
            martingale_checkpoints: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::InvalidParameter { name: "n_paths", reason: "must be >= 1" });
        }
        if !self.checks.is_empty() && self.n_paths < 100 {
            return Err(Error::InvalidParameter { name: "n_paths", reason: "statistical checks need >= 100 paths" });
        }
        if self.record_stride == 0 || !self.grid.n_steps().is_multiple_of(self.record_stride) {
            return Err(Error::InvalidParameter {
                name: "record_stride",
                reason: "must be >= 1 and divide the number of steps",
            });
        }
        if !(self.ci_multiplier > 0.0 && self.ci_multiplier.is_finite()) {
            return Err(Error::InvalidParameter { name: "ci_multiplier", reason: "must be finite and > 0" });
        }
        if self.martingale_checkpoints == 0 {
            return Err(Error::InvalidParameter { name: "martingale_checkpoints", reason: "must be >= 1" });
        }
        Ok(())
    }

    pub fn n_records(&self) -> usize {
        self.grid.n_steps() / self.record_stride + 1
    }

    pub fn record_times(&self) -> Vec<f64> {
        (0..self.n_records()).map(|j| self.grid.time(j * self.record_stride)).collect()
    }
}

/// Streaming mean and variance (Welford), mergeable with Chan's update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Welford) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * self.n as f64 * other.n as f64 / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    /// `NaN` when empty.
    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }

    /// Unbiased sample variance, `NaN` below two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            f64::NAN
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    /// Standard error of the mean, `NaN` below two samples.
    pub fn stderr(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }
}

/// Column layout of the recorded per-time series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesLayout {
    pub levels: usize,
    pub dim: usize,
    pub pairs: Vec<(usize, usize)>,
}

impl SeriesLayout {
    pub const H: usize = 0;
    pub const V: usize = 1;
    pub const PURITY: usize = 2;
    pub const W: usize = 3;

    fn new(levels: usize, dim: usize) -> Self {
        Self { levels, dim, pairs: level_pairs(levels) }
    }

    pub fn pi(&self, r: usize) -> usize {
        4 + r
    }
    pub fn phi(&self, pair: usize) -> usize {
        4 + self.levels + pair
    }
    pub fn pi_martingale(&self, pair: usize) -> usize {
        4 + self.levels + self.pairs.len() + pair
    }
    pub fn potential(&self, pair: usize) -> usize {
        4 + self.levels + 2 * self.pairs.len() + pair
    }
    pub fn rho_re(&self, r: usize, c: usize) -> usize {
        4 + self.levels + 3 * self.pairs.len() + r * self.dim + c
    }
    pub fn rho_im(&self, r: usize, c: usize) -> usize {
        self.rho_re(r, c) + self.dim * self.dim
    }
    pub fn width(&self) -> usize {
        4 + self.levels + 3 * self.pairs.len() + 2 * self.dim * self.dim
    }

    /// Column names, levels and matrix indices 1-based.
    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["H", "V", "purity", "W"].iter().map(|s| s.to_string()).collect();
        names.extend((0..self.levels).map(|r| format!("pi_{}", r + 1)));
        for prefix in ["phi", "Pi", "phi_plus_A"] {
            names.extend(self.pairs.iter().map(|(n, m)| format!("{prefix}_{}_{}", n + 1, m + 1)));
        }
        for part in ["re", "im"] {
            for r in 0..self.dim {
                for c in 0..self.dim {
                    names.push(format!("rho_{part}_{}_{}", r + 1, c + 1));
                }
            }
        }
        names
    }
}

/// Accumulated statistics of one family of paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeAccumulator {
    width: usize,
    series: Vec<Welford>,
    born_counts: Vec<u64>,
    sampled_counts: Vec<u64>,
    terminal_energy: Welford,
    terminal_energy_sq_dev: Welford,
    luders_distance: Vec<Welford>,
    luders_max_distance: Vec<f64>,
    luders_purity: Vec<Welford>,
    concentrated: u64,
    terminal_w: Welford,
    terminal_w_sq: Welford,
    lag1: Welford,
    min_increment_a: f64,
}

impl ModeAccumulator {
    fn new(layout: &SeriesLayout, n_records: usize) -> Self {
        let d = layout.levels;
        Self {
            width: layout.width(),
            series: vec![Welford::default(); n_records * layout.width()],
            born_counts: vec![0; d],
            sampled_counts: vec![0; d],
            terminal_energy: Welford::default(),
            terminal_energy_sq_dev: Welford::default(),
            luders_distance: vec![Welford::default(); d],
            luders_max_distance: vec![0.0; d],
            luders_purity: vec![Welford::default(); d],
            concentrated: 0,
            terminal_w: Welford::default(),
            terminal_w_sq: Welford::default(),
            lag1: Welford::default(),
            min_increment_a: f64::INFINITY,
        }
    }

    fn merge(&mut self, other: &ModeAccumulator) {
        for (a, b) in self.series.iter_mut().zip(&other.series) {
            a.merge(b);
        }
        for (a, b) in self.born_counts.iter_mut().zip(&other.born_counts) {
            *a += b;
        }
        for (a, b) in self.sampled_counts.iter_mut().zip(&other.sampled_counts) {
            *a += b;
        }
        self.terminal_energy.merge(&other.terminal_energy);
        self.terminal_energy_sq_dev.merge(&other.terminal_energy_sq_dev);
        for r in 0..self.luders_distance.len() {
            self.luders_distance[r].merge(&other.luders_distance[r]);
            self.luders_purity[r].merge(&other.luders_purity[r]);
            self.luders_max_distance[r] = self.luders_max_distance[r].max(other.luders_max_distance[r]);
        }
        self.concentrated += other.concentrated;
        self.terminal_w.merge(&other.terminal_w);
        self.terminal_w_sq.merge(&other.terminal_w_sq);
        self.lag1.merge(&other.lag1);
        self.min_increment_a = self.min_increment_a.min(other.min_increment_a);
    }
}

/// Partial reduction over a contiguous range of paths.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleAccumulator {
    paths: u64,
    modes: Vec<(PathKind, ModeAccumulator)>,
    oracle_gap: Welford,
    oracle_gap_max: f64,
}

impl EnsembleAccumulator {
    /// Folds `other` into `self`. Merging must follow path order for
    /// bit-identical results.
    pub fn merge(&mut self, other: &EnsembleAccumulator) {
        self.paths += other.paths;
        for ((_, a), (_, b)) in self.modes.iter_mut().zip(&other.modes) {
            a.merge(b);
        }
        self.oracle_gap.merge(&other.oracle_gap);
        self.oracle_gap_max = self.oracle_gap_max.max(other.oracle_gap_max);
    }

    pub fn paths(&self) -> u64 {
        self.paths
    }

    fn mode_mut(&mut self, kind: PathKind) -> &mut ModeAccumulator {
        &mut self.modes.iter_mut().find(|(k, _)| *k == kind).expect("mode present").1
    }
}

/// Model data shared by all paths.
#[derive(Debug, Clone)]
struct Prepared {
    closed_form: ClosedForm,
    layout: SeriesLayout,
    energies: Vec<f64>,
    probabilities: Vec<f64>,
    sampling_weights: Vec<f64>,
    pair_rates: Vec<f64>,
    luders: Vec<Option<DensityMatrix>>,
    h0: f64,
    v0: f64,
}

/// A validated configuration ready to run.
#[derive(Debug, Clone)]
pub struct Ensemble {
    cfg: EnsembleConfig,
    prep: Prepared,
}

impl Ensemble {
    pub fn new(cfg: EnsembleConfig) -> Result<Self> {
        cfg.validate()?;
        let model = &cfg.model;
        let spec = &model.spec;
        let closed_form = ClosedForm::new(&model.rho0, spec, model.params.sigma, model.params.hbar)?;
        let energies = spec.energies();
        let probabilities = closed_form.probabilities().to_vec();
        let sampling_weights = match cfg.fault {
            Some(Fault::BiasedSampler) => probabilities.iter().map(|p| p * p).collect(),
            _ => probabilities.clone(),
        };
        let layout = SeriesLayout::new(spec.n_levels(), spec.dim());
        let s2 = model.params.sigma * model.params.sigma;
        let pair_rates = layout
            .pairs
            .iter()
            .map(|&(n, m)| 0.125 * s2 * (energies[n] - energies[m]).powi(2))
            .collect();
        let luders = (0..spec.n_levels()).map(|r| luders_state(&model.rho0, spec, r, &model.tols).ok()).collect();
        let m0 = moments_of(model.rho0.matrix(), model.hamiltonian().matrix());
        Ok(Self {
            prep: Prepared {
                closed_form,
                layout,
                energies,
                probabilities,
                sampling_weights,
                pair_rates,
                luders,
                h0: m0.h,
                v0: m0.v,
            },
            cfg,
        })
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &SeriesLayout {
        &self.prep.layout
    }

    /// Number of [`CHUNK_SIZE`] chunks covering all paths.
    pub fn n_chunks(&self) -> usize {
        self.cfg.n_paths.div_ceil(CHUNK_SIZE)
    }

    pub fn chunk_range(&self, chunk: usize) -> Range<usize> {
        let start = chunk * CHUNK_SIZE;
        start..(start + CHUNK_SIZE).min(self.cfg.n_paths)
    }

    pub fn empty_accumulator(&self) -> EnsembleAccumulator {
        let n_records = self.cfg.n_records();
        EnsembleAccumulator {
            paths: 0,
            modes: self
                .cfg
                .mode
                .kinds()
                .iter()
                .map(|&k| (k, ModeAccumulator::new(&self.prep.layout, n_records)))
                .collect(),
            oracle_gap: Welford::default(),
            oracle_gap_max: 0.0,
        }
    }

    /// Runs paths `range` in order into a fresh accumulator.
    pub fn run_paths(&self, range: Range<usize>) -> Result<EnsembleAccumulator> {
        let mut acc = self.empty_accumulator();
        for path in range {
            self.run_path(path, &mut acc)
                .map_err(|e| Error::PathFailure { path, source: alloc::boxed::Box::new(e) })?;
            acc.paths += 1;
        }
        Ok(acc)
    }

    pub fn run_chunk(&self, chunk: usize) -> Result<EnsembleAccumulator> {
        self.run_paths(self.chunk_range(chunk))
    }

    fn run_path(&self, path: usize, acc: &mut EnsembleAccumulator) -> Result<()> {
        let mut rng = path_rng(self.cfg.base_seed, path as u64);
        match self.cfg.mode {
            Mode::ClosedForm => {
                self.closed_form_path(&mut rng, acc.mode_mut(PathKind::ClosedForm), false)?;
            }
            Mode::Sde => {
                let sd = self.cfg.grid.dt().sqrt();
                let increments: Vec<f64> = (0..self.cfg.grid.n_steps())
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * sd
                    })
                    .collect();
                self.sde_path(&increments, None, acc.mode_mut(PathKind::Sde))?;
            }
            Mode::Both => {
                let shared = self.closed_form_path(&mut rng, acc.mode_mut(PathKind::ClosedForm), true)?;
                let shared = shared.expect("requested");
                let gap = self.sde_path(&shared.increments, Some(&shared.states), acc.mode_mut(PathKind::Sde))?;
                acc.oracle_gap.push(gap);
                acc.oracle_gap_max = acc.oracle_gap_max.max(gap);
            }
        }
        Ok(())
    }

    fn closed_form_path(
        &self,
        rng: &mut ChaCha8Rng,
        acc: &mut ModeAccumulator,
        share: bool,
    ) -> Result<Option<SharedPath>> {
        let prep = &self.prep;
        let grid = &self.cfg.grid;
        let sigma = self.cfg.model.params.sigma;
        let dt = grid.dt();
        let level = sample_categorical(&prep.sampling_weights, rng, self.cfg.model.tols.luders_floor)?;
        let signal = match self.cfg.fault {
            Some(Fault::DoubledDrift) => 2.0 * sigma * prep.energies[level],
            _ => sigma * prep.energies[level],
        };
        let sd = dt.sqrt();
        let d = prep.energies.len();
        let mut ll = vec![0.0; d];
        let mut scratch = vec![0.0; d];
        let mut pi = vec![0.0; d];
        let mut state = ComplexMatrix::zeros(prep.layout.dim);
        let mut coeffs = Vec::with_capacity(d);
        let mut rec = Recorder::new(prep, self.cfg.record_stride, dt);
        let mut shared = share.then(|| SharedPath {
            increments: Vec::with_capacity(grid.n_steps()),
            states: Vec::with_capacity(self.cfg.n_records()),
        });
        let (mut b, mut integral, mut prev_w) = (0.0, 0.0, 0.0);
        for k in 0..=grid.n_steps() {
            let t = grid.time(k);
            let xi = signal * t + b;
            prep.closed_form.log_likelihoods_into(t, xi, &mut ll);
            let lse = log_normalizer(prep.closed_form.log_probabilities(), &ll, &mut scratch);
            for (p, s) in pi.iter_mut().zip(&scratch) {
                *p = (s - lse).exp();
            }
            let h: f64 = pi.iter().zip(&prep.energies).map(|(p, e)| p * e).sum();
            let w = xi - sigma * integral;
            if let Some(s) = shared.as_mut() {
                if k > 0 {
                    s.increments.push(w - prev_w);
                }
            }
            prev_w = w;
            rec.advance(k, t, &ll, lse, w);
            if k % self.cfg.record_stride == 0 {
                let v: f64 = pi.iter().zip(&prep.energies).map(|(p, e)| p * (e - h) * (e - h)).sum();
                prep.closed_form.state_into(t, xi, &mut state, &mut coeffs)?;
                rec.record(acc, k / self.cfg.record_stride, h, v, &pi, &state);
                if let Some(s) = shared.as_mut() {
                    s.states.push(state.clone());
                }
            }
            if k < grid.n_steps() {
                integral += h * dt;
                let z: f64 = StandardNormal.sample(rng);
                b += z * sd;
            }
        }
        acc.sampled_counts[level] += 1;
        rec.finish(acc, level, &pi, &state, &self.cfg.thresholds)?;
        Ok(shared)
    }

    /// Runs the SDE with `increments`; returns the largest entrywise gap to
    /// `reference` states at record points (0 without a reference).
    fn sde_path(
        &self,
        increments: &[f64],
        reference: Option<&[ComplexMatrix]>,
        acc: &mut ModeAccumulator,
    ) -> Result<f64> {
        let prep = &self.prep;
        let model = &self.cfg.model;
        let grid = &self.cfg.grid;
        let sigma = model.params.sigma;
        let dt = grid.dt();
        let stride = self.cfg.record_stride;
        let doubled = self.cfg.fault == Some(Fault::DoubledDrift);
        let d = prep.energies.len();
        let mut ll = vec![0.0; d];
        let mut scratch = vec![0.0; d];
        let mut rec = Recorder::new(prep, stride, dt);
        let mut gap = 0.0f64;
        let mut last_pi = vec![0.0; d];
        let last = drive_sme(
            &model.rho0,
            model.hamiltonian(),
            &model.params,
            grid,
            &model.tols,
            |k, m| if doubled { increments[k] + sigma * m.h * dt } else { increments[k] },
            |k, rho, m, xi, w| {
                let t = grid.time(k);
                prep.closed_form.log_likelihoods_into(t, xi, &mut ll);
                let lse = log_normalizer(prep.closed_form.log_probabilities(), &ll, &mut scratch);
                rec.advance(k, t, &ll, lse, w);
                if k % stride == 0 {
                    let pi = model.spec.probabilities(rho.matrix());
                    rec.record(acc, k / stride, m.h, m.v, &pi, rho.matrix());
                    if let Some(refs) = reference {
                        gap = gap.max(rho.matrix().max_abs_diff(&refs[k / stride]));
                    }
                    last_pi = pi;
                }
            },
        )?;
        let level = argmax(&last_pi);
        rec.finish(acc, level, &last_pi, last.matrix(), &self.cfg.thresholds)?;
        Ok(gap)
    }

    /// Turns a complete accumulator into a summary and runs the configured
    /// checks.
    pub fn finish(&self, acc: EnsembleAccumulator) -> Result<EnsembleSummary> {
        let prep = &self.prep;
        let times = self.cfg.record_times();
        let modes: Vec<ModeSummary> = acc
            .modes
            .iter()
            .map(|(kind, m)| summarize_mode(*kind, m, acc.paths, &times, prep))
            .collect();
        let oracle_gap = (self.cfg.mode == Mode::Both).then(|| OracleGap {
            mean: acc.oracle_gap.mean(),
            stderr: acc.oracle_gap.stderr(),
            max: acc.oracle_gap_max,
        });
        let mut summary = EnsembleSummary {
            n_paths: acc.paths,
            base_seed: self.cfg.base_seed,
            energies: prep.energies.clone(),
            probabilities: prep.probabilities.clone(),
            h0: prep.h0,
            v0: prep.v0,
            columns: prep.layout.names(),
            layout: prep.layout.clone(),
            modes,
            oracle_gap,
            verdicts: Vec::new(),
        };
        let mut verdicts = Vec::new();
        for mode in &summary.modes {
            for &check in &self.cfg.checks {
                verdicts.push(run_check(check, mode, &summary, &self.cfg)?);
            }
        }
        summary.verdicts = verdicts;
        Ok(summary)
    }
}

struct SharedPath {
    increments: Vec<f64>,
    states: Vec<ComplexMatrix>,
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-path bookkeeping shared by both path kinds.
struct Recorder<'a> {
    prep: &'a Prepared,
    stride: usize,
    dt: f64,
    phi: Vec<f64>,
    a: Vec<f64>,
    w_now: f64,
    last_record_w: f64,
    last_increment: Option<f64>,
    lag_sum: f64,
    lag_terms: usize,
}

impl<'a> Recorder<'a> {
    fn new(prep: &'a Prepared, stride: usize, dt: f64) -> Self {
        let p = prep.layout.pairs.len();
        Self {
            prep,
            stride,
            dt,
            phi: vec![0.0; p],
            a: vec![0.0; p],
            w_now: 0.0,
            last_record_w: 0.0,
            last_increment: None,
            lag_sum: 0.0,
            lag_terms: 0,
        }
    }

    /// Updates the decoherence potentials and the trapezoidal `A` at grid
    /// point `k`. `ll` are the per-level log-likelihoods and `lse` the log
    /// normalizer at that point.
    fn advance(&mut self, k: usize, _t: f64, ll: &[f64], lse: f64, w: f64) {
        for (i, &(n, m)) in self.prep.layout.pairs.iter().enumerate() {
            let phi = (0.5 * (ll[n] + ll[m]) - lse).exp();
            if k > 0 {
                self.a[i] += self.prep.pair_rates[i] * 0.5 * (self.phi[i] + phi) * self.dt;
            }
            self.phi[i] = phi;
        }
        self.w_now = w;
    }

    fn record(&mut self, acc: &mut ModeAccumulator, j: usize, h: f64, v: f64, pi: &[f64], state: &ComplexMatrix) {
        let layout = &self.prep.layout;
        let t = (j * self.stride) as f64 * self.dt;
        let row = &mut acc.series[j * acc.width..(j + 1) * acc.width];
        row[SeriesLayout::H].push(h);
        row[SeriesLayout::V].push(v);
        row[SeriesLayout::PURITY].push(state.trace_of_product(state).re);
        row[SeriesLayout::W].push(self.w_now);
        for (r, &p) in pi.iter().enumerate() {
            row[layout.pi(r)].push(p);
        }
        for i in 0..layout.pairs.len() {
            row[layout.phi(i)].push(self.phi[i]);
            row[layout.pi_martingale(i)].push(self.phi[i] * (self.prep.pair_rates[i] * t).exp());
            row[layout.potential(i)].push(self.phi[i] + self.a[i]);
        }
        for r in 0..layout.dim {
            for c in 0..layout.dim {
                let z = state[(r, c)];
                row[layout.rho_re(r, c)].push(z.re);
                row[layout.rho_im(r, c)].push(z.im);
            }
        }
        if j > 0 {
            let inc = self.w_now - self.last_record_w;
            if let Some(prev) = self.last_increment {
                self.lag_sum += prev * inc;
                self.lag_terms += 1;
            }
            self.last_increment = Some(inc);
        }
        self.last_record_w = self.w_now;
    }

    fn finish(
        self,
        acc: &mut ModeAccumulator,
        level: usize,
        pi: &[f64],
        state: &ComplexMatrix,
        thresholds: &Thresholds,
    ) -> Result<()> {
        let prep = self.prep;
        let born = argmax(pi);
        acc.born_counts[born] += 1;
        if pi[born] > 1.0 - thresholds.concentration {
            acc.concentrated += 1;
        }
        let h: f64 = pi.iter().zip(&prep.energies).map(|(p, e)| p * e).sum();
        acc.terminal_energy.push(h);
        acc.terminal_energy_sq_dev.push((h - prep.h0) * (h - prep.h0));
        if let Some(target) = &prep.luders[level] {
            let state = DensityMatrix::from_trusted(state.clone());
            let distance = state.trace_distance(target)?;
            acc.luders_distance[level].push(distance);
            acc.luders_max_distance[level] = acc.luders_max_distance[level].max(distance);
            acc.luders_purity[level].push(state.purity());
        }
        acc.terminal_w.push(self.w_now);
        acc.terminal_w_sq.push(self.w_now * self.w_now);
        if self.lag_terms > 0 {
            let record_dt = self.stride as f64 * self.dt;
            acc.lag1.push(self.lag_sum / (self.lag_terms as f64 * record_dt));
        }
        for &a in &self.a {
            acc.min_increment_a = acc.min_increment_a.min(a);
        }
        Ok(())
    }
}

/// Per-path largest entrywise gap between the SDE state and the closed-form
/// state at record points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleGap {
    pub mean: f64,
    pub stderr: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalEnergy {
    pub mean: f64,
    pub stderr: f64,
    pub variance: f64,
    /// Standard error of the squared deviation from the initial mean energy.
    pub variance_stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LudersStats {
    pub level: usize,
    pub count: u64,
    pub mean_distance: f64,
    pub max_distance: f64,
    pub mean_purity: f64,
    pub target_purity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrownianStats {
    pub terminal_mean: f64,
    pub terminal_stderr: f64,
    pub terminal_sq_mean: f64,
    pub terminal_sq_stderr: f64,
    pub lag1_mean: f64,
    pub lag1_stderr: f64,
}

/// Summary of one path family.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSummary {
    pub kind: PathKind,
    pub n_paths: u64,
    pub times: Vec<f64>,
    /// `times.len() x width`, row-major.
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub width: usize,
    /// `false` when fewer than two paths were run.
    pub stderr_defined: bool,
    pub born_counts: Vec<u64>,
    pub born_frequencies: Vec<f64>,
    /// Counts of the sampled signal level (closed form only).
    pub sampled_counts: Vec<u64>,
    pub terminal_energy: TerminalEnergy,
    pub luders: Vec<LudersStats>,
    pub concentrated_fraction: f64,
    pub brownian: BrownianStats,
    /// Smallest value of the increasing process `A` seen on any path.
    pub min_a: f64,
}

impl ModeSummary {
    pub fn mean_at(&self, j: usize, column: usize) -> f64 {
        self.mean[j * self.width + column]
    }

    pub fn stderr_at(&self, j: usize, column: usize) -> f64 {
        self.stderr[j * self.width + column]
    }

    /// Mean and stderr series of one column.
    pub fn column(&self, column: usize) -> (Vec<f64>, Vec<f64>) {
        (0..self.times.len()).map(|j| (self.mean_at(j, column), self.stderr_at(j, column))).unzip()
    }
}

fn summarize_mode(kind: PathKind, m: &ModeAccumulator, paths: u64, times: &[f64], prep: &Prepared) -> ModeSummary {
    let n = paths.max(1) as f64;
    let luders = (0..prep.energies.len())
        .map(|r| LudersStats {
            level: r,
            count: m.luders_distance[r].count(),
            mean_distance: m.luders_distance[r].mean(),
            max_distance: m.luders_max_distance[r],
            mean_purity: m.luders_purity[r].mean(),
            target_purity: prep.luders[r].as_ref().map_or(f64::NAN, |l| l.purity()),
        })
        .collect();
    ModeSummary {
        kind,
        n_paths: paths,
        times: times.to_vec(),
        mean: m.series.iter().map(Welford::mean).collect(),
        stderr: m.series.iter().map(Welford::stderr).collect(),
        width: m.width,
        stderr_defined: paths >= 2,
        born_frequencies: m.born_counts.iter().map(|&c| c as f64 / n).collect(),
        born_counts: m.born_counts.clone(),
        sampled_counts: m.sampled_counts.clone(),
        terminal_energy: TerminalEnergy {
            mean: m.terminal_energy.mean(),
            stderr: m.terminal_energy.stderr(),
            variance: m.terminal_energy.variance(),
            variance_stderr: m.terminal_energy_sq_dev.stderr(),
        },
        luders,
        concentrated_fraction: m.concentrated as f64 / n,
        brownian: BrownianStats {
            terminal_mean: m.terminal_w.mean(),
            terminal_stderr: m.terminal_w.stderr(),
            terminal_sq_mean: m.terminal_w_sq.mean(),
            terminal_sq_stderr: m.terminal_w_sq.stderr(),
            lag1_mean: m.lag1.mean(),
            lag1_stderr: m.lag1.stderr(),
        },
        min_a: m.min_increment_a,
    }
}

/// Outcome of one check on one path family.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub check: Check,
    pub mode: PathKind,
    pub passed: bool,
    /// The worst normalized deviation, compared against `threshold`.
    pub statistic: f64,
    pub threshold: f64,
    pub detail: String,
    /// Named fitted or measured quantities.
    pub metrics: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub n_paths: u64,
    pub base_seed: u64,
    pub energies: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub h0: f64,
    pub v0: f64,
    pub columns: Vec<String>,
    pub layout: SeriesLayout,
    pub modes: Vec<ModeSummary>,
    pub oracle_gap: Option<OracleGap>,
    pub verdicts: Vec<Verdict>,
}

impl EnsembleSummary {
    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn mode(&self, kind: PathKind) -> Option<&ModeSummary> {
        self.modes.iter().find(|m| m.kind == kind)
    }

    pub fn verdict(&self, check: Check, kind: PathKind) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.check == check && v.mode == kind)
    }
}

/// Sequential run over all chunks.
pub fn run_ensemble(cfg: EnsembleConfig) -> Result<EnsembleSummary> {
    let ensemble = Ensemble::new(cfg)?;
    let mut acc = ensemble.empty_accumulator();
    for chunk in 0..ensemble.n_chunks() {
        acc.merge(&ensemble.run_chunk(chunk)?);
    }
    ensemble.finish(acc)
}

pub fn run_check(check: Check, mode: &ModeSummary, summary: &EnsembleSummary, cfg: &EnsembleConfig) -> Result<Verdict> {
    Ok(match check {
        Check::Born => check_born(mode, summary, cfg),
        Check::Martingales => check_martingales(mode, summary, cfg),
        Check::Variance => check_variance_decay(mode, summary, cfg),
        Check::Decoherence => check_decoherence(mode, summary, cfg),
        Check::Luders => check_luders(mode, cfg),
        Check::Lindblad => check_lindblad(mode, summary, cfg)?,
        Check::Brownian => check_brownian(mode, cfg),
        Check::Potential => check_potential(mode, summary, cfg),
    })
}

fn verdict(check: Check, mode: &ModeSummary, statistic: f64, threshold: f64, passed: bool, detail: String) -> Verdict {
    Verdict { check, mode: mode.kind, passed, statistic, threshold, detail, metrics: Vec::new() }
}

/// `|x - target| / max(se, floor)`; NaN-safe in the failing direction.
fn z_score(x: f64, target: f64, se: f64, floor: f64) -> f64 {
    let z = (x - target).abs() / se.max(floor);
    if z.is_nan() {
        f64::INFINITY
    } else {
        z
    }
}

/// Terminal argmax frequencies against the initial level probabilities.
pub fn check_born(mode: &ModeSummary, summary: &EnsembleSummary, cfg: &EnsembleConfig) -> Verdict {
    let n = mode.n_paths as f64;
    let mut worst = 0.0f64;
    let mut metrics = Vec::new();
    for (r, (&f, &p)) in mode.born_frequencies.iter().zip(&summary.probabilities).enumerate() {
        let se = (p * (1.0 - p) / n).sqrt();
        let z = z_score(f, p, se, cfg.thresholds.stderr_floor);
        worst = worst.max(z);
        metrics.push((format!("frequency_{}", r + 1), f));
        metrics.push((format!("expected_{}", r + 1), p));
    }
    let c = cfg.ci_multiplier;
    let mut v = verdict(Check::Born, mode, worst, c, worst <= c, format!("max |freq - p_r| / binomial se over {} levels", metrics.len() / 2));
    v.metrics = metrics;
    v
}

fn checkpoints(n_records: usize, count: usize) -> Vec<usize> {
    let last = n_records - 1;
    let mut out: Vec<usize> = (1..=count).map(|c| (c * last + count / 2) / count).filter(|&j| j > 0).collect();
    out.dedup();
    out
}

/// Conditional-mean conservation: `H_t`, `pi_r(t)` and the pair martingales
/// keep their initial means; the mean variance does not increase.
pub fn check_martingales(mode: &ModeSummary, summary: &EnsembleSummary, cfg: &EnsembleConfig) -> Verdict {
    let layout = &summary.layout;
    let floor = cfg.thresholds.stderr_floor;
    let c = cfg.ci_multiplier;
    let points = checkpoints(mode.times.len(), cfg.martingale_checkpoints);
    let mut worst = 0.0f64;
    let mut worst_name = String::from("none");
    let mut consider = |z: f64, name: String| {
        if z > worst {
            worst = z;
            worst_name = name;
        }
    };
    for &j in &points {
        let t = mode.times[j];
        consider(z_score(mode.mean_at(j, SeriesLayout::H), summary.h0, mode.stderr_at(j, SeriesLayout::H), floor), format!("H at t={t}"));
        for r in 0..layout.levels {
            let col = layout.pi(r);
            consider(
                z_score(mode.mean_at(j, col), summary.probabilities[r], mode.stderr_at(j, col), floor),
                format!("pi_{} at t={t}", r + 1),
            );
        }
    }
    // The pair martingales have variance growing like exp(rate t); check them
    // only while their mean is still resolvable.
    let sigma = cfg.model.params.sigma;
    for (i, &(n, m)) in layout.pairs.iter().enumerate() {
        let rate = 0.125 * sigma * sigma * (summary.energies[n] - summary.energies[m]).powi(2);
        let horizon = if rate > 0.0 { 1.0 / rate } else { f64::INFINITY };
        let last = mode.times.iter().rposition(|&t| t <= horizon).unwrap_or(0);
        for j in checkpoints(last + 1, cfg.martingale_checkpoints) {
            let col = layout.pi_martingale(i);
            consider(
                z_score(mode.mean_at(j, col), 1.0, mode.stderr_at(j, col), floor),
                format!("Pi_{}_{} at t={}", n + 1, m + 1, mode.times[j]),
            );
        }
    }
    let mut prev = 0;
    for &j in &points {
        let rise = mode.mean_at(j, SeriesLayout::V) - mode.mean_at(prev, SeriesLayout::V);
        let se = (mode.stderr_at(j, SeriesLayout::V).powi(2) + mode.stderr_at(prev, SeriesLayout::V).powi(2)).sqrt();
        let z = rise / se.max(floor);
        consider(if z.is_nan() { f64::INFINITY } else { z.max(0.0) }, format!("V increase to t={}", mode.times[j]));
        prev = j;
    }
    let mut v = verdict(Check::Martingales, mode, worst, c, worst <= c, format!("worst: {worst_name}"));
    v.metrics = vec![
        (String::from("terminal_mean_H"), mode.mean_at(mode.times.len() - 1, SeriesLayout::H)),
        (String::from("initial_H"), summary.h0),
    ];
    v
}

/// `E[V_t] <= V_0 / (1 + V_0 sigma^2 t)` everywhere and a collapsed terminal
/// mean variance.
pub fn check_variance_decay(mode: &ModeSummary, summary: &EnsembleSummary, cfg: &EnsembleConfig) -> Verdict {
    let sigma = cfg.model.params.sigma;
    let floor = cfg.thresholds.stderr_floor;
    let c = cfg.ci_multiplier;
    let mut worst = f64::NEG_INFINITY;
    let mut worst_t = 0.0;
    for (j, &t) in mode.times.iter().enumerate() {
        let excess = (mode.mean_at(j, SeriesLayout::V) - variance_bound(summary.v0, sigma, t))
            / mode.stderr_at(j, SeriesLayout::V).max(floor);
        let excess = if excess.is_nan() { f64::INFINITY } else { excess };
        if excess > worst {
            worst = excess;
            worst_t = t;
        }
    }
    let span = summary.energies.last().copied().unwrap_or(0.0) - summary.energies.first().copied().unwrap_or(0.0);
    let terminal = mode.mean_at(mode.times.len() - 1, SeriesLayout::V);
    let terminal_limit = cfg.thresholds.terminal_variance * span * span;
    let terminal_ok = terminal < terminal_limit || (span == 0.0 && terminal <= 0.0);
    let mut v = verdict(
        Check::Variance,
        mode,
        worst,
        c,
        worst <= c && terminal_ok,
        format!("max (mean V - bound) / se at t={worst_t}; terminal mean V {terminal:.3e} vs {terminal_limit:.3e}"),
    );
    v.metrics = vec![
        (String::from("terminal_mean_V"), terminal),
        (String::from("terminal_limit"), terminal_limit),
    ];
    v
}

/// Weighted least-squares fit of `log mean Phi` against `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Fits the leading run of points with `mean > snr * se` (points with zero
/// spread are skipped), weighting each by `(mean / se)^2`.
pub fn fit_log_decay(times: &[f64], mean: &[f64], stderr: &[f64], snr: f64) -> Option<DecayFit> {
    let (mut sw, mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut points = 0;
    for ((&t, &m), &se) in times.iter().zip(mean).zip(stderr) {
        if !(se > 0.0) {
            continue;
        }
        if !(m > snr * se) {
            break;
        }
        let w = (m / se).powi(2);
        let y = m.ln();
        sw += w;
        st += w * t;
        sy += w * y;
        stt += w * t * t;
        sty += w * t * y;
        points += 1;
    }
    let det = sw * stt - st * st;
    if points < 3 || !(det > 0.0) {
        return None;
    }
    let slope = (sw * sty - st * sy) / det;
    Some(DecayFit { slope, intercept: (sy - slope * st) / sw, points })
}

/// Fitted exponential decay rate of every `E[Phi_nm]` against
/// `sigma^2 (E_n - E_m)^2 / 8`.
pub fn check_decoherence(mode: &ModeSummary, summary: &EnsembleSummary, cfg: &EnsembleConfig) -> Verdict {
    let layout = &summary.layout;
    let sigma = cfg.model.params.sigma;
    let tol = cfg.thresholds.decoherence_relative;
    let mut worst = 0.0f64;
    let mut metrics = Vec::new();
    let mut detail = String::new();
    for (i, &(n, m)) in layout.pairs.iter().enumerate() {
        let expected = -0.125 * sigma * sigma * (summary.energies[n] - summary.energies[m]).powi(2);
        let (mean, se) = mode.column(layout.phi(i));
        let name = format!("{}_{}", n + 1, m + 1);
        match fit_log_decay(&mode.times, &mean, &se, cfg.thresholds.decoherence_snr) {
            Some(fit) => {
                let rel = if expected != 0.0 { (fit.slope - expected).abs() / expected.abs() } else { fit.slope.abs() };
                worst = worst.max(rel);
                metrics.push((format!("slope_{name}"), fit.slope));
                metrics.push((format!("expected_slope_{name}"), expected));
                metrics.push((format!("fit_points_{name}"), fit.points as f64));
            }
            None => {
                worst = f64::INFINITY;
                detail.push_str(&format!("pair {name}: too few resolvable points; "));
            }
        }
    }
    detail.push_str("max relative slope error over pairs");
    let mut v = verdict(Check::Decoherence, mode, worst, tol, worst <= tol, detail);
    v.metrics = metrics;
    v
}

/// Terminal states conditioned on their level match the Lüders states.
pub fn check_luders(mode: &ModeSummary, cfg: &EnsembleConfig) -> Verdict {
    let th = &cfg.thresholds;
    let mut worst = 0.0f64;
    let mut passed = true;
    let mut metrics = Vec::new();
    let mut seen = 0;
    for l in mode.luders.iter().filter(|l| l.count > 0) {
        seen += 1;
        worst = worst.max(l.mean_distance);
        let purity_gap = (l.mean_purity - l.target_purity).abs();
        passed &= l.mean_distance < th.luders_distance && purity_gap <= th.luders_purity;
        metrics.push((format!("mean_distance_{}", l.level + 1), l.mean_distance));
        metrics.push((format!("mean_purity_{}", l.level + 1), l.mean_purity));
        metrics.push((format!("target_purity_{}", l.level + 1), l.target_purity));
    }
    passed &= seen > 0 && worst.is_finite();
    let mut v = verdict(
        Check::Luders,
        mode,
        worst,
        th.luders_distance,
        passed,
        format!("max conditional mean trace distance over {seen} levels; purity within {}", th.luders_purity),
    );
    v.metrics = metrics;
    v
}

/// Entrywise ensemble mean state against RK4 of the mean-state equation.
pub fn check_lindblad(mode: &ModeSummary, summary: &EnsembleSummary, cfg: &EnsembleConfig) -> Result<Verdict> {
    let model = &cfg.model;
    let reference = integrate_lindblad(&model.rho0, model.hamiltonian(), &model.params, &cfg.grid, &model.tols)?;
    let layout = &summary.layout;
    let t_max = cfg.grid.t_max();
    let times = if cfg.lindblad_times.is_empty() { vec![0.25 * t_max, 0.5 * t_max, t_max] } else { cfg.lindblad_times.clone() };
    let record_dt = cfg.grid.dt() * cfg.record_stride as f64;
    let mut worst = 0.0f64;
    let mut worst_at = String::from("none");
    for &t in &times {
        let j = ((t / record_dt).round() as usize).min(mode.times.len() - 1);
        let rk = reference[j * cfg.record_stride].matrix();
        for r in 0..layout.dim {
            for c in 0..layout.dim {
                for (col, target) in [(layout.rho_re(r, c), rk[(r, c)].re), (layout.rho_im(r, c), rk[(r, c)].im)] {
                    let diff = (mode.mean_at(j, col) - target).abs() - cfg.thresholds.reference_slack;
                    let z = diff.max(0.0) / mode.stderr_at(j, col).max(cfg.thresholds.stderr_floor);
                    let z = if z.is_nan() { f64::INFINITY } else { z };
                    if z > worst {
                        worst = z;
                        worst_at = format!("rho[{},{}] at t={}", r + 1, c + 1, mode.times[j]);
                    }
                }
            }
        }
    }
    let c = cfg.ci_multiplier;
    Ok(verdict(Check::Lindblad, mode, worst, c, worst <= c, format!("max |mean rho - RK4| / se, worst {worst_at}")))
}

/// The recorded `W` has mean 0, `E[W_T^2] = T` and uncorrelated increments.
pub fn check_brownian(mode: &ModeSummary, cfg: &EnsembleConfig) -> Verdict {
    let b = &mode.brownian;
    let floor = cfg.thresholds.stderr_floor;
    let t_max = *mode.times.last().unwrap_or(&0.0);
    let z_mean = z_score(b.terminal_mean, 0.0, b.terminal_stderr, floor);
    let z_sq = z_score(b.terminal_sq_mean, t_max, b.terminal_sq_stderr, floor);
    let z_lag = z_score(b.lag1_mean, 0.0, b.lag1_stderr, floor);
    let worst = z_mean.max(z_sq).max(z_lag);
    let c = cfg.ci_multiplier;
    let mut v = verdict(
        Check::Brownian,
        mode,
        worst,
        c,
        worst <= c,
        format!("z(mean W_T)={z_mean:.3}, z(mean W_T^2 - T)={z_sq:.3}, z(lag-1)={z_lag:.3}"),
    );
    v.metrics = vec![
        (String::from("mean_W_T"), b.terminal_mean),
        (String::from("mean_W_T_sq"), b.terminal_sq_mean),
        (String::from("lag1"), b.lag1_mean),
    ];
    v
}

/// `Phi_t + A_t` has mean 1 at the horizon and `A` never decreases.
pub fn check_potential(mode: &ModeSummary, summary: &EnsembleSummary, cfg: &EnsembleConfig) -> Verdict {
    let layout = &summary.layout;
    let last = mode.times.len() - 1;
    let mut worst = 0.0f64;
    let mut metrics = Vec::new();
    for (i, &(n, m)) in layout.pairs.iter().enumerate() {
        let col = layout.potential(i);
        let z = z_score(mode.mean_at(last, col), 1.0, mode.stderr_at(last, col), cfg.thresholds.stderr_floor);
        worst = worst.max(z);
        metrics.push((format!("mean_phi_plus_A_{}_{}", n + 1, m + 1), mode.mean_at(last, col)));
    }
    let c = cfg.ci_multiplier;
    let monotone = !(mode.min_a < 0.0);
    let mut v = verdict(
        Check::Potential,
        mode,
        worst,
        c,
        worst <= c && monotone,
        format!("max |mean(Phi + A) - 1| / se at t={}", mode.times[last]),
    );
    v.metrics = metrics;
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::c64;

    fn two_level(rho: DensityMatrix) -> Model {
        Model::new(&HermitianOperator::diagonal(&[0.0, 1.0]), rho, ReductionParams::default(), ToleranceSet::default())
            .unwrap()
    }

    #[test]
    fn welford_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.0).collect();
        let mut whole = Welford::default();
        xs.iter().for_each(|&x| whole.push(x));
        let mut left = Welford::default();
        let mut right = Welford::default();
        xs[..40].iter().for_each(|&x| left.push(x));
        xs[40..].iter().for_each(|&x| right.push(x));
        left.merge(&right);
        assert!((left.mean() - whole.mean()).abs() < 1e-14);
        assert!((left.variance() - whole.variance()).abs() < 1e-13);
        assert!(Welford::default().stderr().is_nan());
    }

    #[test]
    fn single_path_has_undefined_stderr() {
        let model = two_level(DensityMatrix::maximally_mixed(2));
        let cfg = EnsembleConfig::new(model, 1, 7, TimeGrid::new(1.0, 0.01).unwrap());
        let s = run_ensemble(cfg).unwrap();
        let m = &s.modes[0];
        assert!(!m.stderr_defined);
        assert!(m.stderr_at(3, SeriesLayout::H).is_nan());
        assert_eq!(m.born_frequencies.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn eigenprojector_ensemble_is_trivial() {
        let rho = DensityMatrix::from_diagonal(&[0.0, 1.0], &ToleranceSet::default()).unwrap();
        let mut cfg = EnsembleConfig::new(two_level(rho), 100, 1, TimeGrid::new(2.0, 0.01).unwrap());
        cfg.record_stride = 10;
        cfg.mode = Mode::Both;
        cfg.checks = vec![Check::Born, Check::Martingales, Check::Variance, Check::Luders, Check::Lindblad];
        let s = run_ensemble(cfg).unwrap();
        for m in &s.modes {
            assert!(m.column(SeriesLayout::V).0.iter().all(|&v| v == 0.0));
            assert_eq!(m.born_counts, vec![0, 100]);
        }
        assert!(s.all_passed(), "{:#?}", s.verdicts);
    }

    #[test]
    fn chunked_runs_are_reproducible() {
        let rho = crate::validate_density(
            ComplexMatrix::from_rows(&[vec![c64(0.5, 0.0), c64(0.25, 0.0)], vec![c64(0.25, 0.0), c64(0.5, 0.0)]])
                .unwrap(),
            &ToleranceSet::default(),
        )
        .unwrap();
        let mut cfg = EnsembleConfig::new(two_level(rho), 150, 42, TimeGrid::new(0.5, 0.01).unwrap());
        cfg.mode = Mode::Both;
        let a = run_ensemble(cfg.clone()).unwrap();
        let b = run_ensemble(cfg.clone()).unwrap();
        assert_eq!(a, b);
        let e = Ensemble::new(cfg).unwrap();
        let mut merged = e.empty_accumulator();
        for chunk in (0..e.n_chunks()).map(|c| e.run_chunk(c).unwrap()) {
            merged.merge(&chunk);
        }
        assert_eq!(e.finish(merged).unwrap(), a);
    }

    #[test]
    fn config_validation() {
        let model = two_level(DensityMatrix::maximally_mixed(2));
        let mut cfg = EnsembleConfig::new(model, 50, 0, TimeGrid::new(1.0, 0.1).unwrap());
        cfg.checks = vec![Check::Born];
        assert!(cfg.validate().is_err());
        cfg.checks.clear();
        cfg.record_stride = 3;
        assert!(cfg.validate().is_err());
        assert_eq!("closed-form".parse::<Mode>().unwrap(), Mode::ClosedForm);
        assert_eq!("luders".parse::<Check>().unwrap(), Check::Luders);
        assert!("nope".parse::<Check>().is_err());
    }

    #[test]
    fn log_decay_fit_recovers_exact_rate() {
        let times: Vec<f64> = (0..20).map(|k| k as f64 * 0.5).collect();
        let mean: Vec<f64> = times.iter().map(|t| (-0.125 * t).exp()).collect();
        let se = vec![1e-3; 20];
        let fit = fit_log_decay(&times, &mean, &se, 10.0).unwrap();
        assert!((fit.slope + 0.125).abs() < 1e-12);
        assert_eq!(fit.points, 20);
    }
}
