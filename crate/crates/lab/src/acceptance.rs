//! Reference instances and the acceptance criteria.

use std::time::{Duration, Instant};

use anyhow::{ensure, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use reduction_core::dynamics::NoisePath;
use reduction_core::eigen::hermitian_eigen;
use reduction_core::ensemble::{Check, EnsembleConfig, EnsembleSummary, Fault, Mode, Model, Verdict};
use reduction_core::{
    c64, closed_form_state, recovered_brownian, simulate_sme, state_decomposition, validate_density, ClosedForm,
    ComplexMatrix, HermitianOperator, InformationPath, ReductionParams, SpectralDecomposition, TimeGrid,
    ToleranceSet,
};

use crate::commands::{ensemble, simulate};
use crate::config::{GridSpec, HamiltonianSpec, MatrixSpec, ModeName, RunConfig};
use crate::runner::{run_parallel, thread_count};

/// Seed shared by every criterion; fixed before any criterion was run.
pub const REFERENCE_SEED: u64 = 20240917;

fn matrix(rows: &[[(f64, f64); 3]]) -> ComplexMatrix {
    let rows: Vec<Vec<_>> = rows.iter().map(|r| r.iter().map(|&(a, b)| c64(a, b)).collect()).collect();
    ComplexMatrix::from_rows(&rows).expect("square literal")
}

fn model(energies: &[f64], rho: ComplexMatrix) -> Model {
    let tols = ToleranceSet::default();
    let rho = validate_density(rho, &tols).expect("reference state is valid");
    Model::new(&HermitianOperator::diagonal(energies), rho, ReductionParams::default(), tols).expect("reference model")
}

/// Two levels `diag(0, 1)`, `rho_0 = I/2 + sigma_x/4`.
pub fn instance_a() -> Model {
    let rho = ComplexMatrix::from_real_imag(&[0.5, 0.25, 0.25, 0.5], &[0.0; 4]).expect("2x2");
    model(&[0.0, 1.0], rho)
}

/// Three levels `diag(0, 1, 2)`, populations `(1/4, 1/4, 1/2)` plus
/// coherences.
pub fn instance_b() -> Model {
    let rho = matrix(&[
        [(0.25, 0.0), (0.1, 0.0), (0.0, 0.15)],
        [(0.1, 0.0), (0.25, 0.0), (0.1, -0.1)],
        [(0.0, -0.15), (0.1, 0.1), (0.5, 0.0)],
    ]);
    model(&[0.0, 1.0, 2.0], rho)
}

/// Degenerate `diag(0, 0, 1)`, populations `(0.3, 0.3, 0.4)`, coherences only
/// between the two eigenspaces.
pub fn instance_c() -> Model {
    let rho = matrix(&[
        [(0.3, 0.0), (0.0, 0.0), (0.1, 0.0)],
        [(0.0, 0.0), (0.3, 0.0), (0.0, 0.1)],
        [(0.1, 0.0), (0.0, -0.1), (0.4, 0.0)],
    ]);
    model(&[0.0, 0.0, 1.0], rho)
}

/// A run configuration reproducing `model` in its eigenbasis.
pub fn run_config(model: &Model, t_max: f64, dt: f64, n_paths: usize, mode: ModeName) -> RunConfig {
    let h = model.hamiltonian().matrix();
    RunConfig {
        hamiltonian: HamiltonianSpec::from_eigenvalues(&(0..h.dim()).map(|i| h[(i, i)].re).collect::<Vec<_>>()),
        rho0: MatrixSpec::from_matrix(model.rho0.matrix()),
        grid: GridSpec { t_max, dt },
        sigma: model.params.sigma,
        hbar: model.params.hbar,
        n_paths,
        seed: REFERENCE_SEED,
        mode,
        checks: None,
        record_stride: 1,
        lindblad_times: Vec::new(),
        output: Default::default(),
        tolerances: Default::default(),
    }
}

/// Outcome of one criterion.
#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: usize,
    pub claim: &'static str,
    pub measured: String,
    pub threshold: String,
    pub passed: bool,
    pub elapsed: Duration,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2}. {} | measured: {} | threshold: {} | {:.1} s",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.claim,
            self.measured,
            self.threshold,
            self.elapsed.as_secs_f64()
        )
    }
}

struct Outcome {
    measured: String,
    threshold: String,
    passed: bool,
}

/// Runs `body` and reports an error as a failure.
fn timed(id: usize, claim: &'static str, budget: Option<Duration>, body: impl FnOnce() -> Result<Outcome>) -> CriterionResult {
    let start = Instant::now();
    let outcome = body();
    let elapsed = start.elapsed();
    let (measured, mut threshold, mut passed) = match outcome {
        Ok(o) => (o.measured, o.threshold, o.passed),
        Err(e) => (format!("error: {e:#}"), String::from("-"), false),
    };
    if let Some(b) = budget {
        threshold.push_str(&format!("; runtime < {} s", b.as_secs()));
        passed &= elapsed < b;
    }
    CriterionResult { id, claim, measured, threshold, passed, elapsed }
}

/// Largest entrywise gap between the closed-form state and the SME driven
/// by the recovered increments, on one information path refined `levels - 1`
/// times below `dt`. Entry `l` uses step `dt / 2^l`; all gaps are measured
/// at the grid points of step `dt`.
pub fn oracle_errors(model: &Model, seed: u64, t_max: f64, dt: f64, levels: usize) -> Result<Vec<f64>> {
    ensure!(levels >= 1, "at least one level");
    let sigma = model.params.sigma;
    let finest = 1usize << (levels - 1);
    let fine = TimeGrid::new(t_max, dt / finest as f64)?;
    let path = InformationPath::from_seed(&model.rho0, &model.spec, sigma, &fine, seed, &model.tols)?;
    let cf = ClosedForm::new(&model.rho0, &model.spec, sigma, model.params.hbar)?;
    let mut errors = Vec::with_capacity(levels);
    for level in 0..levels {
        let grid = TimeGrid::new(t_max, dt / (1usize << level) as f64)?;
        let b = path.b.iter().step_by(finest >> level).copied().collect();
        let p = InformationPath::from_brownian(path.level, &model.spec, sigma, &grid, b)?;
        let w = recovered_brownian(&p, &model.rho0, &model.spec, sigma)?;
        let noise = NoisePath::from_increments(&grid, w.windows(2).map(|x| x[1] - x[0]).collect())?;
        let traj = simulate_sme(&model.rho0, &model.spec, &model.params, &grid, &noise, &model.tols)?;
        let mut worst = 0.0f64;
        for k in (0..=grid.n_steps()).step_by(1 << level) {
            let exact = cf.state_matrix(grid.time(k), p.xi[k])?;
            worst = worst.max(exact.max_abs_diff(traj.states[k].matrix()));
        }
        errors.push(worst);
    }
    Ok(errors)
}

/// Root mean square over `n_paths` shared paths of the per-path errors of
/// [`oracle_errors`], per level.
pub fn rms_oracle_errors(model: &Model, seed: u64, n_paths: u64, t_max: f64, dt: f64, levels: usize) -> Result<Vec<f64>> {
    let mut sums = vec![0.0; levels];
    for path in 0..n_paths {
        let e = oracle_errors(model, seed.wrapping_add(path), t_max, dt, levels)?;
        for (s, x) in sums.iter_mut().zip(e) {
            *s += x * x;
        }
    }
    Ok(sums.iter().map(|s| (s / n_paths as f64).sqrt()).collect())
}

fn run(cfg: EnsembleConfig) -> Result<EnsembleSummary> {
    run_parallel(cfg, thread_count())
}

fn ensemble_config(model: Model, n_paths: usize, t_max: f64, dt: f64, stride: usize, mode: Mode, checks: &[Check]) -> Result<EnsembleConfig> {
    let mut cfg = EnsembleConfig::new(model, n_paths, REFERENCE_SEED, TimeGrid::new(t_max, dt)?);
    cfg.record_stride = stride;
    cfg.mode = mode;
    cfg.checks = checks.to_vec();
    Ok(cfg)
}

fn verdict(summary: &EnsembleSummary, check: Check) -> Result<&Verdict> {
    summary
        .verdicts
        .iter()
        .find(|v| v.check == check)
        .ok_or_else(|| anyhow::anyhow!("no verdict for {}", check.name()))
}

fn metric(v: &Verdict, name: &str) -> Result<f64> {
    v.metrics
        .iter()
        .find(|(k, _)| k == name)
        .map(|&(_, x)| x)
        .ok_or_else(|| anyhow::anyhow!("no metric {name}"))
}

fn criterion_1() -> CriterionResult {
    timed(1, "B: closed form equals the SME driven by the recovered W on one shared path", Some(Duration::from_secs(10)), || {
        let model = instance_b();
        let e = oracle_errors(&model, REFERENCE_SEED, 1.0, 1e-3, 2)?;
        let ratio = e[1] / e[0];
        let rms = rms_oracle_errors(&model, REFERENCE_SEED, 128, 1.0, 1e-3, 2)?;
        Ok(Outcome {
            measured: format!(
                "max error {:.3e} at dt=1e-3, {:.3e} at dt=5e-4, ratio {ratio:.3} (128-path rms ratio {:.3})",
                e[0],
                e[1],
                rms[1] / rms[0]
            ),
            threshold: String::from("error < 5e-3, ratio in [0.35, 0.75]"),
            passed: e[0] < 5e-3 && (0.35..=0.75).contains(&ratio),
        })
    })
}

/// Instance B, closed form, shared by the Born, martingale and decoherence
/// criteria.
fn instance_b_ensemble() -> Result<EnsembleSummary> {
    let checks = [Check::Born, Check::Martingales, Check::Decoherence];
    run(ensemble_config(instance_b(), 10_000, 50.0, 0.01, 10, Mode::ClosedForm, &checks)?)
}

fn criterion_2(summary: &Result<EnsembleSummary>, elapsed: Duration) -> CriterionResult {
    let mut r = timed(2, "B: terminal level frequencies follow the Born rule", None, || {
        let s = summary.as_ref().map_err(|e| anyhow::anyhow!("{e:#}"))?;
        let mode = &s.modes[0];
        let n = mode.n_paths as f64;
        let mut worst = 0.0f64;
        for (&f, &p) in mode.born_frequencies.iter().zip(&s.probabilities) {
            worst = worst.max((f - p).abs() / (p * (1.0 - p) / n).sqrt());
        }
        Ok(Outcome {
            measured: format!("frequencies {:.4?} over {} paths, worst {worst:.2} se", mode.born_frequencies, mode.n_paths),
            threshold: String::from("|freq - p| <= 3 binomial se for p = (1/4, 1/4, 1/2); runtime < 60 s"),
            passed: worst <= 3.0 && mode.n_paths >= 10_000 && elapsed < Duration::from_secs(60),
        })
    });
    r.elapsed = elapsed;
    r
}

fn criterion_3(summary: &Result<EnsembleSummary>) -> CriterionResult {
    timed(3, "B: terminal energy has mean 1.25 and variance 0.6875", None, || {
        let s = summary.as_ref().map_err(|e| anyhow::anyhow!("{e:#}"))?;
        let te = &s.modes[0].terminal_energy;
        let mean_z = (te.mean - 1.25).abs() / te.stderr;
        let var_z = (te.variance - 0.6875).abs() / te.variance_stderr;
        Ok(Outcome {
            measured: format!(
                "mean {:.4} (se {:.4}, {mean_z:.2} se), variance {:.4} (se {:.4}, {var_z:.2} se)",
                te.mean, te.stderr, te.variance, te.variance_stderr
            ),
            threshold: String::from("both within 3 se"),
            passed: mean_z <= 3.0 && var_z <= 3.0,
        })
    })
}

fn criterion_4() -> CriterionResult {
    timed(4, "A: mean variance stays below V0/(1+V0 sigma^2 t) and collapses", None, || {
        let s = run(ensemble_config(instance_a(), 10_000, 150.0, 0.05, 10, Mode::ClosedForm, &[Check::Variance])?)?;
        let v = verdict(&s, Check::Variance)?;
        let terminal = metric(v, "terminal_mean_V")?;
        Ok(Outcome {
            measured: format!("worst excess {:.2} se; terminal mean V {terminal:.3e}", v.statistic),
            threshold: String::from("excess <= 3 se at every grid point; terminal mean V < 1e-6"),
            passed: v.statistic <= 3.0 && terminal < 1e-6,
        })
    })
}

fn criterion_5() -> CriterionResult {
    timed(5, "A: SDE ensemble mean state follows the mean-state equation", None, || {
        let mut cfg = ensemble_config(instance_a(), 4_000, 2.0, 1e-3, 50, Mode::Sde, &[Check::Lindblad])?;
        cfg.lindblad_times = vec![0.5, 1.0, 2.0];
        let s = run(cfg)?;
        let v = verdict(&s, Check::Lindblad)?;
        Ok(Outcome {
            measured: format!("worst {:.2} se over {} paths ({})", v.statistic, s.n_paths, v.detail),
            threshold: String::from("every entry within 3 se of RK4 at t = 0.5, 1, 2"),
            passed: v.passed,
        })
    })
}

fn criterion_6(summary: &Result<EnsembleSummary>) -> CriterionResult {
    timed(6, "B: coherences decay at rate sigma^2 dE^2 / 8", None, || {
        let s = summary.as_ref().map_err(|e| anyhow::anyhow!("{e:#}"))?;
        let v = verdict(s, Check::Decoherence)?;
        let wide = metric(v, "slope_1_3")?;
        let ratios = [wide / metric(v, "slope_1_2")?, wide / metric(v, "slope_2_3")?];
        let ratio_ok = ratios.iter().all(|r| (r - 4.0).abs() <= 0.4);
        Ok(Outcome {
            measured: format!(
                "slopes 1-2 {:.4}, 2-3 {:.4}, 1-3 {wide:.4}; worst relative error {:.3}; ratios {:.3}, {:.3}",
                metric(v, "slope_1_2")?,
                metric(v, "slope_2_3")?,
                v.statistic,
                ratios[0],
                ratios[1]
            ),
            threshold: String::from("relative error <= 0.1 against -1/8, -1/8, -1/2; ratio 4.0 +- 0.4"),
            passed: v.passed && ratio_ok,
        })
    })
}

fn criterion_7() -> CriterionResult {
    timed(7, "C: terminal states are the Lüders states of their level", None, || {
        let s = run(ensemble_config(instance_c(), 2_000, 150.0, 0.05, 10, Mode::ClosedForm, &[])?)?;
        let mode = &s.modes[0];
        let mut passed = true;
        let mut measured = Vec::new();
        for (l, target) in mode.luders.iter().zip([0.5, 1.0]) {
            passed &= l.count > 0 && l.max_distance < 1e-4 && (l.mean_purity - target).abs() <= 1e-3;
            measured.push(format!(
                "level {}: {} paths, max trace distance {:.2e}, mean purity {:.6}",
                l.level + 1,
                l.count,
                l.max_distance,
                l.mean_purity
            ));
        }
        passed &= mode.luders.len() == 2;
        Ok(Outcome {
            measured: measured.join("; "),
            threshold: String::from("distance < 1e-4; purity 0.5 +- 1e-3 (level 1), 1 +- 1e-3 (level 2)"),
            passed,
        })
    })
}

/// Random instance of dimension `1..=6` with a random state, a random
/// eigenbasis and either integer (often degenerate) or Gaussian energies.
fn random_instance(rng: &mut ChaCha8Rng, tols: &ToleranceSet) -> Result<(reduction_core::DensityMatrix, SpectralDecomposition)> {
    let n = rng.random_range(1..=6);
    let gaussian = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let g = ComplexMatrix::from_fn(n, |_, _| c64(gaussian(rng), gaussian(rng)));
    let gg = &g * &g.adjoint();
    let rho = validate_density(gg.scale_real(1.0 / gg.trace().re), tols)?;
    let raw = ComplexMatrix::from_fn(n, |_, _| c64(gaussian(rng), gaussian(rng)));
    let basis = hermitian_eigen(&raw.hermitized())?.vectors;
    let integer = rng.random_bool(0.5);
    let energies: Vec<f64> =
        (0..n).map(|_| if integer { rng.random_range(-2i32..=2) as f64 } else { gaussian(rng) }).collect();
    let h = HermitianOperator::from_eigenbasis(&energies, &basis, tols)?;
    Ok((rho, SpectralDecomposition::new(&h, tols)?))
}

fn criterion_8() -> CriterionResult {
    timed(8, "Decomposed state equals the closed form on random instances", None, || {
        let tols = ToleranceSet::default();
        let mut rng = ChaCha8Rng::seed_from_u64(REFERENCE_SEED);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let (rho, spec) = random_instance(&mut rng, &tols)?;
            let sigma = rng.random_range(0.2..2.0);
            let t = rng.random_range(0.01..5.0);
            let energies = spec.energies();
            let signal = energies[rng.random_range(0..energies.len())];
            let z: f64 = rng.sample(StandardNormal);
            let xi = sigma * signal * t + t.sqrt() * z;
            let a = closed_form_state(&rho, &spec, sigma, 1.0, t, xi, &tols)?;
            let b = state_decomposition(&rho, &spec, sigma, 1.0, t, xi, &tols)?;
            worst = worst.max(a.matrix().max_abs_diff(b.matrix()));
        }
        Ok(Outcome {
            measured: format!("max entrywise gap {worst:.2e} over 100 instances"),
            threshold: String::from("<= 1e-10"),
            passed: worst <= 1e-10,
        })
    })
}

fn criterion_9() -> CriterionResult {
    timed(9, "simulate and ensemble outputs are byte-identical across runs and thread counts", None, || {
        let mut config = run_config(&instance_b(), 2.0, 0.01, 256, ModeName::Both);
        config.checks = Some(vec![String::from("born"), String::from("martingales")]);
        let resolved = config.resolve()?;
        let first = simulate(&resolved)?;
        let second = simulate(&resolved)?;
        let mut identical = first == second;
        let reference = ensemble(&config, &resolved, 1)?.files;
        let mut compared = 2;
        for threads in [1, 2, 4] {
            identical &= ensemble(&config, &resolved, threads)?.files == reference;
            compared += 1;
        }
        let bytes: usize = first.iter().chain(&reference).map(|f| f.contents.len()).sum();
        Ok(Outcome {
            measured: format!("{compared} repeat runs, {bytes} bytes per run, identical: {identical}"),
            threshold: String::from("identical outputs"),
            passed: identical,
        })
    })
}

fn criterion_10() -> CriterionResult {
    timed(10, "Negative controls: doubled drift breaks martingales, biased sampler breaks Born", None, || {
        let drift_cfg = |fault| -> Result<EnsembleConfig> {
            let mut cfg = ensemble_config(instance_b(), 1_000, 4.0, 0.01, 10, Mode::ClosedForm, &[Check::Martingales])?;
            cfg.fault = fault;
            Ok(cfg)
        };
        let born_cfg = |fault| -> Result<EnsembleConfig> {
            let mut cfg = ensemble_config(instance_b(), 1_000, 30.0, 0.02, 10, Mode::ClosedForm, &[Check::Born])?;
            cfg.fault = fault;
            Ok(cfg)
        };
        let drift_clean = run(drift_cfg(None)?)?;
        let drift_fault = run(drift_cfg(Some(Fault::DoubledDrift))?)?;
        let born_clean = run(born_cfg(None)?)?;
        let born_fault = run(born_cfg(Some(Fault::BiasedSampler))?)?;
        let m = (verdict(&drift_clean, Check::Martingales)?, verdict(&drift_fault, Check::Martingales)?);
        let b = (verdict(&born_clean, Check::Born)?, verdict(&born_fault, Check::Born)?);
        Ok(Outcome {
            measured: format!(
                "martingales {:.2} se clean, {:.2} se doubled drift; born {:.2} se clean, {:.2} se biased sampler",
                m.0.statistic, m.1.statistic, b.0.statistic, b.1.statistic
            ),
            threshold: String::from("clean runs pass, faulted runs fail (3 se)"),
            passed: m.0.passed && !m.1.passed && b.0.passed && !b.1.passed,
        })
    })
}

/// Runs the criteria in `ids` (all when empty) in order, calling `report`
/// after each.
pub fn run_criteria(ids: &[usize], mut report: impl FnMut(&CriterionResult)) -> Vec<CriterionResult> {
    let wanted = |id: usize| ids.is_empty() || ids.contains(&id);
    let mut results = Vec::new();
    let mut push = |r: CriterionResult, results: &mut Vec<CriterionResult>| {
        report(&r);
        results.push(r);
    };
    if wanted(1) {
        push(criterion_1(), &mut results);
    }
    if wanted(2) || wanted(3) || wanted(6) {
        let start = Instant::now();
        let shared = instance_b_ensemble();
        let elapsed = start.elapsed();
        if wanted(2) {
            push(criterion_2(&shared, elapsed), &mut results);
        }
        if wanted(3) {
            push(criterion_3(&shared), &mut results);
        }
        if wanted(4) {
            push(criterion_4(), &mut results);
        }
        if wanted(5) {
            push(criterion_5(), &mut results);
        }
        if wanted(6) {
            push(criterion_6(&shared), &mut results);
        }
    } else {
        if wanted(4) {
            push(criterion_4(), &mut results);
        }
        if wanted(5) {
            push(criterion_5(), &mut results);
        }
    }
    let rest: [(usize, fn() -> CriterionResult); 4] =
        [(7, criterion_7), (8, criterion_8), (9, criterion_9), (10, criterion_10)];
    for (id, f) in rest {
        if wanted(id) {
            push(f(), &mut results);
        }
    }
    results
}

/// Number of acceptance criteria.
pub const CRITERIA: usize = 10;

/// Parses a comma-separated list of criterion numbers.
pub fn parse_ids(list: &str) -> Result<Vec<usize>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let id: usize = s.parse().map_err(|_| anyhow::anyhow!("`{s}` is not a criterion number"))?;
            ensure!((1..=CRITERIA).contains(&id), "criterion {id} is outside 1..={CRITERIA}");
            Ok(id)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instances_match_their_stated_populations() {
        let b = instance_b();
        assert_eq!(b.spec.probabilities(b.rho0.matrix()), vec![0.25, 0.25, 0.5]);
        let c = instance_c();
        assert_eq!(c.spec.n_levels(), 2);
        let p = c.spec.probabilities(c.rho0.matrix());
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.4).abs() < 1e-15);
        assert_eq!(instance_a().spec.n_levels(), 2);
    }

    #[test]
    fn oracle_errors_shrink_over_many_halvings() {
        let e = oracle_errors(&instance_b(), 7, 0.256, 4e-3, 5).unwrap();
        assert!(e[4] < 0.5 * e[0], "{e:?}");
    }

    #[test]
    fn criterion_lists_parse() {
        assert_eq!(parse_ids("1, 3,10").unwrap(), vec![1, 3, 10]);
        assert!(parse_ids("0").is_err());
        assert!(parse_ids("x").is_err());
    }

    #[test]
    fn run_config_reproduces_the_model() {
        let model = instance_b();
        let resolved = run_config(&model, 1.0, 0.01, 100, ModeName::ClosedForm).resolve().unwrap();
        assert_eq!(resolved.model.rho0.matrix(), model.rho0.matrix());
        assert_eq!(resolved.model.spec.energies(), vec![0.0, 1.0, 2.0]);
    }
}
