//! Subcommand bodies. Each returns file names and contents so callers and
//! tests can compare outputs without touching the filesystem.

use anyhow::Result;
use reduction_core::dynamics::NoisePath;
use reduction_core::ensemble::{Mode, Model};
use reduction_core::state::level_pairs;
use reduction_core::{
    integrate_lindblad, moments, offdiag_norms, recovered_brownian, simulate_sme, ClosedForm, DensityMatrix,
    InformationPath, TimeGrid,
};

use crate::config::{Resolved, RunConfig};
use crate::output::{csv, series_csv, series_file_name, summary_json, trajectory_header};
use crate::runner::run_parallel;

/// A named output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFile {
    pub name: String,
    pub contents: String,
}

impl OutputFile {
    fn new(name: impl Into<String>, contents: String) -> Self {
        Self { name: name.into(), contents }
    }
}

fn state_row(model: &Model, t: f64, state: &DensityMatrix, xi: f64, w: f64) -> Result<Vec<f64>> {
    let spec = &model.spec;
    let m = moments(state, model.hamiltonian())?;
    let mut row = vec![t, m.h, m.v, state.purity(), xi, w];
    row.extend(spec.probabilities(state.matrix()));
    let norms = offdiag_norms(state, spec)?;
    row.extend(level_pairs(spec.n_levels()).iter().map(|p| norms[p]));
    Ok(row)
}

fn header(model: &Model) -> Vec<String> {
    let d = model.spec.n_levels();
    trajectory_header(d, &level_pairs(d))
}

/// The closed-form path for `seed` and the recovered Brownian motion.
fn closed_form_path(model: &Model, grid: &TimeGrid, seed: u64) -> Result<(InformationPath, Vec<f64>)> {
    let sigma = model.params.sigma;
    let path = InformationPath::from_seed(&model.rho0, &model.spec, sigma, grid, seed, &model.tols)?;
    let w = recovered_brownian(&path, &model.rho0, &model.spec, sigma)?;
    Ok((path, w))
}

fn sde_csv(model: &Model, grid: &TimeGrid, noise: &NoisePath) -> Result<String> {
    let traj = simulate_sme(&model.rho0, &model.spec, &model.params, grid, noise, &model.tols)?;
    let rows = (0..traj.len()).map(|k| {
        let mut row = vec![grid.time(k), traj.moments[k].h, traj.moments[k].v, traj.purity[k], traj.xi[k], traj.w[k]];
        row.extend(&traj.populations[k]);
        row.extend(&traj.offdiag[k]);
        row
    });
    Ok(csv(&header(model), rows))
}

/// One trajectory per requested path kind. `both` drives the SDE with the
/// increments recovered from the closed-form path.
pub fn simulate(run: &Resolved) -> Result<Vec<OutputFile>> {
    let model = &run.model;
    let grid = &run.grid;
    let mut files = Vec::new();
    if run.mode == Mode::Sde {
        let noise = NoisePath::from_seed(grid, run.seed);
        files.push(OutputFile::new("trajectory_sde.csv", sde_csv(model, grid, &noise)?));
        return Ok(files);
    }
    let (path, w) = closed_form_path(model, grid, run.seed)?;
    let cf = ClosedForm::new(&model.rho0, &model.spec, model.params.sigma, model.params.hbar)?;
    let mut rows = Vec::with_capacity(path.len());
    for (k, (&xi, &wk)) in path.xi.iter().zip(&w).enumerate() {
        let t = grid.time(k);
        let state = cf.state(t, xi, &model.tols)?;
        rows.push(state_row(model, t, &state, xi, wk)?);
    }
    files.push(OutputFile::new("trajectory_closed_form.csv", csv(&header(model), rows)));
    if run.mode == Mode::Both {
        let increments = w.windows(2).map(|p| p[1] - p[0]).collect();
        let noise = NoisePath::from_increments(grid, increments)?;
        files.push(OutputFile::new("trajectory_sde.csv", sde_csv(model, grid, &noise)?));
    }
    Ok(files)
}

/// Ensemble run: a JSON summary plus one series CSV per path kind.
pub struct EnsembleOutput {
    pub files: Vec<OutputFile>,
    pub all_passed: bool,
}

pub fn ensemble(config: &RunConfig, run: &Resolved, threads: usize) -> Result<EnsembleOutput> {
    let summary = run_parallel(run.ensemble_config(), threads)?;
    let mut files = vec![OutputFile::new("summary.json", summary_json(config, &summary))];
    for mode in &summary.modes {
        files.push(OutputFile::new(series_file_name(mode), series_csv(&summary, mode)));
    }
    Ok(EnsembleOutput { files, all_passed: summary.all_passed() })
}

/// RK4 mean-state path: trajectory columns without `xi` and `W`, followed by
/// the matrix entries.
pub fn lindblad(run: &Resolved) -> Result<OutputFile> {
    let model = &run.model;
    let path = integrate_lindblad(&model.rho0, model.hamiltonian(), &model.params, &run.grid, &model.tols)?;
    let n = model.spec.dim();
    let mut head: Vec<String> = header(model).into_iter().filter(|h| h != "xi" && h != "W").collect();
    for part in ["re", "im"] {
        for r in 1..=n {
            for c in 1..=n {
                head.push(format!("rho_{part}_{r}_{c}"));
            }
        }
    }
    let mut rows = Vec::with_capacity(path.len());
    for (k, state) in path.iter().enumerate() {
        let mut row = state_row(model, run.grid.time(k), state, 0.0, 0.0)?;
        row.drain(4..6);
        row.extend(state.matrix().real_parts());
        row.extend(state.matrix().imag_parts());
        rows.push(row);
    }
    Ok(OutputFile::new("lindblad.csv", csv(&head, rows)))
}
