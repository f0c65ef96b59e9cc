//! TOML run configuration.
//!
//! Complex matrices are written as separate row-major `re` and `im` arrays.
//! The Hamiltonian is given either as `eigenvalues` with an optional unitary
//! `basis` (columns are eigenvectors) or as a full matrix (`re`, `im`).

use std::path::PathBuf;
use std::str::FromStr;

use reduction_core::ensemble::{Check, EnsembleConfig, Mode, Model};
use reduction_core::{ComplexMatrix, DensityMatrix, HermitianOperator, ReductionParams, TimeGrid, ToleranceSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },
}

impl ConfigError {
    fn invalid(field: &str, message: impl ToString) -> Self {
        ConfigError::Invalid { field: field.to_string(), message: message.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub hamiltonian: HamiltonianSpec,
    pub rho0: MatrixSpec,
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default = "one")]
    pub hbar: f64,
    pub grid: GridSpec,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: ModeName,
    /// Check names; all checks when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checks: Option<Vec<String>>,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    /// Comparison times for the mean-state check.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lindblad_times: Vec<f64>,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub tolerances: ToleranceOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    pub re: Vec<f64>,
    /// Zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenvalues: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<MatrixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub re: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub t_max: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    #[default]
    Sde,
    ClosedForm,
    Both,
}

impl ModeName {
    pub fn mode(self) -> Mode {
        match self {
            ModeName::Sde => Mode::Sde,
            ModeName::ClosedForm => Mode::ClosedForm,
            ModeName::Both => Mode::Both,
        }
    }
}

impl FromStr for ModeName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sde" => Ok(ModeName::Sde),
            "closed-form" => Ok(ModeName::ClosedForm),
            "both" => Ok(ModeName::Both),
            _ => Err(format!("unknown mode `{s}`, expected sde, closed-form or both")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hermiticity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconstruction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degeneracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub luders_floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn default_dt() -> f64 {
    1e-3
}

fn default_paths() -> usize {
    1000
}

fn default_stride() -> usize {
    1
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub mode: Option<ModeName>,
    pub checks: Option<Vec<String>>,
    pub out: Option<PathBuf>,
}

/// Validated inputs for the numerical core.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub model: Model,
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub seed: u64,
    pub mode: Mode,
    pub checks: Vec<Check>,
    pub record_stride: usize,
    pub lindblad_times: Vec<f64>,
}

impl Resolved {
    pub fn ensemble_config(&self) -> EnsembleConfig {
        let mut cfg = EnsembleConfig::new(self.model.clone(), self.n_paths, self.seed, self.grid);
        cfg.mode = self.mode;
        cfg.checks = self.checks.clone();
        cfg.record_stride = self.record_stride;
        cfg.lindblad_times = self.lindblad_times.clone();
        cfg
    }
}

/// Parses and validates `text`.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |span| line_column(text, span.start));
        ConfigError::Parse { line, column, message: e.message().to_string() }
    })?;
    cfg.resolve()?;
    Ok(cfg)
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

impl RunConfig {
    pub fn to_toml(&self) -> Result<String, toml::ser::Error> {
        toml::to_string(self)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(paths) = o.paths {
            self.n_paths = paths;
        }
        if let Some(mode) = o.mode {
            self.mode = mode;
        }
        if let Some(checks) = &o.checks {
            self.checks = Some(checks.clone());
        }
        if let Some(out) = &o.out {
            self.output.dir = Some(out.clone());
        }
    }

    pub fn tolerances(&self) -> ToleranceSet {
        let o = &self.tolerances;
        let d = ToleranceSet::default();
        ToleranceSet {
            hermiticity: o.hermiticity.unwrap_or(d.hermiticity),
            trace: o.trace.unwrap_or(d.trace),
            psd: o.psd.unwrap_or(d.psd),
            matrix: o.matrix.unwrap_or(d.matrix),
            reconstruction: o.reconstruction.unwrap_or(d.reconstruction),
            degeneracy: o.degeneracy.unwrap_or(d.degeneracy),
            luders_floor: o.luders_floor.unwrap_or(d.luders_floor),
            clamp: o.clamp.unwrap_or(d.clamp),
        }
    }

    pub fn check_list(&self) -> Result<Vec<Check>, ConfigError> {
        match &self.checks {
            None => Ok(Check::ALL.to_vec()),
            Some(names) => names
                .iter()
                .map(|n| Check::from_str(n).map_err(|_| ConfigError::invalid("checks", format!("unknown check `{n}`"))))
                .collect(),
        }
    }

    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let tols = self.tolerances();
        for (name, value) in [
            ("tolerances.hermiticity", tols.hermiticity),
            ("tolerances.trace", tols.trace),
            ("tolerances.psd", tols.psd),
            ("tolerances.matrix", tols.matrix),
            ("tolerances.reconstruction", tols.reconstruction),
            ("tolerances.degeneracy", tols.degeneracy),
            ("tolerances.luders_floor", tols.luders_floor),
            ("tolerances.clamp", tols.clamp),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ConfigError::invalid(name, "must be finite and >= 0"));
            }
        }
        let h = self.hamiltonian.build(&tols)?;
        let rho = self.rho0.matrix("rho0")?;
        if rho.dim() != h.dim() {
            return Err(ConfigError::invalid(
                "rho0",
                format!("dimension {} does not match the hamiltonian dimension {}", rho.dim(), h.dim()),
            ));
        }
        let rho0: DensityMatrix =
            reduction_core::validate_density(rho, &tols).map_err(|e| ConfigError::invalid("rho0", e))?;
        let params = ReductionParams::new(self.sigma, self.hbar).map_err(|e| {
            let field = if self.sigma.is_finite() && self.sigma >= 0.0 { "hbar" } else { "sigma" };
            ConfigError::invalid(field, e)
        })?;
        if !(self.grid.dt > 0.0) {
            return Err(ConfigError::invalid("grid.dt", "must be > 0"));
        }
        if !(self.grid.t_max > 0.0) {
            return Err(ConfigError::invalid("grid.t_max", "must be > 0"));
        }
        let grid = TimeGrid::new(self.grid.t_max, self.grid.dt).map_err(|e| ConfigError::invalid("grid", e))?;
        if self.n_paths == 0 {
            return Err(ConfigError::invalid("n_paths", "must be >= 1"));
        }
        if self.record_stride == 0 || !grid.n_steps().is_multiple_of(self.record_stride) {
            return Err(ConfigError::invalid("record_stride", "must be >= 1 and divide the number of steps"));
        }
        if let Some(t) = self.lindblad_times.iter().find(|&&t| !(t >= 0.0 && t <= self.grid.t_max)) {
            return Err(ConfigError::invalid("lindblad_times", format!("{t} is outside [0, t_max]")));
        }
        let checks = self.check_list()?;
        let model = Model::new(&h, rho0, params, tols).map_err(|e| ConfigError::invalid("hamiltonian", e))?;
        let resolved = Resolved {
            model,
            grid,
            n_paths: self.n_paths,
            seed: self.seed,
            mode: self.mode.mode(),
            checks,
            record_stride: self.record_stride,
            lindblad_times: self.lindblad_times.clone(),
        };
        if !resolved.checks.is_empty() && self.n_paths < 100 {
            return Err(ConfigError::invalid("n_paths", "statistical checks need at least 100 paths"));
        }
        Ok(resolved)
    }
}

impl MatrixSpec {
    pub fn from_matrix(m: &ComplexMatrix) -> Self {
        let im = m.imag_parts();
        Self { re: m.real_parts(), im: im.iter().any(|&x| x != 0.0).then_some(im) }
    }

    fn matrix(&self, field: &str) -> Result<ComplexMatrix, ConfigError> {
        let zeros;
        let im = match &self.im {
            Some(im) => im.as_slice(),
            None => {
                zeros = vec![0.0; self.re.len()];
                &zeros
            }
        };
        if im.len() != self.re.len() {
            return Err(ConfigError::invalid(
                &format!("{field}.im"),
                format!("has {} entries, `re` has {}", im.len(), self.re.len()),
            ));
        }
        let m = ComplexMatrix::from_real_imag(&self.re, im).map_err(|e| ConfigError::invalid(field, e))?;
        if !m.is_finite() {
            return Err(ConfigError::invalid(field, "entries must be finite"));
        }
        Ok(m)
    }
}

impl HamiltonianSpec {
    pub fn from_eigenvalues(values: &[f64]) -> Self {
        Self { eigenvalues: Some(values.to_vec()), ..Self::default() }
    }

    fn build(&self, tols: &ToleranceSet) -> Result<HermitianOperator, ConfigError> {
        match (&self.eigenvalues, &self.re) {
            (Some(_), Some(_)) => Err(ConfigError::invalid("hamiltonian", "give either `eigenvalues` or `re`/`im`, not both")),
            (None, None) => Err(ConfigError::invalid("hamiltonian", "missing `eigenvalues` or `re`")),
            (Some(values), None) => {
                if self.im.is_some() {
                    return Err(ConfigError::invalid("hamiltonian.im", "only allowed with `re`"));
                }
                if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                    return Err(ConfigError::invalid("hamiltonian.eigenvalues", "must be non-empty and finite"));
                }
                match &self.basis {
                    None => Ok(HermitianOperator::diagonal(values)),
                    Some(basis) => {
                        let u = basis.matrix("hamiltonian.basis")?;
                        HermitianOperator::from_eigenbasis(values, &u, tols)
                            .map_err(|e| ConfigError::invalid("hamiltonian.basis", e))
                    }
                }
            }
            (None, Some(re)) => {
                if self.basis.is_some() {
                    return Err(ConfigError::invalid("hamiltonian.basis", "only allowed with `eigenvalues`"));
                }
                let m = MatrixSpec { re: re.clone(), im: self.im.clone() }.matrix("hamiltonian")?;
                HermitianOperator::new(m, tols).map_err(|e| ConfigError::invalid("hamiltonian", e))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "
[hamiltonian]
eigenvalues = [0.0, 1.0]

[rho0]
re = [0.5, 0.25, 0.25, 0.5]

[grid]
t_max = 1.0
";

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!((cfg.sigma, cfg.hbar, cfg.grid.dt), (1.0, 1.0, 1e-3));
        assert_eq!(cfg.mode, ModeName::Sde);
        assert_eq!(cfg.check_list().unwrap(), Check::ALL.to_vec());
        assert_eq!(cfg.resolve().unwrap().grid.n_steps(), 1000);
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_line() {
        let text = MINIMAL.replace("t_max = 1.0", "t_max = 1.0\nsteps = 5");
        match parse_config(&text) {
            Err(ConfigError::Parse { line, message, .. }) => {
                assert_eq!(line, 10);
                assert!(message.contains("steps"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_dt_is_a_validation_error() {
        let text = MINIMAL.replace("t_max = 1.0", "t_max = 1.0\ndt = -0.1");
        assert!(matches!(parse_config(&text), Err(ConfigError::Invalid { field, .. }) if field == "grid.dt"));
    }

    #[test]
    fn non_hermitian_matrix_reports_the_deviation() {
        let text = MINIMAL.replace("eigenvalues = [0.0, 1.0]", "re = [0.0, 1.0, 0.5, 1.0]");
        match parse_config(&text) {
            Err(ConfigError::Invalid { field, message }) => {
                assert_eq!(field, "hamiltonian");
                assert!(message.contains("not Hermitian") && message.contains("5e-1"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn both_hamiltonian_forms_are_rejected() {
        let text = MINIMAL.replace("eigenvalues = [0.0, 1.0]", "eigenvalues = [0.0, 1.0]\nre = [0.0, 0.0, 0.0, 1.0]");
        assert!(matches!(parse_config(&text), Err(ConfigError::Invalid { field, .. }) if field == "hamiltonian"));
    }

    #[test]
    fn eigenbasis_form_matches_full_matrix_form() {
        let s = 0.5f64.sqrt();
        let rotated = MINIMAL.replace(
            "eigenvalues = [0.0, 1.0]",
            &format!("eigenvalues = [0.0, 1.0]\nbasis = {{ re = [{s}, {s}, {s}, -{s}] }}"),
        );
        let full = MINIMAL.replace("eigenvalues = [0.0, 1.0]", "re = [0.5, -0.5, -0.5, 0.5]");
        let a = parse_config(&rotated).unwrap().resolve().unwrap();
        let b = parse_config(&full).unwrap().resolve().unwrap();
        let diff = a.model.hamiltonian().matrix().max_abs_diff(b.model.hamiltonian().matrix());
        assert!(diff < 1e-15, "{diff}");
    }

    #[test]
    fn config_round_trips() {
        let mut cfg = parse_config(MINIMAL).unwrap();
        cfg.apply(&Overrides {
            seed: Some(42),
            paths: Some(500),
            mode: Some(ModeName::Both),
            checks: Some(vec!["born".into(), "lindblad".into()]),
            out: Some(PathBuf::from("out")),
        });
        cfg.rho0.im = Some(vec![0.0, 0.1, -0.1, 0.0]);
        cfg.tolerances.clamp = Some(1e-5);
        cfg.lindblad_times = vec![0.5, 1.0];
        let text = cfg.to_toml().unwrap();
        assert_eq!(parse_config(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_check_names_are_field_errors() {
        let text = format!("checks = [\"born\", \"nope\"]\n{MINIMAL}");
        assert!(matches!(parse_config(&text), Err(ConfigError::Invalid { field, .. }) if field == "checks"));
    }
}
