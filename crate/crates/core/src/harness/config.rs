//! Scenario configuration files.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::kernel::{InputDist, KernelSpec};
use crate::simulator::{Allocation, DEFAULT_REPLICAS};
use crate::solver::{self, SolverOptions};
use crate::spectra::SpectrumOptions;
use crate::{Error, Result};

/// A whole config file: a list of independent scenarios.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub scenarios: Vec<Scenario>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Used in output file names; letters, digits, `_` and `-` only.
    pub name: String,
    pub kernel: KernelSpec<f64>,
    pub inputs: InputDist<f64>,
    pub correlation: Correlation,
    /// One value for all tasks, or one per task.
    pub noise: OneOrMany,
    /// Fraction of examples per task; defaults to equal shares.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fractions: Option<Vec<f64>>,
    /// Total example counts for predictions, strictly ascending.
    pub n_grid: Vec<f64>,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub spectrum: SpectrumOptions,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_sweep: Option<GainSweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub many_task: Option<ManyTaskConfig>,
}

fn default_replicas() -> usize {
    DEFAULT_REPLICAS
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(x) => vec![*x],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// Inter-task covariance: either equicorrelated (unit diagonal, one or
/// more off-diagonal values, given as `rho` or as squared `rho2`) or an
/// explicit matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Correlation {
    Equicorrelated {
        tasks: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rho: Option<OneOrMany>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rho2: Option<OneOrMany>,
    },
    Matrix(Vec<Vec<f64>>),
}

impl Correlation {
    pub fn tasks(&self) -> usize {
        match self {
            Correlation::Equicorrelated { tasks, .. } => *tasks,
            Correlation::Matrix(rows) => rows.len(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    pub predict: bool,
    pub simulate: bool,
    pub asymptotic: bool,
    pub gain_sweep: bool,
    pub many_task: bool,
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            predict: true,
            simulate: false,
            asymptotic: false,
            gain_sweep: false,
            many_task: false,
        }
    }
}

/// Output kinds selectable with `--only`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum OutputKind {
    Predict,
    Simulate,
    Asymptotic,
    GainSweep,
    ManyTask,
}

impl Outputs {
    pub fn only(kind: OutputKind) -> Self {
        let mut o = Outputs {
            predict: false,
            ..Outputs::default()
        };
        match kind {
            OutputKind::Predict => o.predict = true,
            OutputKind::Simulate => o.simulate = true,
            OutputKind::Asymptotic => o.asymptotic = true,
            OutputKind::GainSweep => o.gain_sweep = true,
            OutputKind::ManyTask => o.many_task = true,
        }
        o
    }

    /// Keeps only the outputs that are also enabled in `mask`.
    pub fn intersect(&self, mask: &Outputs) -> Outputs {
        Outputs {
            predict: self.predict && mask.predict,
            simulate: self.simulate && mask.simulate,
            asymptotic: self.asymptotic && mask.asymptotic,
            gain_sweep: self.gain_sweep && mask.gain_sweep,
            many_task: self.many_task && mask.many_task,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Total counts to simulate; defaults to the integer points of `n_grid`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<Vec<usize>>,
    pub allocation: Allocation,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_points: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

impl SolverConfig {
    pub fn options(&self) -> SolverOptions<f64> {
        let mut o = SolverOptions::default();
        if let Some(tol) = self.tol {
            o.tol = tol;
        }
        if let Some(m) = self.max_iter {
            o.max_iter = m;
        }
        o
    }
}

/// Normalised error reduction of task 1 against `rho2` for two tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSweepConfig {
    /// Total count at which predictions and simulations are compared.
    pub n: usize,
    pub rho2: Vec<f64>,
    /// Further counts with predictions only.
    #[serde(default)]
    pub prediction_n: Vec<usize>,
    #[serde(default = "default_true")]
    pub simulate: bool,
}

/// Many-task curves for an equicorrelated scenario with one correlation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManyTaskConfig {
    /// Further task counts with predictions only.
    pub extra_tasks: Vec<usize>,
    /// Simulate the scenario's own task count at `simulation.n_grid`.
    pub simulate: bool,
}

/// One violation found by [`validate`], with the key path it refers to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Parses a config; also accepts a run manifest, whose `config` entry is
/// the resolved config of that run.
pub fn parse_config(text: &str) -> Result<Config> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let value = match value {
        serde_json::Value::Object(mut map) if map.contains_key("config") => {
            map.remove("config").unwrap_or_default()
        }
        other => other,
    };
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(format!("{path}: {}", e.into_inner()))
    })
}

pub fn load_config(path: &Path) -> Result<Config> {
    parse_config(&std::fs::read_to_string(path)?)
}

/// One resolved covariance of a scenario, labelled by its squared
/// correlation when equicorrelated.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedCovariance {
    pub rho: Option<f64>,
    /// Squared correlation as written in the config, or `rho^2`.
    pub rho2: Option<f64>,
    pub d: DMatrix<f64>,
}

impl Scenario {
    pub fn tasks(&self) -> usize {
        self.correlation.tasks()
    }

    /// Off-diagonal correlations of an equicorrelated scenario.
    pub fn rhos(&self) -> Option<Vec<f64>> {
        match &self.correlation {
            Correlation::Equicorrelated { rho, rho2, .. } => match (rho, rho2) {
                (Some(r), None) => Some(r.values()),
                (None, Some(r2)) => Some(r2.values().iter().map(|v| v.sqrt()).collect()),
                _ => None,
            },
            Correlation::Matrix(_) => None,
        }
    }

    pub fn covariances(&self) -> Vec<ResolvedCovariance> {
        match &self.correlation {
            Correlation::Equicorrelated { tasks, rho2, .. } => {
                let labels = match rho2 {
                    Some(r2) => r2.values(),
                    None => self.rhos().unwrap_or_default().iter().map(|r| r * r).collect(),
                };
                self.rhos()
                    .unwrap_or_default()
                    .into_iter()
                    .zip(labels)
                    .map(|(rho, rho2)| ResolvedCovariance {
                        rho: Some(rho),
                        rho2: Some(rho2),
                        d: solver::equicorrelated(*tasks, rho),
                    })
                    .collect()
            }
            Correlation::Matrix(rows) => {
                let t = rows.len();
                vec![ResolvedCovariance {
                    rho: None,
                    rho2: None,
                    d: DMatrix::from_fn(t, t, |i, j| rows[i][j]),
                }]
            }
        }
    }

    pub fn noise_vector(&self) -> Vec<f64> {
        match &self.noise {
            OneOrMany::One(x) => vec![*x; self.tasks()],
            OneOrMany::Many(v) => v.clone(),
        }
    }

    pub fn fraction_vector(&self) -> Vec<f64> {
        let t = self.tasks();
        self.fractions.clone().unwrap_or_else(|| vec![1.0 / t as f64; t])
    }

    /// Simulation grid: explicit, or the integer points of `n_grid`.
    pub fn simulation_grid(&self) -> Vec<usize> {
        match &self.simulation.n_grid {
            Some(g) => g.clone(),
            None => self
                .n_grid
                .iter()
                .filter(|&&n| n >= 0.0 && n.fract() == 0.0)
                .map(|&n| n as usize)
                .collect(),
        }
    }
}

/// Checks a config without computing anything.
pub fn validate(config: &Config) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut names = HashSet::new();
    for (i, s) in config.scenarios.iter().enumerate() {
        let p = format!("scenarios[{i}]");
        let mut v = |key: &str, message: String| {
            out.push(Violation {
                path: format!("{p}.{key}"),
                message,
            })
        };
        if s.name.is_empty() || !s.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            v("name", format!("'{}' must be non-empty and use only letters, digits, '_' and '-'", s.name));
        }
        if !names.insert(s.name.clone()) {
            v("name", format!("duplicate scenario name '{}'", s.name));
        }
        if let Err(e) = s.kernel.validate() {
            v("kernel.lengthscale", e.to_string());
        }
        if let Err(e) = s.inputs.validate() {
            v("inputs", e.to_string());
        }
        let t = s.tasks();
        if t == 0 {
            v("correlation", "need at least one task".into());
        }
        match &s.correlation {
            Correlation::Equicorrelated { rho, rho2, .. } => {
                match (rho, rho2) {
                    (Some(_), Some(_)) => v("correlation.equicorrelated", "give either rho or rho2, not both".into()),
                    (None, None) => v("correlation.equicorrelated", "missing rho or rho2".into()),
                    _ => {}
                }
                if let Some(r2) = rho2 {
                    for (k, &x) in r2.values().iter().enumerate() {
                        if !(0.0..=1.0).contains(&x) {
                            v(&format!("correlation.equicorrelated.rho2[{k}]"), format!("squared correlation {x} out of range [0, 1]"));
                        }
                    }
                }
                if let Some(r) = rho {
                    let lower = if t > 1 { -1.0 / (t as f64 - 1.0) } else { -1.0 };
                    for (k, &x) in r.values().iter().enumerate() {
                        if !(x >= lower && x <= 1.0) {
                            v(&format!("correlation.equicorrelated.rho[{k}]"), format!("correlation {x} out of range [{lower}, 1]"));
                        }
                    }
                }
                if s.rhos().is_some_and(|r| r.is_empty()) {
                    v("correlation.equicorrelated", "no correlation values".into());
                }
            }
            Correlation::Matrix(rows) => {
                if rows.iter().any(|r| r.len() != t) {
                    v("correlation.matrix", "matrix must be square".into());
                } else if t > 0 {
                    let d = DMatrix::from_fn(t, t, |i, j| rows[i][j]);
                    if let Err(e) = solver::validate_covariance(&d) {
                        v("correlation.matrix", e.to_string());
                    }
                }
            }
        }
        let noise = s.noise_vector();
        if noise.len() != t {
            v("noise", format!("{} values for {t} tasks", noise.len()));
        }
        if noise.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            v("noise", "noise variances must be positive".into());
        }
        let fr = s.fraction_vector();
        if fr.len() != t {
            v("fractions", format!("{} values for {t} tasks", fr.len()));
        }
        if fr.iter().any(|&x| !(x >= 0.0)) {
            v("fractions", "fractions must be non-negative".into());
        }
        let sum: f64 = fr.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            v("fractions", format!("fractions sum to {sum}, not 1"));
        }
        if s.n_grid.is_empty() && (s.outputs.predict || s.outputs.asymptotic || s.outputs.many_task) {
            v("n_grid", "empty grid".into());
        }
        if s.n_grid.iter().any(|&n| !(n >= 0.0) || !n.is_finite()) {
            v("n_grid", "counts must be finite and non-negative".into());
        }
        if s.n_grid.windows(2).any(|w| !(w[1] > w[0])) {
            v("n_grid", "grid must be strictly ascending".into());
        }
        if let Some(g) = &s.simulation.n_grid {
            if g.windows(2).any(|w| w[1] <= w[0]) {
                v("simulation.n_grid", "grid must be strictly ascending".into());
            }
        }
        let simulates = s.outputs.simulate
            || (s.outputs.gain_sweep && s.gain_sweep.as_ref().is_some_and(|g| g.simulate))
            || (s.outputs.many_task && s.many_task.as_ref().is_some_and(|m| m.simulate));
        if simulates && s.replicas < 2 {
            v("replicas", "simulation needs at least two replicas".into());
        }
        if !(s.spectrum.tail_tol > 0.0 && s.spectrum.tail_tol < 1.0) {
            v("spectrum.tail_tol", "must lie in (0, 1)".into());
        }
        if s.spectrum.max_eigenvalues == 0 {
            v("spectrum.max_eigenvalues", "must be positive".into());
        }
        if s.solver.tol.is_some_and(|x| !(x > 0.0)) {
            v("solver.tol", "must be positive".into());
        }
        if s.outputs.gain_sweep {
            let two_task = matches!(s.correlation, Correlation::Equicorrelated { tasks: 2, .. });
            match &s.gain_sweep {
                None => v("gain_sweep", "gain_sweep output requested without a gain_sweep section".into()),
                Some(g) => {
                    if !two_task {
                        v("gain_sweep", "needs an equicorrelated two-task scenario".into());
                    }
                    if g.rho2.iter().any(|x| !(0.0..=1.0).contains(x)) {
                        v("gain_sweep.rho2", "squared correlations must lie in [0, 1]".into());
                    }
                }
            }
            if noise.windows(2).any(|w| w[0] != w[1]) {
                v("noise", "gain sweep needs equal noise for both tasks".into());
            }
        }
        if s.outputs.many_task {
            let single = s.rhos().is_some_and(|r| r.len() == 1 && r[0] >= 0.0);
            if !single {
                v("correlation", "many-task output needs one non-negative equicorrelated value".into());
            }
            if noise.windows(2).any(|w| w[0] != w[1]) {
                v("noise", "many-task output needs equal noise".into());
            }
            if fr.windows(2).any(|w| (w[0] - w[1]).abs() > 1e-12) {
                v("fractions", "many-task output needs equal fractions".into());
            }
            if let Some(m) = &s.many_task {
                if m.extra_tasks.contains(&0) {
                    v("many_task.extra_tasks", "task counts must be positive".into());
                }
            }
        }
    }
    out
}
