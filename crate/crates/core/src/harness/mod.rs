//! Scenario runner: config in, CSV tables and a run manifest out.

mod config;

pub use config::{
    load_config, parse_config, validate, Config, Correlation, GainSweepConfig, ManyTaskConfig, OneOrMany,
    OutputKind, Outputs, ResolvedCovariance, Scenario, SimulationConfig, SolverConfig, Violation,
};

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::asymptotics;
use crate::rng::scenario_id;
use crate::simulator::{self, SimOptions};
use crate::solver;
use crate::spectra::{self, KernelSpectrum};
use crate::{Error, Result};

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "MTGP_OUT_DIR";

/// Reference configs shipped with the crate, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("fig1_left", include_str!("../../configs/fig1_left.json")),
    ("fig1_mid", include_str!("../../configs/fig1_mid.json")),
    ("fig1_right", include_str!("../../configs/fig1_right.json")),
    ("fig2_left_gain", include_str!("../../configs/fig2_left_gain.json")),
    ("fig2_right_manytasks", include_str!("../../configs/fig2_right_manytasks.json")),
];

/// Looks up a bundled config; a unique prefix such as `fig2_right` works.
pub fn bundled(name: &str) -> Option<&'static str> {
    if let Some((_, text)) = BUNDLED.iter().find(|(n, _)| *n == name) {
        return Some(text);
    }
    let mut hits = BUNDLED.iter().filter(|(n, _)| n.starts_with(name));
    match (hits.next(), hits.next()) {
        (Some((_, text)), None) => Some(text),
        _ => None,
    }
}

/// Reads a config from a file, falling back to a bundled name.
pub fn resolve_config_source(source: &str) -> Result<Config> {
    let path = Path::new(source);
    if path.exists() {
        return load_config(path);
    }
    match bundled(source) {
        Some(text) => parse_config(text),
        None => Err(Error::Config(format!("no config file or bundled config named '{source}'"))),
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub replicas: Option<usize>,
    pub only: Option<OutputKind>,
}

/// Applies command-line overrides and fills defaults, so that the result
/// alone reproduces the run.
pub fn resolve(config: &Config, opts: &RunOptions) -> Config {
    let mut out = config.clone();
    for s in &mut out.scenarios {
        if let Some(seed) = opts.seed {
            s.seed = seed;
        }
        if let Some(r) = opts.replicas {
            s.replicas = r;
        }
        if let Some(kind) = opts.only {
            s.outputs = s.outputs.intersect(&Outputs::only(kind));
        }
        if s.fractions.is_none() && s.tasks() > 0 {
            s.fractions = Some(s.fraction_vector());
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub files: Vec<String>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub scenarios: Vec<ScenarioReport>,
    /// Path of the manifest; `None` when there was nothing to run.
    #[serde(skip)]
    pub manifest: Option<PathBuf>,
}

impl RunSummary {
    pub fn all_ok(&self) -> bool {
        self.scenarios.iter().all(|s| s.status == Status::Ok)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    seed_override: Option<u64>,
    replicas_override: Option<usize>,
    only: Option<OutputKind>,
    config: &'a Config,
    scenarios: &'a [ScenarioReport],
    seconds: f64,
}

/// Runs every scenario, each in isolation: a failing scenario is reported
/// in the summary and manifest without affecting the others. Fails early
/// only on an invalid config or when outputs cannot be written.
pub fn run(config: &Config, opts: &RunOptions) -> Result<RunSummary> {
    let resolved = resolve(config, opts);
    let violations = validate(&resolved);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(Error::Config(list.join("; ")));
    }
    if resolved.scenarios.is_empty() {
        return Ok(RunSummary {
            scenarios: Vec::new(),
            manifest: None,
        });
    }
    std::fs::create_dir_all(&opts.out_dir)?;
    let start = Instant::now();
    let results: Vec<(ScenarioReport, Vec<Table>)> = resolved
        .scenarios
        .par_iter()
        .map(|s| {
            let t0 = Instant::now();
            info!("scenario {}: start", s.name);
            let outcome = run_scenario(s);
            let seconds = t0.elapsed().as_secs_f64();
            match outcome {
                Ok(tables) => {
                    info!("scenario {}: done in {seconds:.1} s", s.name);
                    let report = ScenarioReport {
                        name: s.name.clone(),
                        status: Status::Ok,
                        error: None,
                        files: tables.iter().map(|t| t.file_name(&s.name)).collect(),
                        seconds,
                    };
                    (report, tables)
                }
                Err(e) => {
                    warn!("scenario {} failed: {e}", s.name);
                    let report = ScenarioReport {
                        name: s.name.clone(),
                        status: Status::Failed,
                        error: Some(e.to_string()),
                        files: Vec::new(),
                        seconds,
                    };
                    (report, Vec::new())
                }
            }
        })
        .collect();
    let mut reports = Vec::with_capacity(results.len());
    for (report, tables) in results {
        for t in &tables {
            t.write(&opts.out_dir.join(t.file_name(&report.name)))?;
        }
        reports.push(report);
    }
    let manifest_path = opts.out_dir.join("manifest.json");
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        seed_override: opts.seed,
        replicas_override: opts.replicas,
        only: opts.only,
        config: &resolved,
        scenarios: &reports,
        seconds: start.elapsed().as_secs_f64(),
    };
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(RunSummary {
        scenarios: reports,
        manifest: Some(manifest_path),
    })
}

/// One output table, held in memory until the scenario has finished.
struct Table {
    kind: &'static str,
    header: &'static [&'static str],
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(kind: &'static str, header: &'static [&'static str]) -> Self {
        Self {
            kind,
            header,
            rows: Vec::new(),
        }
    }

    fn file_name(&self, scenario: &str) -> String {
        format!("{scenario}_{}.csv", self.kind)
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// 17 significant digits, enough to round-trip an `f64`.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn int(n: usize) -> String {
    n.to_string()
}

fn sim_options(s: &Scenario) -> SimOptions {
    SimOptions {
        replicas: s.replicas,
        seed: s.seed,
        scenario: scenario_id(&s.name),
        tasks: vec![0],
        allocation: s.simulation.allocation,
        test_points: s.simulation.test_points,
    }
}

fn run_scenario(s: &Scenario) -> Result<Vec<Table>> {
    let o = s.outputs;
    if !(o.predict || o.simulate || o.asymptotic || o.gain_sweep || o.many_task) {
        return Ok(Vec::new());
    }
    let needs_spectrum = o.predict || o.asymptotic || o.gain_sweep || o.many_task;
    let spectrum = if needs_spectrum {
        Some(spectra::kernel_spectrum(&s.kernel, &s.inputs, &s.spectrum)?)
    } else {
        None
    };
    let mut tables = Vec::new();
    if o.predict || o.simulate {
        tables.push(curves(s, spectrum.as_ref())?);
    }
    if let Some(sp) = &spectrum {
        if o.asymptotic {
            tables.push(asymptotic_table(s, sp)?);
        }
        if o.gain_sweep {
            tables.push(gain_sweep_table(s, sp)?);
        }
        if o.many_task {
            tables.push(many_task_table(s, sp)?);
        }
    }
    Ok(tables)
}

/// Union of two ascending grids.
fn merged_grid(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut all: Vec<f64> = a.iter().chain(b).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    all
}

fn curves(s: &Scenario, spectrum: Option<&KernelSpectrum<f64>>) -> Result<Table> {
    let mut table = Table::new("curves", &["n", "rho2", "eps1_pred", "eps1_sim", "eps1_stderr"]);
    let noise = DVector::from_vec(s.noise_vector());
    let fractions = s.fraction_vector();
    let frac_v = DVector::from_vec(fractions.clone());
    let sim_grid: Vec<usize> = if s.outputs.simulate { s.simulation_grid() } else { Vec::new() };
    let pred_grid: &[f64] = if s.outputs.predict { &s.n_grid } else { &[] };
    let sim_f: Vec<f64> = sim_grid.iter().map(|&n| n as f64).collect();
    let grid = merged_grid(pred_grid, &sim_f);
    let solver_opts = s.solver.options();
    let sim_opts = sim_options(s);
    for cov in s.covariances() {
        let pred: Vec<(f64, f64)> = match (s.outputs.predict, spectrum) {
            (true, Some(sp)) => solver::learning_curve(sp, &cov.d, &noise, &frac_v, pred_grid, &solver_opts)?
                .into_iter()
                .map(|p| (p.n, p.errors.eps[0]))
                .collect(),
            _ => Vec::new(),
        };
        let sims: Vec<(f64, f64, f64)> = sim_grid
            .iter()
            .map(|&n| {
                let est = simulator::bayes_error_estimate(&s.kernel, &s.inputs, &cov.d, &noise, n, &fractions, &sim_opts)
                    .map_err(|e| Error::at_n(n as f64, e))?;
                Ok((n as f64, est.eps_hat[0], est.stderr[0]))
            })
            .collect::<Result<_>>()?;
        for &n in &grid {
            let p = pred.iter().find(|q| q.0 == n).map(|q| q.1);
            let m = sims.iter().find(|q| q.0 == n);
            table.rows.push(vec![
                num(n),
                opt(cov.rho2),
                opt(p),
                opt(m.map(|q| q.1)),
                opt(m.map(|q| q.2)),
            ]);
        }
    }
    Ok(table)
}

fn asymptotic_table(s: &Scenario, spectrum: &KernelSpectrum<f64>) -> Result<Table> {
    let mut table = Table::new(
        "asymptotic",
        &["n", "rho2", "task", "eps_large_n", "eps_power_law", "gain", "valid"],
    );
    let noise = DVector::from_vec(s.noise_vector());
    let fractions = DVector::from_vec(s.fraction_vector());
    let all_observed = fractions.iter().all(|&p| p > 0.0);
    for cov in s.covariances() {
        let gains = if all_observed {
            Some(asymptotics::multitask_gain(spectrum, &cov.d, &noise, &fractions)?.gains)
        } else {
            None
        };
        for &n in &s.n_grid {
            let a = asymptotics::asymptotic_errors(spectrum, &cov.d, &noise, &fractions, n)?;
            for task in 0..s.tasks() {
                table.rows.push(vec![
                    num(n),
                    opt(cov.rho2),
                    int(task + 1),
                    num(a.exact[task]),
                    opt(a.power_law[task]),
                    opt(gains.as_ref().map(|g| g[task])),
                    a.valid[task].to_string(),
                ]);
            }
        }
    }
    Ok(table)
}

fn gain_sweep_table(s: &Scenario, spectrum: &KernelSpectrum<f64>) -> Result<Table> {
    let mut table = Table::new(
        "gain_sweep",
        &["n", "rho2", "eps1_pred", "r_pred", "eps1_sim", "eps1_stderr", "r_sim"],
    );
    let g = s
        .gain_sweep
        .as_ref()
        .ok_or_else(|| Error::Config("gain_sweep section missing".into()))?;
    let noise = s.noise_vector()[0];
    let pi2 = s.fraction_vector()[1];
    let solver_opts = s.solver.options();
    let sim_opts = sim_options(s);
    let mut counts = vec![(g.n, g.simulate)];
    counts.extend(g.prediction_n.iter().filter(|&&n| n != g.n).map(|&n| (n, false)));
    for (n, simulate) in counts {
        let sim = simulate.then_some(&sim_opts);
        let rows = simulator::gain_sweep(&s.kernel, &s.inputs, spectrum, noise, pi2, n, &g.rho2, &solver_opts, sim)
            .map_err(|e| Error::at_n(n as f64, e))?;
        for r in rows {
            table.rows.push(vec![
                int(n),
                num(r.rho2),
                num(r.eps_pred),
                num(r.r_pred),
                opt(r.eps_sim),
                opt(r.stderr_sim),
                opt(r.r_sim),
            ]);
        }
    }
    Ok(table)
}

fn many_task_table(s: &Scenario, spectrum: &KernelSpectrum<f64>) -> Result<Table> {
    let mut table = Table::new(
        "many_task",
        &["tasks", "n", "eps_pred", "stage1", "stage2", "plateau", "eps1_sim", "eps1_stderr"],
    );
    let rho = s
        .rhos()
        .and_then(|r| r.first().copied())
        .ok_or_else(|| Error::Config("many-task output needs an equicorrelated scenario".into()))?;
    let noise = s.noise_vector()[0];
    let solver_opts = s.solver.options();
    let extra = s.many_task.clone().unwrap_or_default();
    let main_tasks = s.tasks();
    let sim_grid: Vec<usize> = if extra.simulate { s.simulation_grid() } else { Vec::new() };
    let sims: Vec<(f64, f64, f64)> = if sim_grid.is_empty() {
        Vec::new()
    } else {
        let d = solver::equicorrelated(main_tasks, rho);
        let noise_v = DVector::from_element(main_tasks, noise);
        let fractions = s.fraction_vector();
        let sim_opts = sim_options(s);
        sim_grid
            .iter()
            .map(|&n| {
                let est = simulator::bayes_error_estimate(&s.kernel, &s.inputs, &d, &noise_v, n, &fractions, &sim_opts)
                    .map_err(|e| Error::at_n(n as f64, e))?;
                Ok((n as f64, est.eps_hat[0], est.stderr[0]))
            })
            .collect::<Result<_>>()?
    };
    let mut task_counts = vec![main_tasks];
    task_counts.extend(extra.extra_tasks.iter().filter(|&&t| t != main_tasks));
    let plateau = 1.0 - rho;
    for tasks in task_counts {
        let sim_here: &[(f64, f64, f64)] = if tasks == main_tasks { &sims } else { &[] };
        let sim_n: Vec<f64> = sim_here.iter().map(|q| q.0).collect();
        let grid = merged_grid(&s.n_grid, &sim_n);
        let curve = asymptotics::many_task_curve(spectrum, rho, tasks, noise, &grid, &solver_opts)?;
        for p in curve {
            let m = sim_here.iter().find(|q| q.0 == p.n);
            table.rows.push(vec![
                int(tasks),
                num(p.n),
                num(p.eps),
                opt(p.stage1),
                opt(p.stage2),
                num(plateau),
                opt(m.map(|q| q.1)),
                opt(m.map(|q| q.2)),
            ]);
        }
    }
    Ok(table)
}
