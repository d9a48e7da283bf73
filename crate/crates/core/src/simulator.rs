//! Monte-Carlo Bayes errors from the exact multi-task GP posterior.
//!
//! In the matched setting the Bayes error of task `t` is the posterior
//! variance `V_t(x) = D_tt C(x, x) - k_t(x)^T K^-1 k_t(x)` averaged over test
//! inputs and over training sets. Outputs never enter, so a replica only
//! samples training inputs, factors the Gram matrix once and averages
//! `V_t` over a fixed set of test points.

use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::kernel::{Covariance, InputDist};
use crate::linalg::{cholesky, CholeskyFactor};
use crate::rng::{replica_rng, ReplicaRng};
use crate::solver::{self, validate_covariance, SolverOptions, TaskSetup};
use crate::spectra::KernelSpectrum;
use crate::{lit, to_f64, Error, Real, Result};

/// Gauss-Legendre test nodes for uniform inputs.
pub const UNIFORM_TEST_POINTS: usize = 512;
/// Independent test samples per replica for Gaussian inputs.
pub const GAUSSIAN_TEST_POINTS: usize = 2048;
pub const DEFAULT_REPLICAS: usize = 200;

/// Training inputs with task labels (0-based). Outputs are not needed.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<S> {
    pub inputs: Vec<S>,
    pub labels: Vec<usize>,
}

impl<S: Real> Dataset<S> {
    pub fn empty() -> Self {
        Self {
            inputs: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn counts(&self, tasks: usize) -> Vec<usize> {
        let mut c = vec![0; tasks];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    pub fn push(&mut self, x: S, task: usize) {
        self.inputs.push(x);
        self.labels.push(task);
    }
}

/// How integer example counts are derived from `n` and the fractions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocation {
    /// `n_2 = floor(n pi_2)`, `n_1 = n - n_2` for two tasks; largest
    /// remainder for more.
    #[default]
    Proportional,
    /// Example `k` goes to task `k mod T`, so task 1 is served first.
    InOrder,
    /// Each example's task is drawn from the fractions.
    Random,
}

/// Integer counts summing to `n` with `n_t` close to `n pi_t`.
pub fn apportion(n: usize, fractions: &[f64]) -> Result<Vec<usize>> {
    let total: f64 = fractions.iter().sum();
    if fractions.is_empty() || fractions.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("fractions must be non-negative and sum to 1"));
    }
    let nf = n as f64;
    if fractions.len() == 2 {
        let n2 = ((nf * fractions[1] + 1e-9).floor() as usize).min(n);
        return Ok(vec![n - n2, n2]);
    }
    let quotas: Vec<f64> = fractions.iter().map(|&p| nf * p).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|&q| (q + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    // Largest remainder first; ties go to the lower task index.
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - counts[a] as f64;
        let rb = quotas[b] - counts[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &t in order.iter().take(n.saturating_sub(assigned)) {
        counts[t] += 1;
    }
    Ok(counts)
}

/// Task label of each of the `n` examples, in example order.
pub fn allocate_labels<R: Rng + ?Sized>(
    n: usize,
    fractions: &[f64],
    allocation: Allocation,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let t = fractions.len();
    match allocation {
        Allocation::Proportional => {
            let counts = apportion(n, fractions)?;
            Ok(counts.iter().enumerate().flat_map(|(task, &c)| std::iter::repeat_n(task, c)).collect())
        }
        Allocation::InOrder => {
            if t == 0 {
                return Err(Error::invalid("need at least one task"));
            }
            Ok((0..n).map(|k| k % t).collect())
        }
        Allocation::Random => {
            apportion(0, fractions)?;
            let tasks: Vec<(usize, f64)> = fractions.iter().copied().enumerate().collect();
            Ok((0..n)
                .map(|_| tasks.choose_weighted(rng, |p| p.1).map(|p| p.0).unwrap_or(0))
                .collect())
        }
    }
}

/// Draws inputs i.i.d. from `dist` for the given labels, in label order.
pub fn sample_inputs<S: Real, R: Rng + ?Sized>(dist: &InputDist<S>, labels: &[usize], rng: &mut R) -> Dataset<S> {
    Dataset {
        inputs: labels.iter().map(|_| dist.sample(rng)).collect(),
        labels: labels.to_vec(),
    }
}

/// A data set with `counts[t]` examples of task `t`, listed task by task.
/// Deterministic in `seed`.
pub fn sample_dataset<S: Real>(dist: &InputDist<S>, counts: &[usize], seed: u64) -> Dataset<S> {
    let labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(task, &c)| std::iter::repeat_n(task, c))
        .collect();
    sample_inputs(dist, &labels, &mut replica_rng(seed, 0, 0))
}

/// Factored GP posterior for one data set.
pub struct Posterior<'a, S: Real, C: Covariance<S>> {
    kernel: &'a C,
    d: &'a DMatrix<S>,
    data: &'a Dataset<S>,
    factor: CholeskyFactor<S>,
}

impl<'a, S: Real, C: Covariance<S>> Posterior<'a, S, C> {
    pub fn new(kernel: &'a C, d: &'a DMatrix<S>, noise: &DVector<S>, data: &'a Dataset<S>) -> Result<Self> {
        let t = d.nrows();
        if noise.len() != t {
            return Err(Error::DimensionMismatch {
                what: "noise",
                got: noise.len(),
                expected: t,
            });
        }
        if data.inputs.len() != data.labels.len() {
            return Err(Error::DimensionMismatch {
                what: "labels",
                got: data.labels.len(),
                expected: data.inputs.len(),
            });
        }
        if let Some(&bad) = data.labels.iter().find(|&&l| l >= t) {
            return Err(Error::invalid(format!("task label {bad} out of range for {t} tasks")));
        }
        let n = data.len();
        let (x, lab) = (&data.inputs, &data.labels);
        let mut k = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                k[(i, j)] = d[(lab[i], lab[j])] * kernel.cov(x[i], x[j]);
            }
            k[(j, j)] += noise[lab[j]];
        }
        let factor = cholesky(k)?;
        Ok(Self { kernel, d, data, factor })
    }

    /// `V_t(x)` at one point.
    pub fn variance(&self, x: S, task: usize) -> Result<S> {
        Ok(self.variances(&[x], task)?[0])
    }

    /// `V_t` at many points with one blocked triangular solve.
    pub fn variances(&self, points: &[S], task: usize) -> Result<Vec<S>> {
        let n = self.data.len();
        let prior: Vec<S> = points.iter().map(|&x| self.d[(task, task)] * self.kernel.variance_at(x)).collect();
        if n == 0 {
            return Ok(prior);
        }
        let (xs, lab) = (&self.data.inputs, &self.data.labels);
        let mut rhs = DMatrix::from_fn(n, points.len(), |l, p| self.d[(task, lab[l])] * self.kernel.cov(points[p], xs[l]));
        self.factor.forward_solve_in_place(&mut rhs);
        rhs.column_iter()
            .zip(prior)
            .map(|(col, p)| clamp_variance(p - col.norm_squared(), p))
            .collect()
    }
}

fn clamp_variance<S: Real>(v: S, scale: S) -> Result<S> {
    if v >= S::zero() {
        Ok(v)
    } else if v >= -lit::<S>(1e-9) * scale.max(S::one()) {
        Ok(S::zero())
    } else {
        Err(Error::NegativeVariance { value: to_f64(v) })
    }
}

/// `V_t(x)` for a single query; factor a [`Posterior`] to reuse the
/// factorisation across queries.
pub fn posterior_variance<S: Real, C: Covariance<S>>(
    kernel: &C,
    d: &DMatrix<S>,
    noise: &DVector<S>,
    data: &Dataset<S>,
    x: S,
    task: usize,
) -> Result<S> {
    Posterior::new(kernel, d, noise, data)?.variance(x, task)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOptions {
    pub replicas: usize,
    pub seed: u64,
    /// Stream key; runs sharing it (e.g. different correlations within a
    /// scenario) see the same training inputs.
    pub scenario: u64,
    /// Tasks whose error is estimated; empty means all.
    pub tasks: Vec<usize>,
    pub allocation: Allocation,
    /// Overrides the default test-point count.
    pub test_points: Option<usize>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            replicas: DEFAULT_REPLICAS,
            seed: 0,
            scenario: 0,
            tasks: Vec::new(),
            allocation: Allocation::Proportional,
            test_points: None,
        }
    }
}

/// Replica mean and standard error of the Bayes error per estimated task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimEstimate<S> {
    pub tasks: Vec<usize>,
    pub eps_hat: Vec<S>,
    pub stderr: Vec<S>,
    pub replicas: usize,
    pub seed: u64,
}

impl<S: Real> SimEstimate<S> {
    /// Estimate for `task`, if it was simulated.
    pub fn get(&self, task: usize) -> Option<(S, S)> {
        self.tasks.iter().position(|&t| t == task).map(|i| (self.eps_hat[i], self.stderr[i]))
    }
}

/// Estimates the Bayes errors for `n` total examples split by
/// `opts.allocation` (`fractions` as probabilities for random allocation).
///
/// Replica `r` draws its inputs from stream `r` of `(seed, scenario)`, first
/// the task labels (random allocation only), then training inputs in
/// example order, then test inputs (Gaussian inputs only). Replicas run in
/// parallel and are reduced in index order, so the result depends on the
/// seed alone.
pub fn bayes_error_estimate<S: Real, C: Covariance<S>>(
    kernel: &C,
    dist: &InputDist<S>,
    d: &DMatrix<S>,
    noise: &DVector<S>,
    n: usize,
    fractions: &[f64],
    opts: &SimOptions,
) -> Result<SimEstimate<S>> {
    validate_covariance(d)?;
    dist.validate()?;
    let t = d.nrows();
    if fractions.len() != t {
        return Err(Error::DimensionMismatch {
            what: "fractions",
            got: fractions.len(),
            expected: t,
        });
    }
    if opts.replicas < 2 {
        return Err(Error::invalid("need at least two replicas"));
    }
    let tasks: Vec<usize> = if opts.tasks.is_empty() { (0..t).collect() } else { opts.tasks.clone() };
    if let Some(&bad) = tasks.iter().find(|&&x| x >= t) {
        return Err(Error::invalid(format!("task {bad} out of range for {t} tasks")));
    }
    // Validates fractions for the deterministic allocations up front.
    if opts.allocation != Allocation::Random {
        allocate_labels(n, fractions, opts.allocation, &mut replica_rng(0, 0, 0))?;
    }
    let fixed_rule = match *dist {
        InputDist::UniformInterval { .. } => Some(dist.quadrature(opts.test_points.unwrap_or(UNIFORM_TEST_POINTS))?),
        InputDist::GaussianZeroMean { .. } => None,
    };
    let gaussian_points = opts.test_points.unwrap_or(GAUSSIAN_TEST_POINTS);
    let per_replica: Vec<Result<Vec<S>>> = (0..opts.replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng: ReplicaRng = replica_rng(opts.seed, opts.scenario, r as u64);
            let labels = allocate_labels(n, fractions, opts.allocation, &mut rng)?;
            let data = sample_inputs(dist, &labels, &mut rng);
            let post = Posterior::new(kernel, d, noise, &data)?;
            let (points, weights) = match &fixed_rule {
                Some(rule) => (rule.nodes.clone(), rule.weights.clone()),
                None => {
                    let pts: Vec<S> = (0..gaussian_points).map(|_| dist.sample(&mut rng)).collect();
                    let w = vec![S::one() / lit(gaussian_points as f64); gaussian_points];
                    (pts, w)
                }
            };
            tasks
                .iter()
                .map(|&task| {
                    let v = post.variances(&points, task)?;
                    Ok(v.iter().zip(&weights).fold(S::zero(), |acc, (&a, &w)| acc + a * w))
                })
                .collect::<Result<Vec<S>>>()
        })
        .collect();
    let mut values = Vec::with_capacity(opts.replicas);
    for (r, res) in per_replica.into_iter().enumerate() {
        values.push(res.map_err(|e| Error::Replica {
            replica: r,
            source: Box::new(e),
        })?);
    }
    let reps: S = lit(opts.replicas as f64);
    let mut eps_hat = Vec::with_capacity(tasks.len());
    let mut stderr = Vec::with_capacity(tasks.len());
    for i in 0..tasks.len() {
        let mean = values.iter().fold(S::zero(), |acc, v| acc + v[i]) / reps;
        let ss = values.iter().fold(S::zero(), |acc, v| acc + (v[i] - mean) * (v[i] - mean));
        let var = ss / (reps - S::one());
        eps_hat.push(mean);
        stderr.push((var / reps).sqrt());
    }
    Ok(SimEstimate {
        tasks,
        eps_hat,
        stderr,
        replicas: opts.replicas,
        seed: opts.seed,
    })
}

/// One row of a gain sweep: errors of task 1 and the normalised reduction
/// `r = (eps(rho) - eps(1)) / (eps(0) - eps(1))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainRow<S> {
    pub rho2: S,
    pub eps_pred: S,
    pub r_pred: S,
    pub eps_sim: Option<S>,
    pub stderr_sim: Option<S>,
    pub r_sim: Option<S>,
}

fn two_task_covariance<S: Real>(rho2: S) -> Result<DMatrix<S>> {
    if !(rho2 >= S::zero() && rho2 <= S::one()) {
        return Err(Error::invalid(format!("squared correlation {rho2} outside [0, 1]")));
    }
    Ok(solver::equicorrelated(2, rho2.sqrt()))
}

fn normalised<S: Real>(e: S, e0: S, e1: S) -> S {
    (e - e1) / (e0 - e1)
}

/// Normalised error reduction of task 1 over squared correlations for two
/// tasks with fraction `pi2` on task 2 and equal noise. Predictions always;
/// simulations when `sim` is given, all replicas sharing one stream key so
/// that every correlation sees the same inputs.
#[allow(clippy::too_many_arguments)]
pub fn gain_sweep<S: Real, C: Covariance<S>>(
    kernel: &C,
    dist: &InputDist<S>,
    spectrum: &KernelSpectrum<S>,
    noise: S,
    pi2: S,
    n: usize,
    rho2_grid: &[S],
    solver_opts: &SolverOptions<S>,
    sim: Option<&SimOptions>,
) -> Result<Vec<GainRow<S>>> {
    if !(pi2 >= S::zero() && pi2 <= S::one()) {
        return Err(Error::invalid("fraction of task 2 outside [0, 1]"));
    }
    let noise_v = DVector::from_element(2, noise);
    let nf: S = lit(n as f64);
    let counts = DVector::from_vec(vec![nf * (S::one() - pi2), nf * pi2]);
    let predict = |rho2: S| -> Result<S> {
        let setup = TaskSetup::new(two_task_covariance(rho2)?, noise_v.clone(), counts.clone())?;
        Ok(solver::solve(spectrum, &setup, solver_opts)?.eps[0])
    };
    let fractions = [1.0 - to_f64(pi2), to_f64(pi2)];
    let simulate = |rho2: S, opts: &SimOptions| -> Result<(S, S)> {
        let o = SimOptions {
            tasks: vec![0],
            ..opts.clone()
        };
        let est = bayes_error_estimate(kernel, dist, &two_task_covariance(rho2)?, &noise_v, n, &fractions, &o)?;
        Ok((est.eps_hat[0], est.stderr[0]))
    };
    let (p0, p1) = (predict(S::zero())?, predict(S::one())?);
    let sim_ends = match sim {
        Some(o) => Some((simulate(S::zero(), o)?.0, simulate(S::one(), o)?.0)),
        None => None,
    };
    rho2_grid
        .iter()
        .map(|&rho2| {
            let eps_pred = predict(rho2)?;
            let (eps_sim, stderr_sim, r_sim) = match (sim, sim_ends) {
                (Some(o), Some((s0, s1))) => {
                    let (e, se) = simulate(rho2, o)?;
                    (Some(e), Some(se), Some(normalised(e, s0, s1)))
                }
                _ => (None, None, None),
            };
            Ok(GainRow {
                rho2,
                eps_pred,
                r_pred: normalised(eps_pred, p0, p1),
                eps_sim,
                stderr_sim,
                r_sim,
            })
        })
        .collect()
}
