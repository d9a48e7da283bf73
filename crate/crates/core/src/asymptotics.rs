//! Closed-form limits of the self-consistency equations.
//!
//! Everything here is expressed through the single-task resolvent trace
//! `g(h) = sum_i (lambda_i^-1 + h)^-1`: the large-`n` asymptotics and the
//! multi-task gain, the pure-transfer floor reached when some tasks are
//! learned perfectly, and the many-task function `g_T` for equicorrelated
//! tasks together with its two learning stages.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::solver::{self, validate_covariance, validate_fractions, BayesErrors, SolverOptions, TaskSetup};
use crate::spectra::KernelSpectrum;
use crate::{linalg, lit, to_f64, Error, Real, Result};

/// `g(h) = sum_i lambda_i / (1 + lambda_i h)`; `g(0)` is the kept trace.
pub fn g<S: Real>(spectrum: &KernelSpectrum<S>, h: S) -> S {
    spectrum
        .eigenvalues()
        .iter()
        .fold(S::zero(), |acc, &l| acc + l / (S::one() + l * h))
}

/// Many-task function for `T` equicorrelated tasks with off-diagonal `rho`:
/// `((T-1)/T)(1-rho) g(h(1-rho)/T) + (rho + (1-rho)/T) g(h (rho + (1-rho)/T))`.
pub fn g_t<S: Real>(spectrum: &KernelSpectrum<S>, h: S, rho: S, tasks: usize) -> S {
    let t: S = lit(tasks as f64);
    let indep = S::one() - rho;
    let shared = rho + indep / t;
    let first = if tasks > 1 {
        (t - S::one()) / t * indep * g(spectrum, h * indep / t)
    } else {
        S::zero()
    };
    first + shared * g(spectrum, h * shared)
}

/// Least-squares decay exponent `alpha` of `g(h) ~ h^-alpha`, fitted on
/// `points` log-spaced values of `h` in `[h_lo, h_hi]`.
pub fn fit_decay_exponent<S: Real>(spectrum: &KernelSpectrum<S>, h_lo: S, h_hi: S, points: usize) -> Result<S> {
    if !(h_lo > S::zero()) || !(h_hi > h_lo) || points < 2 {
        return Err(Error::invalid("decay fit needs 0 < h_lo < h_hi and at least two points"));
    }
    let (a, b) = (to_f64(h_lo).ln(), to_f64(h_hi).ln());
    let logs: Vec<(f64, f64)> = (0..points)
        .map(|k| {
            let x = a + (b - a) * k as f64 / (points - 1) as f64;
            (x, to_f64(g(spectrum, lit(x.exp()))).ln())
        })
        .collect();
    Ok(lit(-log_log_slope(&logs)))
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn log_log_slope(xy: &[(f64, f64)]) -> f64 {
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Large-`n` predictions at total count `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct AsymptoticErrors<S: Real> {
    /// `sum_a (R u_a)_t^2 g(n delta_a)`, the errors with `eps` neglected
    /// next to the noise.
    pub exact: DVector<S>,
    /// `g(n gamma_t) * gain_t`; `None` for tasks without examples.
    pub power_law: Vec<Option<S>>,
    /// Whether `exact_t <= 0.1 sigma_t^2`, the regime the forms assume.
    pub valid: Vec<bool>,
}

/// Per-task precision rates `gamma_t = pi_t / sigma_t^2`.
fn precision_rates<S: Real>(noise: &DVector<S>, fractions: &DVector<S>) -> DVector<S> {
    fractions.zip_map(noise, |p, s| p / s)
}

fn check_inputs<S: Real>(d: &DMatrix<S>, noise: &DVector<S>, fractions: &DVector<S>) -> Result<()> {
    TaskSetup::new(d.clone(), noise.clone(), DVector::zeros(d.nrows()))?;
    validate_fractions(fractions, d.nrows())
}

pub fn asymptotic_errors<S: Real>(
    spectrum: &KernelSpectrum<S>,
    d: &DMatrix<S>,
    noise: &DVector<S>,
    fractions: &DVector<S>,
    n: S,
) -> Result<AsymptoticErrors<S>> {
    check_inputs(d, noise, fractions)?;
    if !(n >= S::zero()) {
        return Err(Error::invalid("n must be non-negative"));
    }
    let t = d.nrows();
    let gamma = precision_rates(noise, fractions);
    // With D = R R^T, sum_i (lambda_i^-1 D^-1 + n Gamma)^-1 equals
    // R [sum_a u_a u_a^T g(n delta_a)] R^T for the eigenpairs of R^T Gamma R.
    // This never inverts Gamma, so tasks with pi_t = 0 are covered.
    let r = linalg::psd_factor(d, lit(solver::PD_TOL))?;
    let inner = r.transpose() * DMatrix::from_diagonal(&gamma) * &r;
    let (deltas, u) = linalg::symmetric_eigen_desc(&inner);
    let ru = &r * &u;
    let mut exact = DVector::zeros(t);
    for a in 0..deltas.len() {
        let ga = g(spectrum, n * deltas[a].max(S::zero()));
        for tau in 0..t {
            exact[tau] += ru[(tau, a)] * ru[(tau, a)] * ga;
        }
    }
    let gains = if gamma.iter().all(|&x| x > S::zero()) {
        Some(multitask_gain(spectrum, d, noise, fractions)?.gains)
    } else {
        None
    };
    let power_law = (0..t)
        .map(|tau| gains.as_ref().map(|gn| g(spectrum, n * gamma[tau]) * gn[tau]))
        .collect();
    let valid: Vec<bool> = (0..t).map(|tau| exact[tau] <= noise[tau] * lit(0.1)).collect();
    if let Some(tau) = valid.iter().position(|v| !v) {
        warn!(
            "asymptotic error {} for task {tau} at n = {n} is not small against the noise {}",
            exact[tau], noise[tau]
        );
    }
    Ok(AsymptoticErrors {
        exact,
        power_law,
        valid,
    })
}

/// Multi-task gain factors and the eigen-structure they come from.
#[derive(Clone, Debug, PartialEq)]
pub struct GainReport<S: Real> {
    pub gains: DVector<S>,
    pub gamma: DVector<S>,
    /// Eigenvalues of `Gamma^(1/2) D Gamma^(1/2)`, descending.
    pub deltas: DVector<S>,
    /// Matching orthonormal eigenvectors as columns.
    pub vectors: DMatrix<S>,
    pub alpha: S,
}

/// `gain_t = sum_a v_{a,t}^2 (delta_a / gamma_t)^(1 - alpha)`, with `alpha`
/// taken from the spectrum's smoothness. Every fraction must be positive.
pub fn multitask_gain<S: Real>(
    spectrum: &KernelSpectrum<S>,
    d: &DMatrix<S>,
    noise: &DVector<S>,
    fractions: &DVector<S>,
) -> Result<GainReport<S>> {
    check_inputs(d, noise, fractions)?;
    let gamma = precision_rates(noise, fractions);
    if gamma.iter().any(|&x| !(x > S::zero())) {
        return Err(Error::invalid("multi-task gain needs a positive fraction for every task"));
    }
    let sqrt_gamma = gamma.map(|x| x.sqrt());
    let t = d.nrows();
    let scaled = DMatrix::from_fn(t, t, |i, j| sqrt_gamma[i] * d[(i, j)] * sqrt_gamma[j]);
    let (mut deltas, vectors) = linalg::symmetric_eigen_desc(&scaled);
    let alpha = spectrum.alpha();
    let cutoff = deltas.iter().fold(S::zero(), |a, &b| a.max(b)) * lit(solver::PD_TOL);
    for x in deltas.iter_mut() {
        if *x < S::zero() {
            *x = S::zero();
        }
    }
    let gains = DVector::from_fn(t, |tau, _| {
        (0..t).fold(S::zero(), |acc, a| {
            if deltas[a] <= cutoff {
                acc
            } else {
                let v = vectors[(tau, a)];
                acc + v * v * (deltas[a] / gamma[tau]).powf(S::one() - alpha)
            }
        })
    });
    Ok(GainReport {
        gains,
        gamma,
        deltas,
        vectors,
        alpha,
    })
}

/// Many-task gain `(1 - rho)^(1 - alpha)` in the final learning stage.
pub fn many_task_gain<S: Real>(rho: S, alpha: S) -> S {
    (S::one() - rho).powf(S::one() - alpha)
}

fn split_tasks(t: usize, observed: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut is_obs = vec![false; t];
    for &o in observed {
        if o >= t {
            return Err(Error::invalid(format!("observed task {o} out of range for {t} tasks")));
        }
        is_obs[o] = true;
    }
    let obs: Vec<usize> = (0..t).filter(|&i| is_obs[i]).collect();
    let unobs: Vec<usize> = (0..t).filter(|&i| !is_obs[i]).collect();
    if obs.is_empty() || unobs.is_empty() {
        return Err(Error::invalid("observed tasks must be a non-empty strict subset"));
    }
    Ok((unobs, obs))
}

/// Covariance of the unobserved tasks after conditioning on the observed
/// ones, `D_00 - D_01 D_11^+ D_10`, which is `(E_00)^-1` for `E = D^-1`.
/// The pseudo-inverse keeps this finite when `D` is singular.
pub fn conditional_covariance<S: Real>(d: &DMatrix<S>, observed: &[usize]) -> Result<DMatrix<S>> {
    validate_covariance(d)?;
    let (unobs, obs) = split_tasks(d.nrows(), observed)?;
    let block = |rows: &[usize], cols: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |i, j| d[(rows[i], cols[j])]);
    let d00 = block(&unobs, &unobs);
    let d01 = block(&unobs, &obs);
    let d11 = block(&obs, &obs);
    let (vals, vecs) = linalg::symmetric_eigen_desc(&d11);
    let cutoff = vals.iter().fold(S::zero(), |a, &b| a.max(b)) * lit(solver::PD_TOL);
    let inv_vals = vals.map(|v| if v > cutoff { S::one() / v } else { S::zero() });
    let pinv = &vecs * DMatrix::from_diagonal(&inv_vals) * vecs.transpose();
    let mut s = d00 - &d01 * pinv * d01.transpose();
    // Restore exact symmetry lost to round-off.
    let st = s.transpose();
    s = (s + st) * lit::<S>(0.5);
    Ok(s)
}

/// Floor on the errors of the unobserved tasks (ascending index order) once
/// the observed tasks are known perfectly: `tr Lambda * diag((E_00)^-1)`.
pub fn pure_transfer_limit<S: Real>(spectrum: &KernelSpectrum<S>, d: &DMatrix<S>, observed: &[usize]) -> Result<DVector<S>> {
    let s = conditional_covariance(d, observed)?;
    Ok(s.diagonal().map(|x| x.max(S::zero())) * spectrum.trace())
}

/// Learning curve point of the unobserved tasks when the observed tasks
/// have unlimited data: the ordinary equations with `D` replaced by the
/// conditional covariance. `noise` and `counts` span all tasks; entries
/// of observed tasks are ignored.
pub fn pure_transfer_curve<S: Real>(
    spectrum: &KernelSpectrum<S>,
    d: &DMatrix<S>,
    noise: &DVector<S>,
    counts: &DVector<S>,
    observed: &[usize],
    opts: &SolverOptions<S>,
) -> Result<BayesErrors<S>> {
    let t = d.nrows();
    if noise.len() != t || counts.len() != t {
        return Err(Error::DimensionMismatch {
            what: "noise/counts",
            got: noise.len().min(counts.len()),
            expected: t,
        });
    }
    let (unobs, _) = split_tasks(t, observed)?;
    let mut cond = conditional_covariance(d, observed)?;
    // Round-off may leave tiny negative eigenvalues in a singular block.
    for i in 0..cond.nrows() {
        cond[(i, i)] = cond[(i, i)].max(S::zero());
    }
    let sub = |v: &DVector<S>| DVector::from_fn(unobs.len(), |i, _| v[unobs[i]]);
    let setup = TaskSetup::new(cond, sub(noise), sub(counts))?;
    solver::solve(spectrum, &setup, opts)
}

/// Damped scalar fixed point `x = f(x)`, with the same stopping rule and
/// damping schedule as the task solver.
fn scalar_fixed_point<S: Real, F: Fn(S) -> S>(f: F, start: S, opts: &SolverOptions<S>) -> Result<(S, usize)> {
    let mut x = start;
    let mut beta = opts.initial_damping;
    let mut previous = S::max_value().unwrap();
    let mut res = previous;
    for iteration in 0..=opts.max_iter {
        let fx = f(x);
        res = (x - fx).abs() / (x + opts.eps_floor);
        if res < opts.tol {
            return Ok((x, iteration));
        }
        if res > previous {
            beta = (beta * lit(0.5)).max(opts.min_damping);
        }
        previous = res;
        x = (S::one() - beta) * x + beta * fx;
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: to_f64(res),
    })
}

/// Single-task curve `eps = g(n / (sigma^2 + eps))` over an ascending grid.
pub fn single_task_curve<S: Real>(
    spectrum: &KernelSpectrum<S>,
    noise: S,
    n_grid: &[S],
    opts: &SolverOptions<S>,
) -> Result<Vec<S>> {
    if !(noise > S::zero()) {
        return Err(Error::invalid("noise variance must be positive"));
    }
    let mut start = spectrum.trace();
    n_grid
        .iter()
        .map(|&n| {
            let (eps, _) = scalar_fixed_point(|e| g(spectrum, n / (noise + e)), start, opts)
                .map_err(|e| Error::at_n(to_f64(n), e))?;
            start = eps;
            Ok(eps)
        })
        .collect()
}

/// One point of a many-task curve with its two stage overlays.
#[derive(Clone, Debug, PartialEq)]
pub struct ManyTaskPoint<S> {
    pub n: S,
    pub eps: S,
    /// `(1 - rho) + rho eps~`; `None` for `rho = 0`.
    pub stage1: Option<S>,
    /// `(1 - rho) eps-bar`; `None` for `rho = 1`.
    pub stage2: Option<S>,
}

/// Solves `eps = g_T(n / (sigma^2 + eps), rho)` for `T` equicorrelated
/// tasks with `n/T` examples each and equal noise.
///
/// Stage 1 uses a single-task curve at the same `n` with noise
/// `(1 - rho + sigma^2) / rho`; stage 2 a single-task curve at `n / T` with
/// noise `sigma^2 / (1 - rho)`. Both overlays assume `tr Lambda = 1`.
pub fn many_task_curve<S: Real>(
    spectrum: &KernelSpectrum<S>,
    rho: S,
    tasks: usize,
    noise: S,
    n_grid: &[S],
    opts: &SolverOptions<S>,
) -> Result<Vec<ManyTaskPoint<S>>> {
    if tasks == 0 {
        return Err(Error::invalid("need at least one task"));
    }
    if !(rho >= S::zero() && rho <= S::one()) {
        return Err(Error::invalid(format!("correlation {rho} outside [0, 1]")));
    }
    if !(noise > S::zero()) {
        return Err(Error::invalid("noise variance must be positive"));
    }
    if n_grid.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::invalid("n grid must be ascending"));
    }
    let indep = S::one() - rho;
    let t: S = lit(tasks as f64);
    let stage1 = if rho > S::zero() {
        Some(single_task_curve(spectrum, (indep + noise) / rho, n_grid, opts)?)
    } else {
        None
    };
    let stage2 = if indep > S::zero() {
        let per_task: Vec<S> = n_grid.iter().map(|&n| n / t).collect();
        Some(single_task_curve(spectrum, noise / indep, &per_task, opts)?)
    } else {
        None
    };
    let mut start = spectrum.trace();
    let mut out = Vec::with_capacity(n_grid.len());
    for (k, &n) in n_grid.iter().enumerate() {
        let (eps, _) = scalar_fixed_point(|e| g_t(spectrum, n / (noise + e), rho, tasks), start, opts)
            .map_err(|e| Error::at_n(to_f64(n), e))?;
        start = eps;
        out.push(ManyTaskPoint {
            n,
            eps,
            stage1: stage1.as_ref().map(|c| indep + rho * c[k]),
            stage2: stage2.as_ref().map(|c| indep * c[k]),
        });
    }
    Ok(out)
}
