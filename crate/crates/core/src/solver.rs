//! Self-consistency equations for multi-task learning curves.
//!
//! For tasks with inter-task covariance `D`, noise variances `sigma_t^2` and
//! example counts `n_t`, the average Bayes errors satisfy
//!
//! ```text
//! eps_t = sum_i [ (lambda_i^-1 D^-1 + diag(n_s / (sigma_s^2 + eps_s)))^-1 ]_tt
//! ```
//!
//! which couples all tasks through the effective data weights
//! `n_s / (sigma_s^2 + eps_s)`. The right-hand side is evaluated through a
//! factor `D = R R^T`: with `N` the diagonal weight matrix,
//! `(lambda^-1 D^-1 + N)^-1 = R (lambda^-1 I + R^T N R)^-1 R^T`, which needs
//! one small SPD solve per eigenvalue, never forms `D^-1`, and stays exact
//! when `D` is singular (fully correlated tasks).

use nalgebra::{DMatrix, DVector};

use crate::spectra::KernelSpectrum;
use crate::{linalg, lit, to_f64, Error, Real, Result};

/// Eigenvalue threshold below which `D` is treated as singular.
pub const PD_TOL: f64 = 1e-10;

/// Inter-task covariance, per-task noise variances and example counts.
/// Counts are real-valued so that fractional allocations `n pi_t` can be
/// used in predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSetup<S: Real> {
    covariance: DMatrix<S>,
    noise: DVector<S>,
    counts: DVector<S>,
}

impl<S: Real> TaskSetup<S> {
    pub fn new(covariance: DMatrix<S>, noise: DVector<S>, counts: DVector<S>) -> Result<Self> {
        validate_covariance(&covariance)?;
        let t = covariance.nrows();
        if noise.len() != t {
            return Err(Error::DimensionMismatch {
                what: "noise",
                got: noise.len(),
                expected: t,
            });
        }
        if counts.len() != t {
            return Err(Error::DimensionMismatch {
                what: "counts",
                got: counts.len(),
                expected: t,
            });
        }
        if let Some(i) = noise.iter().position(|&s| !(s > S::zero()) || !s.is_finite()) {
            return Err(Error::invalid(format!("noise variance of task {i} must be positive")));
        }
        if let Some(i) = counts.iter().position(|&n| !(n >= S::zero()) || !n.is_finite()) {
            return Err(Error::invalid(format!("example count of task {i} must be non-negative")));
        }
        Ok(Self {
            covariance,
            noise,
            counts,
        })
    }

    /// Same noise for every task.
    pub fn with_uniform_noise(covariance: DMatrix<S>, noise: S, counts: DVector<S>) -> Result<Self> {
        let t = covariance.nrows();
        Self::new(covariance, DVector::from_element(t, noise), counts)
    }

    pub fn num_tasks(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn covariance(&self) -> &DMatrix<S> {
        &self.covariance
    }

    pub fn noise(&self) -> &DVector<S> {
        &self.noise
    }

    pub fn counts(&self) -> &DVector<S> {
        &self.counts
    }

    pub fn with_counts(&self, counts: DVector<S>) -> Result<Self> {
        Self::new(self.covariance.clone(), self.noise.clone(), counts)
    }

    pub fn is_positive_definite(&self) -> bool {
        linalg::min_eigenvalue(&self.covariance) > lit(PD_TOL)
    }

    /// Reorders tasks: task `i` of the result is task `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let t = self.num_tasks();
        let mut seen = vec![false; t];
        if perm.len() != t || perm.iter().any(|&p| p >= t || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid("not a permutation of the tasks"));
        }
        let d = DMatrix::from_fn(t, t, |i, j| self.covariance[(perm[i], perm[j])]);
        let noise = DVector::from_fn(t, |i, _| self.noise[perm[i]]);
        let counts = DVector::from_fn(t, |i, _| self.counts[perm[i]]);
        Self::new(d, noise, counts)
    }
}

/// Unit-diagonal matrix with every off-diagonal entry equal to `rho`.
pub fn equicorrelated<S: Real>(tasks: usize, rho: S) -> DMatrix<S> {
    DMatrix::from_fn(tasks, tasks, |i, j| if i == j { S::one() } else { rho })
}

/// Checks that `d` is square, symmetric and positive semi-definite.
pub fn validate_covariance<S: Real>(d: &DMatrix<S>) -> Result<()> {
    if d.nrows() == 0 {
        return Err(Error::invalid("covariance matrix is empty"));
    }
    if d.nrows() != d.ncols() {
        return Err(Error::DimensionMismatch {
            what: "covariance columns",
            got: d.ncols(),
            expected: d.nrows(),
        });
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("covariance matrix has non-finite entries"));
    }
    let scale = d.iter().fold(S::one(), |a, &b| a.max(b.abs()));
    let asym = linalg::asymmetry(d);
    if asym > scale * lit(1e-12) {
        return Err(Error::NotSymmetric {
            asymmetry: to_f64(asym),
        });
    }
    let min = linalg::min_eigenvalue(d);
    if min < -lit::<S>(PD_TOL) {
        return Err(Error::NotPositiveSemiDefinite {
            min_eigenvalue: to_f64(min),
        });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions<S> {
    /// Relative fixed-point defect accepted on return.
    pub tol: S,
    /// Added to `eps_t` in the relative residual.
    pub eps_floor: S,
    pub max_iter: usize,
    pub initial_damping: S,
    pub min_damping: S,
    /// Eigenvalues of `D` at or below this are treated as zero.
    pub pd_tol: S,
}

impl<S: Real> Default for SolverOptions<S> {
    fn default() -> Self {
        let machine = S::default_epsilon() * lit(64.0);
        Self {
            tol: machine.max(lit(1e-10)),
            eps_floor: lit(1e-14),
            max_iter: 100_000,
            initial_damping: S::one(),
            min_damping: lit(1.0 / 64.0),
            pd_tol: lit(PD_TOL),
        }
    }
}

/// Solution of the self-consistency equations at one point of a curve.
#[derive(Clone, Debug, PartialEq)]
pub struct BayesErrors<S: Real> {
    pub eps: DVector<S>,
    pub iterations: usize,
    /// `max_t |eps_t - rhs_t| / (eps_t + eps_floor)` at the returned point.
    pub residual: S,
    pub warm_started: bool,
}

/// The `n = 0` errors `D_tt tr Lambda`.
pub fn prior_error<S: Real>(spectrum: &KernelSpectrum<S>, d: &DMatrix<S>) -> DVector<S> {
    let trace = spectrum.trace();
    d.diagonal() * trace
}

/// Reusable evaluator of the right-hand side for a fixed `D`.
pub(crate) struct RhsEvaluator<S: Real> {
    factor: DMatrix<S>,
    gram: Vec<S>,
    work: Vec<S>,
    rhs_cols: Vec<S>,
}

impl<S: Real> RhsEvaluator<S> {
    pub(crate) fn new(d: &DMatrix<S>, pd_tol: S) -> Result<Self> {
        let factor = linalg::psd_factor(d, pd_tol)?;
        let r = factor.ncols();
        let t = factor.nrows();
        Ok(Self {
            factor,
            gram: vec![S::zero(); r * r],
            work: vec![S::zero(); r * r],
            rhs_cols: vec![S::zero(); r * t],
        })
    }

    /// Fills `out` with `sum_i [R (lambda_i^-1 I + R^T W R)^-1 R^T]_tt` for
    /// the diagonal data weights `w`.
    pub(crate) fn eval_weights(&mut self, eigenvalues: &[S], w: &[S], out: &mut [S]) {
        let t = self.factor.nrows();
        let r = self.factor.ncols();
        for o in out.iter_mut() {
            *o = S::zero();
        }
        if r == 0 {
            return;
        }
        for a in 0..r {
            for b in 0..=a {
                let mut s = S::zero();
                for tau in 0..t {
                    s += self.factor[(tau, a)] * w[tau] * self.factor[(tau, b)];
                }
                self.gram[a * r + b] = s;
                self.gram[b * r + a] = s;
            }
        }
        for &lambda in eigenvalues {
            if !(lambda > S::zero()) {
                continue;
            }
            let inv = S::one() / lambda;
            self.work.copy_from_slice(&self.gram);
            for a in 0..r {
                self.work[a * r + a] += inv;
            }
            let ok = linalg::small_cholesky_in_place(&mut self.work, r);
            debug_assert!(ok, "lambda^-1 I + R^T W R is positive definite");
            if !ok {
                continue;
            }
            // Columns of L^-1 R^T, one per task.
            for tau in 0..t {
                let col = &mut self.rhs_cols[tau * r..(tau + 1) * r];
                let mut norm = S::zero();
                for a in 0..r {
                    let mut s = self.factor[(tau, a)];
                    for b in 0..a {
                        s -= self.work[a * r + b] * col[b];
                    }
                    let v = s / self.work[a * r + a];
                    col[a] = v;
                    norm += v * v;
                }
                out[tau] += norm;
            }
        }
    }

    pub(crate) fn eval(
        &mut self,
        spectrum: &KernelSpectrum<S>,
        setup: &TaskSetup<S>,
        eps: &DVector<S>,
        out: &mut DVector<S>,
    ) {
        let w: Vec<S> = (0..setup.num_tasks())
            .map(|tau| {
                let n = setup.counts[tau];
                if n == S::zero() {
                    S::zero()
                } else {
                    n / (setup.noise[tau] + eps[tau])
                }
            })
            .collect();
        self.eval_weights(spectrum.eigenvalues(), &w, out.as_mut_slice());
    }
}

/// Right-hand side of the self-consistency equations at `eps`.
pub fn rhs<S: Real>(spectrum: &KernelSpectrum<S>, setup: &TaskSetup<S>, eps: &DVector<S>) -> Result<DVector<S>> {
    check_eps(setup, eps)?;
    let mut eval = RhsEvaluator::new(setup.covariance(), lit(PD_TOL))?;
    let mut out = DVector::zeros(setup.num_tasks());
    eval.eval(spectrum, setup, eps, &mut out);
    Ok(out)
}

fn check_eps<S: Real>(setup: &TaskSetup<S>, eps: &DVector<S>) -> Result<()> {
    if eps.len() != setup.num_tasks() {
        return Err(Error::DimensionMismatch {
            what: "eps",
            got: eps.len(),
            expected: setup.num_tasks(),
        });
    }
    if eps.iter().any(|&e| !(e >= S::zero())) {
        return Err(Error::invalid("errors must be non-negative"));
    }
    Ok(())
}

fn residual<S: Real>(eps: &DVector<S>, f: &DVector<S>, floor: S) -> S {
    eps.iter()
        .zip(f.iter())
        .fold(S::zero(), |acc, (&e, &v)| acc.max((e - v).abs() / (e + floor)))
}

/// Solves the self-consistency equations starting from the prior errors.
pub fn solve<S: Real>(
    spectrum: &KernelSpectrum<S>,
    setup: &TaskSetup<S>,
    opts: &SolverOptions<S>,
) -> Result<BayesErrors<S>> {
    solve_from(spectrum, setup, opts, None)
}

/// Damped fixed-point iteration `eps <- (1 - beta) eps + beta rhs(eps)`.
///
/// The damping starts at `opts.initial_damping` and halves (down to
/// `opts.min_damping`) whenever the residual grows. A warm start must lie in
/// `[0, prior_error]` componentwise.
pub fn solve_from<S: Real>(
    spectrum: &KernelSpectrum<S>,
    setup: &TaskSetup<S>,
    opts: &SolverOptions<S>,
    warm_start: Option<&DVector<S>>,
) -> Result<BayesErrors<S>> {
    let prior = prior_error(spectrum, setup.covariance());
    let mut eps = match warm_start {
        Some(start) => {
            check_eps(setup, start)?;
            let slack = lit::<S>(1e-12);
            for (tau, (&s, &p)) in start.iter().zip(prior.iter()).enumerate() {
                if s > p * (S::one() + slack) + slack {
                    return Err(Error::invalid(format!(
                        "warm start {s} for task {tau} exceeds the prior error {p}"
                    )));
                }
            }
            start.zip_map(&prior, |s, p| s.min(p))
        }
        None => prior,
    };
    let mut eval = RhsEvaluator::new(setup.covariance(), opts.pd_tol)?;
    let mut f = DVector::zeros(setup.num_tasks());
    let mut beta = opts.initial_damping;
    let mut previous = S::max_value().unwrap();
    let mut res = previous;
    for iteration in 0..=opts.max_iter {
        eval.eval(spectrum, setup, &eps, &mut f);
        res = residual(&eps, &f, opts.eps_floor);
        if res < opts.tol {
            return Ok(BayesErrors {
                eps,
                iterations: iteration,
                residual: res,
                warm_started: warm_start.is_some(),
            });
        }
        if res > previous {
            beta = (beta * lit(0.5)).max(opts.min_damping);
        }
        previous = res;
        eps = eps.zip_map(&f, |e, v| (S::one() - beta) * e + beta * v);
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: to_f64(res),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint<S: Real> {
    pub n: S,
    pub errors: BayesErrors<S>,
}

/// Learning curve over an ascending grid of total example counts, with
/// `n_t = n pi_t` and each point warm-started from the previous one.
pub fn learning_curve<S: Real>(
    spectrum: &KernelSpectrum<S>,
    d: &DMatrix<S>,
    noise: &DVector<S>,
    fractions: &DVector<S>,
    n_grid: &[S],
    opts: &SolverOptions<S>,
) -> Result<Vec<CurvePoint<S>>> {
    validate_fractions(fractions, d.nrows())?;
    if n_grid.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::invalid("n grid must be ascending"));
    }
    let base = TaskSetup::new(d.clone(), noise.clone(), DVector::zeros(d.nrows()))?;
    let mut out = Vec::with_capacity(n_grid.len());
    let mut previous: Option<DVector<S>> = None;
    for &n in n_grid {
        let setup = base
            .with_counts(fractions * n)
            .map_err(|e| Error::at_n(to_f64(n), e))?;
        let errors = solve_from(spectrum, &setup, opts, previous.as_ref())
            .map_err(|e| Error::at_n(to_f64(n), e))?;
        previous = Some(errors.eps.clone());
        out.push(CurvePoint { n, errors });
    }
    Ok(out)
}

pub(crate) fn validate_fractions<S: Real>(fractions: &DVector<S>, tasks: usize) -> Result<()> {
    if fractions.len() != tasks {
        return Err(Error::DimensionMismatch {
            what: "fractions",
            got: fractions.len(),
            expected: tasks,
        });
    }
    if fractions.iter().any(|&p| !(p >= S::zero())) {
        return Err(Error::invalid("fractions must be non-negative"));
    }
    let sum = fractions.iter().fold(S::zero(), |a, &b| a + b);
    if (sum - S::one()).abs() > lit(1e-9) {
        return Err(Error::invalid(format!("fractions sum to {sum}, not 1")));
    }
    Ok(())
}
