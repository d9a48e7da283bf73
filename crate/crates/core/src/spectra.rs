//! Eigenvalue spectra of covariance operators `<C(x, x') phi(x')>_{x'}`.
//!
//! Closed forms exist for the squared-exponential kernel under Gaussian
//! inputs and for the OU kernel under uniform inputs; every other pairing
//! goes through a Nyström discretisation. Spectra are stored descending
//! together with the trace mass that was discarded when truncating, so that
//! `retained + tail` is the full operator trace `<C(x, x)>` (one for the
//! unit-variance kernels here).

use serde::{Deserialize, Serialize};

use crate::kernel::{Covariance, InputDist, KernelKind, KernelSpec};
use crate::{linalg, lit, to_f64, Error, Real, Result};

pub const DEFAULT_TAIL_TOL: f64 = 1e-6;

/// Clamp threshold for negative Nyström eigenvalues.
const NEGATIVE_EIGENVALUE_TOL: f64 = 1e-12;

/// Number of mean-square derivatives of the prior sample functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothness {
    Finite(u32),
    Infinite,
}

impl Smoothness {
    /// Decay exponent of `g(h) ~ h^-alpha`: `(2r + 1) / (2r + 2)`, or one
    /// for infinitely smooth priors.
    pub fn alpha<S: Real>(&self) -> S {
        match *self {
            Smoothness::Finite(r) => lit((2.0 * r as f64 + 1.0) / (2.0 * r as f64 + 2.0)),
            Smoothness::Infinite => S::one(),
        }
    }

    /// Default for each kernel family. The OU eigenvalues decay as `i^-2`,
    /// which matches `i^-(2r+2)` with `r = 0`.
    pub fn for_kernel(kind: KernelKind) -> Self {
        match kind {
            KernelKind::SquaredExponential => Smoothness::Infinite,
            KernelKind::OrnsteinUhlenbeck => Smoothness::Finite(0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpectrum<S> {
    eigenvalues: Vec<S>,
    tail_mass: S,
    smoothness: Smoothness,
}

impl<S: Real> KernelSpectrum<S> {
    pub fn new(eigenvalues: Vec<S>, tail_mass: S, smoothness: Smoothness) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::invalid("spectrum needs at least one eigenvalue"));
        }
        if let Some(i) = eigenvalues.iter().position(|&l| !(l >= S::zero()) || !l.is_finite()) {
            return Err(Error::invalid(format!(
                "eigenvalue {} at index {i} is negative or not finite",
                eigenvalues[i]
            )));
        }
        if let Some(i) = eigenvalues.windows(2).position(|w| w[1] > w[0]) {
            return Err(Error::invalid(format!("eigenvalues not descending at index {}", i + 1)));
        }
        if !(tail_mass >= S::zero()) {
            return Err(Error::invalid(format!("tail mass {tail_mass} must be non-negative")));
        }
        Ok(Self {
            eigenvalues,
            tail_mass,
            smoothness,
        })
    }

    /// A complete (untruncated) finite spectrum.
    pub fn from_eigenvalues(mut eigenvalues: Vec<S>, smoothness: Smoothness) -> Result<Self> {
        eigenvalues.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        Self::new(eigenvalues, S::zero(), smoothness)
    }

    pub fn eigenvalues(&self) -> &[S] {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn tail_mass(&self) -> S {
        self.tail_mass
    }

    /// `tr Lambda` over the retained eigenvalues.
    pub fn trace(&self) -> S {
        self.eigenvalues.iter().fold(S::zero(), |a, &b| a + b)
    }

    /// Retained trace plus discarded tail.
    pub fn total_trace(&self) -> S {
        self.trace() + self.tail_mass
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    pub fn alpha(&self) -> S {
        self.smoothness.alpha()
    }

    pub fn with_smoothness(mut self, smoothness: Smoothness) -> Self {
        self.smoothness = smoothness;
        self
    }

    /// Spectrum of `factor * C`.
    pub fn scaled(&self, factor: S) -> Result<Self> {
        if !(factor >= S::zero()) {
            return Err(Error::invalid(format!("scale factor {factor} must be non-negative")));
        }
        Ok(Self {
            eigenvalues: self.eigenvalues.iter().map(|&l| l * factor).collect(),
            tail_mass: self.tail_mass * factor,
            smoothness: self.smoothness,
        })
    }
}

/// Default Nyström node count: enough Gauss nodes for about sixteen per
/// lengthscale across the input range (twelve standard deviations for
/// Gaussian inputs), at least `2 m` and clamped to `[256, 4096]`.
pub fn default_nodes<S: Real>(kernel: &KernelSpec<S>, dist: &InputDist<S>, m: usize) -> usize {
    let width = match *dist {
        InputDist::UniformInterval { lo, hi } => to_f64(hi - lo),
        InputDist::GaussianZeroMean { variance } => 12.0 * to_f64(variance).sqrt(),
    };
    let per_length = (16.0 * width / to_f64(kernel.lengthscale)).ceil();
    let n = if per_length.is_finite() { per_length as usize } else { usize::MAX };
    n.max(2 * m).clamp(256, 4096)
}

/// Closed-form spectrum of the squared-exponential kernel under Gaussian
/// inputs `N(0, input_variance)`:
/// `lambda_k = sqrt(2a / A) B^k` with `a = 1/(4 var)`, `b = 1/(2 l^2)`,
/// `c = sqrt(a^2 + 2ab)`, `A = a + b + c`, `B = b / A`.
/// The geometric tail beyond `m` terms is summed exactly.
pub fn se_gaussian_spectrum<S: Real>(lengthscale: S, input_variance: S, m: usize) -> Result<KernelSpectrum<S>> {
    KernelSpec::squared_exponential(lengthscale)?;
    InputDist::gaussian(input_variance)?;
    if m == 0 {
        return Err(Error::invalid("need at least one eigenvalue"));
    }
    let (lambda0, ratio) = se_gaussian_parameters(lengthscale, input_variance);
    let mut eigenvalues = Vec::with_capacity(m);
    let mut l = lambda0;
    for _ in 0..m {
        eigenvalues.push(l);
        l *= ratio;
    }
    // After the loop `l = lambda0 B^m`.
    let tail = l / (S::one() - ratio);
    KernelSpectrum::new(eigenvalues, tail, Smoothness::Infinite)
}

/// `(lambda_0, B)` of the SE/Gaussian spectrum.
pub fn se_gaussian_parameters<S: Real>(lengthscale: S, input_variance: S) -> (S, S) {
    let a = S::one() / (lit::<S>(4.0) * input_variance);
    let b = S::one() / (lit::<S>(2.0) * lengthscale * lengthscale);
    let c = (a * a + lit::<S>(2.0) * a * b).sqrt();
    let big_a = a + b + c;
    ((lit::<S>(2.0) * a / big_a).sqrt(), b / big_a)
}

/// Nyström eigenvalues of a kernel spec under an input distribution, with
/// the default smoothness for the kernel family.
pub fn nystrom_spectrum<S: Real>(
    kernel: &KernelSpec<S>,
    dist: &InputDist<S>,
    nodes: usize,
    m: usize,
) -> Result<KernelSpectrum<S>> {
    kernel.validate()?;
    nystrom_spectrum_of(kernel, dist, nodes, m, Smoothness::for_kernel(kernel.kind))
}

/// Nyström discretisation of the integral eigenproblem for any covariance.
///
/// With quadrature nodes `x_j` and probability weights `w_j` matched to the
/// input distribution, the eigenvalues of the symmetric matrix
/// `W^{1/2} K W^{1/2}` approximate the operator eigenvalues. The discarded
/// eigenvalues (beyond the top `m`) are summed into the tail.
pub fn nystrom_spectrum_of<S: Real, C: Covariance<S>>(
    cov: &C,
    dist: &InputDist<S>,
    nodes: usize,
    m: usize,
    smoothness: Smoothness,
) -> Result<KernelSpectrum<S>> {
    dist.validate()?;
    if m == 0 {
        return Err(Error::invalid("need at least one eigenvalue"));
    }
    if nodes < m {
        return Err(Error::invalid(format!("{nodes} nodes cannot resolve {m} eigenvalues")));
    }
    let rule = dist.quadrature(nodes)?;
    let sqrt_w: Vec<S> = rule.weights.iter().map(|w| w.sqrt()).collect();
    let mut a = nalgebra::DMatrix::zeros(nodes, nodes);
    for j in 0..nodes {
        for i in j..nodes {
            let v = sqrt_w[i] * cov.cov(rule.nodes[i], rule.nodes[j]) * sqrt_w[j];
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let trace = (0..nodes).fold(S::zero(), |acc, j| acc + a[(j, j)]);
    let (diag, off) = linalg::symmetric_tridiagonal(a);
    let floor: S = lit(-NEGATIVE_EIGENVALUE_TOL);
    if linalg::tridiagonal_count_below(&diag, &off, floor) > 0 {
        let all = linalg::tridiagonal_top_eigenvalues(&diag, &off, nodes);
        let index = all.iter().position(|&l| l < floor).unwrap_or(nodes - 1);
        return Err(Error::NegativeEigenvalue {
            index,
            value: to_f64(all[index]),
        });
    }
    // Bisection resolves eigenvalues to an absolute tolerance, so values at
    // round-off level may come out slightly out of order.
    let mut running = S::max_value().unwrap();
    let top: Vec<S> = linalg::tridiagonal_top_eigenvalues(&diag, &off, m)
        .into_iter()
        .map(|l| {
            running = running.min(l.max(S::zero()));
            running
        })
        .collect();
    // The discarded eigenvalues sum to the trace of the discretised operator
    // minus the kept ones.
    let kept = top.iter().fold(S::zero(), |acc, &l| acc + l);
    let tail = (trace - kept).max(S::zero());
    KernelSpectrum::new(top, tail, smoothness)
}

/// Closed-form spectrum of the OU kernel `exp(-|x - x'| / l)` under uniform
/// inputs on `[lo, hi]`.
///
/// On a centred interval of half-width `a` the eigenfunctions are cosines and
/// sines with frequencies `omega = theta / a`, where `theta` solves
/// `theta tan(theta) = a / l` (even) or `-theta cot(theta) = a / l` (odd); the
/// eigenvalue is `2 l / (1 + l^2 omega^2)` divided by the interval length.
/// Roots interleave as `theta_j in (j pi / 2, (j + 1) pi / 2)`. The tail
/// beyond `m` terms uses `theta_j^2 ~ (j pi / 2)^2 + 2a / l` and an integral
/// (midpoint) approximation of the remaining sum.
pub fn ou_uniform_spectrum<S: Real>(lengthscale: S, lo: S, hi: S, m: usize) -> Result<KernelSpectrum<S>> {
    KernelSpec::ornstein_uhlenbeck(lengthscale)?;
    InputDist::uniform(lo, hi)?;
    if m == 0 {
        return Err(Error::invalid("need at least one eigenvalue"));
    }
    let ell = to_f64(lengthscale);
    let len = to_f64(hi) - to_f64(lo);
    let a = 0.5 * len;
    let kappa = a / ell;
    let half_pi = std::f64::consts::FRAC_PI_2;
    let eigenvalue = |theta: f64| {
        let omega = theta / a;
        2.0 * ell / (1.0 + ell * ell * omega * omega) / len
    };
    let mut eigenvalues = Vec::with_capacity(m);
    for j in 0..m {
        let lo_t = j as f64 * half_pi;
        let hi_t = lo_t + half_pi;
        let theta = if j % 2 == 0 {
            bracketed_root(|t| t * t.sin() - kappa * t.cos(), |t| t.sin() + t * t.cos() + kappa * t.sin(), lo_t, hi_t)
        } else {
            bracketed_root(|t| t * t.cos() + kappa * t.sin(), |t| t.cos() - t * t.sin() + kappa * t.cos(), lo_t, hi_t)
        };
        eigenvalues.push(lit::<S>(eigenvalue(theta)));
    }
    let c = ell * std::f64::consts::PI / len;
    let b = (1.0 + 4.0 * ell / len).sqrt();
    let start = m as f64 - 0.5;
    let tail = (2.0 * ell / len) / (b * c) * (half_pi - (c * start / b).atan());
    KernelSpectrum::new(eigenvalues, lit(tail), Smoothness::for_kernel(KernelKind::OrnsteinUhlenbeck))
}

/// Safeguarded Newton iteration for a sign-changing root in `(lo, hi)`.
fn bracketed_root<F: Fn(f64) -> f64, D: Fn(f64) -> f64>(f: F, df: D, mut lo: f64, mut hi: f64) -> f64 {
    let f_lo = f(lo);
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if (fx < 0.0) == (f_lo < 0.0) {
            lo = x;
        } else {
            hi = x;
        }
        let d = df(x);
        let newton = x - fx / d;
        let next = if d != 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            return next;
        }
        x = next;
    }
    x
}

/// Shortest prefix whose discarded trace (including any existing tail) is
/// below `tail_tol` times the total trace.
pub fn truncate<S: Real>(spectrum: &KernelSpectrum<S>, tail_tol: S) -> Result<KernelSpectrum<S>> {
    if !(tail_tol > S::zero() && tail_tol < S::one()) {
        return Err(Error::invalid(format!("tail tolerance {tail_tol} must lie in (0, 1)")));
    }
    let total = spectrum.total_trace();
    let limit = tail_tol * total;
    let eigs = spectrum.eigenvalues();
    // suffix[k] = discarded mass when keeping k eigenvalues.
    let mut discarded = spectrum.tail_mass();
    if !(discarded < limit) {
        return Err(Error::TailUnreachable {
            tail_tol: to_f64(tail_tol),
            available: eigs.len(),
            tail_mass: to_f64(discarded),
        });
    }
    let mut keep = eigs.len();
    while keep > 1 {
        let next = discarded + eigs[keep - 1];
        if next < limit {
            discarded = next;
            keep -= 1;
        } else {
            break;
        }
    }
    KernelSpectrum::new(eigs[..keep].to_vec(), discarded, spectrum.smoothness())
}

/// How to obtain a spectrum for a (kernel, input distribution) pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrumOptions {
    /// Eigenvalues computed before truncation.
    pub max_eigenvalues: usize,
    /// Nyström nodes; `None` means [`default_nodes`]. The eigenvalue count
    /// is capped at the node count.
    pub nodes: Option<usize>,
    pub tail_tol: f64,
    /// Use Nyström even where a closed form exists.
    pub force_nystrom: bool,
    /// Overrides the kernel family's default smoothness.
    pub smoothness: Option<Smoothness>,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self {
            max_eigenvalues: 512,
            nodes: None,
            tail_tol: DEFAULT_TAIL_TOL,
            force_nystrom: false,
            smoothness: None,
        }
    }
}

/// Computes and truncates the spectrum for a kernel and input distribution.
pub fn kernel_spectrum<S: Real>(
    kernel: &KernelSpec<S>,
    dist: &InputDist<S>,
    opts: &SpectrumOptions,
) -> Result<KernelSpectrum<S>> {
    let m = opts.max_eigenvalues;
    let full = match (kernel.kind, *dist, opts.force_nystrom) {
        (KernelKind::SquaredExponential, InputDist::GaussianZeroMean { variance }, false) => {
            se_gaussian_spectrum(kernel.lengthscale, variance, m)?
        }
        (KernelKind::OrnsteinUhlenbeck, InputDist::UniformInterval { lo, hi }, false) => {
            ou_uniform_spectrum(kernel.lengthscale, lo, hi, m)?
        }
        _ => {
            let nodes = opts.nodes.unwrap_or_else(|| default_nodes(kernel, dist, m));
            nystrom_spectrum(kernel, dist, nodes, m.min(nodes))?
        }
    };
    let truncated = truncate(&full, lit(opts.tail_tol))?;
    Ok(match opts.smoothness {
        Some(s) => truncated.with_smoothness(s),
        None => truncated,
    })
}
