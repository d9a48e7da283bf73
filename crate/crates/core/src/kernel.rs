//! Input-space covariance functions and input distributions (1-D inputs).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::quadrature::{gauss_hermite, gauss_legendre, QuadratureRule};
use crate::{lit, to_f64, Error, Real, Result};

/// A covariance function `C(x, x')` on scalar inputs.
pub trait Covariance<S: Real>: Sync {
    fn cov(&self, x: S, y: S) -> S;

    fn variance_at(&self, x: S) -> S {
        self.cov(x, x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// `exp(-(x - x')^2 / (2 l^2))`
    SquaredExponential,
    /// `exp(-|x - x'| / l)`
    OrnsteinUhlenbeck,
}

/// A unit-variance stationary kernel with lengthscale `l > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec<S> {
    pub kind: KernelKind,
    pub lengthscale: S,
}

impl<S: Real> KernelSpec<S> {
    pub fn new(kind: KernelKind, lengthscale: S) -> Result<Self> {
        let spec = Self { kind, lengthscale };
        spec.validate()?;
        Ok(spec)
    }

    pub fn squared_exponential(lengthscale: S) -> Result<Self> {
        Self::new(KernelKind::SquaredExponential, lengthscale)
    }

    pub fn ornstein_uhlenbeck(lengthscale: S) -> Result<Self> {
        Self::new(KernelKind::OrnsteinUhlenbeck, lengthscale)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale > S::zero()) || !self.lengthscale.is_finite() {
            return Err(Error::invalid(format!(
                "lengthscale {} must be positive",
                self.lengthscale
            )));
        }
        Ok(())
    }
}

impl<S: Real> Covariance<S> for KernelSpec<S> {
    #[inline]
    fn cov(&self, x: S, y: S) -> S {
        let d = x - y;
        match self.kind {
            KernelKind::SquaredExponential => {
                (-(d * d) / (lit::<S>(2.0) * self.lengthscale * self.lengthscale)).exp()
            }
            KernelKind::OrnsteinUhlenbeck => (-d.abs() / self.lengthscale).exp(),
        }
    }

    fn variance_at(&self, _x: S) -> S {
        S::one()
    }
}

/// Distribution `P(x)` of training and test inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputDist<S> {
    #[serde(rename = "gaussian")]
    GaussianZeroMean { variance: S },
    #[serde(rename = "uniform")]
    UniformInterval { lo: S, hi: S },
}

impl<S: Real> InputDist<S> {
    pub fn gaussian(variance: S) -> Result<Self> {
        let d = InputDist::GaussianZeroMean { variance };
        d.validate()?;
        Ok(d)
    }

    pub fn uniform(lo: S, hi: S) -> Result<Self> {
        let d = InputDist::UniformInterval { lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            InputDist::GaussianZeroMean { variance } => {
                if !(variance > S::zero()) || !variance.is_finite() {
                    return Err(Error::invalid(format!("input variance {variance} must be positive")));
                }
            }
            InputDist::UniformInterval { lo, hi } => {
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::invalid(format!("uniform interval [{lo}, {hi}] is empty")));
                }
            }
        }
        Ok(())
    }

    /// Quadrature rule matched to the distribution: Gauss-Legendre on the
    /// interval, Gauss-Hermite scaled to the variance.
    pub fn quadrature(&self, nodes: usize) -> Result<QuadratureRule<S>> {
        match *self {
            InputDist::GaussianZeroMean { variance } => gauss_hermite(nodes, variance),
            InputDist::UniformInterval { lo, hi } => gauss_legendre(nodes, lo, hi),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> S {
        let x = match *self {
            InputDist::GaussianZeroMean { variance } => Normal::new(0.0, to_f64(variance).sqrt())
                .expect("validated variance")
                .sample(rng),
            InputDist::UniformInterval { lo, hi } => {
                let (lo, hi) = (to_f64(lo), to_f64(hi));
                lo + (hi - lo) * rng.random::<f64>()
            }
        };
        lit(x)
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self, InputDist::UniformInterval { .. })
    }
}

/// A finite Mercer expansion `C(x, x') = sum_i lambda_i phi_i(x) phi_i(x')`
/// with `phi_i` the orthonormal (w.r.t. the uniform density on `[lo, hi]`)
/// shifted Legendre polynomials. Its spectrum is known exactly, which makes
/// it the reference kernel for checking the simulator.
#[derive(Clone, Debug, PartialEq)]
pub struct DegenerateKernel<S> {
    eigenvalues: Vec<S>,
    lo: S,
    hi: S,
}

impl<S: Real> DegenerateKernel<S> {
    pub fn new(eigenvalues: Vec<S>, lo: S, hi: S) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::invalid("degenerate kernel needs at least one eigenvalue"));
        }
        if eigenvalues.iter().any(|&l| !(l >= S::zero())) {
            return Err(Error::invalid("degenerate kernel eigenvalues must be non-negative"));
        }
        InputDist::uniform(lo, hi)?;
        Ok(Self { eigenvalues, lo, hi })
    }

    pub fn eigenvalues(&self) -> &[S] {
        &self.eigenvalues
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn input_dist(&self) -> InputDist<S> {
        InputDist::UniformInterval {
            lo: self.lo,
            hi: self.hi,
        }
    }

    /// `phi_0(x), ..., phi_{rank-1}(x)`.
    pub fn features(&self, x: S) -> Vec<S> {
        let t = lit::<S>(2.0) * (x - self.lo) / (self.hi - self.lo) - S::one();
        let m = self.rank();
        let mut out = Vec::with_capacity(m);
        let (mut p0, mut p1) = (S::one(), t);
        for i in 0..m {
            let p = match i {
                0 => S::one(),
                1 => t,
                _ => {
                    let kf: S = lit(i as f64);
                    let p2 = ((kf + kf - S::one()) * t * p1 - (kf - S::one()) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                    p2
                }
            };
            out.push(p * lit::<S>(2.0 * i as f64 + 1.0).sqrt());
        }
        out
    }
}

impl<S: Real> Covariance<S> for DegenerateKernel<S> {
    fn cov(&self, x: S, y: S) -> S {
        let fx = self.features(x);
        let fy = self.features(y);
        self.eigenvalues
            .iter()
            .zip(fx.iter().zip(&fy))
            .fold(S::zero(), |acc, (&l, (&a, &b))| acc + l * a * b)
    }
}
