//! Gaussian quadrature rules normalised to probability measures.
//!
//! Both rules return nodes in ascending order with weights summing to one,
//! so `sum_j w_j f(x_j)` approximates the expectation of `f`.

use crate::{linalg, lit, Error, Real, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule<S> {
    pub nodes: Vec<S>,
    pub weights: Vec<S>,
}

impl<S: Real> QuadratureRule<S> {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn expect<F: FnMut(S) -> S>(&self, mut f: F) -> S {
        self.nodes
            .iter()
            .zip(&self.weights)
            .fold(S::zero(), |acc, (&x, &w)| acc + w * f(x))
    }
}

/// Gauss-Legendre rule for the uniform distribution on `[lo, hi]`.
///
/// Roots of `P_n` by Newton iteration from Tricomi's initial guesses.
pub fn gauss_legendre<S: Real>(n: usize, lo: S, hi: S) -> Result<QuadratureRule<S>> {
    if n == 0 {
        return Err(Error::invalid("quadrature needs at least one node"));
    }
    if !(lo < hi) {
        return Err(Error::invalid(format!("interval [{lo}, {hi}] is empty")));
    }
    let mut xs = vec![S::zero(); n];
    let mut ws = vec![S::zero(); n];
    let nf: S = lit(n as f64);
    let half = n.div_ceil(2);
    let eps = S::default_epsilon();
    for i in 0..half {
        let mut x: S = (S::pi() * lit::<S>(i as f64 + 0.75) / (nf + lit(0.5))).cos();
        let mut dp = S::one();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= eps * lit(4.0) {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != S::zero() {
            dp = d;
        }
        let w = lit::<S>(2.0) / ((S::one() - x * x) * dp * dp);
        // x is the i-th largest root; store symmetric pair in ascending order.
        xs[n - 1 - i] = x;
        xs[i] = -x;
        ws[n - 1 - i] = w;
        ws[i] = w;
    }
    if n % 2 == 1 {
        xs[n / 2] = S::zero();
    }
    let mid = (lo + hi) * lit(0.5);
    let halfwidth = (hi - lo) * lit(0.5);
    let nodes = xs.into_iter().map(|x| mid + halfwidth * x).collect();
    // Reference weights integrate to 2 over [-1, 1].
    let weights = ws.into_iter().map(|w| w * lit(0.5)).collect();
    Ok(QuadratureRule { nodes, weights })
}

fn legendre_with_derivative<S: Real>(n: usize, x: S) -> (S, S) {
    let mut p0 = S::one();
    let mut p1 = x;
    for k in 2..=n {
        let kf: S = lit(k as f64);
        let p2 = ((kf + kf - S::one()) * x * p1 - (kf - S::one()) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (S::one(), S::zero());
    }
    let nf: S = lit(n as f64);
    let d = nf * (x * p1 - p0) / (x * x - S::one());
    (p1, d)
}

/// Gauss-Hermite rule for the normal distribution `N(0, variance)`.
///
/// Nodes are eigenvalues of the Jacobi matrix of the orthonormal probabilists'
/// Hermite polynomials (off-diagonal `sqrt(k)`), found by bisection and
/// polished with a Newton step; weights follow from Christoffel-Darboux,
/// `w_j = 1 / (n p_{n-1}(x_j)^2)`, evaluated in log space to survive the
/// extreme nodes of large rules.
pub fn gauss_hermite<S: Real>(n: usize, variance: S) -> Result<QuadratureRule<S>> {
    if n == 0 {
        return Err(Error::invalid("quadrature needs at least one node"));
    }
    if !(variance > S::zero()) {
        return Err(Error::invalid(format!("variance {variance} must be positive")));
    }
    let diag = vec![S::zero(); n];
    let off: Vec<S> = (1..n).map(|k| lit::<S>(k as f64).sqrt()).collect();
    let mut roots = linalg::tridiagonal_top_eigenvalues(&diag, &off, n);
    roots.reverse();
    // Exact symmetry about zero.
    for i in 0..n / 2 {
        let m = (roots[n - 1 - i] - roots[i]) * lit(0.5);
        roots[i] = -m;
        roots[n - 1 - i] = m;
    }
    if n % 2 == 1 {
        roots[n / 2] = S::zero();
    }
    let nf: S = lit(n as f64);
    let sd = variance.sqrt();
    let mut nodes = Vec::with_capacity(n);
    let mut log_weights = Vec::with_capacity(n);
    for &root in &roots {
        let mut x = root;
        if x != S::zero() {
            let (pn, pn1, _) = hermite_scaled(n, x);
            x -= pn / (nf.sqrt() * pn1);
        }
        let (_, pn1, log_scale) = hermite_scaled(n, x);
        let log_w = -(nf.ln() + lit::<S>(2.0) * (pn1.abs().ln() + log_scale));
        nodes.push(x * sd);
        log_weights.push(log_w);
    }
    let top = log_weights
        .iter()
        .copied()
        .fold(S::min_value().unwrap(), |a, b| a.max(b));
    let mut weights: Vec<S> = log_weights.iter().map(|&lw| (lw - top).exp()).collect();
    let total = weights.iter().fold(S::zero(), |a, &b| a + b);
    // Analytically the weights sum to one; renormalising removes round-off.
    for w in &mut weights {
        *w /= total;
    }
    Ok(QuadratureRule { nodes, weights })
}

/// Orthonormal probabilists' Hermite polynomials `p_n(x)`, `p_{n-1}(x)`,
/// returned scaled by `exp(-log_scale)`.
fn hermite_scaled<S: Real>(n: usize, x: S) -> (S, S, S) {
    let mut prev = S::zero();
    let mut cur = S::one();
    let mut log_scale = S::zero();
    let big: S = lit(1e30);
    for k in 0..n {
        let kf: S = lit(k as f64);
        let next = (x * cur - kf.sqrt() * prev) / (kf + S::one()).sqrt();
        prev = cur;
        cur = next;
        if cur.abs() > big {
            prev /= big;
            cur /= big;
            log_scale += big.ln();
        }
    }
    (cur, prev, log_scale)
}
