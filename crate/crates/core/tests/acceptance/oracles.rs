//! Independent reference computations used by the acceptance checks.

use nalgebra::{DMatrix, DVector};

/// Dense fixed point on the full `MT x MT` matrix form:
/// `eps_t = tr P_t (L^-1 + sum_s n_s / (sigma_s^2 + eps_s) P_s)^-1` with
/// `L = D (x) Lambda`, iterated with damping until it stops moving.
pub fn dense_fixed_point(lambdas: &[f64], d: &DMatrix<f64>, noise: &[f64], counts: &[f64]) -> Vec<f64> {
    let m = lambdas.len();
    let t = d.nrows();
    let big = DMatrix::from_fn(m * t, m * t, |i, j| {
        if i % m == j % m {
            d[(i / m, j / m)] * lambdas[i % m]
        } else {
            0.0
        }
    });
    let big_inv = big.try_inverse().expect("L invertible");
    let mut eps: Vec<f64> = (0..t).map(|tau| d[(tau, tau)] * lambdas.iter().sum::<f64>()).collect();
    for _ in 0..200_000 {
        let mut a = big_inv.clone();
        for tau in 0..t {
            let w = counts[tau] / (noise[tau] + eps[tau]);
            for i in 0..m {
                a[(tau * m + i, tau * m + i)] += w;
            }
        }
        let inv = a.try_inverse().expect("posterior precision invertible");
        let next: Vec<f64> = (0..t).map(|tau| (0..m).map(|i| inv[(tau * m + i, tau * m + i)]).sum()).collect();
        let change = eps
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs() / b.abs().max(1e-300))
            .fold(0.0, f64::max);
        for (e, n) in eps.iter_mut().zip(&next) {
            *e = 0.5 * *e + 0.5 * n;
        }
        if change < 1e-15 {
            break;
        }
    }
    eps
}

/// Orthonormal shifted Legendre polynomials on `[0, 1]`, degrees 0 to 2.
fn legendre3(x: f64) -> [f64; 3] {
    let t = 2.0 * x - 1.0;
    [1.0, 3f64.sqrt() * t, 5f64.sqrt() * 0.5 * (3.0 * t * t - 1.0)]
}

/// Gauss-Legendre rule on `[0, 1]` by Newton iteration on `P_k`.
pub fn gauss_legendre01(k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(k);
    let mut weights = Vec::with_capacity(k);
    for i in 0..k {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (k as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=k {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if k == 0 { 1.0 } else { p1 };
            dp = k as f64 * (x * p - p0) / (x * x - 1.0);
            let step = p / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        nodes.push(0.5 * (x + 1.0));
        weights.push(1.0 / ((1.0 - x * x) * dp * dp));
    }
    (nodes, weights)
}

/// Bayes error of task `task` for the rank-3 kernel
/// `sum_k lambda_k phi_k(x) phi_k(x')` on uniform `[0, 1]` inputs, with
/// training labels `labels`: the weight-space posterior covariance
/// averaged over test inputs (`<phi phi^T> = I`) and over training inputs
/// by a tensor Gauss-Legendre rule with `k` nodes per input.
pub fn degenerate_bayes_error(
    lambdas: &[f64; 3],
    d: &DMatrix<f64>,
    noise: &[f64],
    labels: &[usize],
    task: usize,
    k: usize,
) -> f64 {
    let t = d.nrows();
    let dim = 3 * t;
    let prior = DMatrix::from_fn(dim, dim, |i, j| {
        if i % 3 == j % 3 {
            d[(i / 3, j / 3)] * lambdas[i % 3]
        } else {
            0.0
        }
    });
    let prior_prec = prior.try_inverse().expect("prior invertible");
    let (nodes, weights) = gauss_legendre01(k);
    let n = labels.len();
    let mut idx = vec![0usize; n];
    let mut total = 0.0;
    loop {
        let mut prec = prior_prec.clone();
        let mut w = 1.0;
        for (e, &tau) in labels.iter().enumerate() {
            let phi = legendre3(nodes[idx[e]]);
            w *= weights[idx[e]];
            let mut a = DVector::zeros(dim);
            for q in 0..3 {
                a[tau * 3 + q] = phi[q];
            }
            prec += &a * a.transpose() / noise[tau];
        }
        let cov = prec.try_inverse().expect("posterior precision invertible");
        total += w * (0..3).map(|q| cov[(task * 3 + q, task * 3 + q)]).sum::<f64>();
        let mut e = 0;
        loop {
            if e == n {
                return total;
            }
            idx[e] += 1;
            if idx[e] < k {
                break;
            }
            idx[e] = 0;
            e += 1;
        }
    }
}

/// Least-squares slope of `y` against `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
