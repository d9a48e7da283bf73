//! Dense linear algebra used by the spectra, solver and simulator modules.
//!
//! The large factorisations (Gram matrices with up to a few thousand rows)
//! go through a right-looking blocked Cholesky whose trailing updates are
//! GEMM calls; nalgebra's built-in Cholesky is unblocked and roughly an
//! order of magnitude slower at that size. Small `T x T` task matrices use
//! nalgebra directly.

use nalgebra::{linalg::SymmetricTridiagonal, DMatrix, DVector, SymmetricEigen};

use crate::{lit, to_f64, Error, Real, Result};

const BLOCK: usize = 64;

/// Lower-triangular Cholesky factor `A = L L^T`.
#[derive(Clone, Debug)]
pub struct CholeskyFactor<S: Real> {
    l: DMatrix<S>,
}

/// Factorises a symmetric positive-definite matrix. Only the lower triangle
/// of `a` is read.
pub fn cholesky<S: Real>(mut a: DMatrix<S>) -> Result<CholeskyFactor<S>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            what: "cholesky columns",
            got: a.ncols(),
            expected: n,
        });
    }
    let mut k = 0;
    while k < n {
        let kb = BLOCK.min(n - k);
        factor_diagonal_block(&mut a, k, kb)?;
        let rest = n - k - kb;
        if rest > 0 {
            solve_panel(&mut a, k, kb);
            let panel = a.view((k + kb, k), (rest, kb)).clone_owned();
            // Lower part of the trailing matrix only, one block column at a time.
            let mut j = 0;
            while j < rest {
                let jb = BLOCK.min(rest - j);
                let left = panel.rows(j, rest - j);
                let right = panel.rows(j, jb).transpose();
                let mut target = a.view_mut((k + kb + j, k + kb + j), (rest - j, jb));
                target.gemm(-S::one(), &left, &right, S::one());
                j += jb;
            }
        }
        k += kb;
    }
    for j in 1..n {
        for i in 0..j {
            a[(i, j)] = S::zero();
        }
    }
    Ok(CholeskyFactor { l: a })
}

fn factor_diagonal_block<S: Real>(a: &mut DMatrix<S>, k: usize, kb: usize) -> Result<()> {
    for j in k..k + kb {
        let mut d = a[(j, j)];
        for p in k..j {
            let v = a[(j, p)];
            d -= v * v;
        }
        if !(d > S::zero()) || !d.is_finite() {
            return Err(Error::Factorization { pivot: j });
        }
        let d = d.sqrt();
        a[(j, j)] = d;
        for i in j + 1..k + kb {
            let mut s = a[(i, j)];
            for p in k..j {
                s -= a[(i, p)] * a[(j, p)];
            }
            a[(i, j)] = s / d;
        }
    }
    Ok(())
}

/// Overwrites the sub-diagonal panel `A[k+kb.., k..k+kb]` with `A L_kk^{-T}`.
fn solve_panel<S: Real>(a: &mut DMatrix<S>, k: usize, kb: usize) {
    let n = a.nrows();
    let start = k + kb;
    let diag: Vec<S> = (k..k + kb).map(|j| a[(j, j)]).collect();
    let lower: Vec<Vec<S>> = (k..k + kb)
        .map(|j| (k..j).map(|p| a[(j, p)]).collect())
        .collect();
    let data = a.as_mut_slice();
    for (jj, j) in (k..k + kb).enumerate() {
        let (head, tail) = data.split_at_mut(j * n);
        let col_j = &mut tail[start..n];
        for (pp, p) in (k..j).enumerate() {
            let ljp = lower[jj][pp];
            if ljp == S::zero() {
                continue;
            }
            let col_p = &head[p * n + start..p * n + n];
            for (x, &y) in col_j.iter_mut().zip(col_p) {
                *x -= y * ljp;
            }
        }
        let d = diag[jj];
        for x in col_j.iter_mut() {
            *x /= d;
        }
    }
}

impl<S: Real> CholeskyFactor<S> {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn l(&self) -> &DMatrix<S> {
        &self.l
    }

    /// Solves `L Y = B` in place for a block of right-hand sides.
    pub fn forward_solve_in_place(&self, b: &mut DMatrix<S>) {
        let n = self.dim();
        assert_eq!(b.nrows(), n, "right-hand side rows");
        let cols = b.ncols();
        let mut k = 0;
        while k < n {
            let kb = BLOCK.min(n - k);
            for c in 0..cols {
                for j in k..k + kb {
                    let v = b[(j, c)] / self.l[(j, j)];
                    b[(j, c)] = v;
                    if v != S::zero() {
                        for i in j + 1..k + kb {
                            let lij = self.l[(i, j)];
                            b[(i, c)] -= lij * v;
                        }
                    }
                }
            }
            let rest = n - k - kb;
            if rest > 0 {
                let solved = b.rows(k, kb).clone_owned();
                let panel = self.l.view((k + kb, k), (rest, kb));
                b.rows_mut(k + kb, rest)
                    .gemm(-S::one(), &panel, &solved, S::one());
            }
            k += kb;
        }
    }

    /// `v^T A^{-1} v = |L^{-1} v|^2`.
    pub fn inverse_quadratic_form(&self, v: &DVector<S>) -> S {
        let mut m = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        self.forward_solve_in_place(&mut m);
        m.iter().fold(S::zero(), |acc, &x| acc + x * x)
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &DVector<S>) -> DVector<S> {
        let n = self.dim();
        let mut y = DMatrix::from_column_slice(n, 1, b.as_slice());
        self.forward_solve_in_place(&mut y);
        let mut x = DVector::from_column_slice(y.as_slice());
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.l[(j, i)] * x[j];
            }
            x[i] = s / self.l[(i, i)];
        }
        x
    }
}

/// In-place Cholesky of a small row-major `r x r` buffer (lower triangle).
/// Returns `false` when a pivot is not positive.
pub(crate) fn small_cholesky_in_place<S: Real>(a: &mut [S], r: usize) -> bool {
    for j in 0..r {
        let mut d = a[j * r + j];
        for p in 0..j {
            d -= a[j * r + p] * a[j * r + p];
        }
        if !(d > S::zero()) {
            return false;
        }
        let d = d.sqrt();
        a[j * r + j] = d;
        for i in j + 1..r {
            let mut s = a[i * r + j];
            for p in 0..j {
                s -= a[i * r + p] * a[j * r + p];
            }
            a[i * r + j] = s / d;
        }
    }
    true
}

/// Largest absolute difference between `m` and its transpose.
pub fn asymmetry<S: Real>(m: &DMatrix<S>) -> S {
    let mut worst = S::zero();
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Eigenvalues and orthonormal eigenvectors of a small symmetric matrix,
/// sorted by descending eigenvalue.
pub fn symmetric_eigen_desc<S: Real>(m: &DMatrix<S>) -> (DVector<S>, DMatrix<S>) {
    let eig = SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        vectors.set_column(c, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

pub fn min_eigenvalue<S: Real>(m: &DMatrix<S>) -> S {
    let eig = SymmetricEigen::new(m.clone());
    eig.eigenvalues
        .iter()
        .copied()
        .fold(S::max_value().unwrap(), |a, b| a.min(b))
}

/// Factor `D = R R^T` of a symmetric positive semi-definite matrix, with `R`
/// of shape `T x r` where `r` counts eigenvalues above `tol`. Eigenvalues in
/// `[-tol, tol]` are treated as exact zeros.
pub fn psd_factor<S: Real>(d: &DMatrix<S>, tol: S) -> Result<DMatrix<S>> {
    let (values, vectors) = symmetric_eigen_desc(d);
    let min = values.iter().copied().fold(S::zero(), |a, b| a.min(b));
    if min < -tol {
        return Err(Error::NotPositiveSemiDefinite {
            min_eigenvalue: to_f64(min),
        });
    }
    let rank = values.iter().filter(|&&v| v > tol).count();
    let t = d.nrows();
    let mut r = DMatrix::zeros(t, rank);
    for a in 0..rank {
        let s = values[a].sqrt();
        for i in 0..t {
            r[(i, a)] = vectors[(i, a)] * s;
        }
    }
    Ok(r)
}

/// Symmetric square root of a positive semi-definite matrix.
pub fn psd_sqrt<S: Real>(m: &DMatrix<S>) -> DMatrix<S> {
    let (values, vectors) = symmetric_eigen_desc(m);
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for a in 0..n {
        let s = values[a].max(S::zero()).sqrt();
        let v = vectors.column(a);
        out += v * v.transpose() * s;
    }
    out
}

/// Number of eigenvalues of the symmetric tridiagonal matrix strictly below `x`.
fn sturm_count<S: Real>(diag: &[S], off_sq: &[S], x: S, pivmin: S) -> usize {
    let mut count = 0;
    let mut q = diag[0] - x;
    if q.abs() < pivmin {
        q = -pivmin;
    }
    if q < S::zero() {
        count += 1;
    }
    for i in 1..diag.len() {
        q = diag[i] - x - off_sq[i - 1] / q;
        if q.abs() < pivmin {
            q = -pivmin;
        }
        if q < S::zero() {
            count += 1;
        }
    }
    count
}

/// The `count` largest eigenvalues (descending) of a symmetric tridiagonal
/// matrix, by Sturm-sequence bisection.
pub fn tridiagonal_top_eigenvalues<S: Real>(diag: &[S], off: &[S], count: usize) -> Vec<S> {
    let n = diag.len();
    assert_eq!(off.len() + 1, n.max(1), "off-diagonal length");
    let count = count.min(n);
    if n == 0 {
        return Vec::new();
    }
    let off_sq: Vec<S> = off.iter().map(|&e| e * e).collect();
    let mut lo = S::max_value().unwrap();
    let mut hi = S::min_value().unwrap();
    for i in 0..n {
        let mut radius = S::zero();
        if i > 0 {
            radius += off[i - 1].abs();
        }
        if i + 1 < n {
            radius += off[i].abs();
        }
        lo = lo.min(diag[i] - radius);
        hi = hi.max(diag[i] + radius);
    }
    // Safe minimum that is representable in both f32 and f64.
    let tiny = lit::<S>(1e-30);
    let scale = lo.abs().max(hi.abs()).max(tiny);
    let eps = S::default_epsilon();
    let pivmin = tiny * lit(1e10) * scale.max(S::one());
    let widen = scale * eps * lit(4.0) + pivmin;
    lo -= widen;
    hi += widen;

    let mut out = Vec::with_capacity(count);
    // Upper bound for the next (smaller) eigenvalue shrinks as we go.
    let mut upper = hi;
    for k in 0..count {
        let target = n - 1 - k;
        let mut a = lo;
        let mut b = upper;
        for _ in 0..256 {
            let mid = (a + b) * lit(0.5);
            if mid <= a || mid >= b {
                break;
            }
            if sturm_count(diag, &off_sq, mid, pivmin) > target {
                b = mid;
            } else {
                a = mid;
            }
            if b - a <= eps * lit(2.0) * a.abs().max(b.abs()) + pivmin {
                break;
            }
        }
        let value = (a + b) * lit(0.5);
        out.push(value);
        upper = b;
    }
    out
}

/// Number of eigenvalues of a symmetric tridiagonal matrix below `x`.
pub fn tridiagonal_count_below<S: Real>(diag: &[S], off: &[S], x: S) -> usize {
    if diag.is_empty() {
        return 0;
    }
    let off_sq: Vec<S> = off.iter().map(|&e| e * e).collect();
    let scale = diag
        .iter()
        .chain(off)
        .fold(S::one(), |a, &b| a.max(b.abs()));
    sturm_count(diag, &off_sq, x, lit::<S>(1e-20) * scale)
}

/// Householder reduction of a dense symmetric matrix to tridiagonal form,
/// returned as `(diagonal, off-diagonal)`.
pub fn symmetric_tridiagonal<S: Real>(m: DMatrix<S>) -> (Vec<S>, Vec<S>) {
    let (d, e) = SymmetricTridiagonal::new(m).unpack_tridiagonal();
    (d.as_slice().to_vec(), e.as_slice().to_vec())
}

/// The `count` largest eigenvalues (descending) of a dense symmetric matrix:
/// Householder tridiagonalisation followed by bisection.
pub fn symmetric_top_eigenvalues<S: Real>(m: DMatrix<S>, count: usize) -> Vec<S> {
    let tri = SymmetricTridiagonal::new(m);
    let (d, e) = tri.unpack_tridiagonal();
    tridiagonal_top_eigenvalues(d.as_slice(), e.as_slice(), count)
}
