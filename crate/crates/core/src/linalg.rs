//! Sparse storage, banded LDLᵀ factorization and a shift-and-invert Lanczos
//! eigensolver for generalized problems `A x = λ M x` with diagonal `M`.
//!
//! The tube grids are periodic in `s`, so their natural ordering has a wide
//! wrap-around band. Ordering the `s`-blocks as `0, N−1, 1, N−2, …` brings
//! every periodic neighbour within two blocks, which keeps the bandwidth at
//! twice the fiber size and makes a direct banded factorization cheap.

use std::ops::{Add, Div, Mul, Neg, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("zero pivot at row {0} in LDLᵀ factorization")]
    ZeroPivot(usize),
    #[error("shift {shift} lies above {count} eigenvalue(s)")]
    ShiftTooHigh { shift: f64, count: usize },
    #[error("eigensolver did not converge: residual {residual:e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    /// Build from triplets; duplicates are summed, explicit zeros kept.
    pub fn from_triplets(n: usize, mut trip: Vec<(usize, usize, f64)>) -> Self {
        trip.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(trip.len());
        let mut vals: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in trip {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn diagonal(n: usize, d: &[f64]) -> Self {
        Self::from_triplets(n, d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[i] = acc;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            let mut row = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                row += self.vals[k] * y[self.cols[k]];
            }
            acc += x[i] * row;
        }
        acc
    }

    /// `A + c·diag(d)`.
    pub fn add_diagonal(&self, c: f64, d: &[f64]) -> Self {
        let mut trip = self.triplets();
        trip.extend(d.iter().enumerate().map(|(i, &v)| (i, i, c * v)));
        Self::from_triplets(self.n, trip)
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut t = Vec::with_capacity(self.vals.len());
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                t.push((i, self.cols[k], self.vals[k]));
            }
        }
        t
    }

    /// Largest `|A_ij − A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k];
                worst = worst.max((self.vals[k] - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Dense copy, for tests and small problems only.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.triplets() {
            d[(i, j)] += v;
        }
        d
    }
}

/// Order of `n_blocks` periodic blocks of size `block` that keeps periodic
/// neighbours at most two blocks apart. Entry `k` is the original index of
/// the `k`-th unknown in the new order.
pub fn interleaved_order(n_blocks: usize, block: usize) -> Vec<usize> {
    let mut blocks = Vec::with_capacity(n_blocks);
    let (mut lo, mut hi) = (0usize, n_blocks);
    while lo < hi {
        blocks.push(lo);
        lo += 1;
        if lo < hi {
            hi -= 1;
            blocks.push(hi);
        }
    }
    blocks.iter().flat_map(|&b| (0..block).map(move |j| b * block + j)).collect()
}

/// Field operations needed by the banded factorization.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Send
    + Sync
    + std::fmt::Debug
{
    fn zero() -> Self;
    fn from_real(x: f64) -> Self;
    fn modulus(self) -> f64;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn from_real(x: f64) -> Self {
        x
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn from_real(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
}

/// `LDLᵀ` factors of a symmetric (real or complex-symmetric) band matrix,
/// stored row-wise in a permuted ordering. No pivoting: callers only factor
/// matrices that are definite or have a definite imaginary part.
#[derive(Debug, Clone)]
pub struct BandedLdl<T: Scalar> {
    n: usize,
    bw: usize,
    perm: Vec<usize>,
    /// Strict lower band of `L`, row `i` holding columns `i−bw..i`.
    low: Vec<T>,
    d: Vec<T>,
}

/// Permuted band pattern shared by several factorizations of matrices with
/// the same sparsity.
#[derive(Debug, Clone)]
pub struct BandPattern {
    pub perm: Vec<usize>,
    pub inv: Vec<usize>,
    pub bw: usize,
}

impl BandPattern {
    pub fn new(a: &Csr, perm: Vec<usize>) -> Self {
        let mut inv = vec![0; a.n];
        for (k, &p) in perm.iter().enumerate() {
            inv[p] = k;
        }
        let mut bw = 0;
        for (i, j, _) in a.triplets() {
            bw = bw.max(inv[i].abs_diff(inv[j]));
        }
        Self { perm, inv, bw }
    }

    pub fn natural(a: &Csr) -> Self {
        Self::new(a, (0..a.n).collect())
    }
}

impl<T: Scalar> BandedLdl<T> {
    /// Factor `Σ_r coef_r · A_r` where every `A_r` fits `pattern`. Diagonal
    /// terms can be supplied as a diagonal CSR.
    pub fn factor(pattern: &BandPattern, terms: &[(T, &Csr)]) -> Result<Self, LinalgError> {
        let n = pattern.perm.len();
        let bw = pattern.bw;
        let w = bw + 1;
        let mut band = vec![T::zero(); n * w];
        for &(c, a) in terms {
            if a.n != n {
                return Err(LinalgError::Dimension(format!("{} vs {}", a.n, n)));
            }
            for i in 0..n {
                let pi = pattern.inv[i];
                for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                    let pj = pattern.inv[a.cols[k]];
                    if pj <= pi {
                        let off = pi * w + (pj + bw - pi);
                        band[off] = band[off] + c * T::from_real(a.vals[k]);
                    }
                }
            }
        }
        let mut d = vec![T::zero(); n];
        // row i of `band` first accumulates w_ik = L_ik d_k, then is scaled to L
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let ri = i * w;
            for j in lo..i {
                let rj = j * w;
                let klo = lo.max(j.saturating_sub(bw));
                let mut acc = band[ri + (j + bw - i)];
                for k in klo..j {
                    acc = acc - band[ri + (k + bw - i)] * band[rj + (k + bw - j)];
                }
                band[ri + (j + bw - i)] = acc;
            }
            let mut di = band[ri + bw];
            for j in lo..i {
                let wij = band[ri + (j + bw - i)];
                let lij = wij / d[j];
                di = di - wij * lij;
                band[ri + (j + bw - i)] = lij;
            }
            if di.modulus() == 0.0 || !di.modulus().is_finite() {
                return Err(LinalgError::ZeroPivot(i));
            }
            d[i] = di;
        }
        Ok(Self { n, bw, perm: pattern.perm.clone(), low: band, d })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn pivots(&self) -> &[T] {
        &self.d
    }

    /// Solve in place; `x` is in the original ordering.
    pub fn solve_in_place(&self, x: &mut [T]) {
        let n = self.n;
        let w = self.bw + 1;
        let mut y: Vec<T> = self.perm.iter().map(|&p| x[p]).collect();
        for i in 0..n {
            let lo = i.saturating_sub(self.bw);
            let ri = i * w;
            let mut acc = y[i];
            for k in lo..i {
                acc = acc - self.low[ri + (k + self.bw - i)] * y[k];
            }
            y[i] = acc;
        }
        for i in 0..n {
            y[i] = y[i] / self.d[i];
        }
        for i in (0..n).rev() {
            let lo = i.saturating_sub(self.bw);
            let ri = i * w;
            let yi = y[i];
            for k in lo..i {
                y[k] = y[k] - self.low[ri + (k + self.bw - i)] * yi;
            }
        }
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = y[k];
        }
    }
}

impl BandedLdl<f64> {
    /// Number of negative pivots, equal to the number of negative
    /// eigenvalues of the factored matrix (Sylvester's law of inertia).
    pub fn negative_count(&self) -> usize {
        self.d.iter().filter(|&&x| x < 0.0).count()
    }
}

/// Options for [`lowest_eigenpairs`].
#[derive(Debug, Clone, Copy)]
pub struct LanczosOptions {
    /// Relative residual target, scaled by `max(1, |λ|)`.
    pub tol: f64,
    /// Total Lanczos steps over all restarts.
    pub max_iter: usize,
    /// Krylov dimension per restart cycle.
    pub krylov: usize,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 500, krylov: 40 }
    }
}

/// Output of [`lowest_eigenpairs`]: eigenvalues ascending, `M`-orthonormal
/// vectors, raw residuals `‖Ax − λMx‖ / ‖Mx‖`.
#[derive(Debug, Clone)]
pub struct EigenResult {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

fn m_dot(m: &[f64], x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).zip(m).map(|((a, b), w)| a * b * w).sum()
}

/// Deterministic, broadband vector used to restart after a breakdown.
fn fresh_direction(n: usize, salt: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let x = ((i as f64 + 1.0) * 12.9898 + salt as f64 * 78.233).sin() * 43758.5453;
            x - x.floor() - 0.5
        })
        .collect()
}

/// The `k` smallest eigenpairs of `A x = λ M x` by shift-and-invert Lanczos
/// with full `M`-orthogonal reorthogonalization. The shift must lie below
/// the spectrum; this is checked through the inertia of `A − σM`.
pub fn lowest_eigenpairs(
    a: &Csr,
    m: &[f64],
    pattern: &BandPattern,
    k: usize,
    shift: f64,
    start: &[f64],
    opts: LanczosOptions,
) -> Result<EigenResult, LinalgError> {
    let n = a.n;
    let mdiag = Csr::diagonal(n, m);
    let fac = BandedLdl::<f64>::factor(pattern, &[(1.0, a), (-shift, &mdiag)])?;
    let neg = fac.negative_count();
    if neg > 0 {
        return Err(LinalgError::ShiftTooHigh { shift, count: neg });
    }
    let p = opts.krylov.min(n).max(k + 1);
    let mut v0: Vec<f64> = start.to_vec();
    let mut total = 0usize;
    let mut last_res = f64::INFINITY;
    loop {
        let nrm = m_dot(m, &v0, &v0).sqrt();
        if nrm == 0.0 || !nrm.is_finite() {
            return Err(LinalgError::Dimension("degenerate start vector".into()));
        }
        let mut basis: Vec<Vec<f64>> = vec![v0.iter().map(|x| x / nrm).collect()];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        for j in 0..p {
            let mut w: Vec<f64> = basis[j].iter().zip(m).map(|(x, mi)| x * mi).collect();
            fac.solve_in_place(&mut w);
            let aj = m_dot(m, &basis[j], &w);
            alpha.push(aj);
            for _ in 0..2 {
                for q in &basis {
                    let c = m_dot(m, q, &w);
                    for (wi, qi) in w.iter_mut().zip(q) {
                        *wi -= c * qi;
                    }
                }
            }
            total += 1;
            let mut b = m_dot(m, &w, &w).sqrt();
            if j + 1 == p {
                break;
            }
            if b <= 1e-14 * aj.abs() {
                // invariant subspace found: continue with a fresh direction
                // (zero coupling) so that more than one pair can be reached
                w = fresh_direction(n, basis.len());
                for _ in 0..2 {
                    for q in &basis {
                        let c = m_dot(m, q, &w);
                        for (wi, qi) in w.iter_mut().zip(q) {
                            *wi -= c * qi;
                        }
                    }
                }
                let r = m_dot(m, &w, &w).sqrt();
                if r <= 1e-8 {
                    break;
                }
                w.iter_mut().for_each(|x| *x *= 1.0 / r);
                beta.push(0.0);
                basis.push(w);
                continue;
            }
            beta.push(b);
            b = 1.0 / b;
            basis.push(w.iter().map(|x| x * b).collect());
        }
        let dim = alpha.len();
        let mut t = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            t[(i, i)] = alpha[i];
            if i + 1 < dim {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[y].partial_cmp(&eig.eigenvalues[x]).unwrap());
        let kk = k.min(dim);
        let mut values = Vec::with_capacity(kk);
        let mut vectors = Vec::with_capacity(kk);
        let mut residuals = Vec::with_capacity(kk);
        let mut worst: f64 = 0.0;
        for &idx in order.iter().take(kk) {
            let theta = eig.eigenvalues[idx];
            let lam = shift + 1.0 / theta;
            let mut y = vec![0.0; n];
            for (c, q) in basis.iter().enumerate() {
                let coef = eig.eigenvectors[(c, idx)];
                for (yi, qi) in y.iter_mut().zip(q) {
                    *yi += coef * qi;
                }
            }
            let yn = m_dot(m, &y, &y).sqrt();
            for yi in y.iter_mut() {
                *yi /= yn;
            }
            let ay = a.mul(&y);
            let (mut rn, mut mn) = (0.0, 0.0);
            for i in 0..n {
                let my = m[i] * y[i];
                rn += (ay[i] - lam * my).powi(2);
                mn += my * my;
            }
            let res = (rn / mn).sqrt();
            worst = worst.max(res / lam.abs().max(1.0));
            values.push(lam);
            vectors.push(y);
            residuals.push(res);
        }
        if kk == k && worst <= opts.tol {
            return Ok(EigenResult { values, vectors, residuals, iterations: total });
        }
        last_res = last_res.min(worst);
        if total >= opts.max_iter {
            return Err(LinalgError::NoConvergence { residual: last_res, iterations: total });
        }
        // restart from a blend of the wanted Ritz vectors
        v0 = vec![0.0; n];
        for (c, y) in vectors.iter().enumerate() {
            let wgt = 1.0 / (1.0 + c as f64);
            for (vi, yi) in v0.iter_mut().zip(y) {
                *vi += wgt * yi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn periodic_laplacian(n: usize) -> Csr {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            t.push((i, (i + 1) % n, -1.0));
            t.push((i, (i + n - 1) % n, -1.0));
        }
        Csr::from_triplets(n, t)
    }

    #[test]
    fn interleaving_gives_narrow_band() {
        let a = periodic_laplacian(64);
        let pat = BandPattern::new(&a, interleaved_order(64, 1));
        assert_eq!(pat.bw, 2);
        assert_eq!(BandPattern::natural(&a).bw, 63);
    }

    #[test]
    fn banded_solve_matches_dense() {
        let n = 37;
        let a = periodic_laplacian(n);
        let shifted = a.add_diagonal(0.3, &vec![1.0; n]);
        let pat = BandPattern::new(&shifted, interleaved_order(n, 1));
        let f = BandedLdl::<f64>::factor(&pat, &[(1.0, &shifted)]).unwrap();
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut x = b.clone();
        f.solve_in_place(&mut x);
        let r = shifted.mul(&x);
        for i in 0..n {
            assert!((r[i] - b[i]).abs() < 1e-12);
        }
        assert_eq!(f.negative_count(), 0);
    }

    #[test]
    fn complex_symmetric_solve() {
        let n = 20;
        let a = periodic_laplacian(n);
        let id = Csr::diagonal(n, &vec![1.0; n]);
        let z = Complex64::new(-3.0, 2.0);
        let pat = BandPattern::new(&a, interleaved_order(n, 1));
        let f = BandedLdl::<Complex64>::factor(&pat, &[(Complex64::from_real(1.0), &a), (z, &id)]).unwrap();
        let b: Vec<Complex64> = (0..n).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let mut x = b.clone();
        f.solve_in_place(&mut x);
        for i in 0..n {
            let ax = x[i] * (2.0 + z) - x[(i + 1) % n] - x[(i + n - 1) % n];
            assert!((ax - b[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn inertia_counts_negative_eigenvalues() {
        let n = 32;
        let a = periodic_laplacian(n);
        // eigenvalues 4 sin²(πk/n): below 0.1 only k = 0, ±1
        let s = a.add_diagonal(-0.1, &vec![1.0; n]);
        let f = BandedLdl::<f64>::factor(&BandPattern::new(&s, interleaved_order(n, 1)), &[(1.0, &s)]).unwrap();
        assert_eq!(f.negative_count(), 3);
    }

    #[test]
    fn lanczos_periodic_spectrum() {
        let n = 128;
        let a = periodic_laplacian(n);
        let m = vec![1.0; n];
        let pat = BandPattern::new(&a, interleaved_order(n, 1));
        let start: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * (i as f64).cos()).collect();
        let r = lowest_eigenpairs(&a, &m, &pat, 2, -0.5, &start, LanczosOptions::default()).unwrap();
        assert!(r.values[0].abs() < 1e-12);
        let l1 = 4.0 * (std::f64::consts::PI / n as f64).sin().powi(2);
        assert!((r.values[1] - l1).abs() < 1e-10);
    }
}
