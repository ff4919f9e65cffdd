//! Banded block operators, block-tridiagonal factorizations and the small
//! numerical kernels shared by the solvers.
//!
//! Vectors over the axial lattice are stored node-major: entry `i * k + c`
//! holds channel `c` at node `i`. Blocks are `k x k`, row-major.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// `out = a * b` for `k x k` row-major blocks.
pub fn block_mul(a: &[C64], b: &[C64], out: &mut [C64], k: usize) {
    for r in 0..k {
        for c in 0..k {
            let mut s = ZERO;
            for m in 0..k {
                s += a[r * k + m] * b[m * k + c];
            }
            out[r * k + c] = s;
        }
    }
}

/// `y += a * x` for a `k x k` block.
#[inline]
pub fn block_matvec_add(a: &[C64], x: &[C64], y: &mut [C64], k: usize) {
    for r in 0..k {
        let mut s = ZERO;
        for m in 0..k {
            s += a[r * k + m] * x[m];
        }
        y[r] += s;
    }
}

/// Conjugate transpose of a `k x k` block.
pub fn block_adjoint(a: &[C64], k: usize) -> Vec<C64> {
    let mut out = vec![ZERO; k * k];
    for r in 0..k {
        for c in 0..k {
            out[c * k + r] = a[r * k + c].conj();
        }
    }
    out
}

/// Inverse of a `k x k` block by Gauss-Jordan elimination with partial pivoting.
/// Returns `None` when a pivot vanishes.
pub fn block_inverse(a: &[C64], k: usize) -> Option<Vec<C64>> {
    let mut m = a.to_vec();
    let mut inv = vec![ZERO; k * k];
    for d in 0..k {
        inv[d * k + d] = ONE;
    }
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for col in 0..k {
        let piv = (col..k)
            .max_by(|&p, &q| m[p * k + col].norm().total_cmp(&m[q * k + col].norm()))
            .unwrap();
        if m[piv * k + col].norm() <= 1e-300 * scale {
            return None;
        }
        if piv != col {
            for c in 0..k {
                m.swap(piv * k + c, col * k + c);
                inv.swap(piv * k + c, col * k + c);
            }
        }
        let p = ONE / m[col * k + col];
        for c in 0..k {
            m[col * k + c] *= p;
            inv[col * k + c] *= p;
        }
        for r in 0..k {
            if r == col {
                continue;
            }
            let f = m[r * k + col];
            if f == ZERO {
                continue;
            }
            for c in 0..k {
                let mc = m[col * k + c];
                let ic = inv[col * k + c];
                m[r * k + c] -= f * mc;
                inv[r * k + c] -= f * ic;
            }
        }
    }
    Some(inv)
}

pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Block-banded matrix with `n` block rows, `k x k` blocks and half
/// bandwidth `b`: block `(i, i + d)` is stored for `-b <= d <= b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Banded {
    pub n: usize,
    pub k: usize,
    pub b: usize,
    data: Vec<C64>,
}

impl Banded {
    pub fn zeros(n: usize, k: usize, b: usize) -> Self {
        Self { n, k, b, data: vec![ZERO; n * (2 * b + 1) * k * k] }
    }

    pub fn dim(&self) -> usize {
        self.n * self.k
    }

    #[inline]
    fn offset(&self, i: usize, d: isize) -> usize {
        let slot = (d + self.b as isize) as usize;
        (i * (2 * self.b + 1) + slot) * self.k * self.k
    }

    /// Block `(i, i + d)`; panics if outside the band or the matrix.
    pub fn block(&self, i: usize, d: isize) -> &[C64] {
        assert!(d.unsigned_abs() <= self.b);
        let o = self.offset(i, d);
        &self.data[o..o + self.k * self.k]
    }

    pub fn block_mut(&mut self, i: usize, d: isize) -> &mut [C64] {
        assert!(d.unsigned_abs() <= self.b);
        let o = self.offset(i, d);
        let kk = self.k * self.k;
        &mut self.data[o..o + kk]
    }

    /// Scalar entry at global indices, zero outside the band.
    pub fn get(&self, r: usize, c: usize) -> C64 {
        let (i, p) = (r / self.k, r % self.k);
        let (j, q) = (c / self.k, c % self.k);
        let d = j as isize - i as isize;
        if d.unsigned_abs() > self.b {
            return ZERO;
        }
        self.block(i, d)[p * self.k + q]
    }

    fn valid(&self, i: usize, d: isize) -> bool {
        let j = i as isize + d;
        j >= 0 && (j as usize) < self.n
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![ZERO; self.dim()];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[C64], y: &mut [C64]) {
        let k = self.k;
        y.iter_mut().for_each(|v| *v = ZERO);
        for i in 0..self.n {
            for d in -(self.b as isize)..=(self.b as isize) {
                if !self.valid(i, d) {
                    continue;
                }
                let j = (i as isize + d) as usize;
                let (head, tail) = (i * k, j * k);
                block_matvec_add(self.block(i, d), &x[tail..tail + k], &mut y[head..head + k], k);
            }
        }
    }

    pub fn adjoint(&self) -> Banded {
        let mut out = Banded::zeros(self.n, self.k, self.b);
        for i in 0..self.n {
            for d in -(self.b as isize)..=(self.b as isize) {
                if !self.valid(i, d) {
                    continue;
                }
                let j = (i as isize + d) as usize;
                let adj = block_adjoint(self.block(i, d), self.k);
                out.block_mut(j, -d).copy_from_slice(&adj);
            }
        }
        out
    }

    /// Copy with a different (not smaller than needed) half bandwidth.
    pub fn widen(&self, b: usize) -> Banded {
        let mut out = Banded::zeros(self.n, self.k, b);
        let lim = self.b.min(b) as isize;
        for i in 0..self.n {
            for d in -lim..=lim {
                if self.valid(i, d) {
                    out.block_mut(i, d).copy_from_slice(self.block(i, d));
                }
            }
        }
        out
    }

    pub fn lin_comb(&self, alpha: C64, other: &Banded, beta: C64) -> Banded {
        assert_eq!((self.n, self.k), (other.n, other.k));
        let b = self.b.max(other.b);
        let mut out = self.widen(b);
        out.data.iter_mut().for_each(|z| *z *= alpha);
        let o = other.widen(b);
        for (z, w) in out.data.iter_mut().zip(&o.data) {
            *z += beta * w;
        }
        out
    }

    pub fn scale(&self, alpha: C64) -> Banded {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|z| *z *= alpha);
        out
    }

    /// Banded product `self * other`.
    pub fn mul(&self, other: &Banded) -> Banded {
        assert_eq!((self.n, self.k), (other.n, other.k));
        let k = self.k;
        let b = self.b + other.b;
        let mut out = Banded::zeros(self.n, k, b);
        let mut tmp = vec![ZERO; k * k];
        for i in 0..self.n {
            for d1 in -(self.b as isize)..=(self.b as isize) {
                if !self.valid(i, d1) {
                    continue;
                }
                let m = (i as isize + d1) as usize;
                for d2 in -(other.b as isize)..=(other.b as isize) {
                    if !other.valid(m, d2) {
                        continue;
                    }
                    block_mul(self.block(i, d1), other.block(m, d2), &mut tmp, k);
                    let dst = out.block_mut(i, d1 + d2);
                    for (z, t) in dst.iter_mut().zip(&tmp) {
                        *z += t;
                    }
                }
            }
        }
        out
    }

    /// `i (self * other - other * self)`.
    pub fn commutator_i(&self, other: &Banded) -> Banded {
        self.mul(other).lin_comb(I, &other.mul(self), -I)
    }

    /// Max-norm of `self - self^*`.
    pub fn hermiticity_defect(&self) -> f64 {
        let adj = self.adjoint();
        self.data.iter().zip(&adj.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.data)
    }

    /// Principal sub-matrix over block rows `start..start + len`.
    pub fn sub(&self, start: usize, len: usize) -> Banded {
        let mut out = Banded::zeros(len, self.k, self.b);
        for i in 0..len {
            for d in -(self.b as isize)..=(self.b as isize) {
                let j = i as isize + d;
                if j < 0 || j as usize >= len {
                    continue;
                }
                out.block_mut(i, d).copy_from_slice(self.block(start + i, d));
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |r, c| self.get(r, c))
    }

    /// Add `diag` (length `dim`) to the main diagonal.
    pub fn add_diagonal(&mut self, diag: &[C64]) {
        let k = self.k;
        for i in 0..self.n {
            let blk = self.block_mut(i, 0);
            for c in 0..k {
                blk[c * k + c] += diag[i * k + c];
            }
        }
    }

    /// Left and right multiplication by a diagonal: `diag(l) * self * diag(r)`.
    pub fn diag_sandwich(&self, l: &[f64], r: &[f64]) -> Banded {
        let k = self.k;
        let mut out = self.clone();
        for i in 0..self.n {
            for d in -(self.b as isize)..=(self.b as isize) {
                if !self.valid(i, d) {
                    continue;
                }
                let j = (i as isize + d) as usize;
                let blk = out.block_mut(i, d);
                for p in 0..k {
                    for q in 0..k {
                        blk[p * k + q] *= l[i * k + p] * r[j * k + q];
                    }
                }
            }
        }
        out
    }
}

/// Block LU factorization of a block-tridiagonal matrix (half bandwidth 1),
/// without pivoting across block rows. The inverse pivot blocks are stored so
/// that a solve is a pair of block sweeps.
#[derive(Clone, Debug)]
pub struct BlockLu {
    n: usize,
    k: usize,
    /// `lower_i * U_{i-1}^{-1}`, for `i >= 1`.
    l: Vec<C64>,
    /// `U_i^{-1}`.
    uinv: Vec<C64>,
    /// Super-diagonal blocks `(i, i + 1)`.
    upper: Vec<C64>,
}

impl BlockLu {
    pub fn new(m: &Banded) -> Result<Self> {
        if m.b != 1 {
            return Err(Error::Invalid(format!("block LU needs half bandwidth 1, got {}", m.b)));
        }
        let (n, k) = (m.n, m.k);
        let kk = k * k;
        let mut l = vec![ZERO; n * kk];
        let mut uinv = vec![ZERO; n * kk];
        let mut upper = vec![ZERO; n * kk];
        let mut tmp = vec![ZERO; kk];
        let mut u = m.block(0, 0).to_vec();
        for i in 0..n {
            if i > 0 {
                let lower = m.block(i, -1);
                block_mul(lower, &uinv[(i - 1) * kk..i * kk], &mut tmp, k);
                l[i * kk..(i + 1) * kk].copy_from_slice(&tmp);
                let mut prod = vec![ZERO; kk];
                block_mul(&tmp, &upper[(i - 1) * kk..i * kk], &mut prod, k);
                u = m.block(i, 0).to_vec();
                for (a, p) in u.iter_mut().zip(&prod) {
                    *a -= p;
                }
            }
            let inv = block_inverse(&u, k).ok_or(Error::SolverBreakdown { node: i })?;
            uinv[i * kk..(i + 1) * kk].copy_from_slice(&inv);
            if i + 1 < n {
                upper[i * kk..(i + 1) * kk].copy_from_slice(m.block(i, 1));
            }
        }
        Ok(Self { n, k, l, uinv, upper })
    }

    pub fn dim(&self) -> usize {
        self.n * self.k
    }

    pub fn solve(&self, rhs: &[C64]) -> Vec<C64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [C64]) {
        let (n, k) = (self.n, self.k);
        let kk = k * k;
        let mut acc = vec![ZERO; k];
        for i in 1..n {
            acc.iter_mut().for_each(|v| *v = ZERO);
            block_matvec_add(&self.l[i * kk..(i + 1) * kk], &x[(i - 1) * k..i * k], &mut acc, k);
            for c in 0..k {
                x[i * k + c] -= acc[c];
            }
        }
        let mut y = vec![ZERO; k];
        for i in (0..n).rev() {
            let mut r = x[i * k..(i + 1) * k].to_vec();
            if i + 1 < n {
                acc.iter_mut().for_each(|v| *v = ZERO);
                block_matvec_add(&self.upper[i * kk..(i + 1) * kk], &x[(i + 1) * k..(i + 2) * k], &mut acc, k);
                for c in 0..k {
                    r[c] -= acc[c];
                }
            }
            y.iter_mut().for_each(|v| *v = ZERO);
            block_matvec_add(&self.uinv[i * kk..(i + 1) * kk], &r, &mut y, k);
            x[i * k..(i + 1) * k].copy_from_slice(&y);
        }
    }
}

/// Number of eigenvalues of the Hermitian block-tridiagonal `m` strictly below
/// `sigma`, by Sylvester inertia of an unpivoted LDL* factorization.
pub fn sturm_count(m: &Banded, sigma: f64) -> usize {
    assert_eq!(m.b, 1);
    let k = m.k;
    let kk = k * k;
    let mut count = 0;
    let mut prev_inv: Option<Vec<C64>> = None;
    let mut tmp = vec![ZERO; kk];
    let mut prod = vec![ZERO; kk];
    let tiny = 1e-14 * (1.0 + m.max_abs());
    for i in 0..m.n {
        let mut d = m.block(i, 0).to_vec();
        for c in 0..k {
            d[c * k + c] -= sigma;
        }
        if let Some(pinv) = &prev_inv {
            // d -= B^* D^{-1} B with B the block (i-1, i).
            let b = m.block(i - 1, 1);
            block_mul(pinv, b, &mut tmp, k);
            block_mul(&block_adjoint(b, k), &tmp, &mut prod, k);
            for (a, p) in d.iter_mut().zip(&prod) {
                *a -= p;
            }
        }
        // Inertia of the Hermitian block through its own unpivoted LDL*.
        let mut w = d.clone();
        for c in 0..k {
            let mut piv = w[c * k + c].re;
            if piv.abs() < tiny {
                piv = if piv < 0.0 { -tiny } else { tiny };
                w[c * k + c] = C64::new(piv, 0.0);
            }
            if piv < 0.0 {
                count += 1;
            }
            for r in c + 1..k {
                let f = w[r * k + c] / piv;
                for q in c + 1..k {
                    let v = w[c * k + q];
                    w[r * k + q] -= f * v;
                }
            }
        }
        let mut dreg = d;
        for c in 0..k {
            if dreg[c * k + c].norm() < tiny {
                dreg[c * k + c] += tiny;
            }
        }
        prev_inv = block_inverse(&dreg, k).or_else(|| {
            let mut shifted = dreg.clone();
            for c in 0..k {
                shifted[c * k + c] += tiny;
            }
            block_inverse(&shifted, k)
        });
    }
    count
}

/// Lagrange weights `c_k` with `sum_k c_k f(x_k) = p(0)` for the interpolating
/// polynomial `p` through the samples.
pub fn extrapolation_weights(xs: &[f64]) -> Vec<f64> {
    (0..xs.len())
        .map(|k| {
            xs.iter()
                .enumerate()
                .filter(|&(m, _)| m != k)
                .map(|(_, &xm)| xm / (xm - xs[k]))
                .product()
        })
        .collect()
}

/// Polynomial extrapolation of scalar samples to `x = 0`.
pub fn extrapolate_to_zero(xs: &[f64], fs: &[C64]) -> C64 {
    extrapolation_weights(xs).iter().zip(fs).map(|(w, f)| f * *w).sum()
}

#[derive(Clone, Copy, Debug)]
pub struct PowerResult {
    pub norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Spectral norm of an implicitly given operator by power iteration on `M^* M`.
pub fn power_norm<R: Rng>(
    dim: usize,
    apply: impl Fn(&[C64]) -> Vec<C64>,
    apply_adj: impl Fn(&[C64]) -> Vec<C64>,
    rng: &mut R,
    tol: f64,
    max_iter: usize,
) -> PowerResult {
    let mut x: Vec<C64> = (0..dim).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
    let nx = norm(&x);
    x.iter_mut().for_each(|z| *z /= nx);
    let mut est = 0.0;
    for it in 1..=max_iter {
        let y = apply(&x);
        let z = apply_adj(&y);
        let nz = norm(&z);
        if nz == 0.0 {
            return PowerResult { norm: 0.0, iterations: it, converged: true };
        }
        let next = nz.sqrt();
        x = z.into_iter().map(|v| v / nz).collect();
        if it > 1 && (next - est).abs() <= tol * next {
            return PowerResult { norm: next, iterations: it, converged: true };
        }
        est = next;
    }
    PowerResult { norm: est, iterations: max_iter, converged: false }
}

/// Eigen-decomposition of a dense Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(m: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Ordinary least-squares line `y = a + b x`, returning `(a, b, stderr_b, rms)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
    let dof = (n - 2.0).max(1.0);
    let stderr = (sse / dof / sxx).sqrt();
    (a, b, stderr, (sse / n).sqrt())
}

/// Fitted power `p` in `y ~ C x^{-p}` from a log-log regression.
pub fn decay_power(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    -linear_fit(&lx, &ly).1
}

pub fn dvector(v: &[C64]) -> DVector<C64> {
    DVector::from_column_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tridiag(n: usize, k: usize, seed: u64, hermitian: bool) -> Banded {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Banded::zeros(n, k, 1);
        for i in 0..n {
            for d in -1isize..=1 {
                let j = i as isize + d;
                if j < 0 || j as usize >= n {
                    continue;
                }
                for z in m.block_mut(i, d) {
                    *z = C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                }
            }
            let blk = m.block_mut(i, 0);
            for c in 0..k {
                blk[c * k + c] += 4.0;
            }
        }
        if hermitian {
            let adj = m.adjoint();
            m.lin_comb(C64::new(0.5, 0.0), &adj, C64::new(0.5, 0.0))
        } else {
            m
        }
    }

    #[test]
    fn block_lu_solves_against_dense() {
        let m = random_tridiag(12, 3, 1, false);
        let lu = BlockLu::new(&m).unwrap();
        let rhs: Vec<C64> = (0..36).map(|i| C64::new(i as f64, 1.0 - i as f64 * 0.3)).collect();
        let x = lu.solve(&rhs);
        let r = m.matvec(&x);
        let err: f64 = r.iter().zip(&rhs).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-11, "residual {err}");
    }

    #[test]
    fn sturm_count_matches_dense_spectrum() {
        let m = random_tridiag(10, 2, 3, true);
        let (vals, _) = hermitian_eigen(&m.to_dense());
        for sigma in [2.0, 3.5, 4.0, 4.7, 6.0] {
            let dense = vals.iter().filter(|&&v| v < sigma).count();
            assert_eq!(sturm_count(&m, sigma), dense, "sigma {sigma}");
        }
    }

    #[test]
    fn product_and_commutator_match_dense() {
        let a = random_tridiag(8, 2, 5, true);
        let b = random_tridiag(8, 2, 6, true).widen(2);
        let c = a.commutator_i(&b);
        let (da, db) = (a.to_dense(), b.to_dense());
        let dc = (&da * &db - &db * &da) * I;
        let err = (c.to_dense() - dc).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(err < 1e-13);
        assert!(c.hermiticity_defect() < 1e-13);
    }

    #[test]
    fn extrapolation_is_exact_on_polynomials() {
        let xs = [0.1, 0.05, 0.025, 0.0125];
        let fs: Vec<C64> = xs.iter().map(|&x| C64::new(2.0 + 3.0 * x - x * x + 0.5 * x * x * x, x)).collect();
        let f0 = extrapolate_to_zero(&xs, &fs);
        assert!((f0 - C64::new(2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn power_iteration_finds_spectral_norm() {
        let m = random_tridiag(15, 2, 9, false);
        let dense = m.to_dense();
        let svd = dense.clone().svd(false, false);
        let exact = svd.singular_values.max();
        let adj = m.adjoint();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let res = power_norm(30, |x| m.matvec(x), |x| adj.matvec(x), &mut rng, 1e-12, 5000);
        assert!((res.norm - exact).abs() < 1e-8 * exact, "{} vs {exact}", res.norm);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.5 - 0.25 * x).collect();
        let (a, b, se, _) = linear_fit(&xs, &ys);
        assert!((a - 1.5).abs() < 1e-12 && (b + 0.25).abs() < 1e-12 && se < 1e-12);
    }
}
