//! Eigenpairs of block-tridiagonal Hermitian matrices inside an interval
//! (Sturm bisection plus inverse iteration) and bound-state detection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::DiscreteOperator;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, sturm_count, Banded, BlockLu, C64};

/// Orthonormal eigenvectors (unit Euclidean norm) with their eigenvalues, ascending.
#[derive(Clone, Debug)]
pub struct Eigenpairs {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<C64>>,
    pub max_residual: f64,
}

fn bisect(m: &Banded, index: usize, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(m, mid) > index {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn orthonormalize(vs: &mut [Vec<C64>]) {
    for i in 0..vs.len() {
        for _ in 0..2 {
            for j in 0..i {
                let (head, tail) = vs.split_at_mut(i);
                let p = dot(&head[j], &tail[0]);
                tail[0].iter_mut().zip(&head[j]).for_each(|(x, y)| *x -= p * y);
            }
        }
        let nv = norm(&vs[i]);
        vs[i].iter_mut().for_each(|x| *x /= nv);
    }
}

/// All eigenpairs of the Hermitian block-tridiagonal `m` in `(lo, hi)`.
/// Clusters closer than the bisection resolution are resolved by subspace
/// inverse iteration and orthonormalized together.
pub fn eigenpairs_in(m: &Banded, lo: f64, hi: f64, seed: u64) -> Result<Eigenpairs> {
    let first = sturm_count(m, lo);
    let last = sturm_count(m, hi);
    let scale = m.max_abs().max(1.0);
    let values: Vec<f64> = (first..last).into_par_iter().map(|idx| bisect(m, idx, lo, hi)).collect();
    let tol_cluster = 1e-9 * scale;
    let mut clusters: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        if i == values.len() || values[i] - values[i - 1] > tol_cluster {
            clusters.push((start, i));
            start = i;
        }
    }
    let dim = m.dim();
    let blocks: Vec<Result<Vec<Vec<C64>>>> = clusters
        .par_iter()
        .enumerate()
        .map(|(ci, &(a, b))| {
            let centre = values[a..b].iter().sum::<f64>() / (b - a) as f64;
            let shift = centre + 1e-10 * scale;
            let mut shifted = m.clone();
            let diag: Vec<C64> = vec![C64::new(-shift, 0.0); dim];
            shifted.add_diagonal(&diag);
            let lu = BlockLu::new(&shifted)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (ci as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let mut vs: Vec<Vec<C64>> = (a..b)
                .map(|_| (0..dim).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect())
                .collect();
            orthonormalize(&mut vs);
            for _ in 0..4 {
                for v in vs.iter_mut() {
                    lu.solve_in_place(v);
                }
                orthonormalize(&mut vs);
            }
            Ok(vs)
        })
        .collect();
    let mut vectors = Vec::with_capacity(values.len());
    for b in blocks {
        vectors.extend(b?);
    }
    let mut max_residual: f64 = 0.0;
    for (v, &lam) in vectors.iter().zip(&values) {
        let hv = m.matvec(v);
        let r: Vec<C64> = hv.iter().zip(v).map(|(a, b)| a - b * lam).collect();
        max_residual = max_residual.max(norm(&r));
    }
    if max_residual > 1e-7 * scale {
        return Err(Error::EigenNonConvergence { max_residual });
    }
    Ok(Eigenpairs { values, vectors, max_residual })
}

#[derive(Clone, Debug, Serialize)]
pub struct DetectedEigenvalue {
    pub value: f64,
    pub multiplicity: usize,
    /// Largest eigenvector mass fraction in the outer layer over the cluster.
    pub layer_mass: f64,
}

/// Thresholds and localized discrete eigenvalues: the critical set `kappa(H)`.
#[derive(Clone, Debug, Serialize)]
pub struct CriticalSet {
    pub thresholds: Vec<f64>,
    pub eigenvalues: Vec<DetectedEigenvalue>,
}

impl CriticalSet {
    /// Every critical value, ascending.
    pub fn union(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.thresholds.iter().copied().chain(self.eigenvalues.iter().map(|e| e.value)).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

/// Eigenvalues of the truncated `h` in `(lo, hi)` whose eigenvectors keep at
/// most `max_layer_mass` of their mass in the outer `layer` fraction of the
/// axial extent, grouped by multiplicity.
pub fn detect_eigenvalues(
    h: &DiscreteOperator,
    lo: f64,
    hi: f64,
    thresholds: &[f64],
    layer: f64,
    max_layer_mass: f64,
    window: f64,
) -> Result<CriticalSet> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Invalid(format!("eigenvalue search needs a bounded interval, got ({lo}, {hi})")));
    }
    let pairs = eigenpairs_in(&h.matrix, lo, hi, 0)?;
    let (g, k) = (h.grid, h.channels());
    let inner = g.x_max() * (1.0 - layer);
    let mut found: Vec<DetectedEigenvalue> = Vec::new();
    let tol = 1e-8 * h.matrix.max_abs().max(1.0);
    for (v, &lam) in pairs.vectors.iter().zip(&pairs.values) {
        let outer: f64 = (0..g.n).filter(|&i| g.x(i).abs() > inner).map(|i| norm(&v[i * k..(i + 1) * k]).powi(2)).sum();
        if outer > max_layer_mass {
            continue;
        }
        if crate::channels::threshold_proximity(thresholds, lam, window).is_some() {
            continue;
        }
        match found.last_mut() {
            Some(last) if (lam - last.value).abs() <= tol => {
                last.multiplicity += 1;
                last.layer_mass = last.layer_mass.max(outer);
            }
            _ => found.push(DetectedEigenvalue { value: lam, multiplicity: 1, layer_mass: outer }),
        }
    }
    Ok(CriticalSet { thresholds: thresholds.to_vec(), eigenvalues: found })
}
