//! Mourre compressions `E [iH, A] E` on spectral windows.
//!
//! Eigenvectors of the truncated operator satisfy the virial identity
//! against any commutator formed inside the same box, so the commutator is
//! formed on a grid extended by a halo of two nodes on each side (the
//! commutator stencil width) and the box eigenvectors are zero-padded into it.

use serde::Serialize;

use super::spectral::eigenpairs_in;
use super::{assemble_free, assemble_full, commutator_form, conjugate_operator, dilation_generator};
use crate::error::{Error, Result};
use crate::linalg::{dot, hermitian_eigen, Banded, C64, ZERO};
use crate::scenario::{AxialGrid, Scenario};

/// Nodes added on each side for the commutator.
pub const HALO: usize = 2;

#[derive(Clone, Debug, Serialize)]
pub struct MourreReport {
    pub lambda: f64,
    pub delta: f64,
    /// `dim ran E`.
    pub dimension: usize,
    /// Eigenvalues of the compressed commutator, ascending.
    pub eigenvalues: Vec<f64>,
    /// `tau_max(lambda + delta)`, the largest threshold below the window top.
    pub tau_max: f64,
    /// `2 (lambda - delta - tau_max) - tolerance`.
    pub a: f64,
    pub below_a: usize,
    pub rank_budget: usize,
    pub verified: bool,
}

/// Compress `[i h, a]` (both on the extended lattice) onto the spectral
/// window `(lambda - delta, lambda + delta)` of `h` restricted to the block
/// rows `start..start + len`.
#[allow(clippy::too_many_arguments)]
pub fn mourre_compression(
    h_ext: &Banded,
    a_ext: &Banded,
    start: usize,
    len: usize,
    lambda: f64,
    delta: f64,
    thresholds: &[f64],
    tolerance: f64,
) -> Result<MourreReport> {
    let dist = thresholds.iter().map(|t| (lambda - t).abs()).fold(f64::INFINITY, f64::min);
    if !(delta > 0.0 && delta < dist) {
        return Err(Error::Precondition(format!("Mourre window half-width {delta} must lie in (0, {dist}) (distance to thresholds)")));
    }
    let k = h_ext.k;
    let boxed = h_ext.sub(start, len);
    let pairs = eigenpairs_in(&boxed, lambda - delta, lambda + delta, 17)?;
    let tau_max = thresholds.iter().copied().filter(|&t| t < lambda + delta).fold(f64::NEG_INFINITY, f64::max);
    let a = 2.0 * (lambda - delta - tau_max) - tolerance;
    let dim = pairs.vectors.len();
    let rank_budget = dim / 4;
    if dim == 0 {
        return Ok(MourreReport {
            lambda,
            delta,
            dimension: 0,
            eigenvalues: Vec::new(),
            tau_max,
            a,
            below_a: 0,
            rank_budget,
            verified: true,
        });
    }
    let c = h_ext.commutator_i(a_ext);
    let padded: Vec<Vec<C64>> = pairs
        .vectors
        .iter()
        .map(|v| {
            let mut p = vec![ZERO; h_ext.dim()];
            p[start * k..(start + len) * k].copy_from_slice(v);
            p
        })
        .collect();
    let images: Vec<Vec<C64>> = padded.iter().map(|p| c.matvec(p)).collect();
    let m = nalgebra::DMatrix::from_fn(dim, dim, |r, q| dot(&padded[r], &images[q]));
    let herm = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    let (eigenvalues, _) = hermitian_eigen(&herm);
    let below_a = eigenvalues.iter().filter(|&&e| e < a).count();
    Ok(MourreReport {
        lambda,
        delta,
        dimension: dim,
        eigenvalues,
        tau_max,
        a,
        below_a,
        rank_budget,
        verified: below_a <= rank_budget,
    })
}

fn extended(grid: AxialGrid) -> AxialGrid {
    AxialGrid { n: grid.n + 2 * HALO, dx: grid.dx }
}

/// Free pair `(H0, A0)` on one reference line.
pub fn mourre_free(grid: AxialGrid, thresholds: &[f64], lambda: f64, delta: f64, tolerance: f64) -> Result<MourreReport> {
    let g = extended(grid);
    let h = assemble_free(g, thresholds);
    let a = dilation_generator(g, thresholds.len());
    mourre_compression(&h.matrix, &a.matrix, HALO, grid.n, lambda, delta, thresholds, tolerance)
}

/// `(H, A = J A0 J^*)` of a scenario.
pub fn mourre_scenario(scenario: &Scenario, lambda: f64, delta: f64, tolerance: f64) -> Result<MourreReport> {
    scenario.check_energy(lambda)?;
    let g = extended(scenario.grid);
    let s = scenario.clone().with_grid(g);
    let h = assemble_full(&s)?;
    let a = conjugate_operator(g, scenario.channels());
    mourre_compression(&h.matrix, &a.matrix, HALO, scenario.grid.n, lambda, delta, &scenario.thresholds, tolerance)
}

/// `|<u, [iH, A] u>|` for unit eigenvectors of `H` in `(lo, hi)`, together with
/// a bound on `||[iH, A]||`.
pub fn virial_defects(scenario: &Scenario, lo: f64, hi: f64) -> Result<(Vec<f64>, f64)> {
    let g = extended(scenario.grid);
    let s = scenario.clone().with_grid(g);
    let h = assemble_full(&s)?;
    let a = conjugate_operator(g, scenario.channels());
    let c = commutator_form(&h, &a)?;
    let k = scenario.channels();
    let pairs = eigenpairs_in(&h.matrix.sub(HALO, scenario.grid.n), lo, hi, 3)?;
    let defects = pairs
        .vectors
        .iter()
        .map(|v| {
            let mut p = vec![ZERO; h.dim()];
            p[HALO * k..(HALO + scenario.grid.n) * k].copy_from_slice(v);
            dot(&p, &c.apply(&p)).norm()
        })
        .collect();
    // Row-sum bound on the operator norm.
    let m = &c.matrix;
    let mut bound: f64 = 0.0;
    for r in 0..m.dim() {
        let lo_c = r.saturating_sub((m.b + 1) * k);
        let hi_c = (r + (m.b + 1) * k).min(m.dim());
        bound = bound.max((lo_c..hi_c).map(|q| m.get(r, q).norm()).sum());
    }
    Ok((defects, bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Part, Profile, Shape, Term};

    #[test]
    fn free_single_channel_bound() {
        let g = AxialGrid::spanning(20.0, 400).unwrap();
        let (lambda, delta) = (0.5, 0.1);
        let r = mourre_free(g, &[0.0, 1.0], lambda, delta, 0.0).unwrap();
        assert!(r.dimension > 0);
        assert!(r.eigenvalues[0] >= 2.0 * (lambda - delta) - 1e-6, "{:?}", &r.eigenvalues[..3]);
        assert_eq!(r.below_a, 0);
    }

    #[test]
    fn free_bound_above_second_threshold() {
        let g = AxialGrid::spanning(20.0, 400).unwrap();
        let (lambda, delta) = (1.5, 0.1);
        let r = mourre_free(g, &[0.0, 1.0], lambda, delta, 0.0).unwrap();
        assert!(r.tau_max == 1.0);
        assert!(r.eigenvalues[0] >= 2.0 * (lambda - delta - 1.0) - 1e-6);
    }

    #[test]
    fn window_must_avoid_thresholds() {
        let g = AxialGrid::spanning(10.0, 100).unwrap();
        assert!(matches!(mourre_free(g, &[0.0, 1.0], 0.95, 0.1, 0.0), Err(Error::Precondition(_))));
    }

    fn barrier(grid: AxialGrid) -> Scenario {
        let p = Profile::zero(1).with_term(Part::ShortRange, Term::potential(0, 0, 1.0, Shape::Barrier { center: 0.0, width: 1.0 }));
        Scenario::free(vec![0.0], grid).with_profile(p, f64::INFINITY, 6.0)
    }

    #[test]
    fn perturbed_count_within_budget_and_stable() {
        let g = AxialGrid::spanning(100.0, 2000).unwrap();
        let a = mourre_scenario(&barrier(g), 2.0, 0.4, 1e-6).unwrap();
        let b = mourre_scenario(&barrier(g.refined(2)), 2.0, 0.4, 1e-6).unwrap();
        assert!(a.dimension >= 12, "{}", a.dimension);
        assert!(a.verified && b.verified, "{} / {}, {} / {}", a.below_a, a.rank_budget, b.below_a, b.rank_budget);
        assert_eq!(a.below_a, b.below_a);
    }

    #[test]
    fn virial_identity_on_bound_states() {
        let p = Profile::zero(1).with_term(Part::ShortRange, Term::potential(0, 0, -2.0, Shape::GaussianWell { center: 0.0, width: 1.0 }));
        let s = Scenario::free(vec![0.0], AxialGrid::spanning(15.0, 600).unwrap()).with_profile(p, f64::INFINITY, 8.0);
        let (defects, bound) = virial_defects(&s, -3.0, -0.05).unwrap();
        assert!(!defects.is_empty());
        for d in defects {
            assert!(d <= 1e-6 * bound, "{d} vs {bound}");
        }
    }
}
