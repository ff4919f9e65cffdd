//! Weighted resolvent boundary values `W (H - lambda -+ i eps)^{-l} W` and
//! their `eps -> 0` limits.
//!
//! The default truncation is the exact transparent condition of the free
//! lattice: the outer half-lines are eliminated into a self-energy
//! `-zeta / dx^2` on the end nodes, with `zeta + 1/zeta = 2 - (z - d) dx^2`
//! (`d` the local channel offset) and `|zeta| < 1`. The finite matrix then
//! reproduces the infinite-lattice resolvent on the grid, and
//! `d/dz R = R (1 - Sigma'(z)) R` gives the second power exactly.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::DiscreteOperator;
use crate::error::{Error, Result};
use crate::linalg::{extrapolation_weights, linear_fit, power_norm, Banded, BlockLu, C64, ONE, ZERO};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ProbeSide {
    /// `H - lambda - i eps` (outgoing).
    Plus,
    /// `H - lambda + i eps` (incoming).
    Minus,
}

impl ProbeSide {
    pub fn sign(self) -> f64 {
        match self {
            ProbeSide::Plus => 1.0,
            ProbeSide::Minus => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Boundary {
    Dirichlet,
    Transparent,
    /// Quadratic complex absorbing potential `-i eta ((|y| - y_c) / w)^2` in the outer layer.
    Absorbing { strength: f64, fraction: f64 },
}

/// Root of `zeta + 1/zeta = 2c` inside the unit disc; on the circle the
/// branch is fixed by the side.
pub fn lattice_zeta(c: C64, side: ProbeSide) -> C64 {
    let r = (c * c - ONE).sqrt();
    let (a, b) = (c + r, c - r);
    let (small, large) = if a.norm() <= b.norm() { (a, b) } else { (b, a) };
    if (small.norm() - 1.0).abs() > 1e-12 {
        return small;
    }
    // Propagating: pick the branch whose imaginary part has the side's sign.
    if small.im * side.sign() >= 0.0 {
        small
    } else {
        large
    }
}

/// `(H + Sigma(z) - z)` factorized, with the adjoint factorized on demand.
pub struct Resolvent {
    pub z: C64,
    pub matrix: Banded,
    /// `d Sigma / dz` on the diagonal (zero for non-transparent boundaries).
    pub sigma_prime: Vec<C64>,
    lu: BlockLu,
    adj: OnceLock<BlockLu>,
}

impl Resolvent {
    pub fn new(h: &DiscreteOperator, z: C64, side: ProbeSide, boundary: Boundary) -> Result<Self> {
        let (g, k) = (h.grid, h.channels());
        let h2 = g.dx * g.dx;
        let mut m = h.matrix.clone();
        let dim = m.dim();
        let mut diag = vec![-z; dim];
        let mut sigma_prime = vec![ZERO; dim];
        match boundary {
            Boundary::Dirichlet => {}
            Boundary::Transparent => {
                for node in [0, g.n - 1] {
                    for c in 0..k {
                        let d = m.block(node, 0)[c * k + c] - 2.0 / h2;
                        let cc = ONE - (z - d) * (h2 / 2.0);
                        let zeta = lattice_zeta(cc, side);
                        diag[node * k + c] -= zeta / h2;
                        sigma_prime[node * k + c] = zeta * zeta / (zeta * zeta - ONE);
                    }
                }
            }
            Boundary::Absorbing { strength, fraction } => {
                let xm = g.x_max();
                let yc = xm * (1.0 - fraction);
                for i in 0..g.n {
                    let y = g.x(i).abs();
                    if y > yc {
                        let w = ((y - yc) / (xm - yc)).powi(2);
                        for c in 0..k {
                            diag[i * k + c] -= C64::new(0.0, side.sign() * strength * w);
                        }
                    }
                }
            }
        }
        m.add_diagonal(&diag);
        let lu = BlockLu::new(&m)?;
        Ok(Self { z, matrix: m, sigma_prime, lu, adj: OnceLock::new() })
    }

    pub fn solve(&self, rhs: &[C64]) -> Vec<C64> {
        self.lu.solve(rhs)
    }

    pub fn solve_adjoint(&self, rhs: &[C64]) -> Result<Vec<C64>> {
        if self.adj.get().is_none() {
            let lu = BlockLu::new(&self.matrix.adjoint())?;
            let _ = self.adj.set(lu);
        }
        Ok(self.adj.get().unwrap().solve(rhs))
    }

    /// `R^l x` for `l` in `{1, 2}`; the square is the infinite-lattice square.
    pub fn power(&self, x: &[C64], ell: usize) -> Result<Vec<C64>> {
        match ell {
            1 => Ok(self.solve(x)),
            2 => {
                let y = self.solve(x);
                let t: Vec<C64> = y.iter().zip(&self.sigma_prime).map(|(v, s)| v * (ONE - s)).collect();
                Ok(self.solve(&t))
            }
            _ => Err(Error::Invalid(format!("resolvent power {ell} not supported (1 or 2)"))),
        }
    }

    pub fn power_adjoint(&self, x: &[C64], ell: usize) -> Result<Vec<C64>> {
        match ell {
            1 => self.solve_adjoint(x),
            2 => {
                let y = self.solve_adjoint(x)?;
                let t: Vec<C64> = y.iter().zip(&self.sigma_prime).map(|(v, s)| v * (ONE - s.conj())).collect();
                self.solve_adjoint(&t)
            }
            _ => Err(Error::Invalid(format!("resolvent power {ell} not supported (1 or 2)"))),
        }
    }
}

/// Hermitian weight `<y>^{-s}` (diagonal) or `<A>^{-s}` (dense).
#[derive(Clone, Debug)]
pub enum Weight {
    Diagonal(Vec<f64>),
    Dense(DMatrix<C64>),
}

impl Weight {
    pub fn position(h: &DiscreteOperator, s: f64) -> Self {
        Weight::Diagonal(super::position_weight(h.grid, h.channels(), s))
    }

    /// `<A>^{-s} = (1 + A^2)^{-s/2}` by dense diagonalization.
    pub fn conjugate(a: &DiscreteOperator, s: f64) -> Self {
        let (vals, vecs) = crate::linalg::hermitian_eigen(&a.matrix.to_dense());
        let d = DMatrix::from_fn(vals.len(), vals.len(), |r, c| {
            if r == c {
                C64::new((1.0 + vals[r] * vals[r]).powf(-s / 2.0), 0.0)
            } else {
                ZERO
            }
        });
        Weight::Dense(&vecs * d * vecs.adjoint())
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        match self {
            Weight::Diagonal(w) => x.iter().zip(w).map(|(v, w)| v * *w).collect(),
            Weight::Dense(m) => (m * crate::linalg::dvector(x)).iter().copied().collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ResolventProbe {
    pub lambda: f64,
    pub s: f64,
    pub ell: usize,
    pub side: ProbeSide,
    pub epsilons: Vec<f64>,
    pub norms: Vec<f64>,
    /// `|| B(eps_k) - B(eps_{k+1}) ||`.
    pub differences: Vec<f64>,
    /// Successive ratios of the differences.
    pub cauchy_ratios: Vec<f64>,
    /// Norm of the polynomially extrapolated `B(0)`.
    pub limit_norm: f64,
    /// Slope of `log N` against `log eps` (negative when norms blow up).
    pub growth_slope: f64,
    pub converged: bool,
    pub divergent: bool,
}

/// Settings shared by the probes.
#[derive(Clone, Copy, Debug)]
pub struct ProbeSettings {
    pub side: ProbeSide,
    pub boundary: Boundary,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    /// Largest admissible Cauchy ratio.
    pub max_ratio: f64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self { side: ProbeSide::Plus, boundary: Boundary::Transparent, seed: 0, tol: 1e-8, max_iter: 500, max_ratio: 0.75 }
    }
}

type Op<'a> = Box<dyn Fn(&[C64]) -> Vec<C64> + Sync + 'a>;

fn combination<'a>(res: &'a [Resolvent], coeffs: Vec<f64>, w: &'a Weight, ell: usize, adjoint: bool) -> Op<'a> {
    Box::new(move |x: &[C64]| {
        let wx = w.apply(x);
        let mut acc = vec![ZERO; x.len()];
        for (r, &c) in res.iter().zip(&coeffs) {
            if c == 0.0 {
                continue;
            }
            let y = if adjoint { r.power_adjoint(&wx, ell).expect("adjoint factorization") } else { r.power(&wx, ell).expect("resolvent power") };
            acc.iter_mut().zip(&y).for_each(|(a, b)| *a += b * c);
        }
        w.apply(&acc)
    })
}

/// Probe `W (H - lambda -+ i eps)^{-l} W` along the `eps` schedule.
pub fn weighted_resolvent_probe(
    h: &DiscreteOperator,
    lambda: f64,
    s: f64,
    ell: usize,
    epsilons: &[f64],
    weight: &Weight,
    settings: ProbeSettings,
) -> Result<ResolventProbe> {
    if epsilons.len() < 5 {
        return Err(Error::Invalid("the eps schedule needs at least 5 values".into()));
    }
    if !(s > ell as f64 - 0.5) {
        return Err(Error::Precondition(format!("weight exponent s = {s} must exceed l - 1/2 = {}", ell as f64 - 0.5)));
    }
    let res: Vec<Resolvent> = epsilons
        .par_iter()
        .map(|&e| Resolvent::new(h, C64::new(lambda, settings.side.sign() * e), settings.side, settings.boundary))
        .collect::<Result<_>>()?;
    let dim = h.dim();
    let m = epsilons.len();
    let norm_of = |coeffs: Vec<f64>, idx: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed.wrapping_add(idx));
        let f = combination(&res, coeffs.clone(), weight, ell, false);
        let g = combination(&res, coeffs, weight, ell, true);
        power_norm(dim, f, g, &mut rng, settings.tol, settings.max_iter).norm
    };
    let unit = |k: usize| (0..m).map(|j| if j == k { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    let norms: Vec<f64> = (0..m).into_par_iter().map(|k| norm_of(unit(k), k as u64)).collect();
    let differences: Vec<f64> = (0..m - 1)
        .into_par_iter()
        .map(|k| {
            let mut c = vec![0.0; m];
            c[k] = 1.0;
            c[k + 1] = -1.0;
            norm_of(c, 100 + k as u64)
        })
        .collect();
    let limit_norm = norm_of(extrapolation_weights(epsilons), 1000);
    let floor = 1e-10 * norms.iter().copied().fold(0.0, f64::max);
    let cauchy_ratios: Vec<f64> =
        differences.windows(2).map(|w| if w[0] <= floor { 0.0 } else { w[1] / w[0] }).collect();
    let (_, growth_slope, _, _) =
        linear_fit(&epsilons.iter().map(|e| e.ln()).collect::<Vec<_>>(), &norms.iter().map(|n| n.ln()).collect::<Vec<_>>());
    let divergent = growth_slope < -0.25;
    let converged = !divergent && cauchy_ratios.iter().all(|&r| r <= settings.max_ratio);
    Ok(ResolventProbe {
        lambda,
        s,
        ell,
        side: settings.side,
        epsilons: epsilons.to_vec(),
        norms,
        differences,
        cauchy_ratios,
        limit_norm,
        growth_slope,
        converged,
        divergent,
    })
}

/// Dense extrapolated boundary value `B(0) = lim W R(lambda -+ i eps)^l W`.
pub fn boundary_value(
    h: &DiscreteOperator,
    lambda: f64,
    ell: usize,
    epsilons: &[f64],
    weight: &Weight,
    settings: ProbeSettings,
) -> Result<DMatrix<C64>> {
    let res: Vec<Resolvent> = epsilons
        .iter()
        .map(|&e| Resolvent::new(h, C64::new(lambda, settings.side.sign() * e), settings.side, settings.boundary))
        .collect::<Result<_>>()?;
    let op = combination(&res, extrapolation_weights(epsilons), weight, ell, false);
    let dim = h.dim();
    let cols: Vec<Vec<C64>> = (0..dim)
        .into_par_iter()
        .map(|j| {
            let mut e = vec![ZERO; dim];
            e[j] = ONE;
            op(&e)
        })
        .collect();
    Ok(DMatrix::from_fn(dim, dim, |r, c| cols[c][r]))
}

/// Spectral norm of a dense matrix.
pub fn dense_norm(m: &DMatrix<C64>) -> f64 {
    m.clone().singular_values().iter().copied().fold(0.0, f64::max)
}

/// Hoelder exponent of a sampled operator-valued map on a uniform grid: slope
/// of `log max ||B(l + h) - B(l)||` against `log h` over `h = d, 2d, 4d, ...`.
pub fn holder_exponent(lambdas: &[f64], values: &[DMatrix<C64>]) -> f64 {
    let d = lambdas[1] - lambdas[0];
    let mut hs = Vec::new();
    let mut ds = Vec::new();
    let mut step = 1;
    while step < lambdas.len() {
        let worst = (0..lambdas.len() - step).map(|i| dense_norm(&(&values[i + step] - &values[i]))).fold(0.0, f64::max);
        hs.push((step as f64 * d).ln());
        ds.push(worst.max(f64::MIN_POSITIVE).ln());
        step *= 2;
    }
    linear_fit(&hs, &ds).1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{assemble_free, assemble_full, conjugate_operator};
    use crate::scenario::{AxialGrid, Part, Profile, Scenario, Shape, Term};

    fn schedule() -> Vec<f64> {
        (0..6).map(|k| 0.2 * 0.5f64.powi(k)).collect()
    }

    #[test]
    fn transparent_boundary_reproduces_lattice_green_function() {
        let g = AxialGrid::spanning(5.0, 50).unwrap();
        let h0 = assemble_free(g, &[0.0]);
        let z = C64::new(0.7, 0.0);
        let r = Resolvent::new(&h0, z, ProbeSide::Plus, Boundary::Transparent).unwrap();
        let mut e = vec![ZERO; g.n];
        e[10] = ONE;
        let col = r.solve(&e);
        let h2 = g.dx * g.dx;
        let zeta = lattice_zeta(ONE - z * (h2 / 2.0), ProbeSide::Plus);
        // Infinite-lattice Green function: zeta^{|i-j|} / ((1/zeta - zeta) / dx^2).
        for (i, v) in col.iter().enumerate() {
            let want = zeta.powi((i as i32 - 10).abs()) * h2 / (ONE / zeta - zeta);
            assert!((v - want).norm() < 1e-12, "{i}");
        }
        assert!(zeta.im > 0.0);
    }

    #[test]
    fn second_power_matches_energy_derivative() {
        let g = AxialGrid::spanning(5.0, 50).unwrap();
        let h0 = assemble_free(g, &[0.0]);
        let e: Vec<C64> = (0..g.n).map(|i| C64::new((-(g.x(i) - 1.0).powi(2)).exp(), 0.0)).collect();
        let z = C64::new(0.9, 0.0);
        let h = 1e-5;
        let r = Resolvent::new(&h0, z, ProbeSide::Plus, Boundary::Transparent).unwrap();
        let rp = Resolvent::new(&h0, z + h, ProbeSide::Plus, Boundary::Transparent).unwrap();
        let rm = Resolvent::new(&h0, z - h, ProbeSide::Plus, Boundary::Transparent).unwrap();
        let sq = r.power(&e, 2).unwrap();
        let fd: Vec<C64> = rp.solve(&e).iter().zip(rm.solve(&e)).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let err = sq.iter().zip(&fd).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-5 * crate::linalg::max_abs(&sq), "{err}");
    }

    #[test]
    fn free_probe_converges_to_continuum_kernel() {
        let g = AxialGrid::spanning(15.0, 600).unwrap();
        let h0 = assemble_free(g, &[0.0]);
        let lambda: f64 = 0.6;
        let w = Weight::position(&h0, 1.0);
        let p = weighted_resolvent_probe(&h0, lambda, 1.0, 1, &schedule(), &w, ProbeSettings::default()).unwrap();
        assert!(p.converged && !p.divergent, "{:?}", p.cauchy_ratios);
        assert!(p.cauchy_ratios.iter().all(|&r| r <= 0.75));
        let k = lambda.sqrt();
        let wt: Vec<f64> = g.xs().iter().map(|x| (1.0 + x * x).powf(-0.5)).collect();
        let kernel = DMatrix::from_fn(g.n, g.n, |i, j| {
            C64::new(0.0, 1.0 / (2.0 * k)) * C64::from_polar(1.0, k * (g.x(i) - g.x(j)).abs()) * g.dx * wt[i] * wt[j]
        });
        let oracle = dense_norm(&kernel);
        assert!((p.limit_norm - oracle).abs() <= 1e-2 * oracle, "{} vs {oracle}", p.limit_norm);
    }

    #[test]
    fn probe_diverges_at_threshold() {
        let g = AxialGrid::spanning(15.0, 300).unwrap();
        let h0 = assemble_free(g, &[0.0, 1.0]);
        let w = Weight::position(&h0, 1.0);
        let eps: Vec<f64> = (0..6).map(|k| 0.05 * 0.5f64.powi(k)).collect();
        let p = weighted_resolvent_probe(&h0, 1.0, 1.0, 1, &eps, &w, ProbeSettings::default()).unwrap();
        assert!(p.divergent && !p.converged, "{}", p.growth_slope);
    }

    #[test]
    fn second_order_boundary_value_is_derivative_of_first() {
        let g = AxialGrid::spanning(8.0, 160).unwrap();
        let h0 = assemble_free(g, &[0.0]);
        let w = Weight::position(&h0, 1.6);
        let eps = schedule();
        let lambda = 0.8;
        let dl = 1e-3;
        let b2 = boundary_value(&h0, lambda, 2, &eps, &w, ProbeSettings::default()).unwrap();
        let bp = boundary_value(&h0, lambda + dl, 1, &eps, &w, ProbeSettings::default()).unwrap();
        let bm = boundary_value(&h0, lambda - dl, 1, &eps, &w, ProbeSettings::default()).unwrap();
        let fd = (bp - bm) / C64::new(2.0 * dl, 0.0);
        let rel = dense_norm(&(&b2 - &fd)) / dense_norm(&b2);
        assert!(rel <= 1e-2, "{rel}");
    }

    #[test]
    fn conjugate_weight_probe_converges_for_barrier() {
        let p = Profile::zero(1).with_term(Part::ShortRange, Term::potential(0, 0, 1.0, Shape::Barrier { center: 0.0, width: 1.0 }));
        let s = Scenario::free(vec![0.0], AxialGrid::spanning(10.0, 200).unwrap()).with_profile(p, f64::INFINITY, 6.0);
        let h = assemble_full(&s).unwrap();
        let a = conjugate_operator(s.grid, 1);
        let w = Weight::conjugate(&a, 1.0);
        let probe = weighted_resolvent_probe(&h, 1.5, 1.0, 1, &schedule(), &w, ProbeSettings::default()).unwrap();
        assert!(probe.converged, "{:?}", probe.cauchy_ratios);
    }

    #[test]
    fn holder_exponent_of_smooth_map() {
        let g = AxialGrid::spanning(6.0, 80).unwrap();
        let h0 = assemble_free(g, &[0.0]);
        let w = Weight::position(&h0, 1.0);
        let lambdas: Vec<f64> = (0..16).map(|i| 0.5 + 0.02 * i as f64).collect();
        let vals: Vec<DMatrix<C64>> = lambdas
            .iter()
            .map(|&l| boundary_value(&h0, l, 1, &schedule(), &w, ProbeSettings::default()).unwrap())
            .collect();
        assert!(holder_exponent(&lambdas, &vals) >= 0.5);
    }
}
