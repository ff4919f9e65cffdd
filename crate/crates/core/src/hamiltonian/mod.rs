//! Discrete operators on the axial lattice: `H0`, `H`, the defect
//! `T = HJ - JH0`, the conjugate operator `A = J A0 J^*`, commutators,
//! Mourre compressions, weighted resolvent probes and bound states.
//!
//! States on the manifold are node-major (`i * K + c`). Reference states on
//! the two ends are handled as [`WavePacket`]s; `H0` and `A0` act on each end
//! line separately and commute with the fold `x -> -x`, so `T` and `A` reduce
//! to banded matrices on the manifold lattice.

pub mod lap;
pub mod mourre;
pub mod spectral;

use serde::Serialize;

use crate::channels::WavePacket;
use crate::error::{Error, Result};
use crate::linalg::{Banded, C64, I, ONE, ZERO};
use crate::scenario::{cutoff_j, AxialGrid, Profile, Realization, Scenario};

pub use lap::{weighted_resolvent_probe, Boundary, ProbeSide, ResolventProbe, Resolvent, Weight};
pub use mourre::{mourre_compression, MourreReport};
pub use spectral::{detect_eigenvalues, eigenpairs_in, CriticalSet, Eigenpairs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Label {
    H0,
    H,
    A,
    Commutator,
    Defect,
    Weight,
}

#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    pub label: Label,
    pub grid: AxialGrid,
    pub matrix: Banded,
}

impl DiscreteOperator {
    pub fn channels(&self) -> usize {
        self.matrix.k
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        self.matrix.matvec(x)
    }

    pub fn hermiticity_defect(&self) -> f64 {
        self.matrix.hermiticity_defect()
    }

    /// `<x, M y>` with the lattice weight `dx`.
    pub fn form(&self, x: &[C64], y: &[C64]) -> C64 {
        crate::linalg::dot(x, &self.apply(y)) * self.grid.dx
    }
}

/// Divergence-form assembly: off-diagonal `-P(y_{i+1/2}) / dx^2`, diagonal
/// `(P(y_{i-1/2}) + P(y_{i+1/2})) / dx^2 + diag(tau) + V(y_i)` with
/// `P = I + A_eff`; Dirichlet closure outside the grid.
fn assemble(grid: AxialGrid, thresholds: &[f64], profile: &Profile) -> Banded {
    let (n, k) = (grid.n, thresholds.len());
    let h2 = grid.dx * grid.dx;
    let mut m = Banded::zeros(n, k, 1);
    let stiffness = |i: isize| -> Vec<C64> {
        let mut p = profile.metric(grid.mid(i));
        for c in 0..k {
            p[c * k + c] += ONE;
        }
        p
    };
    let mut left = stiffness(-1);
    for i in 0..n {
        let right = stiffness(i as isize);
        let v = profile.potential(grid.x(i));
        let d = m.block_mut(i, 0);
        for e in 0..k * k {
            d[e] = (left[e] + right[e]) / h2 + v[e];
        }
        for c in 0..k {
            d[c * k + c] += thresholds[c];
        }
        if i + 1 < n {
            for (z, p) in m.block_mut(i, 1).iter_mut().zip(&right) {
                *z = -p / h2;
            }
            let adj = crate::linalg::block_adjoint(&right, k);
            for (z, p) in m.block_mut(i + 1, -1).iter_mut().zip(&adj) {
                *z = -p / h2;
            }
        }
        left = right;
    }
    m
}

/// `H0`: second-difference Laplacian plus `tau_j` on channel `j`.
pub fn assemble_free(grid: AxialGrid, thresholds: &[f64]) -> DiscreteOperator {
    let matrix = assemble(grid, thresholds, &Profile::zero(thresholds.len()));
    DiscreteOperator { label: Label::H0, grid, matrix }
}

/// `H = -D(I + A_eff)D + diag(tau) + V_eff` on the manifold lattice.
pub fn assemble_full(scenario: &Scenario) -> Result<DiscreteOperator> {
    if let Realization::Junction(_) = scenario.realization {
        return Err(Error::Precondition("junction-core realizations are not assembled on the full-line lattice".into()));
    }
    scenario.validate()?;
    let matrix = assemble(scenario.grid, &scenario.thresholds, &scenario.profile);
    Ok(DiscreteOperator { label: Label::H, grid: scenario.grid, matrix })
}

fn diag_weights(grid: AxialGrid, k: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
    (0..grid.n).flat_map(|i| std::iter::repeat_n(f(grid.x(i)), k)).collect()
}

/// Node-major state of end `e` (0 = `L`, 1 = `R`) of a reference packet, in
/// the end's own coordinate.
pub fn end_state(phi: &WavePacket, e: usize, k: usize) -> Vec<C64> {
    let n = phi.grid.n;
    let mut out = vec![ZERO; n * k];
    for j in 0..k {
        for i in 0..n {
            out[i * k + j] = phi.at(e * k + j, i);
        }
    }
    out
}

/// Inverse of [`end_state`] for both ends.
pub fn packet_from_ends(grid: AxialGrid, thresholds: &[f64], left: &[C64], right: &[C64]) -> WavePacket {
    let k = thresholds.len();
    let mut t = thresholds.to_vec();
    t.extend_from_slice(thresholds);
    let mut p = WavePacket::zeros(grid, t);
    for i in 0..grid.n {
        for j in 0..k {
            *p.at_mut(j, i) = left[i * k + j];
            *p.at_mut(k + j, i) = right[i * k + j];
        }
    }
    p
}

/// Node reversal `i -> n - 1 - i` of a node-major state.
pub fn fold(x: &[C64], k: usize) -> Vec<C64> {
    let n = x.len() / k;
    let mut out = vec![ZERO; x.len()];
    for i in 0..n {
        out[i * k..(i + 1) * k].copy_from_slice(&x[(n - 1 - i) * k..(n - i) * k]);
    }
    out
}

/// `T = HJ - JH0`, stored as `T phi = T_L fold(phi_L) + T_R phi_R` with
/// `T_e = H D_e - D_e H0` and `D_R = diag j(y)`, `D_L = diag j(-y)`.
#[derive(Clone, Debug)]
pub struct Defect {
    pub grid: AxialGrid,
    pub channels: usize,
    pub left: Banded,
    pub right: Banded,
}

pub fn defect_operator(scenario: &Scenario) -> Result<Defect> {
    let h = assemble_full(scenario)?;
    let h0 = assemble_free(scenario.grid, &scenario.thresholds);
    Ok(defect_from(&h, &h0))
}

pub fn defect_from(h: &DiscreteOperator, h0: &DiscreteOperator) -> Defect {
    let (g, k) = (h.grid, h.channels());
    let part = |w: &[f64]| {
        let ones = vec![1.0; w.len()];
        h.matrix.diag_sandwich(&ones, w).lin_comb(ONE, &h0.matrix.diag_sandwich(w, &ones), -ONE)
    };
    let right = part(&diag_weights(g, k, cutoff_j));
    let left = part(&diag_weights(g, k, |y| cutoff_j(-y)));
    Defect { grid: g, channels: k, left, right }
}

impl Defect {
    fn check(&self, phi: &WavePacket) -> Result<()> {
        if !phi.grid.same_as(&self.grid) || phi.channels() != 2 * self.channels {
            return Err(Error::GridMismatch(format!(
                "defect acts on {} x {} reference states, got {} x {}",
                self.grid.n,
                2 * self.channels,
                phi.grid.n,
                phi.channels()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, phi: &WavePacket) -> Result<Vec<C64>> {
        self.check(phi)?;
        let k = self.channels;
        let mut out = self.right.matvec(&end_state(phi, 1, k));
        let l = self.left.matvec(&fold(&end_state(phi, 0, k), k));
        out.iter_mut().zip(&l).for_each(|(a, b)| *a += b);
        Ok(out)
    }

    /// `T^*`: manifold state to reference state.
    pub fn apply_adjoint(&self, psi: &[C64], thresholds: &[f64]) -> Result<WavePacket> {
        if psi.len() != self.grid.n * self.channels {
            return Err(Error::GridMismatch(format!("state has {} entries, lattice needs {}", psi.len(), self.grid.n * self.channels)));
        }
        let k = self.channels;
        let right = self.right.adjoint().matvec(psi);
        let left = fold(&self.left.adjoint().matvec(psi), k);
        Ok(packet_from_ends(self.grid, thresholds, &left, &right))
    }

    pub fn max_abs(&self) -> f64 {
        self.left.max_abs().max(self.right.max_abs())
    }
}

/// `A0 = (P Q + Q P) / 2` on a line with the centered momentum
/// `P = -i (u_{i+1} - u_{i-1}) / (2 dx)`; tridiagonal, identity in channels.
pub fn dilation_generator(grid: AxialGrid, k: usize) -> DiscreteOperator {
    let mut m = Banded::zeros(grid.n, k, 1);
    for i in 0..grid.n - 1 {
        let mid = 0.5 * (grid.x(i) + grid.x(i + 1));
        let up = -I * mid / (2.0 * grid.dx);
        for c in 0..k {
            m.block_mut(i, 1)[c * k + c] = up;
            m.block_mut(i + 1, -1)[c * k + c] = up.conj();
        }
    }
    DiscreteOperator { label: Label::A, grid, matrix: m }
}

/// `A = J A0 J^* = D_R A0 D_R + D_L A0 D_L` (the fold leaves `A0` invariant).
pub fn conjugate_operator(grid: AxialGrid, k: usize) -> DiscreteOperator {
    let a0 = dilation_generator(grid, k);
    let r = diag_weights(grid, k, cutoff_j);
    let l = diag_weights(grid, k, |y| cutoff_j(-y));
    let matrix = a0.matrix.diag_sandwich(&r, &r).lin_comb(ONE, &a0.matrix.diag_sandwich(&l, &l), ONE);
    DiscreteOperator { label: Label::A, grid, matrix }
}

/// `[iH, A] = i (HA - AH)`.
pub fn commutator_form(h: &DiscreteOperator, a: &DiscreteOperator) -> Result<DiscreteOperator> {
    if !h.grid.same_as(&a.grid) || h.channels() != a.channels() {
        return Err(Error::GridMismatch("commutator of operators on different lattices".into()));
    }
    Ok(DiscreteOperator { label: Label::Commutator, grid: h.grid, matrix: h.matrix.commutator_i(&a.matrix) })
}

/// Diagonal weight `<y>^{-s}` on a node-major state.
pub fn position_weight(grid: AxialGrid, k: usize, s: f64) -> Vec<f64> {
    diag_weights(grid, k, |y| (1.0 + y * y).powf(-s / 2.0))
}
