//! Stationary representation of the S-matrix on the lattice:
//! `S = -2 pi i [<J w_out, T w_in> - <T w_out, R(lambda + i0) T w_in>]`
//! with flux-normalized lattice plane waves `(2 pi v)^{-1/2} e^{+-i k x}` on each
//! end, `v = 2 sin(k dx) / dx`. The boundary value is extrapolated along a
//! schedule of `epsilon`, then Richardson-extrapolated in `dx`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::{Provenance, SMatrix};
use crate::error::{Error, Result};
use crate::hamiltonian::lap::{Boundary, ProbeSide, Resolvent};
use crate::hamiltonian::{assemble_free, assemble_full, defect_from, fold, Defect};
use crate::linalg::{extrapolate_to_zero, C64, I, ZERO};
use crate::scenario::{cutoff_j, AxialGrid, Scenario};

#[derive(Clone, Debug, Serialize)]
pub struct StationarySettings {
    /// Decreasing `epsilon` schedule (at least five values).
    pub epsilons: Vec<f64>,
    /// Number of grids `dx, dx/2, ...` in the Richardson table (1 disables it).
    pub levels: usize,
    /// Weight exponent `s` of the sandwich `<y>^{-s} R <y>^{-s}`.
    pub s: f64,
}

impl Default for StationarySettings {
    fn default() -> Self {
        Self { epsilons: (0..5).map(|k| 0.02 * 0.5f64.powi(k)).collect(), levels: 2, s: 1.0 }
    }
}

/// Lattice momentum and group velocity of channel energy `e = lambda - tau`.
pub fn lattice_wave(e: f64, dx: f64) -> Result<(f64, f64)> {
    let c = 1.0 - e * dx * dx / 2.0;
    if !(c > -1.0 && c < 1.0) {
        return Err(Error::Precondition(format!("channel energy {e} lies outside the lattice band for dx = {dx}")));
    }
    let k = c.acos() / dx;
    Ok((k, 2.0 * (k * dx).sin() / dx))
}

/// Node-major plane wave `e^{i dir k x}` in channel `c` in end coordinates.
fn plane(grid: AxialGrid, k: usize, c: usize, mom: f64, dir: f64) -> Vec<C64> {
    let mut v = vec![ZERO; grid.n * k];
    for i in 0..grid.n {
        v[i * k + c] = C64::from_polar(1.0, dir * mom * grid.x(i));
    }
    v
}

struct Lattice {
    grid: AxialGrid,
    k: usize,
    defect: Defect,
    resolvents: Vec<Resolvent>,
}

impl Lattice {
    /// `T` and `J` applied to a single-end state.
    fn t(&self, end: usize, w: &[C64]) -> Vec<C64> {
        if end == 1 { self.defect.right.matvec(w) } else { self.defect.left.matvec(&fold(w, self.k)) }
    }

    fn j(&self, end: usize, w: &[C64]) -> Vec<C64> {
        let k = self.k;
        let v = if end == 1 { w.to_vec() } else { fold(w, k) };
        let sign = if end == 1 { 1.0 } else { -1.0 };
        v.iter().enumerate().map(|(idx, z)| z * cutoff_j(sign * self.grid.x(idx / k))).collect()
    }
}

fn single_grid(scenario: &Scenario, lambda: f64, open: &[usize], settings: &StationarySettings) -> Result<DMatrix<C64>> {
    let g = scenario.grid;
    let k = scenario.channels();
    let h = assemble_full(scenario)?;
    let h0 = assemble_free(g, &scenario.thresholds);
    let defect = defect_from(&h, &h0);
    let resolvents = settings
        .epsilons
        .par_iter()
        .map(|&e| Resolvent::new(&h, C64::new(lambda, e), ProbeSide::Plus, Boundary::Transparent))
        .collect::<Result<Vec<_>>>()?;
    let lat = Lattice { grid: g, k, defect, resolvents };
    let m = open.len();
    let weight: Vec<f64> = (0..g.n * k).map(|idx| (1.0 + g.x(idx / k).powi(2)).powf(settings.s / 2.0)).collect();
    // Incoming: index q < m from the right end, q >= m from the left; all `e^{-ikx}`.
    // Outgoing: index p < m exits at the left end, p >= m at the right; all `e^{+ikx}`.
    let mut waves = Vec::with_capacity(m);
    for &c in open {
        waves.push(lattice_wave(lambda - scenario.thresholds[c], g.dx)?);
    }
    let wave = |idx: usize, dir: f64| -> (usize, Vec<C64>, f64) {
        let (c, block) = (idx % m, idx / m);
        let end = if dir < 0.0 { 1 - block } else { block };
        let (mom, v) = waves[c];
        (end, plane(g, k, open[c], mom, dir), (2.0 * PI * v).powf(-0.5))
    };
    let dx = C64::new(g.dx, 0.0);
    let ins: Vec<(Vec<C64>, f64)> = (0..2 * m)
        .map(|q| {
            let (end, w, nrm) = wave(q, -1.0);
            let a: Vec<C64> = lat.t(end, &w).iter().zip(&weight).map(|(z, s)| z * s).collect();
            (a, nrm)
        })
        .collect();
    let outs: Vec<(Vec<C64>, Vec<C64>, f64)> = (0..2 * m)
        .map(|p| {
            let (end, w, nrm) = wave(p, 1.0);
            let b: Vec<C64> = lat.t(end, &w).iter().zip(&weight).map(|(z, s)| z * s).collect();
            let jw: Vec<C64> = lat.j(end, &w).iter().zip(&weight).map(|(z, s)| z / s).collect();
            (b, jw, nrm)
        })
        .collect();
    let columns: Vec<Vec<C64>> = (0..2 * m)
        .into_par_iter()
        .map(|q| {
            let (a, nq) = &ins[q];
            // Sandwiched resolvent images along the epsilon schedule.
            let images: Vec<Vec<C64>> = lat
                .resolvents
                .iter()
                .map(|r| {
                    let x: Vec<C64> = a.iter().zip(&weight).map(|(z, s)| z / s).collect();
                    r.solve(&x).iter().zip(&weight).map(|(z, s)| z / s).collect()
                })
                .collect();
            (0..2 * m)
                .map(|p| {
                    let (b, jw, np) = &outs[p];
                    let first: C64 = jw.iter().zip(a).map(|(x, y)| x.conj() * y).sum::<C64>() * dx;
                    let second: Vec<C64> =
                        images.iter().map(|img| b.iter().zip(img).map(|(x, y)| x.conj() * y).sum::<C64>() * dx).collect();
                    let limit = extrapolate_to_zero(&settings.epsilons, &second);
                    -2.0 * PI * I * (first - limit) * (nq * np)
                })
                .collect()
        })
        .collect();
    Ok(DMatrix::from_fn(2 * m, 2 * m, |p, q| columns[q][p]))
}

/// `S(lambda)` from the stationary formula.
pub fn smatrix_stationary(scenario: &Scenario, lambda: f64, settings: &StationarySettings) -> Result<SMatrix> {
    scenario.check_energy(lambda)?;
    if settings.epsilons.len() < 5 {
        return Err(Error::Invalid(format!("epsilon schedule needs at least 5 values, got {}", settings.epsilons.len())));
    }
    let open: Vec<usize> = (0..scenario.channels()).filter(|&c| scenario.thresholds[c] < lambda).collect();
    let mut table: Vec<DMatrix<C64>> = Vec::new();
    for level in 0..settings.levels.max(1) {
        let s = scenario.clone().with_grid(scenario.grid.refined(1 << level));
        table.push(single_grid(&s, lambda, &open, settings)?);
    }
    // Richardson in dx^2, dx^4, ...
    for order in 1..table.len() {
        let f = 4f64.powi(order as i32);
        for i in (order..table.len()).rev() {
            table[i] = (&table[i] * C64::new(f, 0.0) - &table[i - 1]) / C64::new(f - 1.0, 0.0);
        }
    }
    let data = table.pop().unwrap();
    let momenta = open.iter().map(|&c| (lambda - scenario.thresholds[c]).sqrt()).collect();
    Ok(SMatrix::new(lambda, open, momenta, data, Provenance::Stationary, 1.0))
}
