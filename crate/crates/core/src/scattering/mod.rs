//! On-shell scattering matrix by two independent routes (coupled-channel
//! matching and the stationary formula), unitarity, and energy grids with
//! derivatives.
//!
//! Ordering: indices run over direction blocks, then open channels. Column
//! block 0 is incidence from the right end, block 1 from the left end; row
//! block 0 exits at the left end, block 1 at the right end. With this ordering
//! the free S-matrix is the identity.

pub mod ode;
pub mod stationary;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::lap::dense_norm;
use crate::linalg::{hermitian_eigen, C64};
use crate::scenario::Scenario;

pub use ode::{smatrix_ode, solve_coupled_channel, CoupledSolution};
pub use stationary::{smatrix_stationary, StationarySettings};

/// Condition number above which a matching solve is flagged.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Ode,
    Stationary,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Ode => "ode",
            Provenance::Stationary => "stationary",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SMatrix {
    pub lambda: f64,
    /// Open channels (scenario indices) and their momenta.
    pub open: Vec<usize>,
    pub momenta: Vec<f64>,
    pub data: DMatrix<C64>,
    pub provenance: Provenance,
    pub condition: f64,
    /// Matching was ill-conditioned.
    pub flagged: bool,
    pub unitarity_defect: f64,
}

/// End label of a row or column index: 0 = `L`, 1 = `R`.
pub fn row_end(block: usize) -> usize {
    block
}

pub fn col_end(block: usize) -> usize {
    1 - block
}

impl SMatrix {
    pub fn new(lambda: f64, open: Vec<usize>, momenta: Vec<f64>, data: DMatrix<C64>, provenance: Provenance, condition: f64) -> Self {
        let unitarity_defect = unitarity_defect(&data);
        Self { lambda, open, momenta, data, provenance, condition, flagged: condition > CONDITION_LIMIT, unitarity_defect }
    }

    pub fn open_count(&self) -> usize {
        self.open.len()
    }

    /// Entry from incident `(end, channel)` to outgoing `(end, channel)`.
    pub fn entry(&self, out_end: usize, out_channel: usize, in_end: usize, in_channel: usize) -> Option<C64> {
        let m = self.open.len();
        let p = self.open.iter().position(|&c| c == out_channel)?;
        let q = self.open.iter().position(|&c| c == in_channel)?;
        Some(self.data[(out_end * m + p, (1 - in_end) * m + q)])
    }

    /// Flux carried out of each column: `sum_p |S_pq|^2`.
    pub fn column_flux(&self) -> Vec<f64> {
        (0..self.data.ncols()).map(|q| self.data.column(q).iter().map(|z| z.norm_sqr()).sum()).collect()
    }

    pub fn rows(&self) -> Vec<SmatrixRow> {
        let m = self.open.len();
        let end = |e: usize| if e == 0 { "L" } else { "R" };
        let mut out = Vec::with_capacity(4 * m * m);
        for p in 0..2 * m {
            for q in 0..2 * m {
                let z = self.data[(p, q)];
                out.push(SmatrixRow {
                    lambda: self.lambda,
                    row_end: end(row_end(p / m)),
                    row_channel: self.open[p % m],
                    col_end: end(col_end(q / m)),
                    col_channel: self.open[q % m],
                    re: z.re,
                    im: z.im,
                    unitarity_defect: self.unitarity_defect,
                    provenance: self.provenance.as_str(),
                });
            }
        }
        out
    }
}

/// One CSV record of an S-matrix export.
#[derive(Clone, Debug, Serialize)]
pub struct SmatrixRow {
    pub lambda: f64,
    pub row_end: &'static str,
    pub row_channel: usize,
    pub col_end: &'static str,
    pub col_channel: usize,
    pub re: f64,
    pub im: f64,
    pub unitarity_defect: f64,
    pub provenance: &'static str,
}

/// `|| S^* S - I ||` in the spectral norm.
pub fn unitarity_defect(s: &DMatrix<C64>) -> f64 {
    let n = s.ncols();
    if n == 0 {
        return 0.0;
    }
    let d = s.adjoint() * s - DMatrix::<C64>::identity(n, n);
    let (ev, _) = hermitian_eigen(&((&d + d.adjoint()) * C64::new(0.5, 0.0)));
    ev.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

#[derive(Clone, Debug)]
pub enum Method {
    Ode,
    Stationary(StationarySettings),
}

pub fn smatrix(scenario: &Scenario, lambda: f64, method: &Method) -> Result<SMatrix> {
    match method {
        Method::Ode => smatrix_ode(scenario, lambda),
        Method::Stationary(s) => smatrix_stationary(scenario, lambda, s),
    }
}

#[derive(Clone, Debug)]
pub struct SmatrixGrid {
    pub samples: Vec<SMatrix>,
    /// Derivative order and centered differences at interior samples.
    pub order: usize,
    pub derivatives: Vec<(f64, DMatrix<C64>)>,
    /// Two-scale Hoelder exponent of the highest derivative.
    pub holder: Option<f64>,
}

/// S-matrices on a uniform energy grid inside one threshold band, with
/// centered finite-difference derivatives of order `order` (0, 1 or 2).
pub fn smatrix_grid(scenario: &Scenario, lambdas: &[f64], order: usize, method: &Method) -> Result<SmatrixGrid> {
    if lambdas.is_empty() {
        return Err(Error::Invalid("empty energy grid".into()));
    }
    let (lo, hi) = lambdas.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &l| (a.min(l), b.max(l)));
    if let Some(&t) = scenario.distinct_thresholds().iter().find(|&&t| t > lo && t < hi) {
        return Err(Error::StraddlesThreshold { threshold: t });
    }
    if order > 2 {
        return Err(Error::Invalid(format!("derivative order {order} is not supported (0, 1 or 2)")));
    }
    let samples = lambdas.par_iter().map(|&l| smatrix(scenario, l, method)).collect::<Result<Vec<_>>>()?;
    let mut derivatives = Vec::new();
    let mut holder = None;
    if order > 0 {
        if lambdas.len() < 3 {
            return Err(Error::Invalid("derivatives need at least 3 samples".into()));
        }
        let h = lambdas[1] - lambdas[0];
        if lambdas.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.abs()) {
            return Err(Error::Invalid("derivatives need a uniform energy grid".into()));
        }
        for i in 1..lambdas.len() - 1 {
            let (a, b, c) = (&samples[i - 1].data, &samples[i].data, &samples[i + 1].data);
            let d = if order == 1 {
                (c - a) / C64::new(2.0 * h, 0.0)
            } else {
                (c - b * C64::new(2.0, 0.0) + a) / C64::new(h * h, 0.0)
            };
            derivatives.push((lambdas[i], d));
        }
        holder = holder_two_scale(&derivatives);
    }
    Ok(SmatrixGrid { samples, order, derivatives, holder })
}

/// `log2(max ||D(l + 2h) - D(l)|| / max ||D(l + h) - D(l)||)` on a uniform grid.
pub fn holder_two_scale(values: &[(f64, DMatrix<C64>)]) -> Option<f64> {
    if values.len() < 3 {
        return None;
    }
    let worst = |step: usize| (0..values.len() - step).map(|i| dense_norm(&(&values[i + step].1 - &values[i].1))).fold(0.0, f64::max);
    let (fine, coarse) = (worst(1), worst(2));
    if fine <= f64::MIN_POSITIVE {
        return Some(1.0);
    }
    Some((coarse / fine).log2())
}
