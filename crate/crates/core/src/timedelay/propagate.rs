//! Crank–Nicolson propagation and sojourn-time quadratures.
//!
//! The free sojourn integrals use the same lattice Crank–Nicolson dispersion
//! as the full propagation, so the pair `(H, H0)` is discretized consistently
//! and the time-step phase error cancels in sojourn-time differences.

use rayon::prelude::*;
use serde::Serialize;

use crate::channels::{free_evolve, Dispersion, WavePacket};
use crate::error::{Error, Result};
use crate::hamiltonian::DiscreteOperator;
use crate::linalg::{norm, Banded, BlockLu, C64, ONE};
use crate::scenario::{cutoff_j, Scenario};

/// One unitary step `(1 + i dt H / 2)^{-1} (1 - i dt H / 2)`.
pub struct CrankNicolson {
    pub dt: f64,
    lhs: BlockLu,
    rhs: Banded,
}

impl CrankNicolson {
    pub fn new(h: &DiscreteOperator, dt: f64) -> Result<Self> {
        let ones = vec![ONE; h.dim()];
        let mut lhs = h.matrix.scale(C64::new(0.0, dt / 2.0));
        lhs.add_diagonal(&ones);
        let mut rhs = h.matrix.scale(C64::new(0.0, -dt / 2.0));
        rhs.add_diagonal(&ones);
        Ok(Self { dt, lhs: BlockLu::new(&lhs)?, rhs })
    }

    pub fn step(&self, psi: &mut Vec<C64>) {
        let r = self.rhs.matvec(psi);
        *psi = self.lhs.solve(&r);
    }

    pub fn evolve(&self, psi: &[C64], steps: usize) -> Vec<C64> {
        let mut out = psi.to_vec();
        for _ in 0..steps {
            self.step(&mut out);
        }
        out
    }

    /// The free evolution this scheme realizes exactly on the lattice.
    pub fn dispersion(&self) -> Dispersion {
        Dispersion::CrankNicolson { dt: self.dt }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    #[serde(skip)]
    pub state: Vec<C64>,
    pub time: f64,
    pub steps: usize,
    /// `| ||psi_t|| - ||psi_0|| |` relative to `||psi_0||`.
    pub norm_drift: f64,
    /// `||psi_dt - psi_{dt/2}|| / 3`.
    pub richardson_error: f64,
}

/// `e^{-i t H} psi0` with `t = steps dt`, plus a step-halving error estimate.
pub fn propagate_full(h: &DiscreteOperator, psi0: &[C64], dt: f64, steps: usize) -> Result<Trajectory> {
    let (coarse, fine) = rayon::join(
        || CrankNicolson::new(h, dt).map(|cn| cn.evolve(psi0, steps)),
        || CrankNicolson::new(h, dt / 2.0).map(|cn| cn.evolve(psi0, 2 * steps)),
    );
    let (coarse, fine) = (coarse?, fine?);
    let n0 = norm(psi0);
    let diff: Vec<C64> = coarse.iter().zip(&fine).map(|(a, b)| a - b).collect();
    Ok(Trajectory {
        norm_drift: (norm(&coarse) - n0).abs() / n0.max(f64::MIN_POSITIVE),
        richardson_error: norm(&diff) / 3.0,
        state: coarse,
        time: steps as f64 * dt,
        steps,
    })
}

/// Uniform time grid `t_min + j dt`, `j = 0..=steps`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TimeGrid {
    pub t_min: f64,
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    /// Symmetric grid `[-horizon, horizon]` rounded to whole steps.
    pub fn symmetric(horizon: f64, dt: f64) -> Self {
        let half = (horizon / dt).ceil() as usize;
        Self { t_min: -(half as f64) * dt, dt, steps: 2 * half }
    }

    pub fn t(&self, j: usize) -> f64 {
        self.t_min + j as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        -self.t_min
    }
}

/// Trapezoid integral of sampled values and the horizon ratio
/// `max(|f(t_min)|, |f(t_max)|) / max |f|`.
fn trapezoid(values: &[f64], dt: f64) -> (f64, f64) {
    let n = values.len();
    let sum: f64 = values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1]);
    let peak = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let edge = values[0].abs().max(values[n - 1].abs());
    (sum * dt, if peak > 0.0 { edge / peak } else { 0.0 })
}

/// Per-node mass `sum_c |phi_c(x_i)|^2 dx` of a reference packet.
fn node_mass(phi: &WavePacket) -> Vec<f64> {
    let g = phi.grid;
    (0..g.n).map(|i| (0..phi.channels()).map(|c| phi.at(c, i).norm_sqr()).sum::<f64>() * g.dx).collect()
}

fn within(mass: &[f64], xs: &[f64], r: f64) -> f64 {
    mass.iter().zip(xs).filter(|(_, x)| x.abs() <= r).map(|(m, _)| m).sum()
}

#[derive(Clone, Debug, Serialize)]
pub struct SojournSeries {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    /// Largest integrand ratio at the horizon over all series.
    pub horizon_ratio: f64,
}

/// Largest allowed integrand ratio at the horizon.
pub const HORIZON_TOL: f64 = 1e-6;

/// `T_r^0(phi) = int <e^{-itH0} phi, chi(|x| <= r) e^{-itH0} phi> dt` on both ends.
pub fn sojourn_free(phi: &WavePacket, radii: &[f64], times: TimeGrid, dispersion: Dispersion) -> Result<SojournSeries> {
    let xs = phi.grid.xs();
    let samples: Vec<Vec<f64>> = (0..=times.steps)
        .into_par_iter()
        .map(|j| {
            let m = node_mass(&free_evolve(phi, times.t(j), dispersion));
            radii.iter().map(|&r| within(&m, &xs, r)).collect()
        })
        .collect();
    let mut values = Vec::with_capacity(radii.len());
    let mut horizon_ratio: f64 = 0.0;
    for q in 0..radii.len() {
        let series: Vec<f64> = samples.iter().map(|s| s[q]).collect();
        let (v, ratio) = trapezoid(&series, times.dt);
        values.push(v);
        horizon_ratio = horizon_ratio.max(ratio);
    }
    if horizon_ratio > HORIZON_TOL {
        return Err(Error::Horizon { ratio: horizon_ratio });
    }
    Ok(SojournSeries { radii: radii.to_vec(), values, horizon_ratio })
}

#[derive(Clone, Debug, Serialize)]
pub struct FullSojourn {
    pub radii: Vec<f64>,
    /// `T_{r,1}` per radius.
    pub t_r1: Vec<f64>,
    pub t2: f64,
    pub horizon_ratio: f64,
    /// Smallest localization expectation seen (nonnegative by construction).
    pub min_integrand: f64,
    pub norm_drift: f64,
}

/// `T_{r,1}` and `T_2` along `psi(t) = e^{-i(t - t_min)H} J e^{-i t_min H0} phi`.
pub fn sojourn_full(scenario: &Scenario, h: &DiscreteOperator, phi: &WavePacket, radii: &[f64], times: TimeGrid) -> Result<FullSojourn> {
    let cn = CrankNicolson::new(h, times.dt)?;
    let start = free_evolve(phi, times.t_min, cn.dispersion());
    let mut psi = scenario.apply_j(&start)?;
    let n0 = norm(&psi);
    let g = scenario.grid;
    let k = scenario.channels();
    let xs = g.xs();
    let jj: Vec<f64> = xs.iter().map(|&y| cutoff_j(y).powi(2) + cutoff_j(-y).powi(2)).collect();
    let mut series: Vec<Vec<f64>> = vec![Vec::with_capacity(times.steps + 1); radii.len() + 1];
    let mut min_integrand = f64::INFINITY;
    for j in 0..=times.steps {
        if j > 0 {
            cn.step(&mut psi);
        }
        let mass: Vec<f64> = (0..g.n).map(|i| psi[i * k..(i + 1) * k].iter().map(|z| z.norm_sqr()).sum::<f64>() * g.dx).collect();
        let local: Vec<f64> = mass.iter().zip(&jj).map(|(m, w)| m * w).collect();
        for (q, &r) in radii.iter().enumerate() {
            let v = within(&local, &xs, r);
            min_integrand = min_integrand.min(v);
            series[q].push(v);
        }
        let rest: f64 = mass.iter().zip(&jj).map(|(m, w)| m * (1.0 - w)).sum();
        min_integrand = min_integrand.min(rest);
        series[radii.len()].push(rest);
    }
    let mut horizon_ratio: f64 = 0.0;
    let mut t_r1 = Vec::with_capacity(radii.len());
    for s in &series[..radii.len()] {
        let (v, ratio) = trapezoid(s, times.dt);
        t_r1.push(v);
        horizon_ratio = horizon_ratio.max(ratio);
    }
    let (t2, ratio) = trapezoid(&series[radii.len()], times.dt);
    horizon_ratio = horizon_ratio.max(ratio);
    if horizon_ratio > HORIZON_TOL {
        return Err(Error::Horizon { ratio: horizon_ratio });
    }
    Ok(FullSojourn {
        radii: radii.to_vec(),
        t_r1,
        t2,
        horizon_ratio,
        min_integrand,
        norm_drift: (norm(&psi) - n0).abs() / n0.max(f64::MIN_POSITIVE),
    })
}
