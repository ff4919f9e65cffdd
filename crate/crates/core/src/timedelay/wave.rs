//! Numerical wave operators: `Omega(t0) phi = e^{i t0 H} J e^{-i t0 H0} phi`
//! for `t0 -> -infinity`, with Cauchy certificates and the propagation
//! diagnostics behind their existence.

use rayon::prelude::*;
use serde::Serialize;

use super::packet::{build_state, spatial_extent, velocity_range, PacketSpec};
use super::propagate::CrankNicolson;
use crate::channels::{free_evolve, Dispersion, WavePacket};
use crate::error::{Error, Result};
use crate::hamiltonian::{assemble_free, assemble_full, defect_from, DiscreteOperator};
use crate::linalg::{decay_power, norm, C64};
use crate::scenario::{cutoff_j, AxialGrid, Scenario};

#[derive(Clone, Debug, Serialize)]
pub struct WaveSettings {
    pub dx: f64,
    pub dt: f64,
    /// Number of doublings `t0 = -t1 2^j`, `j = 0..=doublings`.
    pub doublings: usize,
    /// Cauchy tolerance `||Omega(2 t0) phi - Omega(t0) phi||`.
    pub tol: f64,
    /// First preparation time; derived from the packet when `None`.
    pub t1: Option<f64>,
}

impl Default for WaveSettings {
    fn default() -> Self {
        Self { dx: 0.1, dt: 0.02, doublings: 4, tol: 1e-4, t1: None }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct WaveOperatorProbe {
    pub grid: AxialGrid,
    /// Preparation times `t0` (negative, doubling).
    pub times: Vec<f64>,
    /// `||Omega(t_{j+1}) phi - Omega(t_j) phi||`, indexed by `j`.
    pub cauchy: Vec<f64>,
    /// Fitted decay power of the Cauchy differences against `|t_j|`.
    pub power: f64,
    /// First `t0` meeting the tolerance, if any.
    pub t0: Option<f64>,
    pub converged: bool,
    /// `||Omega(t0) phi|| / ||phi||` at the last preparation time.
    pub norm_ratio: f64,
    /// Cook integrand `||(HJ - JH0) e^{-i t0 H0} phi||` at each `t0`, and its
    /// fitted decay power; the differences decay one power slower.
    pub cook: Vec<f64>,
    pub cook_power: f64,
    #[serde(skip)]
    pub state: Vec<C64>,
}

/// Lattice and first preparation time for a packet: the packet leaves the
/// interaction region by `t1` and stays on the lattice until `t1 2^doublings`.
pub fn wave_grid(spec: &PacketSpec, thresholds: &[f64], settings: &WaveSettings) -> Result<(AxialGrid, f64, f64)> {
    let probe = AxialGrid::spanning(80.0, (160.0 / settings.dx).round() as usize / 2 * 2)?;
    let phi = build_state(probe, thresholds, &[], 0.0, spec)?.packet;
    let (v_min, v_max) = velocity_range(&phi, 1e-2);
    let width = spatial_extent(&phi, 1e-12);
    if !(v_min > 0.0) {
        return Err(Error::Precondition("packet has no momentum support away from zero".into()));
    }
    let t1 = settings.t1.unwrap_or((width + 5.0) / v_min);
    let t_last = t1 * 2f64.powi(settings.doublings as i32);
    let x_max = v_max * t_last + 2.0 * width + 10.0;
    let n = ((2.0 * x_max / settings.dx).ceil() as usize).div_ceil(2) * 2;
    Ok((AxialGrid::new(n, settings.dx)?, t1, width))
}

/// `e^{-i |t0| H} J e^{-i t0 H0} phi` with the Crank–Nicolson pair.
fn prepare(scenario: &Scenario, cn: &CrankNicolson, phi: &WavePacket, t0: f64) -> Result<Vec<C64>> {
    let mut psi = scenario.apply_j(&free_evolve(phi, t0, cn.dispersion()))?;
    let steps = (t0.abs() / cn.dt).round() as usize;
    for _ in 0..steps {
        cn.step(&mut psi);
    }
    Ok(psi)
}

/// Approximate `W_- phi` for the packet `spec` by the doubling series of
/// preparation times; the series is recorded as an existence certificate.
pub fn scattering_state(scenario: &Scenario, spec: &PacketSpec, settings: &WaveSettings) -> Result<(WaveOperatorProbe, WavePacket)> {
    let (grid, t1, _) = wave_grid(spec, &scenario.thresholds, settings)?;
    let sc = scenario.clone().with_grid(grid);
    let phi = build_state(grid, &sc.thresholds, &[], 0.0, spec)?.packet;
    let h = assemble_full(&sc)?;
    let cn = CrankNicolson::new(&h, settings.dt)?;
    // Whole Crank–Nicolson steps, so free and full clocks agree exactly.
    let base = (t1 / settings.dt).ceil() as usize;
    let times: Vec<f64> = (0..=settings.doublings).map(|j| -((base << j) as f64) * settings.dt).collect();
    let states = times.par_iter().map(|&t| prepare(&sc, &cn, &phi, t)).collect::<Result<Vec<_>>>()?;
    let cauchy: Vec<f64> = states
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt() * grid.dx.sqrt())
        .collect();
    let t0 = cauchy.iter().position(|&d| d <= settings.tol).map(|j| times[j]);
    let ts: Vec<f64> = times[..cauchy.len()].iter().map(|t| t.abs()).collect();
    let positive: Vec<(f64, f64)> = ts.iter().copied().zip(cauchy.iter().copied()).filter(|p| p.1 > 0.0).collect();
    let power = if positive.len() >= 2 {
        let (x, y): (Vec<f64>, Vec<f64>) = positive.into_iter().unzip();
        decay_power(&x, &y)
    } else {
        f64::INFINITY
    };
    let state = states.last().unwrap().clone();
    let norm_ratio = norm(&state) * grid.dx.sqrt() / phi.norm();
    let (cook, cook_power) = cook_integrand(&h, &assemble_free(grid, &sc.thresholds), &phi, &times, cn.dispersion())?;
    Ok((WaveOperatorProbe { grid, times, cauchy, power, t0, converged: t0.is_some(), norm_ratio, cook, cook_power, state }, phi))
}

/// `||(HJ - JH0) e^{-itH0} phi||` at each `t` and its fitted decay power.
pub fn cook_integrand(h: &DiscreteOperator, h0: &DiscreteOperator, phi: &WavePacket, times: &[f64], dispersion: Dispersion) -> Result<(Vec<f64>, f64)> {
    let defect = defect_from(h, h0);
    let values = times
        .par_iter()
        .map(|&t| Ok(norm(&defect.apply(&free_evolve(phi, t, dispersion))?) * phi.grid.dx.sqrt()))
        .collect::<Result<Vec<f64>>>()?;
    let (x, y): (Vec<f64>, Vec<f64>) = times.iter().map(|t| t.abs()).zip(values.iter().copied()).filter(|p| p.1 > 0.0).unzip();
    let power = if x.len() >= 2 { decay_power(&x, &y) } else { f64::INFINITY };
    Ok((values, power))
}

/// `||(J^* J - 1) e^{-itH0} phi||` at each `t` and its fitted decay power.
pub fn defect_decay(phi: &WavePacket, times: &[f64], dispersion: Dispersion) -> (Vec<f64>, f64) {
    let g = phi.grid;
    let w: Vec<f64> = (0..g.n).map(|i| 1.0 - cutoff_j(g.x(i)).powi(2)).collect();
    let values: Vec<f64> = times
        .par_iter()
        .map(|&t| {
            let p = free_evolve(phi, t, dispersion);
            let s: f64 = (0..p.channels()).map(|c| p.channel(c).iter().zip(&w).map(|(z, w)| (z * w).norm_sqr()).sum::<f64>()).sum();
            (s * g.dx).sqrt()
        })
        .collect();
    let (x, y): (Vec<f64>, Vec<f64>) = times.iter().map(|t| t.abs()).zip(values.iter().copied()).filter(|p| p.1 > 0.0).unzip();
    let power = if x.len() >= 2 { decay_power(&x, &y) } else { f64::INFINITY };
    (values, power)
}

/// `int_{-T}^0 ||J^* e^{-itH} Omega(-T) phi - e^{-itH0} phi|| dt`, the
/// horizon-`T` surrogate of the integrability criterion for `(J^* W_- - 1)`.
pub fn l1_proxy(scenario: &Scenario, h: &DiscreteOperator, phi: &WavePacket, horizon: f64, dt: f64) -> Result<f64> {
    let cn = CrankNicolson::new(h, dt)?;
    let steps = (horizon / dt).ceil() as usize;
    let t_min = -(steps as f64) * dt;
    let mut psi = scenario.apply_j(&free_evolve(phi, t_min, cn.dispersion()))?;
    let mut values = Vec::with_capacity(steps + 1);
    for j in 0..=steps {
        if j > 0 {
            cn.step(&mut psi);
        }
        let mut d = scenario.apply_j_star(&psi)?;
        d.axpy(C64::new(-1.0, 0.0), &free_evolve(phi, t_min + j as f64 * dt, cn.dispersion()));
        values.push(d.norm());
    }
    let sum: f64 = values.iter().sum::<f64>() - 0.5 * (values[0] + values[steps]);
    Ok(sum * dt)
}
