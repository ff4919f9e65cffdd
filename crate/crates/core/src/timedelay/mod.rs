//! Sojourn times, the symmetrized time delay and its Eisenbud–Wigner limit,
//! and numerical wave-operator probes.

pub mod packet;
pub mod propagate;
pub mod wave;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::channels::{inverse_f0, FiberFamily, FiberVector};
use crate::error::{Error, Result};
use crate::hamiltonian::assemble_full;
use crate::linalg::{linear_fit, C64, I, ZERO};
use crate::scattering::{smatrix_ode, SMatrix};
use crate::scenario::{AxialGrid, Scenario};

pub use packet::{build_incoming_state, build_state, Direction, PacketSpec, PreparedState};
pub use propagate::{propagate_full, sojourn_free, sojourn_full, CrankNicolson, TimeGrid};
pub use wave::{scattering_state, WaveOperatorProbe, WaveSettings};

/// Smallest decay exponent for which the time-delay limit is established.
pub const MU_TIME_DELAY: f64 = 4.0;

#[derive(Clone, Debug, Serialize)]
pub struct TimeDelaySettings {
    pub dx: f64,
    pub dt: f64,
    /// Run even when the scenario is not admissible.
    pub force: bool,
    /// Horizon doublings attempted when the integrands have not decayed.
    pub max_doublings: usize,
}

impl Default for TimeDelaySettings {
    fn default() -> Self {
        Self { dx: 0.05, dt: 0.02, force: false, max_doublings: 3 }
    }
}

/// One row of the sojourn series.
#[derive(Clone, Debug, Serialize)]
pub struct SojournRecord {
    pub r: f64,
    pub t_r0_phi: f64,
    pub t_r0_sphi: f64,
    pub t_r1: f64,
    pub t2: f64,
    pub tau_r: f64,
    pub tau_r_in: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TimeDelayReport {
    pub records: Vec<SojournRecord>,
    /// `tau_r = tau_inf + c / r` fitted over the top octave of radii.
    pub tau_inf: f64,
    pub fit_slope: f64,
    /// RMS residual of that fit and the gap `|tau_inf - tau_{r_max}|`.
    pub fit_residual: f64,
    pub fit_gap: f64,
    pub eisenbud_wigner: f64,
    /// Imaginary part of the spectral Eisenbud–Wigner integral.
    pub eisenbud_wigner_imag: f64,
    pub discrepancy: f64,
    /// Largest Hermiticity defect of `-i S^* dS/dlambda` over interior samples.
    pub hermiticity_defect: f64,
    /// Linear fit of `tau_r^in` against `r`: slope and its standard error.
    pub tau_in_slope: f64,
    pub tau_in_stderr: f64,
    /// Same for `tau_r` itself.
    pub tau_slope: f64,
    pub tau_stderr: f64,
    pub horizon: f64,
    pub dt: f64,
    pub grid: AxialGrid,
    pub horizon_ratio: f64,
    pub norm_drift: f64,
    pub mu: f64,
    pub admissible: bool,
}

impl TimeDelayReport {
    /// `tau_r^in` drifts linearly in `r` (slope beyond five standard errors).
    pub fn tau_in_diverges(&self) -> bool {
        self.tau_in_slope.abs() > 5.0 * self.tau_in_stderr
    }

    /// The 1/r model explains the top octave: residual within 20% of the gap.
    pub fn tau_converges(&self) -> bool {
        self.fit_residual <= 0.2 * self.fit_gap
    }
}

/// Open reference channels at `lambda` in the incoming order of [`SMatrix`]:
/// right end first, then left end.
fn incoming_index(s: &SMatrix, k: usize) -> Vec<usize> {
    s.open.iter().map(|&c| k + c).chain(s.open.iter().copied()).collect()
}

/// Outgoing order: left end first, then right end.
fn outgoing_index(s: &SMatrix, k: usize) -> Vec<usize> {
    s.open.iter().copied().chain(s.open.iter().map(|&c| k + c)).collect()
}

fn incoming_vector(v: &FiberVector, idx: &[usize]) -> DVector<C64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|c| v.component(*c).map(|(m, _)| m).unwrap_or(ZERO)))
}

/// `S phi` in the fiber representation, sample by sample.
pub fn apply_s(family: &FiberFamily, smats: &[SMatrix], k: usize) -> FiberFamily {
    let samples = family
        .samples
        .iter()
        .zip(smats)
        .map(|(v, s)| {
            let a = incoming_vector(v, &incoming_index(s, k));
            let b = &s.data * a;
            let mut out = FiberVector::zeros(v.lambda, v.channels.clone());
            for (p, &c) in outgoing_index(s, k).iter().enumerate() {
                let q = out.channels.iter().position(|&x| x == c).unwrap();
                out.plus[q] = b[p];
            }
            out
        })
        .collect();
    FiberFamily { samples }
}

/// `int <a, -i S^* S' a> dlambda` with fourth-order differences of the
/// sampled S-matrices; returns the value and the worst Hermiticity defect.
pub fn eisenbud_wigner(family: &FiberFamily, smats: &[SMatrix], k: usize) -> Result<(C64, f64)> {
    let n = smats.len();
    if n < 5 {
        return Err(Error::Invalid("Eisenbud–Wigner quadrature needs at least 5 samples".into()));
    }
    let h = smats[1].lambda - smats[0].lambda;
    let mut total = ZERO;
    let mut defect: f64 = 0.0;
    for i in 2..n - 2 {
        let d = (&smats[i - 2].data - &smats[i + 2].data + (&smats[i + 1].data - &smats[i - 1].data) * C64::new(8.0, 0.0))
            / C64::new(12.0 * h, 0.0);
        let q: DMatrix<C64> = smats[i].data.adjoint() * d * (-I);
        defect = defect.max((&q - q.adjoint()).iter().fold(0.0, |m, z| m.max(z.norm())));
        let a = incoming_vector(&family.samples[i], &incoming_index(&smats[i], k));
        total += (a.adjoint() * q * &a)[(0, 0)] * h;
    }
    Ok((total, defect))
}

/// Energy quantiles of `|rho|^2` holding all but `tail` of the mass.
fn energy_quantiles(spec: &PacketSpec, tail: f64) -> (f64, f64) {
    let ls = spec.lambdas();
    let w: Vec<f64> = ls.iter().map(|&l| spec.bump(l).powi(2)).collect();
    let total: f64 = w.iter().sum();
    let mut acc = 0.0;
    let (mut lo, mut hi) = (ls[0], ls[ls.len() - 1]);
    let mut found = false;
    for (l, m) in ls.iter().zip(&w) {
        acc += m;
        if !found && acc >= 0.5 * tail * total {
            lo = *l;
            found = true;
        }
        if acc >= (1.0 - 0.5 * tail) * total {
            hi = *l;
            break;
        }
    }
    (lo, hi)
}

/// The symmetrized time delay `tau_r` over `radii`, its `r -> infinity`
/// extrapolation and the spectral Eisenbud–Wigner value.
pub fn symmetrized_time_delay(scenario: &Scenario, spec: &PacketSpec, radii: &[f64], settings: &TimeDelaySettings) -> Result<TimeDelayReport> {
    let mu = scenario.mu();
    let admissible = mu > MU_TIME_DELAY;
    if !admissible && !settings.force {
        return Err(Error::NotAdmissible(format!("time delay requires mu > 4; the scenario declares mu = {mu}")));
    }
    if radii.len() < 3 || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Invalid("time delay needs at least 3 increasing radii".into()));
    }
    let critical = scenario.distinct_thresholds();
    let window = scenario.threshold_window.max(1e-3);
    let r_max = *radii.last().unwrap();
    // Velocities from the spectral support: slowest open channel at the low
    // end, fastest at the high end.
    let (l_lo, l_hi) = energy_quantiles(spec, 1e-4);
    let tau_top = scenario.thresholds.iter().copied().filter(|&t| t < l_lo).fold(f64::NEG_INFINITY, f64::max);
    let tau_min = scenario.thresholds.iter().copied().fold(f64::INFINITY, f64::min);
    let v_min = 2.0 * (l_lo - tau_top).sqrt();
    let v_max = 2.0 * (l_hi - tau_min).sqrt();
    let probe = AxialGrid::spanning(80.0, (160.0 / settings.dx).round() as usize / 2 * 2)?;
    let width = packet::spatial_extent(&build_incoming_state(probe, &scenario.thresholds, &critical, window, spec)?.packet, 1e-12);
    let mut last_err = None;
    for attempt in 0..=settings.max_doublings {
        let horizon = (r_max + width + 5.0) / v_min * 2f64.powi(attempt as i32);
        let x_max = v_max * horizon + 2.0 * width + 10.0;
        let n = ((2.0 * x_max / settings.dx).ceil() as usize).div_ceil(2) * 2;
        let grid = AxialGrid::new(n, settings.dx)?;
        match run_delay(scenario, spec, radii, settings, grid, horizon, &critical, window) {
            Err(Error::Horizon { ratio }) => last_err = Some(Error::Horizon { ratio }),
            other => {
                return other.map(|mut r| {
                    r.mu = mu;
                    r.admissible = admissible;
                    r
                })
            }
        }
    }
    Err(last_err.unwrap())
}

#[allow(clippy::too_many_arguments)]
fn run_delay(
    scenario: &Scenario,
    spec: &PacketSpec,
    radii: &[f64],
    settings: &TimeDelaySettings,
    grid: AxialGrid,
    horizon: f64,
    critical: &[f64],
    window: f64,
) -> Result<TimeDelayReport> {
    let k = scenario.channels();
    let sc = scenario.clone().with_grid(grid);
    let state = build_incoming_state(grid, &sc.thresholds, critical, window, spec)?;
    let smats = state.family.samples.par_iter().map(|v| smatrix_ode(&sc, v.lambda)).collect::<Result<Vec<_>>>()?;
    let out_family = apply_s(&state.family, &smats, k);
    let mut ref_thresholds = sc.thresholds.clone();
    ref_thresholds.extend_from_slice(&sc.thresholds);
    let s_phi = inverse_f0(&out_family, grid, &ref_thresholds, spec.tol)?;
    let times = TimeGrid::symmetric(horizon, settings.dt);
    let h = assemble_full(&sc)?;
    let disp = crate::channels::Dispersion::CrankNicolson { dt: settings.dt };
    let (free, (free_s, full)) = rayon::join(
        || sojourn_free(&state.packet, radii, times, disp),
        || rayon::join(|| sojourn_free(&s_phi, radii, times, disp), || sojourn_full(&sc, &h, &state.packet, radii, times)),
    );
    let (free, free_s, full) = (free?, free_s?, full?);
    let records: Vec<SojournRecord> = radii
        .iter()
        .enumerate()
        .map(|(q, &r)| {
            let t_r = full.t_r1[q] + full.t2;
            SojournRecord {
                r,
                t_r0_phi: free.values[q],
                t_r0_sphi: free_s.values[q],
                t_r1: full.t_r1[q],
                t2: full.t2,
                tau_r: t_r - 0.5 * (free.values[q] + free_s.values[q]),
                tau_r_in: t_r - free.values[q],
            }
        })
        .collect();
    let r_max = *radii.last().unwrap();
    let top: Vec<&SojournRecord> = records.iter().filter(|s| s.r >= 0.5 * r_max - 1e-12).collect();
    let (inv_r, tau): (Vec<f64>, Vec<f64>) = top.iter().map(|s| (1.0 / s.r, s.tau_r)).unzip();
    let (tau_inf, fit_slope, _, fit_residual) = if top.len() >= 2 { linear_fit(&inv_r, &tau) } else { (tau[0], 0.0, 0.0, 0.0) };
    let fit_gap = (tau_inf - records.last().unwrap().tau_r).abs();
    let rs: Vec<f64> = records.iter().map(|s| s.r).collect();
    let (_, tau_in_slope, tau_in_stderr, _) = linear_fit(&rs, &records.iter().map(|s| s.tau_r_in).collect::<Vec<_>>());
    let (_, tau_slope, tau_stderr, _) = linear_fit(&rs, &records.iter().map(|s| s.tau_r).collect::<Vec<_>>());
    let (ew, hermiticity_defect) = eisenbud_wigner(&state.family, &smats, k)?;
    let discrepancy = (tau_inf - ew.re).abs() / ew.re.abs().max(f64::MIN_POSITIVE);
    Ok(TimeDelayReport {
        records,
        tau_inf,
        fit_slope,
        fit_residual,
        fit_gap,
        eisenbud_wigner: ew.re,
        eisenbud_wigner_imag: ew.im,
        discrepancy,
        hermiticity_defect,
        tau_in_slope,
        tau_in_stderr,
        tau_slope,
        tau_stderr,
        horizon: times.horizon(),
        dt: settings.dt,
        grid,
        horizon_ratio: free.horizon_ratio.max(free_s.horizon_ratio).max(full.horizon_ratio),
        norm_drift: full.norm_drift,
        mu: scenario.mu(),
        admissible: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Part, Profile, Shape, Term};

    #[test]
    fn refuses_slow_decay_without_force() {
        let p = Profile::zero(1).with_term(Part::ShortRange, Term::potential(0, 0, 1.0, Shape::PowerTail { center: 0.0, power: 0.5 }));
        let s = Scenario::free(vec![0.0], AxialGrid::spanning(20.0, 200).unwrap()).with_profile(p, f64::INFINITY, 0.5);
        let err = symmetrized_time_delay(&s, &PacketSpec::incoming(1, 0, 2.0, 0.8), &[5.0, 10.0, 20.0], &TimeDelaySettings::default()).unwrap_err();
        assert!(matches!(err, Error::NotAdmissible(ref m) if m.contains("mu > 4")), "{err}");
    }

    #[test]
    fn free_time_delay_vanishes() {
        let s = Scenario::free(vec![0.0], AxialGrid::spanning(20.0, 200).unwrap());
        let r = symmetrized_time_delay(&s, &PacketSpec::incoming(1, 0, 2.0, 0.8), &[5.0, 10.0, 20.0], &TimeDelaySettings::default()).unwrap();
        for rec in &r.records {
            assert!(rec.tau_r.abs() <= 1e-3, "{rec:?}");
        }
        assert!(r.eisenbud_wigner.abs() <= 1e-8);
        assert!((r.tau_inf - r.eisenbud_wigner).abs() <= 1e-3);
    }

    #[test]
    fn eisenbud_wigner_is_hermitian_for_barrier() {
        let p = Profile::zero(1).with_term(Part::ShortRange, Term::potential(0, 0, 1.0, Shape::Barrier { center: 0.0, width: 1.0 }));
        let s = Scenario::free(vec![0.0], AxialGrid::spanning(120.0, 4800).unwrap()).with_profile(p, f64::INFINITY, 6.0);
        let spec = PacketSpec::incoming(1, 0, 2.0, 0.8);
        let st = build_incoming_state(s.grid, &[0.0], &[0.0], 1e-3, &spec).unwrap();
        let smats: Vec<SMatrix> = st.family.samples.iter().map(|v| smatrix_ode(&s, v.lambda).unwrap()).collect();
        let (ew, defect) = eisenbud_wigner(&st.family, &smats, 1).unwrap();
        assert!(defect <= 1e-6, "{defect}");
        assert!(ew.im.abs() <= 1e-8, "{ew}");
    }
}
